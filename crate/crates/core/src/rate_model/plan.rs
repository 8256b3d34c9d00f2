use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Stream structure a plan was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    /// One shared common stream plus one private stream per served mUE.
    IDeCrs,
    /// Two single-receiver layers per served mUE.
    DeCrs,
    /// One common stream that is relayed to the dUE as a whole.
    Crs,
}

/// Rate allocation of one served mUE within a block (bits/s/Hz).
///
/// Field meaning per framework:
///
/// | field     | iDeCRS                 | DeCRS                  | CRS                     |
/// |-----------|------------------------|------------------------|-------------------------|
/// | `alpha_c` | mUE part, common       | mUE part, layer 2      | mUE part, common        |
/// | `alpha_p` | mUE part, private      | mUE part, layer 1      | mUE part, private       |
/// | `beta_c`  | dUE part, common       | unused (0)             | unused (0)              |
/// | `beta_p`  | dUE part, private      | dUE part, layer 1      | unused (0)              |
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateSplit {
    pub alpha_c: f64,
    pub alpha_p: f64,
    pub beta_c: f64,
    pub beta_p: f64,
}

impl RateSplit {
    pub fn mue_rate(&self) -> f64 {
        self.alpha_c + self.alpha_p
    }

    pub fn due_part(&self) -> f64 {
        self.beta_c + self.beta_p
    }
}

/// Surrogate slack values reported by the optimizer, one entry per served mUE.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockSlack {
    pub rate_common: Vec<f64>,
    pub rate_private: Vec<f64>,
    pub rate_relay: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma_common: Vec<f64>,
    pub gamma_private: Vec<f64>,
    pub gamma_relay: Vec<f64>,
}

/// Transmit decisions for one block. Precoders are in √W.
///
/// `private[i]` is the DeCRS layer-1 precoder under [`Framework::DeCrs`], and
/// `layer2` is populated only for that framework.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    /// Global indices of the served mUEs; all per-mUE vectors follow this order.
    pub active: Vec<usize>,
    pub common: Vec<Complex64>,
    pub private: Vec<Vec<Complex64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layer2: Vec<Vec<Complex64>>,
    pub relay: Vec<Complex64>,
    pub split: Vec<RateSplit>,
    /// CRS only: dUE content carried in the common stream.
    #[serde(default)]
    pub due_share: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<BlockSlack>,
}

impl BlockPlan {
    /// A block with no transmission.
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_empty()
    }

    /// Σ‖f_c‖² + Σ‖f_k‖² + Σ|f_d|² in watts.
    pub fn power(&self) -> f64 {
        let sq = |v: &[Complex64]| v.iter().map(Complex64::norm_sqr).sum::<f64>();
        sq(&self.common)
            + self.private.iter().map(|f| sq(f)).sum::<f64>()
            + self.layer2.iter().map(|f| sq(f)).sum::<f64>()
            + sq(&self.relay)
    }

    /// Scales every precoder and relay gain by `factor`.
    pub fn scale_precoders(&mut self, factor: f64) {
        let scale = |v: &mut Vec<Complex64>| v.iter_mut().for_each(|x| *x *= factor);
        scale(&mut self.common);
        self.private.iter_mut().for_each(scale);
        self.layer2.iter_mut().for_each(scale);
        scale(&mut self.relay);
    }

    pub fn position(&self, k: usize) -> Option<usize> {
        self.active.iter().position(|&a| a == k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitPlan {
    pub framework: Framework,
    pub blocks: Vec<BlockPlan>,
}

impl TransmitPlan {
    pub fn idle(framework: Framework, n_blocks: usize) -> Self {
        Self {
            framework,
            blocks: vec![BlockPlan::idle(); n_blocks],
        }
    }

    /// Joules over all blocks for block duration `tau`.
    pub fn total_energy(&self, tau: f64) -> f64 {
        tau * self.blocks.iter().map(BlockPlan::power).sum::<f64>()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

//! Schedulers (GENIE, ECO, EDT), baselines (CRS, DeCRS-GENIE) and their initializers.

pub mod genie;
pub mod init;
pub mod instant;
pub mod model;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use genie::{
    calibration_seed, compute_delta, decrs_genie_solve, eco_energy_bound, genie_solve, joint_solve,
    EfficiencyProfile, Traffic,
};
pub use init::{common_init, initial_rate_split, relay_init, sdma_init, BlockTargets, SdmaSolution};
pub use instant::{
    crs_step, eco_feasible_init, eco_step, edt_step, final_flush, run_sequential, ResidualState, StepOutcome,
};
pub use model::{Goal, ModelBlock, SurrogateModel};

use crate::error::{Error, Result};
use crate::rate_model::{crs_block_rates, due_block_rate, relay_rate, BlockPlan, Framework, TransmitPlan};
use crate::sca::{sca_drive, ScaSettings, ScaTrace};
use crate::scenario::{ChannelRealization, SystemConfig};

/// Planner selectable from the harness and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    Genie,
    Eco,
    Edt,
    Crs,
    DecrsGenie,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Genie,
        Algorithm::Eco,
        Algorithm::Edt,
        Algorithm::Crs,
        Algorithm::DecrsGenie,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Genie => "genie",
            Algorithm::Eco => "eco",
            Algorithm::Edt => "edt",
            Algorithm::Crs => "crs",
            Algorithm::DecrsGenie => "decrs",
        }
    }

    pub fn framework(self) -> Framework {
        match self {
            Algorithm::Crs => Framework::Crs,
            Algorithm::DecrsGenie => Framework::DeCrs,
            _ => Framework::IDeCrs,
        }
    }

    /// Sequential schedulers end with a flush of the residuals on the last block.
    pub fn is_sequential(self) -> bool {
        matches!(self, Algorithm::Eco | Algorithm::Edt | Algorithm::Crs)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown algorithm '{s}'")))
    }
}

/// A plan together with the bookkeeping of how it was produced.
#[derive(Debug, Clone)]
pub struct AlgorithmOutput {
    pub plan: TransmitPlan,
    /// One trace per SCA run (a single one for joint solvers).
    pub traces: Vec<ScaTrace>,
    /// Joules spent by the residual flush on the last block.
    pub flush_energy: f64,
    /// ECO blocks left idle because the efficiency floor could not be met.
    pub eco_skips: usize,
    /// Blocks left idle because their per-block targets were not achievable.
    pub failed_blocks: Vec<usize>,
}

pub fn sca_settings(config: &SystemConfig) -> ScaSettings {
    ScaSettings {
        epsilon: config.sca_epsilon,
        max_iter: config.sca_max_iter,
        accuracy: config.solver_accuracy,
        ..ScaSettings::default()
    }
}

/// Runs SCA on `blocks` from `init` and returns the decoded block plans.
pub fn solve_model(
    framework: Framework,
    blocks: Vec<ModelBlock>,
    init: Vec<BlockPlan>,
    goal: Goal,
    config: &SystemConfig,
) -> Result<(Vec<BlockPlan>, ScaTrace)> {
    let model = SurrogateModel::new(framework, blocks, goal, config.block_duration)?;
    sca_drive(&model, init, &sca_settings(config))
}

/// Initial plan for a modeled block with per-slot mUE targets and the dUE target spread
/// over its relay slots by [`init::relay_shares`].
pub fn init_model_block(
    framework: Framework,
    block: &ModelBlock,
    mue_targets: &[f64],
    due_target: f64,
) -> Result<BlockPlan> {
    let due = init::relay_shares(&block.g, &block.relays, due_target);
    let targets = BlockTargets { mue: mue_targets.to_vec(), due };
    let g: Vec<Complex64> = block
        .g
        .iter()
        .zip(&block.relays)
        .map(|(&g, &r)| if r { g } else { Complex64::new(0.0, 0.0) })
        .collect();
    init::block_init(framework, &block.active, &block.h, &g, &targets)
}

/// Rates a block plan delivers: per global mUE (length `n_mues`) and to the dUE.
pub fn block_delivery(
    framework: Framework,
    plan: &BlockPlan,
    channels: &ChannelRealization,
    t: usize,
) -> (Vec<f64>, f64) {
    let mut mue = vec![0.0; channels.n_mues()];
    if plan.is_idle() {
        return (mue, 0.0);
    }
    for (slot, &k) in plan.active.iter().enumerate() {
        mue[k] = plan.split[slot].mue_rate();
    }
    let g: Vec<Complex64> = plan.active.iter().map(|&k| channels.g[t][k]).collect();
    let due = match framework {
        Framework::Crs => {
            let h: Vec<Vec<Complex64>> = plan.active.iter().map(|&k| channels.h[t][k].clone()).collect();
            let content = plan.split.iter().map(|s| s.alpha_c).sum();
            crs_block_rates(&h, &g, &plan.common, &plan.private, &plan.relay, content, plan.due_share).due
        }
        Framework::IDeCrs | Framework::DeCrs => {
            let rates: Vec<f64> = (0..g.len()).map(|i| relay_rate(&g, &plan.relay, i)).collect();
            let betas: Vec<f64> = plan.split.iter().map(|s| s.due_part()).collect();
            due_block_rate(&betas, &rates)
        }
    };
    (mue, due)
}

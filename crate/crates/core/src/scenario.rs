//! Scenario geometry, line-of-sight channels and blockage.
//!
//! The AP carries a uniform planar array whose vertical axis is `z` and whose
//! horizontal axis is `y`. For a node displaced by `(dx, dy, dz)` from the AP at
//! distance `d`, the vertical angle satisfies `sin φ = dz / d` and the
//! horizontal angle satisfies `cos φ · cos ψ = dy / d`.
//!
//! Channel gains are divided by the thermal noise power `k_B · T₀ · B`, so a
//! unit-noise receiver model holds while precoder powers stay in watts.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const NOISE_TEMPERATURE: f64 = 290.0;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlockageMode {
    #[default]
    Independent,
    /// Per-link probability `0.5 · d / d_max`.
    DistanceDependent,
}

/// Every scalar that defines a scenario, in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_antennas: usize,
    pub n_vertical: usize,
    pub n_horizontal: usize,
    pub n_mues: usize,
    pub n_blocks: usize,
    pub blockage_p: f64,
    pub carrier_freq: f64,
    pub block_duration: f64,
    pub bandwidth: f64,
    pub pathloss_exp: f64,
    pub ap_position: Point3,
    pub due_position: Point3,
    pub mue_box: [Point3; 2],
    /// Normalized demand per mUE over the horizon (bits/s/Hz summed over blocks).
    pub throughput_mue: f64,
    pub throughput_due: f64,
    pub eco_s: f64,
    pub edt_buffer: usize,
    pub blockage_mode: BlockageMode,
    pub seed: u64,
    /// Last block is redrawn without blockage (fairness protocol for the flush).
    pub final_block_unblocked: bool,
    pub sca_epsilon: f64,
    pub sca_max_iter: usize,
    pub solver_accuracy: f64,
    pub calibration_trials: usize,
    /// Fixed efficiency for ECO; calibrated from GENIE runs when absent.
    pub eco_delta: Option<f64>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_antennas: 8,
            n_vertical: 2,
            n_horizontal: 4,
            n_mues: 4,
            n_blocks: 10,
            blockage_p: 0.3,
            carrier_freq: 0.3e12,
            block_duration: 0.4e-3,
            bandwidth: 1e9,
            pathloss_exp: 2.0,
            ap_position: [0.0, 4.0, 1.0],
            due_position: [8.0, 4.0, 0.0],
            mue_box: [[2.0, 0.0, 0.0], [6.0, 8.0, 0.0]],
            throughput_mue: 10.0,
            throughput_due: 2.0,
            eco_s: 0.7,
            edt_buffer: 0,
            blockage_mode: BlockageMode::Independent,
            seed: 0,
            final_block_unblocked: true,
            sca_epsilon: 1e-4,
            sca_max_iter: 100,
            solver_accuracy: 1e-7,
            calibration_trials: 20,
            eco_delta: None,
        }
    }
}

impl SystemConfig {
    /// Full-size setting: 16-antenna square array over 20 blocks.
    pub fn paper_scale() -> Self {
        Self {
            n_antennas: 16,
            n_vertical: 4,
            n_horizontal: 4,
            n_blocks: 20,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.n_vertical == 0 || self.n_horizontal == 0 {
            return fail("array factors must be positive".into());
        }
        if self.n_antennas != self.n_vertical * self.n_horizontal {
            return fail(format!(
                "n_antennas = {} but n_vertical × n_horizontal = {}",
                self.n_antennas,
                self.n_vertical * self.n_horizontal
            ));
        }
        if self.n_mues == 0 {
            return fail("n_mues must be at least 1".into());
        }
        if self.n_blocks == 0 {
            return fail("n_blocks must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.blockage_p) {
            return fail(format!("blockage_p = {} outside [0, 1]", self.blockage_p));
        }
        if !(self.throughput_mue >= 0.0 && self.throughput_due >= 0.0) {
            return fail("throughput demands must be nonnegative".into());
        }
        for axis in 0..3 {
            if self.mue_box[0][axis] > self.mue_box[1][axis] {
                return fail("mue_box corners must be ordered componentwise".into());
            }
        }
        for (name, v) in [
            ("carrier_freq", self.carrier_freq),
            ("block_duration", self.block_duration),
            ("bandwidth", self.bandwidth),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive"));
            }
        }
        if !(self.eco_s > 0.0) {
            return fail("eco_s must be positive".into());
        }
        if !(self.sca_epsilon > 0.0) || self.sca_max_iter == 0 {
            return fail("SCA threshold and iteration cap must be positive".into());
        }
        if let Some(delta) = self.eco_delta {
            if !(delta > 0.0) {
                return fail("eco_delta must be positive".into());
            }
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn noise_power(&self) -> f64 {
        BOLTZMANN * NOISE_TEMPERATURE * self.bandwidth
    }

    /// Unit-distance path gain divided by the noise power.
    pub fn chi0(&self) -> f64 {
        friis_unit_gain(self.carrier_freq) / self.noise_power()
    }

    /// Diagonal of the box enclosing the AP, the dUE and the mUE region.
    pub fn max_distance(&self) -> f64 {
        let pts = [
            self.ap_position,
            self.due_position,
            self.mue_box[0],
            self.mue_box[1],
        ];
        (0..3)
            .map(|axis| {
                let lo = pts.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
                (hi - lo).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Total normalized demand `Σ D_k + D_d`.
    pub fn total_demand(&self) -> f64 {
        self.throughput_mue * self.n_mues as f64 + self.throughput_due
    }
}

/// Friis free-space gain at one metre, `(c / (4π f_c))²`.
pub fn friis_unit_gain(carrier_freq: f64) -> f64 {
    (SPEED_OF_LIGHT / (4.0 * PI * carrier_freq)).powi(2)
}

/// UPA steering vector: vertical ramp ⊗ horizontal ramp, both with half-wavelength spacing.
pub fn array_response(phi: f64, psi: f64, n_v: usize, n_h: usize) -> Vec<Complex64> {
    let v_step = PI * phi.sin();
    let h_step = PI * phi.cos() * psi.cos();
    let mut out = Vec::with_capacity(n_v * n_h);
    for a in 0..n_v {
        for b in 0..n_h {
            out.push(Complex64::from_polar(1.0, a as f64 * v_step + b as f64 * h_step));
        }
    }
    out
}

fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Vertical and horizontal angles from the AP towards `target`.
pub fn angles(ap: &Point3, target: &Point3) -> (f64, f64) {
    let (dx, dy, dz) = (target[0] - ap[0], target[1] - ap[1], target[2] - ap[2]);
    let d = (dx * dx + dy * dy + dz * dz).sqrt();
    let rho = (dx * dx + dy * dy).sqrt();
    let phi = if d > 0.0 { (dz / d).asin() } else { 0.0 };
    let psi = if rho > 0.0 { (dy / rho).clamp(-1.0, 1.0).acos() } else { 0.0 };
    (phi, psi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// `mue_positions[t][k]`
    pub mue_positions: Vec<Vec<Point3>>,
    pub ap_position: Point3,
    pub due_position: Point3,
}

impl Geometry {
    pub fn ap_distance(&self, t: usize, k: usize) -> f64 {
        distance(&self.ap_position, &self.mue_positions[t][k])
    }

    pub fn due_distance(&self, t: usize, k: usize) -> f64 {
        distance(&self.due_position, &self.mue_positions[t][k])
    }
}

/// Draws mUE positions i.i.d. uniform over the configured box, per block and per mUE.
pub fn sample_geometry<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Geometry {
    let [lo, hi] = config.mue_box;
    let mue_positions = (0..config.n_blocks)
        .map(|_| {
            (0..config.n_mues)
                .map(|_| {
                    let mut p = [0.0; 3];
                    for axis in 0..3 {
                        let u: f64 = rng.random();
                        p[axis] = lo[axis] + u * (hi[axis] - lo[axis]);
                    }
                    p
                })
                .collect()
        })
        .collect();
    Geometry {
        mue_positions,
        ap_position: config.ap_position,
        due_position: config.due_position,
    }
}

/// Channels of every link over all blocks. Blocked links hold exact zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// `h[t][k]`: AP → mUE channel, length `N`.
    pub h: Vec<Vec<Vec<Complex64>>>,
    /// `g[t][k]`: mUE → dUE channel.
    pub g: Vec<Vec<Complex64>>,
    pub ap_mask: Vec<Vec<bool>>,
    pub due_mask: Vec<Vec<bool>>,
    /// Unblocked AP → mUE links per block.
    pub k_t: Vec<usize>,
    /// Complete AP → mUE → dUE paths per block.
    pub k_prime_t: Vec<usize>,
    /// Noise power the gains were divided by (W).
    pub noise_power: f64,
    pub chi0: f64,
}

/// Channels of one block restricted to the mUEs with an AP link.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockChannels {
    /// Global mUE indices of the served set, ascending.
    pub active: Vec<usize>,
    /// AP channels of the served mUEs.
    pub h: Vec<Vec<Complex64>>,
    /// mUE → dUE channels of the served mUEs (zero when blocked).
    pub g: Vec<Complex64>,
}

impl BlockChannels {
    pub fn n_antennas(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Local positions (into `active`) of the mUEs that can relay.
    pub fn relay_slots(&self) -> Vec<usize> {
        (0..self.active.len())
            .filter(|&i| self.g[i].norm_sqr() > 0.0)
            .collect()
    }
}

impl ChannelRealization {
    pub fn n_blocks(&self) -> usize {
        self.h.len()
    }

    pub fn n_mues(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }

    pub fn n_antennas(&self) -> usize {
        self.h
            .first()
            .and_then(|b| b.first())
            .map_or(0, Vec::len)
    }

    pub fn block(&self, t: usize) -> BlockChannels {
        let active: Vec<usize> = (0..self.n_mues()).filter(|&k| self.ap_mask[t][k]).collect();
        BlockChannels {
            h: active.iter().map(|&k| self.h[t][k].clone()).collect(),
            g: active.iter().map(|&k| self.g[t][k]).collect(),
            active,
        }
    }

    /// Blocks in which mUE `k` has an AP link.
    pub fn served_blocks(&self, k: usize) -> usize {
        self.ap_mask.iter().filter(|row| row[k]).count()
    }

    /// Blocks with at least one complete AP → mUE → dUE path.
    pub fn relay_blocks(&self) -> usize {
        self.k_prime_t.iter().filter(|&&c| c > 0).count()
    }
}

/// Draws blockage and builds LoS channels for `geometry`.
pub fn sample_channels<R: Rng + ?Sized>(
    config: &SystemConfig,
    geometry: &Geometry,
    rng: &mut R,
) -> ChannelRealization {
    let chi0 = config.chi0();
    let d_max = config.max_distance();
    let lambda = config.wavelength();
    let n_blocks = geometry.mue_positions.len();
    let n_mues = geometry.mue_positions.first().map_or(0, Vec::len);

    let block_prob = |d: f64| match config.blockage_mode {
        BlockageMode::Independent => config.blockage_p,
        BlockageMode::DistanceDependent => (0.5 * d / d_max).min(1.0),
    };

    let mut h = Vec::with_capacity(n_blocks);
    let mut g = Vec::with_capacity(n_blocks);
    let mut ap_mask = Vec::with_capacity(n_blocks);
    let mut due_mask = Vec::with_capacity(n_blocks);
    for t in 0..n_blocks {
        let forced_clear = config.final_block_unblocked && t + 1 == n_blocks;
        let mut h_t = Vec::with_capacity(n_mues);
        let mut g_t = Vec::with_capacity(n_mues);
        let mut ap_t = Vec::with_capacity(n_mues);
        let mut due_t = Vec::with_capacity(n_mues);
        for k in 0..n_mues {
            let pos = &geometry.mue_positions[t][k];
            let d_ap = geometry.ap_distance(t, k);
            let d_due = geometry.due_distance(t, k);
            // Both draws are consumed even on a forced-clear block so the RNG stream
            // does not depend on that flag.
            let ap_blocked = rng.random::<f64>() < block_prob(d_ap);
            let due_blocked = rng.random::<f64>() < block_prob(d_due);
            let ap_ok = forced_clear || !ap_blocked;
            let due_ok = forced_clear || !due_blocked;

            if ap_ok {
                let (phi, psi) = angles(&geometry.ap_position, pos);
                let amp = (chi0 * d_ap.powf(-config.pathloss_exp)).sqrt();
                let a = array_response(phi, psi, config.n_vertical, config.n_horizontal);
                h_t.push(a.into_iter().map(|x| x * amp).collect());
            } else {
                h_t.push(vec![Complex64::new(0.0, 0.0); config.n_antennas]);
            }
            if due_ok {
                let amp = (chi0 * d_due.powf(-config.pathloss_exp)).sqrt();
                let theta = (2.0 * PI * d_due / lambda).rem_euclid(2.0 * PI);
                g_t.push(Complex64::from_polar(amp, theta));
            } else {
                g_t.push(Complex64::new(0.0, 0.0));
            }
            ap_t.push(ap_ok);
            due_t.push(due_ok);
        }
        h.push(h_t);
        g.push(g_t);
        ap_mask.push(ap_t);
        due_mask.push(due_t);
    }
    let k_t = ap_mask.iter().map(|r| r.iter().filter(|&&b| b).count()).collect();
    let k_prime_t = ap_mask
        .iter()
        .zip(&due_mask)
        .map(|(a, d)| a.iter().zip(d).filter(|(&x, &y)| x && y).count())
        .collect();
    ChannelRealization {
        h,
        g,
        ap_mask,
        due_mask,
        k_t,
        k_prime_t,
        noise_power: config.noise_power(),
        chi0,
    }
}

/// Geometry and channels drawn from one seeded stream.
pub fn sample_realization(config: &SystemConfig, seed: u64) -> (Geometry, ChannelRealization) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = sample_geometry(config, &mut rng);
    let channels = sample_channels(config, &geometry, &mut rng);
    (geometry, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn steering_zero_phase_is_all_ones() {
        let a = array_response(0.0, PI / 2.0, 2, 2);
        assert_eq!(a.len(), 4);
        for x in a {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_broadside_horizontal_row() {
        // cos(π/2) kills the horizontal ramp; n_v = 1 has no vertical ramp.
        let a = array_response(PI / 2.0, 0.0, 1, 4);
        for x in a {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_norm_matches_array_size() {
        for &(phi, psi) in &[(0.3, 1.1), (-0.7, 2.5), (1.2, -0.4)] {
            let a = array_response(phi, psi, 3, 5);
            let norm: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            assert!(close(norm, 15f64.sqrt(), 1e-12));
        }
    }

    #[test]
    fn friis_at_300ghz() {
        let g = friis_unit_gain(0.3e12);
        assert!((g - 6.33e-9).abs() < 0.01e-9, "{g}");
    }

    #[test]
    fn degenerate_box_collapses_positions() {
        let config = SystemConfig {
            mue_box: [[3.0, 2.0, 0.0], [3.0, 2.0, 0.0]],
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let geo = sample_geometry(&config, &mut rng);
        for row in &geo.mue_positions {
            for p in row {
                assert_eq!(*p, [3.0, 2.0, 0.0]);
            }
        }
    }

    #[test]
    fn positions_stay_in_box_and_average_to_midpoint() {
        let config = SystemConfig {
            n_blocks: 25_000,
            n_mues: 4,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let geo = sample_geometry(&config, &mut rng);
        let [lo, hi] = config.mue_box;
        let mut sum = [0.0; 3];
        let mut count = 0.0;
        for p in geo.mue_positions.iter().flatten() {
            for axis in 0..3 {
                assert!(p[axis] >= lo[axis] && p[axis] <= hi[axis]);
                sum[axis] += p[axis];
            }
            count += 1.0;
        }
        // x and y have nonzero midpoints; z is pinned at 0.
        for axis in 0..2 {
            let mid = 0.5 * (lo[axis] + hi[axis]);
            assert!((sum[axis] / count - mid).abs() <= 0.01 * mid, "axis {axis}");
        }
        assert_eq!(sum[2], 0.0);
    }

    #[test]
    fn extreme_blockage_probabilities() {
        let base = SystemConfig {
            final_block_unblocked: false,
            ..SystemConfig::default()
        };
        let clear = SystemConfig { blockage_p: 0.0, ..base.clone() };
        let (_, ch) = sample_realization(&clear, 3);
        assert!(ch.ap_mask.iter().flatten().all(|&b| b));
        assert!(ch.due_mask.iter().flatten().all(|&b| b));

        let dark = SystemConfig { blockage_p: 1.0, ..base };
        let (_, ch) = sample_realization(&dark, 3);
        assert!(ch.h.iter().flatten().flatten().all(|x| x.norm() == 0.0));
        assert!(ch.g.iter().flatten().all(|x| x.norm() == 0.0));
        assert!(ch.k_t.iter().all(|&c| c == 0));
    }

    #[test]
    fn blocked_fraction_tracks_probability() {
        let config = SystemConfig {
            n_blocks: 2500,
            n_mues: 4,
            blockage_p: 0.3,
            final_block_unblocked: false,
            ..SystemConfig::default()
        };
        let (_, ch) = sample_realization(&config, 77);
        let total = (config.n_blocks * config.n_mues) as f64;
        let blocked = ch.ap_mask.iter().flatten().filter(|&&b| !b).count() as f64;
        let frac = blocked / total;
        assert!((0.29..=0.31).contains(&frac), "{frac}");
    }

    #[test]
    fn channel_norms_follow_pathloss() {
        let config = SystemConfig::default();
        let (geo, ch) = sample_realization(&config, 5);
        let chi0 = config.chi0();
        for t in 0..config.n_blocks {
            assert_eq!(ch.k_t[t], ch.ap_mask[t].iter().filter(|&&b| b).count());
            for k in 0..config.n_mues {
                let n2: f64 = ch.h[t][k].iter().map(|x| x.norm_sqr()).sum();
                if ch.ap_mask[t][k] {
                    let d = geo.ap_distance(t, k);
                    let expect = config.n_antennas as f64 * chi0 * d.powf(-2.0);
                    assert!(close(n2, expect, 1e-12));
                } else {
                    assert_eq!(n2, 0.0);
                }
                let gd = ch.g[t][k].norm_sqr();
                if ch.due_mask[t][k] {
                    let d = geo.due_distance(t, k);
                    assert!(close(gd, chi0 * d.powf(-2.0), 1e-12));
                } else {
                    assert_eq!(gd, 0.0);
                }
            }
        }
    }

    #[test]
    fn final_block_forced_clear() {
        let config = SystemConfig {
            blockage_p: 1.0,
            ..SystemConfig::default()
        };
        let (_, ch) = sample_realization(&config, 11);
        let last = config.n_blocks - 1;
        assert_eq!(ch.k_t[last], config.n_mues);
        assert_eq!(ch.k_prime_t[last], config.n_mues);
        assert!(ch.k_t[..last].iter().all(|&c| c == 0));
    }

    #[test]
    fn realizations_are_reproducible() {
        let config = SystemConfig::default();
        assert_eq!(sample_realization(&config, 42), sample_realization(&config, 42));
        assert_ne!(sample_realization(&config, 42).1, sample_realization(&config, 43).1);
    }

    #[test]
    fn distance_dependent_probability_bounded() {
        let config = SystemConfig {
            blockage_mode: BlockageMode::DistanceDependent,
            ..SystemConfig::default()
        };
        let d_max = config.max_distance();
        assert!((d_max - 129f64.sqrt()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let geo = sample_geometry(&config, &mut rng);
        for t in 0..config.n_blocks {
            for k in 0..config.n_mues {
                assert!(geo.ap_distance(t, k) <= d_max);
                assert!(geo.due_distance(t, k) <= d_max);
            }
        }
    }

    #[test]
    fn config_validation_and_toml() {
        let text = "n_mues = 2\nn_blocks = 6\nblockage_mode = \"distance_dependent\"\n";
        let c = SystemConfig::from_toml_str(text).unwrap();
        assert_eq!(c.n_mues, 2);
        assert_eq!(c.blockage_mode, BlockageMode::DistanceDependent);

        assert!(SystemConfig::from_toml_str("n_antennas = 9\n").is_err());
        assert!(SystemConfig::from_toml_str("blockage_p = 1.5\n").is_err());
        assert!(SystemConfig::from_toml_str("n_blocks = 0\n").is_err());
        assert!(SystemConfig::from_toml_str("mue_box = [[6.0,0.0,0.0],[2.0,8.0,0.0]]\n").is_err());
        assert!(SystemConfig::from_toml_str("bogus_key = 1\n").is_err());
    }
}

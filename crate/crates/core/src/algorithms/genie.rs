//! Full-horizon joint solvers and the efficiency calibration built on them.

use serde::{Deserialize, Serialize};

use super::{init_model_block, initial_rate_split, solve_model, Goal, ModelBlock};
use crate::error::{Error, Result};
use crate::rate_model::{Framework, TransmitPlan};
use crate::sca::{Sense, ScaTrace, Termination};
use crate::scenario::{sample_realization, ChannelRealization, SystemConfig};

/// Which demands a run keeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traffic {
    #[default]
    Full,
    /// mUE traffic only (`D_d = 0`).
    MueOnly,
    /// Relay traffic only (`D_k = 0`).
    DueOnly,
}

impl Traffic {
    pub fn demands(self, config: &SystemConfig) -> (Vec<f64>, f64) {
        let mue = match self {
            Traffic::DueOnly => 0.0,
            _ => config.throughput_mue,
        };
        let due = match self {
            Traffic::MueOnly => 0.0,
            _ => config.throughput_due,
        };
        (vec![mue; config.n_mues], due)
    }
}

fn idle_trace() -> ScaTrace {
    ScaTrace {
        sense: Sense::Minimize,
        objective: vec![0.0],
        residual: vec![0.0],
        termination: Termination::Converged,
    }
}

/// Joint energy minimization over every block of `channels` under `framework`.
pub fn joint_solve(
    framework: Framework,
    channels: &ChannelRealization,
    mue_demand: &[f64],
    due_demand: f64,
    config: &SystemConfig,
) -> Result<(TransmitPlan, ScaTrace)> {
    let n_blocks = channels.n_blocks();
    let mut plan = TransmitPlan::idle(framework, n_blocks);
    if mue_demand.iter().all(|&d| d <= 0.0) && due_demand <= 0.0 {
        return Ok((plan, idle_trace()));
    }
    let targets = initial_rate_split(channels, mue_demand, due_demand)?;
    let goal = Goal::Demand { mue: mue_demand.to_vec(), due: due_demand };
    let mut blocks = Vec::new();
    let mut init = Vec::new();
    for (t, target) in targets.iter().enumerate() {
        let ch = channels.block(t);
        let block = ModelBlock::select(t, &ch.active, &ch.h, &ch.g, &goal);
        if block.is_empty() {
            continue;
        }
        let slot_of = |k: usize| ch.active.iter().position(|&a| a == k).expect("selected from the served set");
        let mue: Vec<f64> = block.active.iter().map(|&k| target.mue[slot_of(k)]).collect();
        let due: f64 = block.active.iter().map(|&k| target.due[slot_of(k)]).sum();
        init.push(init_model_block(framework, &block, &mue, due)?);
        blocks.push(block);
    }
    let ts: Vec<usize> = blocks.iter().map(|b| b.t).collect();
    let (solved, trace) = solve_model(framework, blocks, init, goal, config)?;
    for (t, block) in ts.into_iter().zip(solved) {
        plan.blocks[t] = block;
    }
    Ok((plan, trace))
}

/// GENIE: iDeCRS joint solve with the configured demands.
pub fn genie_solve(channels: &ChannelRealization, config: &SystemConfig) -> Result<(TransmitPlan, ScaTrace)> {
    let (mue, due) = Traffic::Full.demands(config);
    joint_solve(Framework::IDeCrs, channels, &mue, due, config)
}

/// GENIE-style joint solve under the DeCRS two-layer model.
pub fn decrs_genie_solve(
    channels: &ChannelRealization,
    config: &SystemConfig,
    traffic: Traffic,
) -> Result<(TransmitPlan, ScaTrace)> {
    let (mue, due) = traffic.demands(config);
    joint_solve(Framework::DeCrs, channels, &mue, due, config)
}

/// Calibrated efficiency of the GENIE planner and the ECO hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyProfile {
    /// Delivered normalized data per joule.
    pub delta: f64,
    pub s: f64,
    /// Energy bound `(Σ D_k + D_d) / (s Δ)` in joules.
    pub bound: f64,
}

impl EfficiencyProfile {
    pub fn new(delta: f64, s: f64, total_demand: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) || !(s > 0.0) {
            return Err(Error::Domain(format!("efficiency {delta} and s = {s} must be positive")));
        }
        Ok(Self { delta, s, bound: total_demand / (s * delta) })
    }

    /// Required block efficiency `s Δ`.
    pub fn floor(&self) -> f64 {
        self.s * self.delta
    }
}

/// Seed of the `i`-th calibration realization; disjoint from trial seeds near `base`.
pub fn calibration_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(0x5EED_0000_0000).wrapping_add(i as u64)
}

/// Δ from `n_trials` GENIE runs on fresh realizations, or the configured fixed value.
pub fn compute_delta(config: &SystemConfig, n_trials: usize) -> Result<EfficiencyProfile> {
    let total = config.total_demand();
    if let Some(delta) = config.eco_delta {
        return EfficiencyProfile::new(delta, config.eco_s, total);
    }
    if total <= 0.0 {
        return Err(Error::Calibration("no demand to calibrate against".into()));
    }
    let mut energies = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let (_, channels) = sample_realization(config, calibration_seed(config.seed, i));
        match genie_solve(&channels, config) {
            Ok((plan, _)) => energies.push(plan.total_energy(config.block_duration)),
            Err(Error::InfeasibleRealization(reason)) => {
                log::debug!("calibration trial {i} skipped: {reason}");
            }
            Err(e) => return Err(e),
        }
    }
    if energies.is_empty() {
        return Err(Error::Calibration(format!("all {n_trials} calibration trials were infeasible")));
    }
    let mean = energies.iter().sum::<f64>() / energies.len() as f64;
    EfficiencyProfile::new(total / mean, config.eco_s, total)
}

/// ECO energy bound in joules.
pub fn eco_energy_bound(config: &SystemConfig, profile: &EfficiencyProfile) -> f64 {
    config.total_demand() / (profile.s * profile.delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate_model::verify_with_demands;
    use crate::scenario::BlockageMode;
    use num_complex::Complex64;

    fn awgn(n_blocks: usize, gains: &[f64]) -> ChannelRealization {
        ChannelRealization {
            h: (0..n_blocks).map(|_| gains.iter().map(|g| vec![Complex64::new(g.sqrt(), 0.0)]).collect()).collect(),
            g: vec![vec![Complex64::new(0.0, 0.0); gains.len()]; n_blocks],
            ap_mask: vec![vec![true; gains.len()]; n_blocks],
            due_mask: vec![vec![false; gains.len()]; n_blocks],
            k_t: vec![gains.len(); n_blocks],
            k_prime_t: vec![0; n_blocks],
            noise_power: 1.0,
            chi0: 1.0,
        }
    }

    fn tiny(n_mues: usize, n_blocks: usize, d: f64, d_d: f64) -> SystemConfig {
        SystemConfig {
            n_antennas: 1,
            n_vertical: 1,
            n_horizontal: 1,
            n_mues,
            n_blocks,
            throughput_mue: d,
            throughput_due: d_d,
            block_duration: 1.0,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn single_link_matches_shannon_inversion() {
        let config = tiny(1, 1, 2.0, 0.0);
        let ch = awgn(1, &[1.0]);
        let (plan, trace) = genie_solve(&ch, &config).unwrap();
        let energy = plan.total_energy(1.0);
        assert!((energy - 3.0).abs() < 3e-4, "energy {energy}, trace {trace:?}");
    }

    #[test]
    fn zero_demand_gives_zero_plan() {
        let config = tiny(2, 3, 0.0, 0.0);
        let ch = awgn(3, &[1.0, 2.0]);
        let (plan, _) = genie_solve(&ch, &config).unwrap();
        assert_eq!(plan.total_energy(1.0), 0.0);
    }

    #[test]
    fn two_equal_blocks_split_evenly() {
        let config = tiny(1, 2, 2.0, 0.0);
        let ch = awgn(2, &[1.0]);
        let (plan, _) = genie_solve(&ch, &config).unwrap();
        // Two blocks at rate 1 need power 1 each.
        assert!((plan.total_energy(1.0) - 2.0).abs() < 2e-3);
        assert!((plan.blocks[0].power() - plan.blocks[1].power()).abs() < 1e-2);
    }

    #[test]
    fn blocked_user_without_service_is_infeasible() {
        let config = tiny(1, 2, 1.0, 0.0);
        let mut ch = awgn(2, &[1.0]);
        for t in 0..2 {
            ch.ap_mask[t][0] = false;
            ch.h[t][0] = vec![Complex64::new(0.0, 0.0)];
        }
        assert!(matches!(genie_solve(&ch, &config), Err(Error::InfeasibleRealization(_))));
    }

    #[test]
    fn sampled_plans_verify_for_every_framework() {
        let config = SystemConfig { n_mues: 2, n_blocks: 3, throughput_mue: 3.0, throughput_due: 1.0, ..SystemConfig::default() };
        let (_, ch) = sample_realization(&config, 11);
        let (mue, due) = Traffic::Full.demands(&config);
        for fw in [Framework::IDeCrs, Framework::DeCrs, Framework::Crs] {
            let (plan, trace) = joint_solve(fw, &ch, &mue, due, &config).unwrap();
            let report = verify_with_demands(&plan, &ch, &mue, due, config.block_duration, 1e-5).unwrap();
            assert!(report.feasible, "{fw:?}: {:?}", report.violations);
            assert!(trace.worst_relative_regression(1e-12) <= 1e-6, "{fw:?}: {trace:?}");
        }
    }

    #[test]
    fn decrs_matches_idecrs_for_one_user() {
        let config = SystemConfig {
            n_mues: 1,
            n_blocks: 2,
            throughput_mue: 4.0,
            throughput_due: 1.0,
            blockage_p: 0.0,
            blockage_mode: BlockageMode::Independent,
            ..SystemConfig::default()
        };
        let (_, ch) = sample_realization(&config, 5);
        let e = |fw| {
            let (mue, due) = Traffic::Full.demands(&config);
            joint_solve(fw, &ch, &mue, due, &config).unwrap().0.total_energy(config.block_duration)
        };
        let (a, b) = (e(Framework::IDeCrs), e(Framework::DeCrs));
        assert!((a - b).abs() <= 1e-3 * a, "iDeCRS {a} vs DeCRS {b}");
    }

    #[test]
    fn traffic_switches_zero_the_right_demand() {
        let config = SystemConfig::default();
        assert_eq!(Traffic::MueOnly.demands(&config).1, 0.0);
        assert!(Traffic::DueOnly.demands(&config).0.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn efficiency_profile_arithmetic() {
        let p = EfficiencyProfile::new(1.0, 0.2, 42.0).unwrap();
        assert!((p.bound - 210.0).abs() < 1e-12);
        let q = EfficiencyProfile::new(1.0, 0.4, 42.0).unwrap();
        assert!((q.bound - 105.0).abs() < 1e-12);
        let config = SystemConfig { n_mues: 4, throughput_mue: 10.0, throughput_due: 2.0, eco_s: 0.2, ..SystemConfig::default() };
        assert!((eco_energy_bound(&config, &p) - 210.0).abs() < 1e-12);
        assert!(EfficiencyProfile::new(0.0, 0.2, 1.0).is_err());
    }

    #[test]
    fn fixed_delta_skips_calibration() {
        let config = SystemConfig { eco_delta: Some(0.5), eco_s: 0.5, ..SystemConfig::default() };
        let p = compute_delta(&config, 20).unwrap();
        assert_eq!(p.delta, 0.5);
        assert!((p.bound - config.total_demand() / 0.25).abs() < 1e-9);
    }
}

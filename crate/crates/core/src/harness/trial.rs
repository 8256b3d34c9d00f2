use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::algorithms::{
    compute_delta, decrs_genie_solve, genie_solve, run_sequential, Algorithm, AlgorithmOutput, EfficiencyProfile,
    Traffic,
};
use crate::error::{Error, Result};
use crate::rate_model::verify_plan;
use crate::sca::ScaTrace;
use crate::scenario::{sample_realization, ChannelRealization, SystemConfig};

/// Tolerance used when checking returned plans.
pub const VERIFY_TOL: f64 = 1e-5;

/// Outcome of one algorithm on one realization.
///
/// Equality ignores `wall_time`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Joules; NaN when no plan was produced.
    pub energy_j: f64,
    pub delivered_mue: Vec<f64>,
    pub delivered_due: f64,
    pub feasible: bool,
    /// Fraction of the energy spent by the last-block flush.
    pub flush_share: f64,
    /// Iterations of each SCA run.
    pub sca_iterations: Vec<usize>,
    pub traces: Vec<ScaTrace>,
    /// Largest objective step against the SCA direction, relative to the objective.
    pub worst_regression: f64,
    pub max_violation: f64,
    pub eco_skips: usize,
    pub failed_blocks: Vec<usize>,
    /// Noise power N₀ (W) that channel gains were normalized by.
    pub noise_power: f64,
    /// Why the trial is infeasible, if it is.
    pub reason: Option<String>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrialResult {
    pub(crate) fn failed(seed: u64, algorithm: Algorithm, noise_power: f64, reason: String, wall_time: Duration) -> Self {
        Self {
            seed,
            algorithm,
            energy_j: f64::NAN,
            delivered_mue: Vec::new(),
            delivered_due: 0.0,
            feasible: false,
            flush_share: 0.0,
            sca_iterations: Vec::new(),
            traces: Vec::new(),
            worst_regression: 0.0,
            max_violation: f64::INFINITY,
            eco_skips: 0,
            failed_blocks: Vec::new(),
            noise_power,
            reason: Some(reason),
            wall_time,
        }
    }

    pub fn total_iterations(&self) -> usize {
        self.sca_iterations.iter().sum()
    }
}

impl PartialEq for TrialResult {
    fn eq(&self, other: &Self) -> bool {
        let bits = |x: f64| x.to_bits();
        self.seed == other.seed
            && self.algorithm == other.algorithm
            && bits(self.energy_j) == bits(other.energy_j)
            && self.delivered_mue == other.delivered_mue
            && self.delivered_due == other.delivered_due
            && self.feasible == other.feasible
            && self.flush_share == other.flush_share
            && self.sca_iterations == other.sca_iterations
            && self.traces == other.traces
            && self.worst_regression == other.worst_regression
            && bits(self.max_violation) == bits(other.max_violation)
            && self.eco_skips == other.eco_skips
            && self.failed_blocks == other.failed_blocks
            && self.noise_power == other.noise_power
            && self.reason == other.reason
    }
}

fn execute(
    config: &SystemConfig,
    algorithm: Algorithm,
    channels: &ChannelRealization,
    profile: Option<&EfficiencyProfile>,
) -> Result<AlgorithmOutput> {
    let joint = |(plan, trace)| AlgorithmOutput {
        plan,
        traces: vec![trace],
        flush_energy: 0.0,
        eco_skips: 0,
        failed_blocks: Vec::new(),
    };
    match algorithm {
        Algorithm::Genie => genie_solve(channels, config).map(joint),
        Algorithm::DecrsGenie => decrs_genie_solve(channels, config, Traffic::Full).map(joint),
        Algorithm::Eco => {
            let owned;
            let profile = match profile {
                Some(p) => p,
                None => {
                    owned = compute_delta(config, config.calibration_trials)?;
                    &owned
                }
            };
            run_sequential(algorithm, channels, config, Some(profile))
        }
        Algorithm::Edt | Algorithm::Crs => run_sequential(algorithm, channels, config, None),
    }
}

/// Runs `algorithm` on an existing realization and verifies its plan.
pub fn run_on(
    config: &SystemConfig,
    algorithm: Algorithm,
    seed: u64,
    channels: &ChannelRealization,
    profile: Option<&EfficiencyProfile>,
) -> TrialResult {
    let start = Instant::now();
    let output = execute(config, algorithm, channels, profile);
    let wall_time = start.elapsed();
    let output = match output {
        Ok(o) => o,
        Err(e) => {
            if !matches!(e, Error::InfeasibleRealization(_)) {
                log::warn!("{algorithm} failed on seed {seed}: {e}");
            }
            return TrialResult::failed(seed, algorithm, channels.noise_power, e.to_string(), wall_time);
        }
    };
    let report = match verify_plan(&output.plan, channels, config, VERIFY_TOL) {
        Ok(r) => r,
        Err(e) => return TrialResult::failed(seed, algorithm, channels.noise_power, e.to_string(), wall_time),
    };
    let reason = (!report.feasible).then(|| {
        report
            .violations
            .iter()
            .map(|v| match v.block {
                Some(t) => format!("{} in block {t} by {:.3e}", v.constraint, v.amount),
                None => format!("{} by {:.3e}", v.constraint, v.amount),
            })
            .collect::<Vec<_>>()
            .join("; ")
    });
    let energy = report.total_energy;
    TrialResult {
        seed,
        algorithm,
        energy_j: energy,
        delivered_mue: report.delivered_mue,
        delivered_due: report.delivered_due,
        feasible: report.feasible,
        flush_share: if energy > 0.0 { output.flush_energy / energy } else { 0.0 },
        sca_iterations: output.traces.iter().map(ScaTrace::iterations).collect(),
        worst_regression: output
            .traces
            .iter()
            .map(|t| t.worst_relative_regression(1e-12))
            .fold(0.0, f64::max),
        traces: output.traces,
        max_violation: report.max_violation,
        eco_skips: output.eco_skips,
        failed_blocks: output.failed_blocks,
        noise_power: channels.noise_power,
        reason,
        wall_time,
    }
}

/// Samples the realization for `seed` and runs one algorithm on it.
///
/// ECO calibrates Δ itself when no profile is given.
pub fn run_trial(
    config: &SystemConfig,
    algorithm: Algorithm,
    seed: u64,
    profile: Option<&EfficiencyProfile>,
) -> TrialResult {
    let (_, channels) = sample_realization(config, seed);
    run_on(config, algorithm, seed, &channels, profile)
}

/// Runs every algorithm on the same realization.
pub fn run_paired(
    config: &SystemConfig,
    algorithms: &[Algorithm],
    seed: u64,
    profile: Option<&EfficiencyProfile>,
) -> Vec<TrialResult> {
    let (_, channels) = sample_realization(config, seed);
    algorithms
        .iter()
        .map(|&a| run_on(config, a, seed, &channels, profile))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SystemConfig {
        SystemConfig { n_mues: 2, n_blocks: 3, throughput_mue: 2.0, throughput_due: 0.5, ..SystemConfig::default() }
    }

    #[test]
    fn zero_demand_is_free_and_feasible() {
        let config = SystemConfig { throughput_mue: 0.0, throughput_due: 0.0, ..small() };
        for algorithm in [Algorithm::Genie, Algorithm::Edt, Algorithm::Crs, Algorithm::DecrsGenie] {
            let r = run_trial(&config, algorithm, 3, None);
            assert!(r.feasible, "{algorithm}: {:?}", r.reason);
            assert_eq!(r.energy_j, 0.0);
        }
    }

    #[test]
    fn reruns_are_identical() {
        let config = small();
        let a = run_trial(&config, Algorithm::Edt, 7, None);
        let b = run_trial(&config, Algorithm::Edt, 7, None);
        assert_eq!(a, b);
        assert!(a.feasible);
    }

    #[test]
    fn infeasible_realization_is_flagged() {
        let config = SystemConfig { blockage_p: 1.0, final_block_unblocked: false, ..small() };
        let r = run_trial(&config, Algorithm::Genie, 1, None);
        assert!(!r.feasible);
        assert!(r.energy_j.is_nan());
        assert!(r.reason.is_some());
    }

    #[test]
    fn paired_runs_share_the_realization() {
        let config = small();
        let rows = run_paired(&config, &[Algorithm::Genie, Algorithm::Edt], 4, None);
        let solo = run_trial(&config, Algorithm::Edt, 4, None);
        assert_eq!(rows[1], solo);
        assert!(rows[0].energy_j <= rows[1].energy_j * (1.0 + 1e-6));
    }
}

//! Per-block schedulers that only see the current block's channels: ECO, EDT, the CRS
//! baseline, and the residual flush on the last block.

use super::model::{fit_allocations, modeled_due_rate};
use super::{
    block_delivery, init_model_block, solve_model, Algorithm, AlgorithmOutput, EfficiencyProfile, Goal,
    ModelBlock,
};
use crate::error::{Error, Result};
use crate::rate_model::{BlockPlan, Framework, TransmitPlan};
use crate::sca::ScaTrace;
use crate::scenario::{ChannelRealization, SystemConfig};

/// Residuals below this are treated as delivered.
const RESIDUAL_FLOOR: f64 = 1e-7;

/// Maximum number of ω doublings in [`eco_feasible_init`].
pub const MAX_DOUBLINGS: u32 = 60;

/// Data still owed to each user at the start of a block (bits/s/Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualState {
    pub demand_mue: Vec<f64>,
    pub demand_due: f64,
    pub mue: Vec<f64>,
    pub due: f64,
}

impl ResidualState {
    pub fn new(demand_mue: Vec<f64>, demand_due: f64) -> Self {
        Self {
            mue: demand_mue.clone(),
            due: demand_due,
            demand_mue,
            demand_due,
        }
    }

    pub fn from_config(config: &SystemConfig) -> Self {
        Self::new(vec![config.throughput_mue; config.n_mues], config.throughput_due)
    }

    /// `δ_k / D_k`, or 0 without demand.
    pub fn weight_mue(&self, k: usize) -> f64 {
        if self.demand_mue[k] > 0.0 {
            self.mue[k] / self.demand_mue[k]
        } else {
            0.0
        }
    }

    pub fn weight_due(&self) -> f64 {
        if self.demand_due > 0.0 {
            self.due / self.demand_due
        } else {
            0.0
        }
    }

    /// Subtracts delivered rates, clamping at zero.
    pub fn apply(&mut self, mue: &[f64], due: f64) {
        let step = |left: &mut f64, got: f64| {
            *left = (*left - got).max(0.0);
            if *left < RESIDUAL_FLOOR {
                *left = 0.0;
            }
        };
        for (left, &got) in self.mue.iter_mut().zip(mue) {
            step(left, got);
        }
        step(&mut self.due, due);
    }

    pub fn is_cleared(&self) -> bool {
        self.due == 0.0 && self.mue.iter().all(|&d| d == 0.0)
    }
}

/// Result of one per-block decision.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub plan: BlockPlan,
    pub trace: Option<ScaTrace>,
    pub residuals: ResidualState,
}

impl StepOutcome {
    fn idle(state: &ResidualState) -> Self {
        Self { plan: BlockPlan::idle(), trace: None, residuals: state.clone() }
    }
}

fn finish(
    framework: Framework,
    channels: &ChannelRealization,
    t: usize,
    state: &ResidualState,
    plan: BlockPlan,
    trace: Option<ScaTrace>,
) -> StepOutcome {
    let (mue, due) = block_delivery(framework, &plan, channels, t);
    let mut residuals = state.clone();
    residuals.apply(&mue, due);
    StepOutcome { plan, trace, residuals }
}

/// Energy minimization of block `t` with hard targets `δ / blocks_remaining`. Targets of
/// users without a link in this block are dropped and stay in the residuals.
fn energy_step(
    framework: Framework,
    channels: &ChannelRealization,
    t: usize,
    state: &ResidualState,
    blocks_remaining: usize,
    config: &SystemConfig,
) -> Result<StepOutcome> {
    let div = blocks_remaining.max(1) as f64;
    let ch = channels.block(t);
    let mut mue = vec![0.0; channels.n_mues()];
    for &k in &ch.active {
        mue[k] = state.mue[k] / div;
    }
    let due = if ch.relay_slots().is_empty() { 0.0 } else { state.due / div };
    let goal = Goal::Demand { mue, due };
    let block = ModelBlock::select(t, &ch.active, &ch.h, &ch.g, &goal);
    if block.is_empty() {
        return Ok(StepOutcome::idle(state));
    }
    let Goal::Demand { mue, .. } = &goal else { unreachable!() };
    let targets: Vec<f64> = block.active.iter().map(|&k| mue[k]).collect();
    let init = init_model_block(framework, &block, &targets, due)?;
    let (mut plans, trace) = solve_model(framework, vec![block], vec![init], goal, config)?;
    Ok(finish(framework, channels, t, state, plans.remove(0), Some(trace)))
}

/// Divisor used by EDT at zero-based block `t`: the remaining block count, or 1 inside
/// the final `edt_buffer` blocks.
pub fn edt_divisor(t: usize, n_blocks: usize, buffer: usize) -> usize {
    if t + 1 + buffer >= n_blocks {
        1
    } else {
        n_blocks - t
    }
}

/// EDT: minimum-energy block meeting an even share of every residual.
pub fn edt_step(
    channels: &ChannelRealization,
    t: usize,
    state: &ResidualState,
    config: &SystemConfig,
) -> Result<StepOutcome> {
    let rem = edt_divisor(t, channels.n_blocks(), config.edt_buffer);
    energy_step(Framework::IDeCrs, channels, t, state, rem, config)
}

/// CRS baseline with EDT's objective and throughput constraints.
pub fn crs_step(
    channels: &ChannelRealization,
    t: usize,
    state: &ResidualState,
    config: &SystemConfig,
) -> Result<StepOutcome> {
    let rem = edt_divisor(t, channels.n_blocks(), config.edt_buffer);
    energy_step(Framework::Crs, channels, t, state, rem, config)
}

/// Sends every residual in block `t` under `framework`.
pub fn final_flush(
    framework: Framework,
    channels: &ChannelRealization,
    t: usize,
    state: &ResidualState,
    config: &SystemConfig,
) -> Result<StepOutcome> {
    for (k, &left) in state.mue.iter().enumerate() {
        if left > 0.0 && !channels.ap_mask[t][k] {
            return Err(Error::InfeasibleRealization(format!(
                "mUE {k} still owed {left} but blocked in the flush block"
            )));
        }
    }
    if state.due > 0.0 && channels.k_prime_t[t] == 0 {
        return Err(Error::InfeasibleRealization("dUE residual left but no relay path in the flush block".into()));
    }
    energy_step(framework, channels, t, state, 1, config)
}

/// Delivered rate per joule of `plan` on `block`.
fn efficiency(framework: Framework, block: &ModelBlock, plan: &BlockPlan, tau: f64) -> f64 {
    let rate: f64 = plan.split.iter().map(|s| s.mue_rate()).sum::<f64>() + modeled_due_rate(framework, block, plan);
    let energy = tau * plan.power();
    if energy > 0.0 {
        rate / energy
    } else {
        f64::INFINITY
    }
}

/// Divides the precoders of `init` by ω = 1, 2, 4, … until the efficiency floor holds at
/// the scaled point, re-fitting allocations each time. Returns the point and log₂ ω.
pub fn eco_feasible_init(
    framework: Framework,
    block: &ModelBlock,
    init: &BlockPlan,
    floor: f64,
    tau: f64,
) -> Result<(BlockPlan, u32)> {
    for doublings in 0..=MAX_DOUBLINGS {
        let mut candidate = init.clone();
        if doublings > 0 {
            candidate.scale_precoders(0.5f64.powi(doublings as i32));
            fit_allocations(framework, block, &mut candidate);
        }
        if efficiency(framework, block, &candidate, tau) >= floor {
            return Ok((candidate, doublings));
        }
    }
    Err(Error::EfficiencyInfeasible { doublings: MAX_DOUBLINGS })
}

/// ECO: weighted sum-rate maximization of block `t` capped by the residuals and held to
/// the efficiency floor `s Δ`.
pub fn eco_step(
    channels: &ChannelRealization,
    t: usize,
    state: &ResidualState,
    profile: &EfficiencyProfile,
    config: &SystemConfig,
) -> Result<StepOutcome> {
    let n_mues = channels.n_mues();
    let ch = channels.block(t);
    let goal = Goal::Weighted {
        weight_mue: (0..n_mues).map(|k| state.weight_mue(k)).collect(),
        weight_due: state.weight_due(),
        cap_mue: state.mue.clone(),
        cap_due: state.due,
        efficiency: profile.floor(),
    };
    let block = ModelBlock::select(t, &ch.active, &ch.h, &ch.g, &goal);
    if block.is_empty() {
        return Ok(StepOutcome::idle(state));
    }
    let div = (channels.n_blocks() - t).max(1) as f64;
    let start = |block: &ModelBlock| -> Result<BlockPlan> {
        let targets: Vec<f64> = block.active.iter().map(|&k| state.mue[k] / div).collect();
        let due = if block.relays.iter().any(|&r| r) { state.due / div } else { 0.0 };
        let init = init_model_block(Framework::IDeCrs, block, &targets, due)?;
        Ok(eco_feasible_init(Framework::IDeCrs, block, &init, profile.floor(), config.block_duration)?.0)
    };
    // Scaled multi-user beams can miss the floor where a single matched beam meets it,
    // so single links are tried from the strongest down before the block is given up.
    let (block, init) = match start(&block) {
        Ok(init) => (block, init),
        Err(Error::EfficiencyInfeasible { .. }) if block.len() > 1 => {
            let mut order: Vec<usize> = (0..block.len()).collect();
            let strength = |i: usize| block.h[i].iter().map(|x| x.norm_sqr()).sum::<f64>();
            order.sort_by(|&a, &b| strength(b).total_cmp(&strength(a)));
            order
                .into_iter()
                .find_map(|i| {
                    let single = block.subset(&[i]);
                    start(&single).ok().map(|init| (single, init))
                })
                .ok_or(Error::EfficiencyInfeasible { doublings: MAX_DOUBLINGS })?
        }
        Err(e) => return Err(e),
    };
    let (mut plans, trace) = solve_model(Framework::IDeCrs, vec![block], vec![init], goal, config)?;
    Ok(finish(Framework::IDeCrs, channels, t, state, plans.remove(0), Some(trace)))
}

/// Runs a per-block scheduler over every block, flushing the residuals on the last one.
///
/// Blocks whose targets cannot be met (or, for ECO, whose efficiency floor is out of
/// reach) stay idle and their residuals carry forward.
pub fn run_sequential(
    algorithm: Algorithm,
    channels: &ChannelRealization,
    config: &SystemConfig,
    profile: Option<&EfficiencyProfile>,
) -> Result<AlgorithmOutput> {
    if !algorithm.is_sequential() {
        return Err(Error::Usage(format!("{algorithm} is not a per-block scheduler")));
    }
    let framework = algorithm.framework();
    let n_blocks = channels.n_blocks();
    let mut state = ResidualState::from_config(config);
    let mut out = AlgorithmOutput {
        plan: TransmitPlan::idle(framework, n_blocks),
        traces: Vec::new(),
        flush_energy: 0.0,
        eco_skips: 0,
        failed_blocks: Vec::new(),
    };
    for t in 0..n_blocks {
        let step = if t + 1 == n_blocks {
            final_flush(framework, channels, t, &state, config)?
        } else {
            let attempt = match algorithm {
                Algorithm::Eco => {
                    let profile = profile.ok_or_else(|| Error::Usage("ECO needs an efficiency profile".into()))?;
                    eco_step(channels, t, &state, profile, config)
                }
                Algorithm::Edt => edt_step(channels, t, &state, config),
                _ => crs_step(channels, t, &state, config),
            };
            match attempt {
                Ok(step) => step,
                Err(Error::EfficiencyInfeasible { .. }) => {
                    out.eco_skips += 1;
                    StepOutcome::idle(&state)
                }
                Err(e @ (Error::InfeasibleTargets(_) | Error::Initialization(_))) => {
                    log::debug!("{algorithm} block {t} left idle: {e}");
                    out.failed_blocks.push(t);
                    StepOutcome::idle(&state)
                }
                Err(e) => return Err(e),
            }
        };
        if t + 1 == n_blocks {
            out.flush_energy = step.plan.power() * config.block_duration;
        }
        out.plan.blocks[t] = step.plan;
        out.traces.extend(step.trace);
        state = step.residuals;
    }
    Ok(out)
}

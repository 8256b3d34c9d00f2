use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    block_energy, common_rate, crs_block_rates, decrs_block_rates, due_block_rate, private_rate,
    relay_rate, BlockPlan, Framework, TransmitPlan,
};
use crate::error::{Error, Result};
use crate::scenario::{ChannelRealization, SystemConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub block: Option<usize>,
    pub constraint: String,
    pub amount: f64,
}

/// Rates and energy recomputed from primal variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// `mue_rates[t][k]` with zeros for unserved mUEs.
    pub mue_rates: Vec<Vec<f64>>,
    pub due_rates: Vec<f64>,
    /// Joules.
    pub block_energy: Vec<f64>,
    pub total_energy: f64,
    pub delivered_mue: Vec<f64>,
    pub delivered_due: f64,
    pub max_violation: f64,
    /// Every violation above the tolerance.
    pub violations: Vec<Violation>,
    pub feasible: bool,
}

/// Checks `plan` against the original rate and throughput constraints of `config`.
pub fn verify_plan(
    plan: &TransmitPlan,
    channels: &ChannelRealization,
    config: &SystemConfig,
    tol: f64,
) -> Result<RateReport> {
    let demands = vec![config.throughput_mue; channels.n_mues()];
    verify_with_demands(plan, channels, &demands, config.throughput_due, config.block_duration, tol)
}

/// [`verify_plan`] with explicit per-mUE and dUE demands.
pub fn verify_with_demands(
    plan: &TransmitPlan,
    channels: &ChannelRealization,
    mue_demand: &[f64],
    due_demand: f64,
    tau: f64,
    tol: f64,
) -> Result<RateReport> {
    let n_blocks = channels.n_blocks();
    let n_mues = channels.n_mues();
    if plan.blocks.len() != n_blocks {
        return Err(Error::Dimension(format!(
            "plan has {} blocks, channels have {n_blocks}",
            plan.blocks.len()
        )));
    }
    if mue_demand.len() != n_mues {
        return Err(Error::Dimension(format!(
            "{} mUE demands for {n_mues} mUEs",
            mue_demand.len()
        )));
    }

    let mut worst = 0.0f64;
    let mut violations = Vec::new();
    let mut note = |block: Option<usize>, constraint: String, amount: f64| {
        worst = worst.max(amount);
        if amount > tol {
            violations.push(Violation { block, constraint, amount });
        }
    };

    let mut mue_rates = vec![vec![0.0; n_mues]; n_blocks];
    let mut due_rates = vec![0.0; n_blocks];
    let mut energies = vec![0.0; n_blocks];

    for (t, block) in plan.blocks.iter().enumerate() {
        check_shapes(plan.framework, block, channels, t)?;
        energies[t] = block_energy(block, tau);
        if block.is_idle() {
            continue;
        }
        let h: Vec<Vec<Complex64>> = block.active.iter().map(|&k| channels.h[t][k].clone()).collect();
        let g: Vec<Complex64> = block.active.iter().map(|&k| channels.g[t][k]).collect();

        for (i, s) in block.split.iter().enumerate() {
            let least = s.alpha_c.min(s.alpha_p).min(s.beta_c).min(s.beta_p);
            note(Some(t), format!("split nonnegative (slot {i})"), -least);
            mue_rates[t][block.active[i]] = s.mue_rate();
        }

        match plan.framework {
            Framework::IDeCrs => {
                let common_load: f64 = block.split.iter().map(|s| s.alpha_c + s.beta_c).sum();
                for i in 0..h.len() {
                    let rc = common_rate(&h[i], &block.common, &block.private);
                    let rp = private_rate(&h[i], &block.private, i);
                    note(Some(t), format!("common decodable at slot {i}"), common_load - rc);
                    let s = &block.split[i];
                    note(Some(t), format!("private decodable at slot {i}"), s.alpha_p + s.beta_p - rp);
                }
                due_rates[t] = extraction_due_rate(block, &g);
            }
            Framework::DeCrs => {
                let rates = decrs_block_rates(&h, &block.private, &block.layer2);
                for (i, s) in block.split.iter().enumerate() {
                    note(Some(t), format!("layer 1 decodable at slot {i}"), s.alpha_p + s.beta_p - rates.layer1[i]);
                    note(Some(t), format!("layer 2 decodable at slot {i}"), s.alpha_c - rates.layer2[i]);
                    note(Some(t), format!("layer 2 carries no dUE data (slot {i})"), s.beta_c.abs());
                }
                due_rates[t] = extraction_due_rate(block, &g);
            }
            Framework::Crs => {
                let content: f64 = block.split.iter().map(|s| s.alpha_c).sum();
                let rates = crs_block_rates(
                    &h,
                    &g,
                    &block.common,
                    &block.private,
                    &block.relay,
                    content,
                    block.due_share,
                );
                note(Some(t), "dUE share nonnegative".into(), -block.due_share);
                for (i, s) in block.split.iter().enumerate() {
                    note(Some(t), format!("common decodable at slot {i}"), content + block.due_share - rates.common[i]);
                    note(Some(t), format!("private decodable at slot {i}"), s.alpha_p - rates.private[i]);
                    note(Some(t), format!("no dUE data outside the common stream (slot {i})"), s.due_part().abs());
                }
                due_rates[t] = rates.due;
            }
        }
    }

    let mut delivered_mue = vec![0.0; n_mues];
    for row in &mue_rates {
        for (d, r) in delivered_mue.iter_mut().zip(row) {
            *d += r;
        }
    }
    let delivered_due: f64 = due_rates.iter().sum();
    for (k, (&need, &got)) in mue_demand.iter().zip(&delivered_mue).enumerate() {
        note(None, format!("throughput of mUE {k}"), need - got);
    }
    note(None, "throughput of dUE".into(), due_demand - delivered_due);

    Ok(RateReport {
        mue_rates,
        due_rates,
        total_energy: energies.iter().sum(),
        block_energy: energies,
        delivered_mue,
        delivered_due,
        max_violation: worst,
        feasible: worst <= tol,
        violations,
    })
}

fn extraction_due_rate(block: &BlockPlan, g: &[Complex64]) -> f64 {
    let relay_rates: Vec<f64> = (0..g.len()).map(|i| relay_rate(g, &block.relay, i)).collect();
    let betas: Vec<f64> = block.split.iter().map(|s| s.due_part()).collect();
    due_block_rate(&betas, &relay_rates)
}

fn check_shapes(framework: Framework, block: &BlockPlan, channels: &ChannelRealization, t: usize) -> Result<()> {
    let n = block.active.len();
    let n_ant = channels.n_antennas();
    let bad = |m: String| Err(Error::Dimension(format!("block {t}: {m}")));
    if block.is_idle() {
        if block.power() > 0.0 {
            return bad("power allocated without served mUEs".into());
        }
        return Ok(());
    }
    for &k in &block.active {
        if k >= channels.n_mues() {
            return bad(format!("mUE index {k} out of range"));
        }
        if !channels.ap_mask[t][k] {
            return bad(format!("mUE {k} is served over a blocked link"));
        }
    }
    if block.private.len() != n || block.split.len() != n || block.relay.len() != n {
        return bad("per-mUE vectors do not match the served set".into());
    }
    if block.private.iter().any(|f| f.len() != n_ant) {
        return bad("private precoder length differs from the array size".into());
    }
    match framework {
        Framework::DeCrs => {
            if block.layer2.len() != n || block.layer2.iter().any(|f| f.len() != n_ant) {
                return bad("second-layer precoders missing".into());
            }
        }
        Framework::IDeCrs | Framework::Crs => {
            if block.common.len() != n_ant {
                return bad("common precoder length differs from the array size".into());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate_model::RateSplit;
    use crate::scenario::sample_realization;

    fn setup(d_mue: f64, d_due: f64) -> (SystemConfig, ChannelRealization) {
        let config = SystemConfig {
            n_mues: 2,
            n_blocks: 3,
            throughput_mue: d_mue,
            throughput_due: d_due,
            ..SystemConfig::default()
        };
        let (_, ch) = sample_realization(&config, 3);
        (config, ch)
    }

    #[test]
    fn zero_plan_without_demand_is_feasible() {
        let (config, ch) = setup(0.0, 0.0);
        let plan = TransmitPlan::idle(Framework::IDeCrs, 3);
        let report = verify_plan(&plan, &ch, &config, 1e-5).unwrap();
        assert!(report.feasible);
        assert_eq!(report.total_energy, 0.0);
    }

    #[test]
    fn zero_plan_with_demand_reports_shortfall() {
        let (config, ch) = setup(2.5, 0.0);
        let plan = TransmitPlan::idle(Framework::IDeCrs, 3);
        let report = verify_plan(&plan, &ch, &config, 1e-5).unwrap();
        assert!(!report.feasible);
        assert!((report.max_violation - 2.5).abs() < 1e-12);
    }

    #[test]
    fn block_count_mismatch_is_structural() {
        let (config, ch) = setup(0.0, 0.0);
        let plan = TransmitPlan::idle(Framework::IDeCrs, 2);
        assert!(matches!(verify_plan(&plan, &ch, &config, 1e-5), Err(Error::Dimension(_))));
    }

    #[test]
    fn reducing_due_parts_keeps_phase_one_feasible() {
        let (config, ch) = setup(0.0, 0.0);
        let t = 2; // forced clear block
        let n_ant = ch.n_antennas();
        let h0 = &ch.h[t][0];
        let norm: f64 = h0.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let f: Vec<Complex64> = h0.iter().map(|x| x * (0.01 / norm)).collect();
        let rp = private_rate(h0, &[f.clone()], 0);
        let mut plan = TransmitPlan::idle(Framework::IDeCrs, 3);
        plan.blocks[t] = BlockPlan {
            active: vec![0],
            common: vec![Complex64::new(0.0, 0.0); n_ant],
            private: vec![f],
            relay: vec![Complex64::new(0.0, 0.0)],
            split: vec![RateSplit { alpha_p: rp * 0.5, beta_p: rp * 0.5, ..RateSplit::default() }],
            ..BlockPlan::default()
        };
        assert!(verify_plan(&plan, &ch, &config, 1e-9).unwrap().feasible);
        plan.blocks[t].split[0].beta_p *= 0.1;
        assert!(verify_plan(&plan, &ch, &config, 1e-9).unwrap().feasible);
    }

    #[test]
    fn serving_a_blocked_mue_is_rejected() {
        let (config, ch) = setup(0.0, 0.0);
        let blocked = (0..2).flat_map(|t| (0..2).map(move |k| (t, k))).find(|&(t, k)| !ch.ap_mask[t][k]);
        let Some((t, k)) = blocked else { return };
        let mut plan = TransmitPlan::idle(Framework::IDeCrs, 3);
        plan.blocks[t] = BlockPlan {
            active: vec![k],
            common: vec![Complex64::new(0.0, 0.0); ch.n_antennas()],
            private: vec![vec![Complex64::new(0.0, 0.0); ch.n_antennas()]],
            relay: vec![Complex64::new(0.0, 0.0)],
            split: vec![RateSplit::default()],
            ..BlockPlan::default()
        };
        assert!(verify_plan(&plan, &ch, &config, 1e-5).is_err());
    }
}

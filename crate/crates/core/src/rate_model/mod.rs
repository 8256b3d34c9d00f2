//! Achievable rates, energy, and plan verification.
//!
//! Channels are noise-normalized, so every receiver sees unit noise power.

mod plan;
mod verify;

pub use plan::{BlockPlan, BlockSlack, Framework, RateSplit, TransmitPlan};
pub use verify::{verify_plan, verify_with_demands, RateReport, Violation};

use num_complex::Complex64;

/// `hᴴ f`
pub fn inner(h: &[Complex64], f: &[Complex64]) -> Complex64 {
    h.iter().zip(f).map(|(a, b)| a.conj() * b).sum()
}

/// `|hᴴ f|²`
pub fn gain(h: &[Complex64], f: &[Complex64]) -> f64 {
    inner(h, f).norm_sqr()
}

fn shannon(signal: f64, interference: f64) -> f64 {
    (1.0 + signal / (interference + 1.0)).log2()
}

/// Common-stream rate at one mUE; every private stream counts as interference.
pub fn common_rate(h: &[Complex64], common: &[Complex64], privates: &[Vec<Complex64>]) -> f64 {
    let interference: f64 = privates.iter().map(|f| gain(h, f)).sum();
    shannon(gain(h, common), interference)
}

/// Private-stream rate of mUE `k` after the common stream is cancelled.
pub fn private_rate(h: &[Complex64], privates: &[Vec<Complex64>], k: usize) -> f64 {
    let interference: f64 = privates
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, f)| gain(h, f))
        .sum();
    shannon(gain(h, &privates[k]), interference)
}

/// Second-phase rate of the message relayed by mUE `k` when all relays arrive together.
pub fn relay_rate(g: &[Complex64], f_d: &[Complex64], k: usize) -> f64 {
    let power = |i: usize| (g[i] * f_d[i]).norm_sqr();
    let interference: f64 = (0..g.len()).filter(|&i| i != k).map(power).sum();
    shannon(power(k), interference)
}

/// `Σ_k min(β_k, R⁽²⁾_k)`; a blocked relay link carries a zero second-phase rate.
pub fn due_block_rate(beta_sums: &[f64], relay_rates: &[f64]) -> f64 {
    beta_sums
        .iter()
        .zip(relay_rates)
        .map(|(b, r)| b.min(*r).max(0.0))
        .sum()
}

/// Block energy in joules.
pub fn block_energy(block: &BlockPlan, tau: f64) -> f64 {
    tau * block.power()
}

/// Rate of a single codeword sent coherently by every relay: `log₂(1 + |Σ g_k f_k|²)`.
pub fn coherent_relay_rate(g: &[Complex64], f_d: &[Complex64]) -> f64 {
    let sum: Complex64 = g.iter().zip(f_d).map(|(a, b)| a * b).sum();
    shannon(sum.norm_sqr(), 0.0)
}

/// Two-layer rates of the DeCRS baseline, one entry per served mUE.
#[derive(Debug, Clone, PartialEq)]
pub struct DeCrsRates {
    /// First-decoded layer (mUE and dUE content); all other streams are noise.
    pub layer1: Vec<f64>,
    /// Second layer (mUE content) after cancelling the own first layer.
    pub layer2: Vec<f64>,
}

pub fn decrs_block_rates(
    h: &[Vec<Complex64>],
    layer1: &[Vec<Complex64>],
    layer2: &[Vec<Complex64>],
) -> DeCrsRates {
    let n = h.len();
    let mut r1 = Vec::with_capacity(n);
    let mut r2 = Vec::with_capacity(n);
    for k in 0..n {
        let others: f64 = (0..n)
            .filter(|&i| i != k)
            .map(|i| gain(&h[k], &layer1[i]) + gain(&h[k], &layer2[i]))
            .sum();
        let own2 = gain(&h[k], &layer2[k]);
        r1.push(shannon(gain(&h[k], &layer1[k]), others + own2));
        r2.push(shannon(own2, others));
    }
    DeCrsRates { layer1: r1, layer2: r2 }
}

/// Rates of the conventional cooperative rate-splitting baseline for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct CrsRates {
    pub common: Vec<f64>,
    pub private: Vec<f64>,
    /// Coherent second-phase rate of the common codeword (0 without relays).
    pub relay: f64,
    /// dUE goodput: its share of the common content times the rate the codeword survives.
    pub due: f64,
}

pub fn crs_block_rates(
    h: &[Vec<Complex64>],
    g: &[Complex64],
    common: &[Complex64],
    privates: &[Vec<Complex64>],
    relay: &[Complex64],
    mue_common_content: f64,
    due_share: f64,
) -> CrsRates {
    let common_rates: Vec<f64> = h.iter().map(|hk| common_rate(hk, common, privates)).collect();
    let private_rates = (0..h.len()).map(|k| private_rate(&h[k], privates, k)).collect();
    let has_relay = g.iter().zip(relay).any(|(a, b)| a.norm_sqr() > 0.0 && b.norm_sqr() > 0.0);
    let relay_rate = if has_relay { coherent_relay_rate(g, relay) } else { 0.0 };
    let content = mue_common_content.max(0.0) + due_share.max(0.0);
    let due = if has_relay && content > 0.0 {
        let phase1 = common_rates.iter().copied().fold(f64::INFINITY, f64::min);
        due_share.max(0.0) / content * phase1.min(relay_rate).min(content)
    } else {
        0.0
    };
    CrsRates {
        common: common_rates,
        private: private_rates,
        relay: relay_rate,
        due,
    }
}

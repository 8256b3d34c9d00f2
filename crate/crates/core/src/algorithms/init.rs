//! Feasible starting points for the SCA runs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rate_model::{
    common_rate, decrs_block_rates, gain, private_rate, relay_rate, BlockPlan, Framework, RateSplit,
};
use crate::scenario::ChannelRealization;

/// Transmit power of a relay at initialization (0 dBm).
pub const RELAY_INIT_POWER: f64 = 1e-3;

/// SINR head-room applied to initialization targets so allocated rates stay strictly achievable.
const SINR_MARGIN: f64 = 1.01;

/// Smallest private rate used to seed a stream whose owner has no demand of its own.
const SEED_RATE: f64 = 1e-2;

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_CAP: usize = 5000;

/// Output of the SDMA energy-minimization initializer.
#[derive(Debug, Clone, PartialEq)]
pub struct SdmaSolution {
    pub precoders: Vec<Vec<Complex64>>,
    pub powers: Vec<f64>,
    pub lambda: Vec<f64>,
}

fn to_vector(h: &[Complex64]) -> DVector<Complex64> {
    DVector::from_column_slice(h)
}

/// Minimum-power SDMA beamformers meeting SINR targets `xi`.
///
/// Multipliers come from the fixed point `λ_k = 1 / ((1 + 1/ξ_k) h_kᴴ A⁻¹ h_k)` with
/// `A = I + Σ λ_i h_i h_iᴴ`; directions are the normalized `A⁻¹ h_k` and powers solve `M p = 1`.
pub fn sdma_init(h: &[Vec<Complex64>], xi: &[f64]) -> Result<SdmaSolution> {
    let k = h.len();
    if k == 0 {
        return Err(Error::Dimension("SDMA initialization needs at least one mUE".into()));
    }
    if xi.len() != k {
        return Err(Error::Dimension(format!("{} targets for {k} mUEs", xi.len())));
    }
    if let Some(bad) = xi.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("SINR targets must be positive and finite, got {bad}")));
    }
    let n = h[0].len();
    let hs: Vec<DVector<Complex64>> = h.iter().map(|v| to_vector(v)).collect();
    let system = |lambda: &[f64]| -> Result<nalgebra::Cholesky<Complex64, nalgebra::Dyn>> {
        let mut a = DMatrix::<Complex64>::identity(n, n);
        for (hi, &li) in hs.iter().zip(lambda) {
            a += (hi * hi.adjoint()) * Complex64::new(li, 0.0);
        }
        a.cholesky()
            .ok_or_else(|| Error::Numerical("SDMA system matrix lost definiteness".into()))
    };

    let mut lambda = vec![0.0; k];
    let mut converged = false;
    for _ in 0..FIXED_POINT_CAP {
        let chol = system(&lambda)?;
        let next: Vec<f64> = hs
            .iter()
            .zip(xi)
            .map(|(hk, &x)| {
                let q = hk.dotc(&chol.solve(hk)).re;
                1.0 / ((1.0 + 1.0 / x) * q)
            })
            .collect();
        let change = next
            .iter()
            .zip(&lambda)
            .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
            .fold(0.0, f64::max);
        lambda = next;
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::InfeasibleTargets("multipliers diverged".into()));
        }
        if change < FIXED_POINT_TOL {
            converged = true;
            break;
        }
    }

    let chol = system(&lambda)?;
    let directions: Vec<Vec<Complex64>> = hs
        .iter()
        .map(|hk| {
            let v = chol.solve(hk);
            let norm = v.norm();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut m = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let gij = gain(&h[i], &directions[j]);
            m[(i, j)] = if i == j { gij / xi[i] } else { -gij };
        }
    }
    let p = m
        .lu()
        .solve(&DVector::from_element(k, 1.0))
        .ok_or_else(|| Error::InfeasibleTargets("power matrix is singular".into()))?;
    if p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InfeasibleTargets("power solution has nonpositive entries".into()));
    }
    let precoders: Vec<Vec<Complex64>> = directions
        .iter()
        .zip(p.iter())
        .map(|(d, &pk)| d.iter().map(|x| x * pk.sqrt()).collect())
        .collect();
    if !converged {
        let worst = (0..k)
            .map(|i| sdma_sinr(h, &precoders, i) / xi[i])
            .fold(f64::INFINITY, f64::min);
        if worst < 1.0 - 1e-6 {
            return Err(Error::Numerical("SDMA multiplier iteration did not converge".into()));
        }
    }
    Ok(SdmaSolution {
        precoders,
        powers: p.iter().copied().collect(),
        lambda,
    })
}

/// SINR of stream `k` when every other stream counts as interference.
pub fn sdma_sinr(h: &[Vec<Complex64>], precoders: &[Vec<Complex64>], k: usize) -> f64 {
    let interference: f64 = (0..precoders.len())
        .filter(|&i| i != k)
        .map(|i| gain(&h[k], &precoders[i]))
        .sum();
    gain(&h[k], &precoders[k]) / (1.0 + interference)
}

/// Dominant left singular vector of `[h_1 … h_K]`, scaled to the mean private power.
pub fn common_init(h: &[Vec<Complex64>], private_powers: &[f64]) -> Option<Vec<Complex64>> {
    if h.is_empty() {
        return None;
    }
    let n = h[0].len();
    let mat = DMatrix::from_fn(n, h.len(), |r, c| h[c][r]);
    let svd = mat.svd(true, false);
    let u = svd.u?;
    let best = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)?;
    let mean = private_powers.iter().sum::<f64>() / private_powers.len().max(1) as f64;
    Some(u.column(best).iter().map(|x| x * mean.sqrt()).collect())
}

/// Per-block rate targets for the served mUEs of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTargets {
    /// mUE content per served slot.
    pub mue: Vec<f64>,
    /// dUE content routed through each served slot (0 without a relay link).
    pub due: Vec<f64>,
}

impl BlockTargets {
    pub fn total(&self, slot: usize) -> f64 {
        self.mue[slot] + self.due[slot]
    }
}

/// Full-horizon targets: `D_k / T_k` per served block and `D_d / (T_d · K'_t)` per relay.
pub fn initial_rate_split(
    channels: &ChannelRealization,
    mue_demand: &[f64],
    due_demand: f64,
) -> Result<Vec<BlockTargets>> {
    for (k, &d) in mue_demand.iter().enumerate() {
        if d > 0.0 && channels.served_blocks(k) == 0 {
            return Err(Error::InfeasibleRealization(format!("mUE {k} is blocked in every block")));
        }
    }
    let t_d = channels.relay_blocks();
    if due_demand > 0.0 && t_d == 0 {
        return Err(Error::InfeasibleRealization("no AP-mUE-dUE path in any block".into()));
    }
    Ok((0..channels.n_blocks())
        .map(|t| {
            let block = channels.block(t);
            let relays = channels.k_prime_t[t];
            let mue = block
                .active
                .iter()
                .map(|&k| if mue_demand[k] > 0.0 { mue_demand[k] / channels.served_blocks(k) as f64 } else { 0.0 })
                .collect();
            let due = block
                .g
                .iter()
                .map(|g| {
                    if due_demand > 0.0 && g.norm_sqr() > 0.0 {
                        due_demand / (t_d as f64 * relays as f64)
                    } else {
                        0.0
                    }
                })
                .collect();
            BlockTargets { mue, due }
        })
        .collect())
}

fn xi_for(rate: f64) -> f64 {
    (rate.max(SEED_RATE).exp2() - 1.0) * SINR_MARGIN
}

/// Spreads `due_total` evenly over the relay slots (`relays[i]`), falling back to the
/// strongest links only when the even split is not jointly achievable at the dUE.
pub fn relay_shares(g: &[Complex64], relays: &[bool], due_total: f64) -> Vec<f64> {
    let mut shares = vec![0.0; g.len()];
    let mut order: Vec<usize> = (0..g.len()).filter(|&i| relays[i] && g[i].norm_sqr() > 0.0).collect();
    if due_total <= 0.0 || order.is_empty() {
        return shares;
    }
    order.sort_by(|&a, &b| g[b].norm_sqr().total_cmp(&g[a].norm_sqr()));
    // m equal SINR targets ξ are jointly achievable iff m·ξ/(1+ξ) < 1.
    let achievable = |m: usize| {
        let xi = ((due_total / m as f64).exp2() - 1.0) * SINR_MARGIN;
        m as f64 * xi / (1.0 + xi) < 0.95
    };
    let m = (1..=order.len()).rev().find(|&m| achievable(m)).unwrap_or(1);
    for &i in &order[..m] {
        shares[i] = due_total / m as f64;
    }
    shares
}

/// Relay gains delivering `due[i]` over each relay link, at 0 dBm when that suffices and
/// otherwise at the minimum-power solution of the relay SINR equations.
pub fn relay_init(g: &[Complex64], due: &[f64]) -> Result<Vec<Complex64>> {
    let slots: Vec<usize> = (0..g.len()).filter(|&i| due[i] > 0.0 && g[i].norm_sqr() > 0.0).collect();
    let mut f = vec![Complex64::new(0.0, 0.0); g.len()];
    if slots.is_empty() {
        return Ok(f);
    }
    for &i in &slots {
        f[i] = Complex64::new(RELAY_INIT_POWER.sqrt(), 0.0);
    }
    if slots.iter().all(|&i| relay_rate(g, &f, i) >= due[i]) {
        return Ok(f);
    }
    let m = slots.len();
    let xi: Vec<f64> = slots.iter().map(|&i| (due[i].exp2() - 1.0) * SINR_MARGIN).collect();
    let mat = DMatrix::from_fn(m, m, |r, c| {
        let gc = g[slots[c]].norm_sqr();
        if r == c { gc } else { -xi[r] * gc }
    });
    let rhs = DVector::from_column_slice(&xi);
    let p = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InfeasibleTargets("relay power system is singular".into()))?;
    if p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InfeasibleTargets("relay SINR targets are not jointly achievable".into()));
    }
    for (idx, &i) in slots.iter().enumerate() {
        f[i] = Complex64::new(p[idx].max(RELAY_INIT_POWER).sqrt(), 0.0);
    }
    // Raising some powers to the 0 dBm floor adds interference at the others; redo the
    // affected ones from the floored powers.
    if slots.iter().any(|&i| relay_rate(g, &f, i) < due[i]) {
        for (idx, &i) in slots.iter().enumerate() {
            f[i] = Complex64::new(p[idx].sqrt(), 0.0);
        }
    }
    Ok(f)
}

/// Initial iDeCRS block: SDMA privates carrying all data, SVD common stream, relays per
/// [`relay_init`].
pub fn idecrs_block_init(
    active: &[usize],
    h: &[Vec<Complex64>],
    g: &[Complex64],
    targets: &BlockTargets,
) -> Result<BlockPlan> {
    let xi: Vec<f64> = (0..h.len()).map(|i| xi_for(targets.total(i))).collect();
    let sdma = sdma_init(h, &xi)?;
    let common = common_init(h, &sdma.powers).expect("served set is non-empty");
    let relay = relay_init(g, &targets.due)?;
    let split = targets
        .mue
        .iter()
        .zip(&targets.due)
        .map(|(&a, &d)| RateSplit { alpha_p: a, beta_p: d, ..RateSplit::default() })
        .collect();
    Ok(BlockPlan {
        active: active.to_vec(),
        common,
        private: sdma.precoders,
        relay,
        split,
        ..BlockPlan::default()
    })
}

/// Initial DeCRS block: the SDMA power of each mUE is split between its two layers along
/// the same direction so that the second layer carries about half of the mUE content.
pub fn decrs_block_init(
    active: &[usize],
    h: &[Vec<Complex64>],
    g: &[Complex64],
    targets: &BlockTargets,
) -> Result<BlockPlan> {
    let n = h.len();
    let xi: Vec<f64> = (0..n).map(|i| xi_for(targets.total(i))).collect();
    let sdma = sdma_init(h, &xi)?;
    let mut layer1 = Vec::with_capacity(n);
    let mut layer2 = Vec::with_capacity(n);
    for i in 0..n {
        let f = &sdma.precoders[i];
        let interference: f64 = (0..n).filter(|&j| j != i).map(|j| gain(&h[i], &sdma.precoders[j])).sum();
        let signal = gain(&h[i], f);
        let want = (0.5 * targets.mue[i]).max(SEED_RATE);
        let share = (((want.exp2() - 1.0) * (1.0 + interference)) / signal).clamp(0.01, 0.5);
        layer1.push(f.iter().map(|x| x * (1.0 - share).sqrt()).collect::<Vec<_>>());
        layer2.push(f.iter().map(|x| x * share.sqrt()).collect::<Vec<_>>());
    }
    let rates = decrs_block_rates(h, &layer1, &layer2);
    let split = (0..n)
        .map(|i| {
            let a2 = rates.layer2[i].min(targets.mue[i]) * (1.0 - 1e-6);
            RateSplit {
                alpha_c: a2,
                alpha_p: targets.mue[i] - a2,
                beta_p: targets.due[i],
                ..RateSplit::default()
            }
        })
        .collect();
    Ok(BlockPlan {
        active: active.to_vec(),
        private: layer1,
        layer2,
        relay: relay_init(g, &targets.due)?,
        split,
        ..BlockPlan::default()
    })
}

/// Initial CRS block: SDMA privates for mUE content, dUE content in the common stream
/// (power doubled until every served mUE decodes it), co-phased relays.
pub fn crs_block_init(
    active: &[usize],
    h: &[Vec<Complex64>],
    g: &[Complex64],
    mue_targets: &[f64],
    due_target: f64,
) -> Result<BlockPlan> {
    let n = h.len();
    let xi: Vec<f64> = mue_targets.iter().map(|&r| xi_for(r)).collect();
    let sdma = sdma_init(h, &xi)?;
    let mut common = common_init(h, &sdma.powers).expect("served set is non-empty");
    let relays: Vec<usize> = (0..n).filter(|&i| g[i].norm_sqr() > 0.0).collect();
    let carry = if relays.is_empty() { 0.0 } else { due_target };
    let need = carry * 1.001;
    let min_common = |c: &[Complex64]| {
        h.iter().map(|hk| common_rate(hk, c, &sdma.precoders)).fold(f64::INFINITY, f64::min)
    };
    let mut doublings = 0;
    while min_common(&common) < need {
        common.iter_mut().for_each(|x| *x *= std::f64::consts::SQRT_2);
        doublings += 1;
        if doublings > 200 {
            return Err(Error::InfeasibleTargets("common stream cannot reach every served mUE".into()));
        }
    }
    let mut relay = vec![Complex64::new(0.0, 0.0); n];
    if carry > 0.0 {
        let sum_abs: f64 = relays.iter().map(|&i| g[i].norm()).sum();
        let needed = ((need.exp2() - 1.0) * SINR_MARGIN).sqrt() / sum_abs;
        let amp = needed.max(RELAY_INIT_POWER.sqrt());
        for &i in &relays {
            relay[i] = Complex64::from_polar(amp, -g[i].arg());
        }
    }
    let split = mue_targets
        .iter()
        .map(|&a| RateSplit { alpha_p: a, ..RateSplit::default() })
        .collect();
    Ok(BlockPlan {
        active: active.to_vec(),
        common,
        private: sdma.precoders,
        relay,
        split,
        due_share: carry,
        ..BlockPlan::default()
    })
}

/// Initial block for `framework` with the given per-slot targets.
pub fn block_init(
    framework: Framework,
    active: &[usize],
    h: &[Vec<Complex64>],
    g: &[Complex64],
    targets: &BlockTargets,
) -> Result<BlockPlan> {
    match framework {
        Framework::IDeCrs => idecrs_block_init(active, h, g, targets),
        Framework::DeCrs => decrs_block_init(active, h, g, targets),
        Framework::Crs => crs_block_init(active, h, g, &targets.mue, targets.due.iter().sum()),
    }
}

/// Sanity check used by tests: the private rate achieved by SDMA precoders.
pub fn sdma_rate(h: &[Vec<Complex64>], precoders: &[Vec<Complex64>], k: usize) -> f64 {
    private_rate(&h[k], precoders, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{sample_realization, SystemConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_user_closed_form() {
        let h = vec![vec![c(1.0, 1.0), c(0.0, 2.0), c(-1.0, 0.5)]];
        let norm2: f64 = h[0].iter().map(|x| x.norm_sqr()).sum();
        let xi = 3.0;
        let s = sdma_init(&h, &[xi]).unwrap();
        assert!((s.powers[0] - xi / norm2).abs() < 1e-12 * xi);
        // Direction is h/‖h‖ up to a phase.
        let d: Vec<Complex64> = s.precoders[0].iter().map(|x| x / s.powers[0].sqrt()).collect();
        assert!((gain(&h[0], &d) - norm2).abs() < 1e-9 * norm2);
    }

    #[test]
    fn vanishing_targets_vanishing_power() {
        let h = vec![vec![c(1.0, 0.0), c(0.3, 0.0)], vec![c(0.2, 0.1), c(1.0, 0.0)]];
        let small = sdma_init(&h, &[1e-9, 1e-9]).unwrap();
        assert!(small.powers.iter().all(|&p| p < 1e-8));
    }

    #[test]
    fn orthogonal_channels_decouple() {
        let h = vec![vec![c(2.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 3.0)]];
        let s = sdma_init(&h, &[1.0, 2.0]).unwrap();
        assert!((s.powers[0] - 1.0 / 4.0).abs() < 1e-12);
        assert!((s.powers[1] - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn sdma_meets_targets_on_sampled_channels() {
        let config = SystemConfig::default();
        let (_, ch) = sample_realization(&config, 11);
        let block = ch.block(config.n_blocks - 1);
        let xi = vec![1.5; block.len()];
        let s = sdma_init(&block.h, &xi).unwrap();
        for k in 0..block.len() {
            let sinr = sdma_sinr(&block.h, &s.precoders, k);
            assert!((sinr - xi[k]).abs() <= 1e-6 * xi[k], "slot {k}: {sinr}");
        }
    }

    #[test]
    fn colinear_users_with_high_targets_are_infeasible() {
        let h = vec![vec![c(1.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(1.0, 0.0)]];
        assert!(matches!(sdma_init(&h, &[10.0, 10.0]), Err(Error::InfeasibleTargets(_)) | Err(Error::Numerical(_))));
    }

    #[test]
    fn common_init_properties() {
        let h = vec![vec![c(1.0, 1.0), c(2.0, 0.0)]];
        let f = common_init(&h, &[4.0]).unwrap();
        let norm2: f64 = f.iter().map(|x| x.norm_sqr()).sum();
        assert!((norm2 - 4.0).abs() < 1e-12);
        let hn: f64 = h[0].iter().map(|x| x.norm_sqr()).sum();
        assert!((gain(&h[0], &f) - 4.0 * hn).abs() < 1e-9);

        let same = vec![h[0].clone(), h[0].clone()];
        let f2 = common_init(&same, &[2.0, 2.0]).unwrap();
        assert!((gain(&h[0], &f2) - 2.0 * hn).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hr: Vec<Vec<Complex64>> = (0..3)
            .map(|_| (0..4).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
            .collect();
        let powers = [0.5, 1.0, 2.5];
        let fr = common_init(&hr, &powers).unwrap();
        let norm2: f64 = fr.iter().map(|x| x.norm_sqr()).sum();
        assert!((norm2 - 4.0 / 3.0).abs() < 1e-12);
        assert!(common_init(&[], &[]).is_none());
    }

    #[test]
    fn genie_split_rules() {
        let config = SystemConfig { n_mues: 3, n_blocks: 5, throughput_mue: 2.0, throughput_due: 2.0, ..SystemConfig::default() };
        let (_, ch) = sample_realization(&config, 21);
        let targets = initial_rate_split(&ch, &[2.0; 3], 2.0).unwrap();
        let t_d = ch.relay_blocks() as f64;
        for (t, bt) in targets.iter().enumerate() {
            let block = ch.block(t);
            for (i, &k) in block.active.iter().enumerate() {
                assert!((bt.mue[i] - 2.0 / ch.served_blocks(k) as f64).abs() < 1e-15);
                if ch.due_mask[t][k] {
                    assert!((bt.due[i] - 2.0 / (t_d * ch.k_prime_t[t] as f64)).abs() < 1e-15);
                } else {
                    assert_eq!(bt.due[i], 0.0);
                }
            }
        }
        // K'_t = 2, T_d = 5, D_d = 2 gives 0.2 per relaying mUE.
        assert!((2.0f64 / (5.0 * 2.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn relay_init_meets_shares() {
        let g = vec![c(3.0, 0.0), c(0.0, 2.0), c(0.0, 0.0)];
        let due = vec![0.5, 0.4, 0.0];
        let f = relay_init(&g, &due).unwrap();
        assert!(relay_rate(&g, &f, 0) >= 0.5);
        assert!(relay_rate(&g, &f, 1) >= 0.4);
        assert_eq!(f[2], c(0.0, 0.0));
        // Strong links are served at 0 dBm directly.
        let strong = vec![c(1e3, 0.0)];
        assert_eq!(relay_init(&strong, &[0.1]).unwrap()[0], c(RELAY_INIT_POWER.sqrt(), 0.0));
    }

    #[test]
    fn relay_shares_fall_back_to_strongest_links() {
        let g = vec![c(1.0, 0.0), c(0.0, 3.0), c(2.0, 0.0)];
        // 0.2 each over three links is achievable.
        let even = relay_shares(&g, &[true, true, true], 0.6);
        assert!(even.iter().all(|&s| (s - 0.2).abs() < 1e-15));
        // Two bits cannot be split three ways when every relay is noise to the others.
        let heavy = relay_shares(&g, &[true, true, true], 2.0);
        assert_eq!(heavy, vec![0.0, 2.0, 0.0]);
        assert_eq!(relay_shares(&g, &[true, false, false], 1.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(relay_shares(&g, &[false; 3], 1.0), vec![0.0; 3]);
        let f = relay_init(&g, &heavy).unwrap();
        assert!(relay_rate(&g, &f, 1) >= 2.0);
    }
}

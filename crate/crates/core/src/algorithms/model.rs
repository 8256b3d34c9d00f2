//! Convex surrogate of the multi-block energy and weighted-rate problems.
//!
//! Precoders enter the program scaled as `f = σ_ap · x` and relay gains as
//! `f_d = σ_rel · y`, with `σ_ap = 1 / max‖h‖` and `σ_rel = 1 / max|g|`. Block
//! energy becomes `τ σ_ap² (‖x‖² + ρ‖y‖²)` with `ρ = σ_rel² / σ_ap²`.

use num_complex::Complex64;

use crate::conic::{Affine, ConicProgram};
use crate::error::{Error, Result};
use crate::rate_model::{
    coherent_relay_rate, common_rate, decrs_block_rates, due_block_rate, gain, private_rate, relay_rate, BlockPlan,
    BlockSlack, Framework, RateSplit,
};
use crate::sca::{taylor_qol, Sense, SurrogateBuilder};

/// Re-fits the rate allocations of `plan` to the rates its precoders actually achieve,
/// shrinking proportionally where they exceed them.
pub fn fit_allocations(framework: Framework, block: &ModelBlock, plan: &mut BlockPlan) {
    let h = &block.h;
    let n = block.len();
    let shrink = |have: f64, load: f64| if load > have { (have / load).max(0.0) } else { 1.0 };
    match framework {
        Framework::IDeCrs => {
            for k in 0..n {
                let s = &mut plan.split[k];
                let f = shrink(private_rate(&h[k], &plan.private, k) * FIT_MARGIN, s.alpha_p + s.beta_p);
                s.alpha_p *= f;
                s.beta_p *= f;
            }
            let rc = h.iter().map(|hk| common_rate(hk, &plan.common, &plan.private)).fold(f64::INFINITY, f64::min);
            let load: f64 = plan.split.iter().map(|s| s.alpha_c + s.beta_c).sum();
            let f = shrink(rc * FIT_MARGIN, load);
            for s in &mut plan.split {
                s.alpha_c *= f;
                s.beta_c *= f;
            }
        }
        Framework::DeCrs => {
            let rates = decrs_block_rates(h, &plan.private, &plan.layer2);
            for (k, s) in plan.split.iter_mut().enumerate() {
                let f = shrink(rates.layer1[k] * FIT_MARGIN, s.alpha_p + s.beta_p);
                s.alpha_p *= f;
                s.beta_p *= f;
                s.alpha_c *= shrink(rates.layer2[k] * FIT_MARGIN, s.alpha_c);
            }
        }
        Framework::Crs => {
            for k in 0..n {
                let rp = private_rate(&h[k], &plan.private, k) * FIT_MARGIN;
                let s = &mut plan.split[k];
                s.alpha_p *= shrink(rp, s.alpha_p);
            }
            let mut cap = h.iter().map(|hk| common_rate(hk, &plan.common, &plan.private)).fold(f64::INFINITY, f64::min);
            if block.relays.iter().any(|&r| r) {
                let g: Vec<Complex64> = (0..n).filter(|&i| block.relays[i]).map(|i| block.g[i]).collect();
                let f: Vec<Complex64> = (0..n).filter(|&i| block.relays[i]).map(|i| plan.relay[i]).collect();
                cap = cap.min(coherent_relay_rate(&g, &f));
            }
            let load = plan.split.iter().map(|s| s.alpha_c).sum::<f64>() + plan.due_share;
            let f = shrink(cap * FIT_MARGIN, load);
            plan.split.iter_mut().for_each(|s| s.alpha_c *= f);
            plan.due_share *= f;
        }
    }
}


/// Shrink applied to exact rates when re-fitting allocations to decoded precoders.
const FIT_MARGIN: f64 = 1.0 - 1e-9;

/// Added to every demand so that solver tolerances cannot leave a shortfall.
const DEMAND_MARGIN: f64 = 1e-6;

/// What the program asks of the served users.
#[derive(Debug, Clone, PartialEq)]
pub enum Goal {
    /// Minimize energy while the rates summed over the modeled blocks reach the demands.
    /// `mue` is indexed by global mUE.
    Demand { mue: Vec<f64>, due: f64 },
    /// Maximize the weighted sum rate under per-user caps and an efficiency floor
    /// (bits/s/Hz per joule).
    Weighted {
        weight_mue: Vec<f64>,
        weight_due: f64,
        cap_mue: Vec<f64>,
        cap_due: f64,
        efficiency: f64,
    },
}

impl Goal {
    fn due_relevant(&self) -> bool {
        match self {
            Goal::Demand { due, .. } => *due > 0.0,
            Goal::Weighted { weight_due, cap_due, .. } => *weight_due > 0.0 && *cap_due > 0.0,
        }
    }

    fn mue_relevant(&self, k: usize) -> bool {
        match self {
            Goal::Demand { mue, .. } => mue[k] > 0.0,
            Goal::Weighted { weight_mue, cap_mue, .. } => weight_mue[k] > 0.0 && cap_mue[k] > 0.0,
        }
    }
}

/// Channels of one modeled block, restricted to the participating mUEs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub t: usize,
    pub active: Vec<usize>,
    pub h: Vec<Vec<Complex64>>,
    pub g: Vec<Complex64>,
    /// Slot may relay dUE data in this model.
    pub relays: Vec<bool>,
}

impl ModelBlock {
    /// Keeps the served mUEs that have something to do under `goal`: their own content,
    /// or relaying when the dUE still needs data.
    pub fn select(t: usize, active: &[usize], h: &[Vec<Complex64>], g: &[Complex64], goal: &Goal) -> Self {
        let due = goal.due_relevant();
        let keep: Vec<usize> = (0..active.len())
            .filter(|&i| goal.mue_relevant(active[i]) || (due && g[i].norm_sqr() > 0.0))
            .collect();
        Self {
            t,
            active: keep.iter().map(|&i| active[i]).collect(),
            h: keep.iter().map(|&i| h[i].clone()).collect(),
            g: keep.iter().map(|&i| g[i]).collect(),
            relays: keep.iter().map(|&i| due && g[i].norm_sqr() > 0.0).collect(),
        }
    }

    /// The same block restricted to the given slots.
    pub fn subset(&self, slots: &[usize]) -> Self {
        Self {
            t: self.t,
            active: slots.iter().map(|&i| self.active[i]).collect(),
            h: slots.iter().map(|&i| self.h[i].clone()).collect(),
            g: slots.iter().map(|&i| self.g[i]).collect(),
            relays: slots.iter().map(|&i| self.relays[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    fn relay_slots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.relays[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CVar {
    re: Vec<usize>,
    im: Vec<usize>,
}

impl CVar {
    fn new(p: &mut ConicProgram, name: &str, n: usize) -> Self {
        Self {
            re: p.add_vars(&format!("{name}.re"), n),
            im: p.add_vars(&format!("{name}.im"), n),
        }
    }

    fn coords(&self) -> impl Iterator<Item = usize> + '_ {
        self.re.iter().chain(&self.im).copied()
    }

    fn read(&self, x: &[f64], scale: f64) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(x[r], x[i]) * scale)
            .collect()
    }
}

/// Real and imaginary parts of `hᴴ (scale · x)`.
fn inner_affine(h: &[Complex64], v: &CVar, scale: f64) -> [Affine; 2] {
    let mut re = Affine::zero();
    let mut im = Affine::zero();
    for (n, hn) in h.iter().enumerate() {
        let (a, b) = (hn.re * scale, hn.im * scale);
        re.add_term(v.re[n], a).add_term(v.im[n], b);
        im.add_term(v.im[n], a).add_term(v.re[n], -b);
    }
    [re, im]
}

/// Real and imaginary parts of `g · scale · (yr + j yi)`.
fn scalar_affine(g: Complex64, (yr, yi): (usize, usize), scale: f64) -> [Affine; 2] {
    let (a, b) = (g.re * scale, g.im * scale);
    let mut re = Affine::zero();
    let mut im = Affine::zero();
    re.add_term(yr, a).add_term(yi, -b);
    im.add_term(yi, a).add_term(yr, b);
    [re, im]
}

#[derive(Debug, Clone, PartialEq)]
struct BlockLayout {
    common: Option<CVar>,
    private: Vec<CVar>,
    layer2: Vec<CVar>,
    relay: Vec<Option<(usize, usize)>>,
    alpha_c: Vec<usize>,
    alpha_p: Vec<usize>,
    beta_c: Vec<Option<usize>>,
    beta_p: Vec<Option<usize>>,
    due_share: Option<usize>,
    rate_c: Vec<usize>,
    rate_p: Vec<usize>,
    gamma_c: Vec<usize>,
    gamma_p: Vec<usize>,
    rate_d: Vec<Option<usize>>,
    gamma_d: Vec<Option<usize>>,
    mu: Vec<Option<usize>>,
    rate_coherent: Option<usize>,
    energy: usize,
}

/// Surrogate builder shared by every framework and goal.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    framework: Framework,
    blocks: Vec<ModelBlock>,
    goal: Goal,
    tau: f64,
    sigma_ap: f64,
    sigma_rel: f64,
    layout: Vec<BlockLayout>,
}

impl SurrogateModel {
    pub fn new(framework: Framework, blocks: Vec<ModelBlock>, goal: Goal, tau: f64) -> Result<Self> {
        if let Goal::Demand { mue, due } = &goal {
            for (k, &d) in mue.iter().enumerate() {
                if d > 0.0 && !blocks.iter().any(|b| b.active.contains(&k)) {
                    return Err(Error::InfeasibleRealization(format!(
                        "mUE {k} has demand {d} but no served block in scope"
                    )));
                }
            }
            if *due > 0.0 && !blocks.iter().any(|b| b.relays.iter().any(|&r| r)) {
                return Err(Error::InfeasibleRealization(
                    "dUE has demand but no relay link in scope".into(),
                ));
            }
        }
        let max_h = blocks
            .iter()
            .flat_map(|b| b.h.iter())
            .map(|h| h.iter().map(Complex64::norm_sqr).sum::<f64>())
            .fold(0.0, f64::max);
        let max_g = blocks
            .iter()
            .flat_map(|b| b.relay_slots().into_iter().map(move |i| b.g[i].norm_sqr()))
            .fold(0.0, f64::max);
        let sigma_ap = if max_h > 0.0 { max_h.sqrt().recip() } else { 1.0 };
        let sigma_rel = if max_g > 0.0 { max_g.sqrt().recip() } else { 1.0 };
        let mut model = Self {
            framework,
            blocks,
            goal,
            tau,
            sigma_ap,
            sigma_rel,
            layout: Vec::new(),
        };
        model.layout = model.declare(&mut ConicProgram::new());
        Ok(model)
    }

    pub fn blocks(&self) -> &[ModelBlock] {
        &self.blocks
    }

    pub fn framework(&self) -> Framework {
        self.framework
    }

    fn rho(&self) -> f64 {
        (self.sigma_rel / self.sigma_ap).powi(2)
    }

    fn declare(&self, p: &mut ConicProgram) -> Vec<BlockLayout> {
        self.blocks
            .iter()
            .map(|b| {
                let n = b.len();
                let n_ant = b.h.first().map_or(0, Vec::len);
                let tag = |s: &str, i: usize| format!("t{}.{s}[{i}]", b.t);
                let has_common = matches!(self.framework, Framework::IDeCrs | Framework::Crs);
                let common = has_common.then(|| CVar::new(p, &format!("t{}.fc", b.t), n_ant));
                let private = (0..n).map(|i| CVar::new(p, &tag("f", i), n_ant)).collect();
                let layer2 = if self.framework == Framework::DeCrs {
                    (0..n).map(|i| CVar::new(p, &tag("f2", i), n_ant)).collect()
                } else {
                    Vec::new()
                };
                let relay = (0..n)
                    .map(|i| b.relays[i].then(|| (p.add_var(tag("fd.re", i)), p.add_var(tag("fd.im", i)))))
                    .collect();
                let alpha_c = (0..n).map(|i| p.add_var(tag("alpha_c", i))).collect();
                let alpha_p = (0..n).map(|i| p.add_var(tag("alpha_p", i))).collect();
                let extraction = self.framework != Framework::Crs;
                let beta_c = (0..n)
                    .map(|i| (b.relays[i] && self.framework == Framework::IDeCrs).then(|| p.add_var(tag("beta_c", i))))
                    .collect();
                let beta_p = (0..n)
                    .map(|i| (b.relays[i] && extraction).then(|| p.add_var(tag("beta_p", i))))
                    .collect();
                let any_relay = b.relays.iter().any(|&r| r);
                let due_share = (!extraction && any_relay).then(|| p.add_var(format!("t{}.b", b.t)));
                let rate_c = (0..n).map(|i| p.add_var(tag("R_c", i))).collect();
                let rate_p = (0..n).map(|i| p.add_var(tag("R_p", i))).collect();
                let gamma_c = (0..n).map(|i| p.add_var(tag("gamma_c", i))).collect();
                let gamma_p = (0..n).map(|i| p.add_var(tag("gamma_p", i))).collect();
                let per_relay = |p: &mut ConicProgram, s: &str| -> Vec<Option<usize>> {
                    (0..n)
                        .map(|i| (b.relays[i] && extraction).then(|| p.add_var(tag(s, i))))
                        .collect()
                };
                let rate_d = per_relay(p, "R_d");
                let gamma_d = per_relay(p, "gamma_d");
                let mu = per_relay(p, "mu");
                let rate_coherent = (!extraction && any_relay).then(|| p.add_var(format!("t{}.R_coh", b.t)));
                let energy = p.add_var(format!("t{}.E", b.t));
                BlockLayout {
                    common,
                    private,
                    layer2,
                    relay,
                    alpha_c,
                    alpha_p,
                    beta_c,
                    beta_p,
                    due_share,
                    rate_c,
                    rate_p,
                    gamma_c,
                    gamma_p,
                    rate_d,
                    gamma_d,
                    mu,
                    rate_coherent,
                    energy,
                }
            })
            .collect()
    }

    /// Affine dUE rate of a block: `Σ μ` for extraction frameworks, the dUE share for CRS.
    fn due_rate_expr(&self, lay: &BlockLayout) -> Affine {
        match lay.due_share {
            Some(b) => Affine::var(b),
            None => Affine::sum_vars(lay.mu.iter().flatten().copied()),
        }
    }

    fn mue_rate_expr(lay: &BlockLayout, slot: usize) -> Affine {
        Affine::sum_vars([lay.alpha_c[slot], lay.alpha_p[slot]])
    }

    /// Interference-plus-noise slack values realized by `plan` on block `b`.
    fn local_gammas(&self, b: &ModelBlock, plan: &BlockPlan) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = b.len();
        let mut gc = vec![1.0; n];
        let mut gp = vec![1.0; n];
        for k in 0..n {
            let hk = &b.h[k];
            match self.framework {
                Framework::IDeCrs | Framework::Crs => {
                    for i in 0..n {
                        let x = gain(hk, &plan.private[i]);
                        gc[k] += x;
                        if i != k {
                            gp[k] += x;
                        }
                    }
                }
                Framework::DeCrs => {
                    // gp: first layer (everything but itself); gc: second layer.
                    for i in 0..n {
                        let l1 = gain(hk, &plan.private[i]);
                        let l2 = gain(hk, &plan.layer2[i]);
                        if i != k {
                            gp[k] += l1 + l2;
                            gc[k] += l1 + l2;
                        } else {
                            gp[k] += l2;
                        }
                    }
                }
            }
        }
        let relays = b.relay_slots();
        let gd = (0..n)
            .map(|q| {
                1.0 + relays
                    .iter()
                    .filter(|&&j| j != q)
                    .map(|&j| (b.g[j] * plan.relay[j]).norm_sqr())
                    .sum::<f64>()
            })
            .collect();
        (gc, gp, gd)
    }

    fn add_block_constraints(
        &self,
        p: &mut ConicProgram,
        b: &ModelBlock,
        lay: &BlockLayout,
        local: &BlockPlan,
    ) -> Result<()> {
        let n = b.len();
        let s_ap = self.sigma_ap;
        let s_rel = self.sigma_rel;
        let (gc_l, gp_l, gd_l) = self.local_gammas(b, local);

        for i in 0..n {
            p.add_nonneg(Affine::var(lay.alpha_c[i]))?;
            p.add_nonneg(Affine::var(lay.alpha_p[i]))?;
            for v in [lay.beta_c[i], lay.beta_p[i]].into_iter().flatten() {
                p.add_nonneg(Affine::var(v))?;
            }
        }
        if let Some(bv) = lay.due_share {
            p.add_nonneg(Affine::var(bv))?;
        }

        for k in 0..n {
            let hk = &b.h[k];
            // Interference sets for the two decoded streams of mUE k.
            let (first, second): (Vec<&CVar>, Vec<&CVar>) = match self.framework {
                Framework::IDeCrs | Framework::Crs => (
                    lay.private.iter().collect(),
                    lay.private.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v).collect(),
                ),
                Framework::DeCrs => {
                    let mut l1: Vec<&CVar> = lay.layer2.iter().collect();
                    let mut l2 = Vec::new();
                    for i in (0..n).filter(|&i| i != k) {
                        l1.push(&lay.private[i]);
                        l2.push(&lay.private[i]);
                        l2.push(&lay.layer2[i]);
                    }
                    // `first` feeds γ_p (layer 1) and `second` feeds γ_c (layer 2) below.
                    (l1, l2)
                }
            };
            let exprs = |set: &[&CVar]| -> Vec<Affine> {
                set.iter().flat_map(|v| inner_affine(hk, v, s_ap)).collect()
            };

            let (signal_c, signal_p, gamma_c_set, gamma_p_set, gc_local, gp_local, fc_local, fp_local) =
                match self.framework {
                    Framework::IDeCrs | Framework::Crs => (
                        lay.common.as_ref().expect("common stream declared"),
                        &lay.private[k],
                        first,
                        second,
                        gc_l[k],
                        gp_l[k],
                        &local.common,
                        &local.private[k],
                    ),
                    Framework::DeCrs => (
                        &lay.layer2[k],
                        &lay.private[k],
                        second,
                        first,
                        gc_l[k],
                        gp_l[k],
                        &local.layer2[k],
                        &local.private[k],
                    ),
                };

            p.add_quadratic_epigraph(&exprs(&gamma_c_set), Affine::var(lay.gamma_c[k]).offset(-1.0))?;
            p.add_quadratic_epigraph(&exprs(&gamma_p_set), Affine::var(lay.gamma_p[k]).offset(-1.0))?;
            let tc = taylor_qol(hk, fc_local, gc_local)?;
            p.add_exp_rate_constraint(
                &Affine::var(lay.rate_c[k]),
                &tc.to_affine(&signal_c.re, &signal_c.im, s_ap, &Affine::var(lay.gamma_c[k])),
            )?;
            let tp = taylor_qol(hk, fp_local, gp_local)?;
            p.add_exp_rate_constraint(
                &Affine::var(lay.rate_p[k]),
                &tp.to_affine(&signal_p.re, &signal_p.im, s_ap, &Affine::var(lay.gamma_p[k])),
            )?;

            match self.framework {
                Framework::IDeCrs => {
                    let mut load = Affine::sum_vars(lay.alpha_c.iter().copied());
                    for v in lay.beta_c.iter().flatten() {
                        load.add_term(*v, 1.0);
                    }
                    p.add_le(&load, &Affine::var(lay.rate_c[k]))?;
                    let mut own = Affine::var(lay.alpha_p[k]);
                    if let Some(v) = lay.beta_p[k] {
                        own.add_term(v, 1.0);
                    }
                    p.add_le(&own, &Affine::var(lay.rate_p[k]))?;
                }
                Framework::DeCrs => {
                    let mut own = Affine::var(lay.alpha_p[k]);
                    if let Some(v) = lay.beta_p[k] {
                        own.add_term(v, 1.0);
                    }
                    p.add_le(&own, &Affine::var(lay.rate_p[k]))?;
                    p.add_le(&Affine::var(lay.alpha_c[k]), &Affine::var(lay.rate_c[k]))?;
                }
                Framework::Crs => {
                    let mut load = Affine::sum_vars(lay.alpha_c.iter().copied());
                    if let Some(bv) = lay.due_share {
                        load.add_term(bv, 1.0);
                    }
                    p.add_le(&load, &Affine::var(lay.rate_c[k]))?;
                    p.add_le(&Affine::var(lay.alpha_p[k]), &Affine::var(lay.rate_p[k]))?;
                }
            }
        }

        let relays = b.relay_slots();
        match self.framework {
            Framework::IDeCrs | Framework::DeCrs => {
                for &q in &relays {
                    let (rd, gd, mu) = (
                        lay.rate_d[q].expect("relay rate declared"),
                        lay.gamma_d[q].expect("relay slack declared"),
                        lay.mu[q].expect("relay min declared"),
                    );
                    let exprs: Vec<Affine> = relays
                        .iter()
                        .filter(|&&j| j != q)
                        .flat_map(|&j| scalar_affine(b.g[j], lay.relay[j].expect("relay declared"), s_rel))
                        .collect();
                    p.add_quadratic_epigraph(&exprs, Affine::var(gd).offset(-1.0))?;
                    let (yr, yi) = lay.relay[q].expect("relay declared");
                    let t = taylor_qol(&[b.g[q].conj()], &[local.relay[q]], gd_l[q])?;
                    p.add_exp_rate_constraint(&Affine::var(rd), &t.to_affine(&[yr], &[yi], s_rel, &Affine::var(gd)))?;
                    let mut parts = Affine::zero();
                    for v in [lay.beta_c[q], lay.beta_p[q]].into_iter().flatten() {
                        parts.add_term(v, 1.0);
                    }
                    p.add_le(&Affine::var(mu), &parts)?;
                    p.add_le(&Affine::var(mu), &Affine::var(rd))?;
                }
            }
            Framework::Crs => {
                if let (Some(r_coh), Some(bv)) = (lay.rate_coherent, lay.due_share) {
                    let h: Vec<Complex64> = relays.iter().map(|&q| b.g[q].conj()).collect();
                    let f: Vec<Complex64> = relays.iter().map(|&q| local.relay[q]).collect();
                    let (yr, yi): (Vec<usize>, Vec<usize>) =
                        relays.iter().map(|&q| lay.relay[q].expect("relay declared")).unzip();
                    let t = taylor_qol(&h, &f, 1.0)?;
                    p.add_exp_rate_constraint(&Affine::var(r_coh), &t.to_affine(&yr, &yi, s_rel, &Affine::constant(1.0)))?;
                    let mut load = Affine::sum_vars(lay.alpha_c.iter().copied());
                    load.add_term(bv, 1.0);
                    p.add_le(&load, &Affine::var(r_coh))?;
                }
            }
        }

        let rho_sqrt = self.rho().sqrt();
        let mut coords: Vec<Affine> = Vec::new();
        for v in lay.common.iter().chain(&lay.private).chain(&lay.layer2) {
            coords.extend(v.coords().map(Affine::var));
        }
        for &(yr, yi) in lay.relay.iter().flatten() {
            coords.push(Affine::term(yr, rho_sqrt));
            coords.push(Affine::term(yi, rho_sqrt));
        }
        p.add_quadratic_epigraph(&coords, Affine::var(lay.energy))?;
        Ok(())
    }

    fn add_goal(&self, p: &mut ConicProgram) -> Result<()> {
        match &self.goal {
            Goal::Demand { mue, due } => {
                for (k, &d) in mue.iter().enumerate() {
                    if d <= 0.0 {
                        continue;
                    }
                    let mut total = Affine::zero();
                    for (b, lay) in self.blocks.iter().zip(&self.layout) {
                        if let Some(slot) = b.active.iter().position(|&a| a == k) {
                            total.add(&Self::mue_rate_expr(lay, slot));
                        }
                    }
                    p.add_nonneg(total.offset(-d - DEMAND_MARGIN))?;
                }
                if *due > 0.0 {
                    let mut total = Affine::zero();
                    for lay in &self.layout {
                        total.add(&self.due_rate_expr(lay));
                    }
                    p.add_nonneg(total.offset(-due - DEMAND_MARGIN))?;
                }
                p.minimize(Affine::sum_vars(self.layout.iter().map(|l| l.energy)));
            }
            Goal::Weighted { weight_mue, weight_due, cap_mue, cap_due, efficiency } => {
                let mut objective = Affine::zero();
                let mut delivered = Affine::zero();
                let mut energy = Affine::zero();
                let mut due_total = Affine::zero();
                for (b, lay) in self.blocks.iter().zip(&self.layout) {
                    for (slot, &k) in b.active.iter().enumerate() {
                        let r = Self::mue_rate_expr(lay, slot);
                        p.add_le(&r, &Affine::constant(cap_mue[k]))?;
                        objective.add_scaled(&r, weight_mue[k]);
                        delivered.add(&r);
                    }
                    due_total.add(&self.due_rate_expr(lay));
                    energy.add_term(lay.energy, 1.0);
                }
                if !due_total.terms.is_empty() {
                    p.add_le(&due_total, &Affine::constant(*cap_due))?;
                    objective.add_scaled(&due_total, *weight_due);
                    delivered.add(&due_total);
                }
                let coef = efficiency * self.tau * self.sigma_ap * self.sigma_ap;
                p.add_le(&energy.scaled(coef), &delivered)?;
                p.minimize(objective.scaled(-1.0));
            }
        }
        Ok(())
    }
}

/// dUE rate of a modeled block recomputed from primal quantities: `Σ min(β, R⁽²⁾)` for the
/// extraction frameworks, the common-stream share for CRS.
pub fn modeled_due_rate(framework: Framework, b: &ModelBlock, plan: &BlockPlan) -> f64 {
    if !b.relays.iter().any(|&r| r) {
        return 0.0;
    }
    match framework {
        Framework::Crs => plan.due_share,
        _ => {
            let rates: Vec<f64> = (0..b.len())
                .map(|i| if b.relays[i] { relay_rate(&b.g, &plan.relay, i) } else { 0.0 })
                .collect();
            let betas: Vec<f64> = plan.split.iter().map(RateSplit::due_part).collect();
            due_block_rate(&betas, &rates)
        }
    }
}

impl SurrogateBuilder for SurrogateModel {
    type Point = Vec<BlockPlan>;

    fn sense(&self) -> Sense {
        match self.goal {
            Goal::Demand { .. } => Sense::Minimize,
            Goal::Weighted { .. } => Sense::Maximize,
        }
    }

    fn build(&self, local: &Vec<BlockPlan>) -> Result<ConicProgram> {
        if local.len() != self.blocks.len() {
            return Err(Error::Dimension(format!(
                "{} local blocks for {} modeled blocks",
                local.len(),
                self.blocks.len()
            )));
        }
        let mut p = ConicProgram::new();
        let layout = self.declare(&mut p);
        debug_assert_eq!(layout, self.layout);
        for ((b, lay), plan) in self.blocks.iter().zip(&layout).zip(local) {
            self.add_block_constraints(&mut p, b, lay, plan)?;
        }
        self.add_goal(&mut p)?;
        Ok(p)
    }

    fn decode(&self, x: &[f64]) -> Vec<BlockPlan> {
        let zero = Complex64::new(0.0, 0.0);
        let read = |v: Option<usize>| v.map_or(0.0, |i| x[i].max(0.0));
        self.blocks
            .iter()
            .zip(&self.layout)
            .map(|(b, lay)| {
                let n = b.len();
                let n_ant = b.h.first().map_or(0, Vec::len);
                let mut plan = BlockPlan {
                    active: b.active.clone(),
                    common: lay
                        .common
                        .as_ref()
                        .map_or_else(|| vec![zero; n_ant], |v| v.read(x, self.sigma_ap)),
                    private: lay.private.iter().map(|v| v.read(x, self.sigma_ap)).collect(),
                    layer2: lay.layer2.iter().map(|v| v.read(x, self.sigma_ap)).collect(),
                    relay: lay
                        .relay
                        .iter()
                        .map(|r| r.map_or(zero, |(yr, yi)| Complex64::new(x[yr], x[yi]) * self.sigma_rel))
                        .collect(),
                    split: (0..n)
                        .map(|i| RateSplit {
                            alpha_c: read(Some(lay.alpha_c[i])),
                            alpha_p: read(Some(lay.alpha_p[i])),
                            beta_c: read(lay.beta_c[i]),
                            beta_p: read(lay.beta_p[i]),
                        })
                        .collect(),
                    due_share: read(lay.due_share),
                    slack: None,
                };
                if self.framework == Framework::DeCrs {
                    plan.common.clear();
                }
                fit_allocations(self.framework, b, &mut plan);
                let (gc, gp, gd) = self.local_gammas(b, &plan);
                let opt = |v: &Option<usize>| v.map_or(0.0, |i| x[i]);
                plan.slack = Some(BlockSlack {
                    rate_common: lay.rate_c.iter().map(|&i| x[i]).collect(),
                    rate_private: lay.rate_p.iter().map(|&i| x[i]).collect(),
                    rate_relay: match lay.rate_coherent {
                        Some(i) => vec![x[i]],
                        None => lay.rate_d.iter().map(opt).collect(),
                    },
                    mu: lay.mu.iter().map(opt).collect(),
                    gamma_common: gc,
                    gamma_private: gp,
                    gamma_relay: gd,
                });
                plan
            })
            .collect()
    }

    fn objective(&self, point: &Vec<BlockPlan>) -> f64 {
        match &self.goal {
            Goal::Demand { .. } => {
                point.iter().map(BlockPlan::power).sum::<f64>() / (self.sigma_ap * self.sigma_ap)
            }
            Goal::Weighted { weight_mue, weight_due, cap_due, .. } => {
                let mut value = 0.0;
                let mut due = 0.0;
                for (b, plan) in self.blocks.iter().zip(point) {
                    for (slot, &k) in b.active.iter().enumerate() {
                        value += weight_mue[k] * plan.split[slot].mue_rate();
                    }
                    due += modeled_due_rate(self.framework, b, plan);
                }
                value + weight_due * due.min(*cap_due)
            }
        }
    }
}

impl SurrogateModel {
    /// Objective of `point` in the units reported by [`SurrogateBuilder::objective`]
    /// converted to joules (energy goals only).
    pub fn energy_joules(&self, point: &[BlockPlan]) -> f64 {
        self.tau * point.iter().map(BlockPlan::power).sum::<f64>()
    }

    pub fn goal(&self) -> &Goal {
        &self.goal
    }
}

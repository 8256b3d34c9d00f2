//! First-order surrogates of quadratic-over-linear SINR terms and the SCA loop.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::conic::{Affine, ConicProgram, SolveStatus};
use crate::error::{Error, Result};
use crate::rate_model::inner;

/// `|hᴴ f|² / γ`
pub fn quad_over_lin(h: &[Complex64], f: &[Complex64], gamma: f64) -> f64 {
    inner(h, f).norm_sqr() / gamma
}

/// Affine under-estimator of `|hᴴ f|² / γ` around a local point.
///
/// `g̃(f, γ) = Σ_n (re[n]·Re f_n + im[n]·Im f_n) + gamma·γ`
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorQol {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub gamma: f64,
}

/// Linearizes `|hᴴ f|² / γ` at `(f_local, gamma_local)`.
pub fn taylor_qol(h: &[Complex64], f_local: &[Complex64], gamma_local: f64) -> Result<TaylorQol> {
    if !(gamma_local > 0.0) {
        return Err(Error::Domain(format!("local γ must be positive, got {gamma_local}")));
    }
    if h.len() != f_local.len() {
        return Err(Error::Dimension(format!(
            "channel has {} entries, local precoder {}",
            h.len(),
            f_local.len()
        )));
    }
    let c = inner(h, f_local);
    // 2 Re{c̄ · hᴴ f} with hᴴ f = Σ h̄_n f_n; the coefficient of f_n is c̄·h̄_n = conj(c·h_n).
    let (re, im) = h
        .iter()
        .map(|&hn| {
            let w = c * hn * (2.0 / gamma_local);
            (w.re, w.im)
        })
        .unzip();
    Ok(TaylorQol {
        re,
        im,
        gamma: -c.norm_sqr() / (gamma_local * gamma_local),
    })
}

impl TaylorQol {
    pub fn eval(&self, f: &[Complex64], gamma: f64) -> f64 {
        let lin: f64 = f
            .iter()
            .zip(self.re.iter().zip(&self.im))
            .map(|(x, (a, b))| a * x.re + b * x.im)
            .sum();
        lin + self.gamma * gamma
    }

    /// The surrogate as an affine expression over program variables. Variables are
    /// scaled so that `f = scale · (re + j·im)`.
    pub fn to_affine(&self, re_vars: &[usize], im_vars: &[usize], scale: f64, gamma: &Affine) -> Affine {
        let mut out = Affine::zero();
        for (n, (&rv, &iv)) in re_vars.iter().zip(im_vars).enumerate() {
            out.add_term(rv, self.re[n] * scale);
            out.add_term(iv, self.im[n] * scale);
        }
        out.add_scaled(gamma, self.gamma);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The backend hit its iteration cap or lost accuracy; best point so far returned.
    NumericalLimit,
    /// A step worsened the objective beyond the per-step slack; previous point returned.
    NonMonotone,
    /// A later surrogate was reported infeasible; previous point returned.
    SurrogateInfeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaTrace {
    pub sense: Sense,
    /// Entry 0 is the initial point; entry `ℓ` follows the `ℓ`-th surrogate solve.
    pub objective: Vec<f64>,
    pub residual: Vec<f64>,
    pub termination: Termination,
}

impl ScaTrace {
    pub fn iterations(&self) -> usize {
        self.objective.len().saturating_sub(1)
    }

    /// Largest step against the optimization sense relative to the previous objective.
    /// Steps no larger than `floor` in absolute terms count as zero, as in the SCA loop.
    pub fn worst_relative_regression(&self, floor: f64) -> f64 {
        self.objective
            .windows(2)
            .map(|w| {
                let step = match self.sense {
                    Sense::Minimize => w[1] - w[0],
                    Sense::Maximize => w[0] - w[1],
                };
                if step <= floor {
                    0.0
                } else {
                    step / w[0].abs().max(f64::MIN_POSITIVE)
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "objective", "residual"])?;
        for (i, (o, r)) in self.objective.iter().zip(&self.residual).enumerate() {
            w.write_record([i.to_string(), format!("{o:e}"), format!("{r:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Constructs convex surrogates around local points.
pub trait SurrogateBuilder {
    type Point: Clone;

    fn sense(&self) -> Sense;

    /// Surrogate program with all SINR terms linearized at `local`.
    fn build(&self, local: &Self::Point) -> Result<ConicProgram>;

    /// New local point from a primal solution. Slack `γ` values are refreshed to the
    /// interference actually produced by the decoded precoders.
    fn decode(&self, primal: &[f64]) -> Self::Point;

    /// Objective of the original problem at `point`, in the units of the surrogate objective.
    fn objective(&self, point: &Self::Point) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct ScaSettings {
    pub epsilon: f64,
    pub max_iter: usize,
    pub accuracy: f64,
    /// Allowed relative step against the sense before a run is stopped as non-monotone.
    pub monotone_slack: f64,
}

impl Default for ScaSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iter: 100,
            accuracy: crate::conic::DEFAULT_ACCURACY,
            monotone_slack: 1e-6,
        }
    }
}

/// Runs successive convex approximation from `init` until the relative objective
/// change drops below `epsilon` or `max_iter` surrogates have been solved.
pub fn sca_drive<B: SurrogateBuilder>(
    builder: &B,
    init: B::Point,
    settings: &ScaSettings,
) -> Result<(B::Point, ScaTrace)> {
    let sense = builder.sense();
    let mut point = init;
    let mut obj = builder.objective(&point);
    let mut trace = ScaTrace {
        sense,
        objective: vec![obj],
        residual: vec![0.0],
        termination: Termination::MaxIterations,
    };
    // Objectives are compared on a floor so zero-valued problems terminate.
    let floor = 1e-12;
    for iter in 0..settings.max_iter {
        let program = builder.build(&point)?;
        let outcome = program.solve(settings.accuracy);
        match outcome.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible | SolveStatus::Unbounded if iter == 0 => {
                return Err(Error::Initialization(format!(
                    "first surrogate is {:?}",
                    outcome.status
                )));
            }
            SolveStatus::Infeasible | SolveStatus::Unbounded => {
                trace.termination = Termination::SurrogateInfeasible;
                return Ok((point, trace));
            }
            SolveStatus::NumericalLimit => {
                log::debug!("surrogate solve stopped at numerical limit (iteration {iter})");
                trace.termination = Termination::NumericalLimit;
                return Ok((point, trace));
            }
        }
        let primal = outcome.primal.expect("optimal outcome carries a primal vector");
        let next = builder.decode(&primal);
        let next_obj = builder.objective(&next);
        let step = match sense {
            Sense::Minimize => next_obj - obj,
            Sense::Maximize => obj - next_obj,
        };
        let scale = obj.abs().max(floor);
        trace.objective.push(next_obj);
        trace.residual.push(outcome.max_residual);
        if step > settings.monotone_slack * scale.max(1e-300) && step > floor {
            log::warn!("SCA step worsened the objective by {step:e} at iteration {iter}");
            trace.termination = Termination::NonMonotone;
            return Ok((point, trace));
        }
        let change = (next_obj - obj).abs() / scale;
        point = next;
        obj = next_obj;
        if change < settings.epsilon {
            trace.termination = Termination::Converged;
            return Ok((point, trace));
        }
    }
    Ok((point, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn exact_at_base_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let h = random_vec(&mut rng, 4);
            let f = random_vec(&mut rng, 4);
            let g: f64 = rng.random_range(0.1..5.0);
            let t = taylor_qol(&h, &f, g).unwrap();
            let exact = quad_over_lin(&h, &f, g);
            assert!((t.eval(&f, g) - exact).abs() <= 1e-12 * exact.max(1.0));
        }
    }

    #[test]
    fn hand_example_scalar() {
        // h = 1, f_local = 2, γ_local = 4: g̃(f, γ) = f·(2·2/4) − γ/4.
        let t = taylor_qol(&[c(1.0, 0.0)], &[c(2.0, 0.0)], 4.0).unwrap();
        assert!((t.re[0] - 1.0).abs() < 1e-15);
        assert!((t.gamma + 0.25).abs() < 1e-15);
        assert!((t.eval(&[c(2.0, 0.0)], 4.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_base_point_gives_zero_map() {
        let t = taylor_qol(&[c(1.0, 2.0), c(0.5, 0.0)], &[c(0.0, 0.0); 2], 2.0).unwrap();
        assert!(t.re.iter().chain(&t.im).all(|&x| x == 0.0));
        assert_eq!(t.gamma, 0.0);
    }

    #[test]
    fn rejects_nonpositive_gamma() {
        assert!(matches!(taylor_qol(&[c(1.0, 0.0)], &[c(1.0, 0.0)], 0.0), Err(Error::Domain(_))));
        assert!(taylor_qol(&[c(1.0, 0.0)], &[c(1.0, 0.0)], -1.0).is_err());
    }

    #[test]
    fn underestimates_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let n = rng.random_range(1..6);
            let h = random_vec(&mut rng, n);
            let fl = random_vec(&mut rng, n);
            let gl: f64 = rng.random_range(0.05..10.0);
            let f = random_vec(&mut rng, n);
            let g: f64 = rng.random_range(0.05..10.0);
            let t = taylor_qol(&h, &fl, gl).unwrap();
            assert!(t.eval(&f, g) <= quad_over_lin(&h, &f, g) + 1e-12);
        }
    }

    #[test]
    fn affine_form_matches_eval() {
        let h = vec![c(0.3, -0.2), c(1.0, 0.4)];
        let fl = vec![c(0.5, 0.1), c(-0.2, 0.7)];
        let t = taylor_qol(&h, &fl, 1.7).unwrap();
        let mut p = ConicProgram::new();
        let re = p.add_vars("re", 2);
        let im = p.add_vars("im", 2);
        let gv = p.add_var("g");
        let scale = 0.5;
        let aff = t.to_affine(&re, &im, scale, &Affine::var(gv));
        let f = [c(0.9, -0.4), c(0.1, 0.2)];
        // Program point stores f / scale.
        let x = [f[0].re / scale, f[1].re / scale, f[0].im / scale, f[1].im / scale, 2.3];
        assert!((aff.eval(&x) - t.eval(&f, 2.3)).abs() < 1e-12);
    }

    /// min P s.t. log₂(1 + P·|h|²) ≥ D, solved through the SINR surrogate.
    struct SingleLink {
        gain: f64,
        demand: f64,
    }

    impl SurrogateBuilder for SingleLink {
        type Point = f64; // amplitude

        fn sense(&self) -> Sense {
            Sense::Minimize
        }

        fn build(&self, local: &f64) -> Result<ConicProgram> {
            let h = [c(self.gain.sqrt(), 0.0)];
            let t = taylor_qol(&h, &[c(*local, 0.0)], 1.0)?;
            let mut p = ConicProgram::new();
            let fr = p.add_var("f_re");
            let fi = p.add_var("f_im");
            let e = p.add_var("E");
            let r = p.add_var("R");
            p.add_quadratic_epigraph(&[Affine::var(fr), Affine::var(fi)], Affine::var(e))?;
            p.add_exp_rate_constraint(&Affine::var(r), &t.to_affine(&[fr], &[fi], 1.0, &Affine::constant(1.0)))?;
            p.add_nonneg(Affine::var(r).offset(-self.demand))?;
            p.minimize(Affine::var(e));
            Ok(p)
        }

        fn decode(&self, primal: &[f64]) -> f64 {
            c(primal[0], primal[1]).norm()
        }

        fn objective(&self, point: &f64) -> f64 {
            point * point
        }
    }

    #[test]
    fn single_link_converges_to_shannon_inverse() {
        let b = SingleLink { gain: 1.0, demand: 2.0 };
        let (amp, trace) = sca_drive(&b, 3.0, &ScaSettings { epsilon: 1e-9, ..ScaSettings::default() }).unwrap();
        assert!((amp * amp - 3.0).abs() < 1e-5, "power {}", amp * amp);
        assert!(trace.worst_relative_regression(1e-12) <= 1e-6);
        assert_eq!(trace.objective[0], 9.0);
    }

    struct Exact;

    impl SurrogateBuilder for Exact {
        type Point = f64;

        fn sense(&self) -> Sense {
            Sense::Minimize
        }

        fn build(&self, _local: &f64) -> Result<ConicProgram> {
            let mut p = ConicProgram::new();
            let x = p.add_var("x");
            p.add_nonneg(Affine::var(x).offset(-1.0))?;
            p.minimize(Affine::var(x));
            Ok(p)
        }

        fn decode(&self, primal: &[f64]) -> f64 {
            primal[0]
        }

        fn objective(&self, point: &f64) -> f64 {
            *point
        }
    }

    #[test]
    fn exact_surrogate_converges_after_one_repeat() {
        let (x, trace) = sca_drive(&Exact, 1.0, &ScaSettings::default()).unwrap();
        assert!((x - 1.0).abs() < 1e-7);
        assert_eq!(trace.termination, Termination::Converged);
        assert_eq!(trace.iterations(), 1);
    }

    #[test]
    fn infeasible_first_surrogate_is_an_initialization_error() {
        let b = SingleLink { gain: 1.0, demand: 2.0 };
        // A zero local point linearizes the SINR to zero, so R ≥ 2 is unreachable.
        assert!(matches!(sca_drive(&b, 0.0, &ScaSettings::default()), Err(Error::Initialization(_))));
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let trace = ScaTrace {
            sense: Sense::Minimize,
            objective: vec![2.0, 1.0],
            residual: vec![0.0, 1e-9],
            termination: Termination::Converged,
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,objective,residual\n0,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn regression_measures_steps_against_the_sense() {
        let trace = |sense, objective: Vec<f64>| ScaTrace {
            sense,
            residual: vec![0.0; objective.len()],
            objective,
            termination: Termination::Converged,
        };
        assert_eq!(trace(Sense::Minimize, vec![4.0, 3.0, 2.0]).worst_relative_regression(1e-12), 0.0);
        assert_eq!(trace(Sense::Minimize, vec![4.0, 5.0]).worst_relative_regression(1e-12), 0.25);
        assert_eq!(trace(Sense::Maximize, vec![4.0, 3.0]).worst_relative_regression(1e-12), 0.25);
        assert_eq!(trace(Sense::Maximize, vec![1e-13, 5e-14]).worst_relative_regression(1e-12), 0.0);
        assert_eq!(trace(Sense::Minimize, vec![1.0]).worst_relative_regression(1e-12), 0.0);
    }
}

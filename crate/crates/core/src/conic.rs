//! Cone-program container and the interior-point backend adapter.
//!
//! A program minimizes a linear objective over real variables subject to
//! blocks of the form `G·x + h ∈ K`. Supported cones, with `s = G·x + h`:
//!
//! | kind                  | membership                                   |
//! |-----------------------|----------------------------------------------|
//! | `Zero`                | `s = 0`                                      |
//! | `Nonnegative`         | `s ≥ 0`                                      |
//! | `SecondOrder`         | `s₀ ≥ ‖s₁..‖`                                |
//! | `RotatedSecondOrder`  | `2·s₀·s₁ ≥ ‖s₂..‖²`, `s₀, s₁ ≥ 0`            |
//! | `Exponential`         | `s₁·exp(s₀ / s₁) ≤ s₂`, `s₁ > 0`             |
//!
//! Complex model quantities enter as separate real and imaginary coordinates.

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Error, Result};

pub const DEFAULT_ACCURACY: f64 = 1e-7;
/// Stalled solves are accepted when their primal residual is within this multiple of the
/// requested accuracy, relative to the largest primal entry.
const STALL_TOLERANCE_FACTOR: f64 = 10.0;

pub const DEFAULT_MAX_ITER: u32 = 200;

/// Sparse affine scalar expression `Σ cᵢ·xᵢ + c₀`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(index: usize) -> Self {
        Self::term(index, 1.0)
    }

    pub fn term(index: usize, coef: f64) -> Self {
        Self { terms: vec![(index, coef)], constant: 0.0 }
    }

    pub fn sum_vars(indices: impl IntoIterator<Item = usize>) -> Self {
        Self {
            terms: indices.into_iter().map(|i| (i, 1.0)).collect(),
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, index: usize, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((index, coef));
        }
        self
    }

    pub fn add(&mut self, other: &Affine) -> &mut Self {
        self.add_scaled(other, 1.0)
    }

    pub fn add_scaled(&mut self, other: &Affine, scale: f64) -> &mut Self {
        self.terms
            .extend(other.terms.iter().map(|&(i, c)| (i, c * scale)));
        self.constant += other.constant * scale;
        self
    }

    pub fn plus(mut self, other: &Affine) -> Self {
        self.add(other);
        self
    }

    pub fn minus(mut self, other: &Affine) -> Self {
        self.add_scaled(other, -1.0);
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Zero,
    Nonnegative,
    SecondOrder,
    RotatedSecondOrder,
    Exponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub rows: Vec<Affine>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConstraintId(pub usize);

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    names: Vec<String>,
    objective: Affine,
    blocks: Vec<ConeBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalLimit,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Present iff `status == Optimal`.
    pub primal: Option<Vec<f64>>,
    pub objective: f64,
    pub iterations: u32,
    pub max_residual: f64,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn blocks(&self) -> &[ConeBlock] {
        &self.blocks
    }

    pub fn var_name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.names.push(name.into());
        self.names.len() - 1
    }

    pub fn add_vars(&mut self, prefix: &str, n: usize) -> Vec<usize> {
        (0..n).map(|i| self.add_var(format!("{prefix}[{i}]"))).collect()
    }

    /// Sets the (minimized) objective.
    pub fn minimize(&mut self, objective: Affine) {
        self.objective = objective;
    }

    pub fn objective(&self) -> &Affine {
        &self.objective
    }

    pub fn add_block(&mut self, kind: ConeKind, rows: Vec<Affine>) -> Result<ConstraintId> {
        let n = self.n_vars();
        if let Some(bad) = rows.iter().filter_map(Affine::max_index).find(|&i| i >= n) {
            return Err(Error::Dimension(format!(
                "constraint references variable {bad} but only {n} exist"
            )));
        }
        let ok = match kind {
            ConeKind::Zero | ConeKind::Nonnegative => !rows.is_empty(),
            ConeKind::SecondOrder => !rows.is_empty(),
            ConeKind::RotatedSecondOrder => rows.len() >= 2,
            ConeKind::Exponential => rows.len() == 3,
        };
        if !ok {
            return Err(Error::Dimension(format!(
                "{kind:?} block cannot have {} rows",
                rows.len()
            )));
        }
        self.blocks.push(ConeBlock { kind, rows });
        Ok(ConstraintId(self.blocks.len() - 1))
    }

    /// `expr = 0`
    pub fn add_eq(&mut self, expr: Affine) -> Result<ConstraintId> {
        self.add_block(ConeKind::Zero, vec![expr])
    }

    /// `expr ≥ 0`
    pub fn add_nonneg(&mut self, expr: Affine) -> Result<ConstraintId> {
        self.add_block(ConeKind::Nonnegative, vec![expr])
    }

    /// `lhs ≤ rhs`
    pub fn add_le(&mut self, lhs: &Affine, rhs: &Affine) -> Result<ConstraintId> {
        self.add_nonneg(rhs.clone().minus(lhs))
    }

    /// `‖exprs‖² ≤ bound`, encoded as `(bound, ½, exprs)` in the rotated cone.
    pub fn add_quadratic_epigraph(&mut self, exprs: &[Affine], bound: Affine) -> Result<ConstraintId> {
        let mut rows = Vec::with_capacity(exprs.len() + 2);
        rows.push(bound);
        rows.push(Affine::constant(0.5));
        rows.extend(exprs.iter().cloned());
        self.add_block(ConeKind::RotatedSecondOrder, rows)
    }

    /// `2^rate − 1 ≤ rhs`, encoded as `(rate·ln 2, 1, 1 + rhs)` in the exponential cone.
    pub fn add_exp_rate_constraint(&mut self, rate: &Affine, rhs: &Affine) -> Result<ConstraintId> {
        let rows = vec![
            rate.clone().scaled(std::f64::consts::LN_2),
            Affine::constant(1.0),
            rhs.clone().offset(1.0),
        ];
        self.add_block(ConeKind::Exponential, rows)
    }

    /// Largest cone-membership violation of `x` over all blocks.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let s: Vec<f64> = b.rows.iter().map(|r| r.eval(x)).collect();
                cone_violation(b.kind, &s)
            })
            .fold(0.0, f64::max)
    }

    pub fn solve(&self, accuracy: f64) -> SolveOutcome {
        self.solve_with(accuracy, DEFAULT_MAX_ITER)
    }

    pub fn solve_with(&self, accuracy: f64, max_iter: u32) -> SolveOutcome {
        let n = self.n_vars();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut b = Vec::new();
        let mut cones = Vec::with_capacity(self.blocks.len());
        let mut row = 0usize;

        let mut push_row = |expr: &Affine, scale: f64, b: &mut Vec<f64>, row: &mut usize| {
            // Clarabel form: A·x + s = b with s ∈ K, so A = −G and b = h.
            for &(j, c) in &expr.terms {
                cols[j].push((*row, -c * scale));
            }
            b.push(expr.constant * scale);
            *row += 1;
        };

        for block in &self.blocks {
            match block.kind {
                ConeKind::Zero => {
                    block.rows.iter().for_each(|r| push_row(r, 1.0, &mut b, &mut row));
                    cones.push(SupportedConeT::ZeroConeT(block.rows.len()));
                }
                ConeKind::Nonnegative => {
                    block.rows.iter().for_each(|r| push_row(r, 1.0, &mut b, &mut row));
                    cones.push(SupportedConeT::NonnegativeConeT(block.rows.len()));
                }
                ConeKind::SecondOrder => {
                    block.rows.iter().for_each(|r| push_row(r, 1.0, &mut b, &mut row));
                    cones.push(SupportedConeT::SecondOrderConeT(block.rows.len()));
                }
                ConeKind::RotatedSecondOrder => {
                    let h = std::f64::consts::FRAC_1_SQRT_2;
                    let u = &block.rows[0];
                    let w = &block.rows[1];
                    push_row(&u.clone().plus(w), h, &mut b, &mut row);
                    push_row(&u.clone().minus(w), h, &mut b, &mut row);
                    block.rows[2..]
                        .iter()
                        .for_each(|r| push_row(r, 1.0, &mut b, &mut row));
                    cones.push(SupportedConeT::SecondOrderConeT(block.rows.len()));
                }
                ConeKind::Exponential => {
                    block.rows.iter().for_each(|r| push_row(r, 1.0, &mut b, &mut row));
                    cones.push(SupportedConeT::ExponentialConeT());
                }
            }
        }
        let m = row;
        let a = csc_from_columns(m, n, cols);
        let p = CscMatrix::<f64>::zeros((n, n));
        let mut q = vec![0.0; n];
        for &(j, c) in &self.objective.terms {
            q[j] += c;
        }

        let tol = accuracy.clamp(1e-12, 1e-6);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(max_iter)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .tol_feas(tol)
            .build()
            .expect("static solver settings are valid");

        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("conic backend rejected program: {e:?}");
                return SolveOutcome {
                    status: SolveStatus::NumericalLimit,
                    primal: None,
                    objective: f64::NAN,
                    iterations: 0,
                    max_residual: f64::INFINITY,
                };
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let x = sol.x.clone();
        let residual = if x.iter().all(|v| v.is_finite()) {
            self.max_violation(&x)
        } else {
            f64::INFINITY
        };
        let magnitude = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved if residual <= accuracy => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::Unbounded
            }
            // Stalled near the optimum: keep the point when it is primal feasible.
            SolverStatus::AlmostSolved | SolverStatus::InsufficientProgress | SolverStatus::MaxIterations
                if residual <= STALL_TOLERANCE_FACTOR * accuracy * magnitude =>
            {
                log::debug!("accepting {:?} point with residual {residual:e}", sol.status);
                SolveStatus::Optimal
            }
            other => {
                log::debug!("backend stopped with {other:?}, residual {residual:e}");
                SolveStatus::NumericalLimit
            }
        };
        let objective = self.objective.eval(&x);
        SolveOutcome {
            status,
            primal: (status == SolveStatus::Optimal).then_some(x),
            objective,
            iterations: sol.iterations,
            max_residual: residual,
        }
    }

    /// Conic Benchmark Format (version 3) dump for cross-solver debugging.
    pub fn to_cbf(&self) -> String {
        let mut out = String::new();
        let rows = |b: &ConeBlock| -> Vec<Affine> {
            match b.kind {
                ConeKind::Exponential => vec![b.rows[2].clone(), b.rows[1].clone(), b.rows[0].clone()],
                _ => b.rows.clone(),
            }
        };
        let m: usize = self.blocks.iter().map(|b| b.rows.len()).sum();
        let _ = writeln!(out, "VER\n3\n\nOBJSENSE\nMIN\n");
        let _ = writeln!(out, "VAR\n{} 1\nF {}\n", self.n_vars(), self.n_vars());
        let _ = writeln!(out, "CON\n{} {}", m, self.blocks.len());
        for b in &self.blocks {
            let tag = match b.kind {
                ConeKind::Zero => "L=",
                ConeKind::Nonnegative => "L+",
                ConeKind::SecondOrder => "Q",
                ConeKind::RotatedSecondOrder => "QR",
                ConeKind::Exponential => "EXP",
            };
            let _ = writeln!(out, "{tag} {}", b.rows.len());
        }
        out.push('\n');

        let obj: Vec<_> = self.objective.terms.iter().filter(|t| t.1 != 0.0).collect();
        let _ = writeln!(out, "OBJACOORD\n{}", obj.len());
        for (j, c) in obj {
            let _ = writeln!(out, "{j} {c:e}");
        }
        out.push('\n');
        if self.objective.constant != 0.0 {
            let _ = writeln!(out, "OBJBCOORD\n{:e}\n", self.objective.constant);
        }

        let mut acoord = Vec::new();
        let mut bcoord = Vec::new();
        let mut i = 0usize;
        for b in &self.blocks {
            for r in rows(b) {
                for &(j, c) in &r.terms {
                    if c != 0.0 {
                        acoord.push((i, j, c));
                    }
                }
                if r.constant != 0.0 {
                    bcoord.push((i, r.constant));
                }
                i += 1;
            }
        }
        let _ = writeln!(out, "ACOORD\n{}", acoord.len());
        for (i, j, c) in acoord {
            let _ = writeln!(out, "{i} {j} {c:e}");
        }
        out.push('\n');
        let _ = writeln!(out, "BCOORD\n{}", bcoord.len());
        for (i, c) in bcoord {
            let _ = writeln!(out, "{i} {c:e}");
        }
        out
    }
}

/// Free-function form of [`ConicProgram::solve`].
pub fn solve(program: &ConicProgram, accuracy: f64) -> SolveOutcome {
    program.solve(accuracy)
}

fn csc_from_columns(m: usize, n: usize, mut cols: Vec<Vec<(usize, f64)>>) -> CscMatrix<f64> {
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &mut cols {
        col.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(r, v) in col.iter() {
            if last == Some(r) {
                *nzval.last_mut().unwrap() += v;
            } else {
                rowval.push(r);
                nzval.push(v);
                last = Some(r);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

fn cone_violation(kind: ConeKind, s: &[f64]) -> f64 {
    match kind {
        ConeKind::Zero => s.iter().map(|v| v.abs()).fold(0.0, f64::max),
        ConeKind::Nonnegative => s.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max),
        ConeKind::SecondOrder => {
            let tail = s[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
            (tail - s[0]).max(0.0)
        }
        ConeKind::RotatedSecondOrder => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            let (a, b) = ((s[0] + s[1]) * h, (s[0] - s[1]) * h);
            let tail = (b * b + s[2..].iter().map(|v| v * v).sum::<f64>()).sqrt();
            (tail - a).max(0.0)
        }
        ConeKind::Exponential => {
            let (x, y, z) = (s[0], s[1], s[2]);
            if y > 0.0 {
                (y * (x / y).exp() - z).max(0.0)
            } else {
                // Closure: y = 0 requires x ≤ 0 and z ≥ 0.
                (-y).max(x.max(0.0)).max((-z).max(0.0))
            }
        }
    }
}

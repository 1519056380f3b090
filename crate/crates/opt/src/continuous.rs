//! Continuous conic solves (integrality ignored).
//!
//! Programs are mapped onto the standard form
//!
//! ```text
//! minimize    c'x
//! subject to  A x + s = b,   s in K = {0}^p x R+^q x SOC(n1) x ... x SOC(nk)
//! ```
//!
//! Convex quadratic rows `||F x||^2 + a'x + c <= 0` become rotated cones via
//! `||(2 F x, tau - 1)|| <= tau + 1` with `tau = -(a'x + c)`. Variable bounds
//! become nonnegative rows; fixed variables become zero-cone rows.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::OptError;
use crate::program::{max_violation, ConicProgram, ConvexConstraint, LinExpr};
use crate::quad::factor_psd;
use crate::solution::{KktResiduals, SolveStatus, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxationStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct Relaxation {
    pub status: RelaxationStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub iterations: u32,
}

#[derive(Debug, Clone)]
pub struct ContinuousOptions {
    pub max_iter: u32,
    pub time_limit: Option<f64>,
    /// Termination tolerance handed to the interior-point method.
    pub tol: f64,
}

impl Default for ContinuousOptions {
    fn default() -> Self {
        Self { max_iter: 200, time_limit: None, tol: 1e-8 }
    }
}

/// A convex solver for the continuous relaxation of a [`ConicProgram`].
pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &'static str;

    /// Solve with the variable bounds replaced by `lower`/`upper`.
    fn solve_bounded(
        &self,
        prog: &ConicProgram,
        lower: &[f64],
        upper: &[f64],
        opts: &ContinuousOptions,
    ) -> Result<Relaxation, OptError>;
}

/// Interior-point backend built on the homogeneous-embedding solver in `clarabel`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

/// Standard-form data in triplet layout, grouped by cone type.
#[derive(Default)]
struct StandardForm {
    zero: Vec<(Vec<(usize, f64)>, f64)>,
    nonneg: Vec<(Vec<(usize, f64)>, f64)>,
    socs: Vec<Vec<(Vec<(usize, f64)>, f64)>>,
}

impl StandardForm {
    /// Row `a'x + s = b` for the affine expression `e(x) = -(a'x) + b`, i.e. `s = e(x)`.
    fn slack_row(e: &LinExpr) -> (Vec<(usize, f64)>, f64) {
        let e = e.compact();
        (e.terms.iter().map(|&(v, c)| (v.0, -c)).collect(), e.constant)
    }

    fn build(prog: &ConicProgram, lower: &[f64], upper: &[f64]) -> Result<Self, OptError> {
        let mut sf = StandardForm::default();
        for row in &prog.rows {
            match &row.constraint {
                // e(x) <= 0  <=>  s = -e(x) >= 0
                ConvexConstraint::LinearLe(e) => sf.nonneg.push(Self::slack_row(&e.scaled(-1.0))),
                ConvexConstraint::LinearEq(e) => sf.zero.push(Self::slack_row(&e.scaled(-1.0))),
                ConvexConstraint::Soc { bound, elems } => {
                    let mut cone = vec![Self::slack_row(bound)];
                    cone.extend(elems.iter().map(Self::slack_row));
                    sf.socs.push(cone);
                }
                ConvexConstraint::Quadratic { quad, linear } => {
                    let f = factor_psd(quad).map_err(OptError::InvalidProgram)?;
                    let tau = linear.scaled(-1.0);
                    let mut cone = vec![Self::slack_row(&(tau.clone() + 1.0))];
                    for frow in &f.rows {
                        let mut e = LinExpr::new();
                        for (c, v) in frow.iter().zip(&f.vars) {
                            e.add_term(*v, 2.0 * c);
                        }
                        cone.push(Self::slack_row(&e));
                    }
                    cone.push(Self::slack_row(&(tau - 1.0)));
                    sf.socs.push(cone);
                }
            }
        }
        for i in 0..prog.num_vars() {
            let (lo, hi) = (lower[i], upper[i]);
            if lo > hi {
                return Err(OptError::InvalidProgram(format!("variable {i} has lower {lo} > upper {hi}")));
            }
            if lo == hi {
                sf.zero.push((vec![(i, 1.0)], lo));
                continue;
            }
            if hi.is_finite() {
                sf.nonneg.push((vec![(i, 1.0)], hi));
            }
            if lo.is_finite() {
                sf.nonneg.push((vec![(i, -1.0)], -lo));
            }
        }
        Ok(sf)
    }

    fn into_matrices(self, n: usize) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut cones = Vec::new();
        if !self.zero.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(self.zero.len()));
            rows.extend(self.zero);
        }
        if !self.nonneg.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(self.nonneg.len()));
            rows.extend(self.nonneg);
        }
        for c in self.socs {
            cones.push(SupportedConeT::SecondOrderConeT(c.len()));
            rows.extend(c);
        }
        let m = rows.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut b = Vec::with_capacity(m);
        for (r, (coefs, rhs)) in rows.into_iter().enumerate() {
            for (j, v) in coefs {
                cols[j].push((r, v));
            }
            b.push(rhs);
        }
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in cols {
            for (r, v) in col {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        (CscMatrix::new(m, n, colptr, rowval, nzval), b, cones)
    }
}

fn settings(opts: &ContinuousOptions, attempt: usize) -> DefaultSettings<f64> {
    let mut builder = DefaultSettingsBuilder::default();
    builder
        .verbose(false)
        .max_iter(opts.max_iter * if attempt > 0 { 3 } else { 1 })
        .tol_gap_abs(opts.tol)
        .tol_gap_rel(opts.tol)
        .tol_feas(opts.tol)
        .presolve_enable(false);
    if let Some(t) = opts.time_limit {
        builder.time_limit(t);
    }
    if attempt > 0 {
        builder.equilibrate_enable(attempt == 1).static_regularization_constant(1e-7);
    }
    builder.build().expect("static settings are valid")
}

fn cone_residual(s: &[f64], z: &[f64], cones: &[SupportedConeT<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut off = 0;
    for c in cones {
        match c {
            SupportedConeT::ZeroConeT(k) => {
                for v in &s[off..off + k] {
                    worst = worst.max(v.abs());
                }
                off += k;
            }
            SupportedConeT::NonnegativeConeT(k) => {
                for i in off..off + k {
                    worst = worst.max(-s[i]).max(-z[i]);
                }
                off += k;
            }
            SupportedConeT::SecondOrderConeT(k) => {
                for v in [s, z] {
                    let t = v[off];
                    let n = v[off + 1..off + k].iter().map(|a| a * a).sum::<f64>().sqrt();
                    worst = worst.max((n - t) / (1.0 + t.abs()));
                }
                off += k;
            }
            _ => unreachable!("only zero, nonnegative and second-order cones are emitted"),
        }
    }
    worst
}

/// Residuals of `A x + s = b`, `A'z + q = 0`, `s'z = 0`, and cone membership.
fn kkt_residuals(
    a: &CscMatrix<f64>,
    b: &[f64],
    q: &[f64],
    x: &[f64],
    s: &[f64],
    z: &[f64],
    cones: &[SupportedConeT<f64>],
) -> KktResiduals {
    let mut ax = vec![0.0; a.m];
    let mut atz = vec![0.0; a.n];
    for j in 0..a.n {
        for k in a.colptr[j]..a.colptr[j + 1] {
            let (r, v) = (a.rowval[k], a.nzval[k]);
            ax[r] += v * x[j];
            atz[j] += v * z[r];
        }
    }
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let rp: Vec<f64> = (0..a.m).map(|i| ax[i] + s[i] - b[i]).collect();
    let rd: Vec<f64> = (0..a.n).map(|j| atz[j] + q[j]).collect();
    let pobj: f64 = q.iter().zip(x).map(|(a, b)| a * b).sum();
    let dobj: f64 = -b.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
    KktResiduals {
        primal: inf(&rp) / (1.0 + inf(b).max(inf(&ax)).max(inf(s))),
        dual: inf(&rd) / (1.0 + inf(q).max(inf(&atz))),
        complementarity: (pobj - dobj).abs() / (1.0 + pobj.abs().min(dobj.abs())),
        cone: cone_residual(s, z, cones),
    }
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve_bounded(
        &self,
        prog: &ConicProgram,
        lower: &[f64],
        upper: &[f64],
        opts: &ContinuousOptions,
    ) -> Result<Relaxation, OptError> {
        let n = prog.num_vars();
        let sf = StandardForm::build(prog, lower, upper)?;
        let (a, b, cones) = sf.into_matrices(n);
        let mut q = vec![0.0; n];
        for &(v, c) in &prog.objective.terms {
            q[v.0] += c;
        }
        let p = CscMatrix::<f64>::zeros((n, n));
        let mut last = String::new();
        for attempt in 0..3 {
            let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings(opts, attempt))
                .map_err(|e| OptError::InvalidProgram(format!("{e:?}")))?;
            solver.solve();
            let sol = &solver.solution;
            let status = match sol.status {
                SolverStatus::Solved | SolverStatus::AlmostSolved => RelaxationStatus::Optimal,
                SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                    RelaxationStatus::Infeasible
                }
                SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                    RelaxationStatus::Unbounded
                }
                other => {
                    last = format!("{other:?} after {} iterations", sol.iterations);
                    continue;
                }
            };
            let kkt = kkt_residuals(&a, &b, &q, &sol.x, &sol.s, &sol.z, &cones);
            let objective = prog.objective.eval(&sol.x);
            return Ok(Relaxation { status, x: sol.x.clone(), objective, kkt, iterations: sol.iterations });
        }
        Err(OptError::NumericalFailure(last))
    }
}

/// Solve the continuous relaxation of `prog` with its own bounds.
pub fn solve_continuous(prog: &ConicProgram) -> Result<Solution, OptError> {
    solve_continuous_with(prog, &ClarabelBackend, &ContinuousOptions::default())
}

pub fn solve_continuous_with(
    prog: &ConicProgram,
    backend: &dyn ConicBackend,
    opts: &ContinuousOptions,
) -> Result<Solution, OptError> {
    prog.validate()?;
    let r = backend.solve_bounded(prog, &prog.lower_bounds(), &prog.upper_bounds(), opts)?;
    Ok(match r.status {
        RelaxationStatus::Optimal => Solution {
            status: SolveStatus::Optimal,
            objective: r.objective,
            best_bound: r.objective,
            gap: 0.0,
            nodes: 1,
            kkt: Some(r.kkt),
            x: r.x,
            hint_accepted: false,
            from_hint: false,
            numerical_failures: 0,
        },
        RelaxationStatus::Infeasible => Solution { nodes: 1, ..Solution::empty(SolveStatus::Infeasible) },
        RelaxationStatus::Unbounded => Solution {
            nodes: 1,
            best_bound: f64::NEG_INFINITY,
            objective: f64::NEG_INFINITY,
            ..Solution::empty(SolveStatus::Unbounded)
        },
    })
}

/// Largest row/bound violation of a continuous point (integrality ignored).
pub fn feasibility_violation(prog: &ConicProgram, x: &[f64]) -> f64 {
    max_violation(prog, x, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::VarId;

    #[test]
    fn lower_bound_only() {
        let mut p = ConicProgram::new();
        let x = p.continuous("x", f64::NEG_INFINITY, f64::INFINITY);
        let b = p.block("c");
        p.add_row(b, ConvexConstraint::ge(x, 1.0));
        p.add_objective(x, 1.0);
        let s = solve_continuous(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-7);
        assert!((s.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn quadratic_disc() {
        // min x + y  s.t.  x^2 + y^2 <= 2  ->  x = y = -1
        let mut p = ConicProgram::new();
        let x = p.continuous("x", f64::NEG_INFINITY, f64::INFINITY);
        let y = p.continuous("y", f64::NEG_INFINITY, f64::INFINITY);
        let b = p.block("disc");
        p.add_row(
            b,
            ConvexConstraint::Quadratic { quad: vec![(x, x, 1.0), (y, y, 1.0)], linear: LinExpr::constant(-2.0) },
        );
        p.set_objective(x + y);
        let s = solve_continuous(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] + 1.0).abs() < 1e-6 && (s.x[1] + 1.0).abs() < 1e-6);
        assert!((s.objective + 2.0).abs() < 1e-6);
        assert!(s.kkt.unwrap().max() < 1e-6);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = ConicProgram::new();
        let x = p.continuous("x", f64::NEG_INFINITY, f64::INFINITY);
        let b = p.block("c");
        p.add_row(b, ConvexConstraint::ge(x, 1.0));
        p.add_row(b, ConvexConstraint::le(x, 0.0));
        p.add_objective(x, 1.0);
        assert_eq!(solve_continuous(&p).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_reported() {
        let mut p = ConicProgram::new();
        let x = p.continuous("x", f64::NEG_INFINITY, 0.0);
        p.add_objective(x, 1.0);
        assert_eq!(solve_continuous(&p).unwrap().status, SolveStatus::Unbounded);
        let _ = VarId(0);
    }
}

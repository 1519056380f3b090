//! Activity-based bound propagation of integer variables over linear rows.

use crate::program::{ConicProgram, ConvexConstraint, LinExpr};

/// Linear rows (as `expr <= 0`) that mention at least one integer variable.
pub struct Propagator {
    rows: Vec<LinExpr>,
}

impl Propagator {
    pub fn new(prog: &ConicProgram) -> Self {
        let integral = |e: &LinExpr| e.vars().any(|v| prog.vars[v.0].kind.is_integral());
        let mut rows = Vec::new();
        for r in &prog.rows {
            match &r.constraint {
                ConvexConstraint::LinearLe(e) if integral(e) => rows.push(e.compact()),
                ConvexConstraint::LinearEq(e) if integral(e) => {
                    let e = e.compact();
                    rows.push(e.scaled(-1.0));
                    rows.push(e);
                }
                _ => {}
            }
        }
        Self { rows }
    }

    /// Tighten integer bounds in place. Returns `false` if some row cannot be
    /// satisfied (minimum activity above `tol`) or a domain becomes empty.
    /// Only points violating some row by more than `tol` are cut off.
    pub fn run(&self, prog: &ConicProgram, lower: &mut [f64], upper: &mut [f64], tol: f64) -> bool {
        for _pass in 0..20 {
            let mut changed = false;
            for e in &self.rows {
                let (minact, _) = e.range(lower, upper);
                if !minact.is_finite() {
                    continue;
                }
                if minact > tol {
                    return false;
                }
                // Rows only need to hold within `tol`, so bounds derive from that slack.
                let slack = tol - minact;
                for &(v, c) in &e.terms {
                    let j = v.0;
                    if !prog.vars[j].kind.is_integral() {
                        continue;
                    }
                    if c > 0.0 {
                        let ub = (lower[j] + slack / c + 1e-6).floor();
                        if ub < upper[j] {
                            upper[j] = ub;
                            changed = true;
                        }
                    } else {
                        let lb = (upper[j] - slack / -c - 1e-6).ceil();
                        if lb > lower[j] {
                            lower[j] = lb;
                            changed = true;
                        }
                    }
                    if lower[j] > upper[j] {
                        return false;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        true
    }
}

//! Modeling helpers: big-M indicator rows and absolute-value epigraphs.

use crate::error::OptError;
use crate::program::{BlockId, ConicProgram, ConvexConstraint, LinExpr, VarId};

/// Supremum of `expr` over the variable box of `prog`, `None` if unbounded.
pub fn box_sup(prog: &ConicProgram, expr: &LinExpr) -> Option<f64> {
    let (_, hi) = expr.range(&prog.lower_bounds(), &prog.upper_bounds());
    hi.is_finite().then_some(hi)
}

fn box_sup_with(lower: &[f64], upper: &[f64], expr: &LinExpr) -> Option<f64> {
    let (_, hi) = expr.range(lower, upper);
    hi.is_finite().then_some(hi)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BigM {
    /// Each row gets `max(0, sup over the box)`.
    Tightest,
    /// Caller-supplied coefficients, one per row of family 0 and family 1.
    /// Checked against the box supremum where that is finite.
    Given { m0: Vec<f64>, m1: Vec<f64> },
}

/// Rows encoding `S = 0 => family0 <= 0` and `S = 1 => family1 <= 0`:
/// `f0(x) <= M0 S` and `f1(x) <= M1 (1 - S)`.
///
/// Family expressions are in `expr <= 0` form and must not mention `s`.
pub fn big_m_indicator(
    prog: &ConicProgram,
    s: VarId,
    family0: &[LinExpr],
    family1: &[LinExpr],
    m: &BigM,
) -> Result<Vec<ConvexConstraint>, OptError> {
    if let BigM::Given { m0, m1 } = m {
        if m0.len() != family0.len() || m1.len() != family1.len() {
            return Err(OptError::InvalidProgram("big-M coefficient count does not match family size".into()));
        }
    }
    let (lower, upper) = (prog.lower_bounds(), prog.upper_bounds());
    let mut out = Vec::with_capacity(family0.len() + family1.len());
    for (idx, (e, active_when_one)) in family0
        .iter()
        .map(|e| (e, false))
        .chain(family1.iter().map(|e| (e, true)))
        .enumerate()
    {
        if e.vars().any(|v| v == s) {
            return Err(OptError::InvalidProgram(format!("indicator row {idx} mentions its own switch")));
        }
        let sup = box_sup_with(&lower, &upper, e);
        let coef = match m {
            BigM::Tightest => sup.ok_or(OptError::UnboundedBigM { row: idx })?.max(0.0),
            BigM::Given { m0, m1 } => {
                let given = if active_when_one { m1[idx - family0.len()] } else { m0[idx] };
                if let Some(req) = sup {
                    if given < req - 1e-9 * req.abs().max(1.0) {
                        return Err(OptError::BigMTooSmall { row: idx, given, required: req });
                    }
                }
                given
            }
        };
        let row = if active_when_one {
            // f1 <= M (1 - S)
            e.clone().with_term(s, coef).with_constant(-coef)
        } else {
            // f0 <= M S
            e.clone().with_term(s, -coef)
        };
        out.push(ConvexConstraint::LinearLe(row));
    }
    Ok(out)
}

/// Add `t` with `-t <= x <= t` and return it. `t` is bounded by the box maximum of `|x|`.
///
/// `t = |x|` only holds where increasing `t` is penalized.
pub fn abs_value_epigraph(
    prog: &mut ConicProgram,
    block: BlockId,
    x: impl Into<LinExpr>,
    name: impl Into<String>,
) -> VarId {
    let x = x.into();
    let (lo, hi) = x.range(&prog.lower_bounds(), &prog.upper_bounds());
    let cap = lo.abs().max(hi.abs());
    let t = prog.continuous(name, 0.0, if cap.is_finite() { cap } else { f64::INFINITY });
    prog.add_row(block, ConvexConstraint::le(x.clone(), t));
    prog.add_row(block, ConvexConstraint::le(-x, t));
    t
}

//! Program representation shared by the continuous solver and branch-and-bound.
//!
//! A [`ConicProgram`] is a linear objective over bounded variables subject to a
//! list of [`ConvexConstraint`] rows. Every row is normalized so that the
//! feasible side is `expr <= 0` (or `expr == 0`, or `||elems|| <= bound`), with
//! the constant folded into the expression.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::OptError;

/// Index of a variable inside a [`ConicProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// Index of a named constraint block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

impl VarKind {
    pub fn is_integral(self) -> bool {
        !matches!(self, VarKind::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

/// Sparse affine expression `sum(coef * x) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn term(v: VarId, coef: f64) -> Self {
        Self { terms: vec![(v, coef)], constant: 0.0 }
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn with_term(mut self, v: VarId, coef: f64) -> Self {
        self.add_term(v, coef);
        self
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(v, c)| (v, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    /// Merge duplicate variables and drop zero coefficients; terms end up sorted by index.
    pub fn compact(&self) -> Self {
        let mut map: Vec<(VarId, f64)> = self.terms.clone();
        map.sort_by_key(|t| t.0);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(map.len());
        for (v, c) in map {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Self { terms: out, constant: self.constant }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>() + self.constant
    }

    /// Smallest and largest value over the box `[lower, upper]`.
    pub fn range(&self, lower: &[f64], upper: &[f64]) -> (f64, f64) {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for &(v, c) in &self.terms {
            if c > 0.0 {
                lo += c * lower[v.0];
                hi += c * upper[v.0];
            } else {
                lo += c * upper[v.0];
                hi += c * lower[v.0];
            }
        }
        (lo, hi)
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.terms.iter().map(|t| t.0)
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + rhs.scaled(-1.0)
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        self.scaled(rhs)
    }
}

impl Add<f64> for LinExpr {
    type Output = LinExpr;
    fn add(self, rhs: f64) -> LinExpr {
        self.with_constant(rhs)
    }
}

impl Sub<f64> for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: f64) -> LinExpr {
        self.with_constant(-rhs)
    }
}

impl Add<LinExpr> for VarId {
    type Output = LinExpr;
    fn add(self, rhs: LinExpr) -> LinExpr {
        LinExpr::from(self) + rhs
    }
}

impl Sub<LinExpr> for VarId {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        LinExpr::from(self) - rhs
    }
}

impl Add<VarId> for VarId {
    type Output = LinExpr;
    fn add(self, rhs: VarId) -> LinExpr {
        LinExpr::from(self) + LinExpr::from(rhs)
    }
}

impl Sub<VarId> for VarId {
    type Output = LinExpr;
    fn sub(self, rhs: VarId) -> LinExpr {
        LinExpr::from(self) - LinExpr::from(rhs)
    }
}

impl Mul<f64> for VarId {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        LinExpr::term(self, rhs)
    }
}

impl Add<f64> for VarId {
    type Output = LinExpr;
    fn add(self, rhs: f64) -> LinExpr {
        LinExpr::from(self).with_constant(rhs)
    }
}

impl Sub<f64> for VarId {
    type Output = LinExpr;
    fn sub(self, rhs: f64) -> LinExpr {
        LinExpr::from(self).with_constant(-rhs)
    }
}

impl Add<VarId> for LinExpr {
    type Output = LinExpr;
    fn add(self, rhs: VarId) -> LinExpr {
        self + LinExpr::from(rhs)
    }
}

impl Sub<VarId> for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: VarId) -> LinExpr {
        self - LinExpr::from(rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    LinearInequality,
    LinearEquality,
    ConvexQuadratic,
    SecondOrderCone,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintKind::LinearInequality => "linear-inequality",
            ConstraintKind::LinearEquality => "linear-equality",
            ConstraintKind::ConvexQuadratic => "convex-quadratic-inequality",
            ConstraintKind::SecondOrderCone => "second-order-cone",
        };
        f.write_str(s)
    }
}

/// One convex constraint row.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexConstraint {
    /// `expr <= 0`
    LinearLe(LinExpr),
    /// `expr == 0`
    LinearEq(LinExpr),
    /// `sum(c * x_i * x_j) + linear <= 0` with a positive semidefinite quadratic part.
    Quadratic {
        quad: Vec<(VarId, VarId, f64)>,
        linear: LinExpr,
    },
    /// `||elems||_2 <= bound`
    Soc { bound: LinExpr, elems: Vec<LinExpr> },
}

impl ConvexConstraint {
    /// `lhs <= rhs`
    pub fn le(lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) -> Self {
        ConvexConstraint::LinearLe(lhs.into() - rhs.into())
    }

    /// `lhs >= rhs`
    pub fn ge(lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) -> Self {
        ConvexConstraint::LinearLe(rhs.into() - lhs.into())
    }

    /// `lhs == rhs`
    pub fn eq(lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) -> Self {
        ConvexConstraint::LinearEq(lhs.into() - rhs.into())
    }

    pub fn kind(&self) -> ConstraintKind {
        match self {
            ConvexConstraint::LinearLe(_) => ConstraintKind::LinearInequality,
            ConvexConstraint::LinearEq(_) => ConstraintKind::LinearEquality,
            ConvexConstraint::Quadratic { .. } => ConstraintKind::ConvexQuadratic,
            ConvexConstraint::Soc { .. } => ConstraintKind::SecondOrderCone,
        }
    }

    /// Signed value of the constraint function at `x`; feasible iff `<= 0`
    /// (iff `== 0` for equalities).
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ConvexConstraint::LinearLe(e) | ConvexConstraint::LinearEq(e) => e.eval(x),
            ConvexConstraint::Quadratic { quad, linear } => {
                quad.iter().map(|&(i, j, c)| c * x[i.0] * x[j.0]).sum::<f64>() + linear.eval(x)
            }
            ConvexConstraint::Soc { bound, elems } => {
                let n = elems.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
                n - bound.eval(x)
            }
        }
    }

    /// Nonnegative violation magnitude at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.value(x);
        match self {
            ConvexConstraint::LinearEq(_) => v.abs(),
            _ => v.max(0.0),
        }
    }

    pub fn vars(&self) -> Vec<VarId> {
        let mut out: Vec<VarId> = match self {
            ConvexConstraint::LinearLe(e) | ConvexConstraint::LinearEq(e) => e.vars().collect(),
            ConvexConstraint::Quadratic { quad, linear } => quad
                .iter()
                .flat_map(|&(i, j, _)| [i, j])
                .chain(linear.vars())
                .collect(),
            ConvexConstraint::Soc { bound, elems } => {
                bound.vars().chain(elems.iter().flat_map(|e| e.vars())).collect()
            }
        };
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub block: BlockId,
    pub constraint: ConvexConstraint,
}

/// Linear objective, bounded variables with integrality marks, and convex rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub vars: Vec<Variable>,
    pub objective: LinExpr,
    pub rows: Vec<Row>,
    pub blocks: Vec<String>,
    block_index: HashMap<String, BlockId>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, kind: VarKind) -> VarId {
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            _ => (lower, upper),
        };
        self.vars.push(Variable { name: name.into(), lower, upper, kind });
        VarId(self.vars.len() - 1)
    }

    pub fn continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Continuous)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, VarKind::Binary)
    }

    pub fn integer(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Integer)
    }

    /// Get or create a named constraint block.
    pub fn block(&mut self, name: &str) -> BlockId {
        if let Some(&id) = self.block_index.get(name) {
            return id;
        }
        let id = BlockId(self.blocks.len());
        self.blocks.push(name.to_string());
        self.block_index.insert(name.to_string(), id);
        id
    }

    pub fn find_block(&self, name: &str) -> Option<BlockId> {
        self.block_index.get(name).copied()
    }

    pub fn block_name(&self, id: BlockId) -> &str {
        &self.blocks[id.0]
    }

    pub fn add_row(&mut self, block: BlockId, constraint: ConvexConstraint) {
        self.rows.push(Row { block, constraint });
    }

    pub fn add_rows(&mut self, block: BlockId, rows: impl IntoIterator<Item = ConvexConstraint>) {
        for c in rows {
            self.add_row(block, c);
        }
    }

    pub fn set_objective(&mut self, obj: LinExpr) {
        self.objective = obj;
    }

    pub fn add_objective(&mut self, v: VarId, coef: f64) {
        self.objective.add_term(v, coef);
    }

    pub fn lower_bounds(&self) -> Vec<f64> {
        self.vars.iter().map(|v| v.lower).collect()
    }

    pub fn upper_bounds(&self) -> Vec<f64> {
        self.vars.iter().map(|v| v.upper).collect()
    }

    pub fn integer_vars(&self) -> Vec<VarId> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind.is_integral())
            .map(|(i, _)| VarId(i))
            .collect()
    }

    pub fn num_integer(&self) -> usize {
        self.vars.iter().filter(|v| v.kind.is_integral()).count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Count rows per kind, in the order of [`ConstraintKind`] variants.
    pub fn row_counts(&self) -> RowCounts {
        let mut c = RowCounts::default();
        for r in &self.rows {
            match r.constraint.kind() {
                ConstraintKind::LinearInequality => c.linear_le += 1,
                ConstraintKind::LinearEquality => c.linear_eq += 1,
                ConstraintKind::ConvexQuadratic => c.quadratic += 1,
                ConstraintKind::SecondOrderCone => c.soc += 1,
            }
        }
        c
    }

    pub fn rows_in_block(&self, block: BlockId) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(move |r| r.block == block)
    }

    /// Copy of the program with the given blocks dropped.
    pub fn without_blocks(&self, drop: &[BlockId]) -> ConicProgram {
        let mut out = self.clone();
        out.rows.retain(|r| !drop.contains(&r.block));
        out
    }

    /// Copy with all integrality marks removed.
    pub fn relaxed(&self) -> ConicProgram {
        let mut out = self.clone();
        for v in &mut out.vars {
            v.kind = VarKind::Continuous;
        }
        out
    }

    /// Structural checks: bounds ordered, binaries in [0,1], SOC rows well formed,
    /// quadratic parts positive semidefinite, variable indices in range.
    pub fn validate(&self) -> Result<(), OptError> {
        let n = self.vars.len();
        for (i, v) in self.vars.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(OptError::InvalidProgram(format!(
                    "variable {} ({}) has inverted bounds [{}, {}]",
                    i, v.name, v.lower, v.upper
                )));
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(OptError::InvalidProgram(format!("binary {} outside [0,1]", v.name)));
            }
        }
        if self.objective.vars().any(|v| v.0 >= n) {
            return Err(OptError::InvalidProgram("objective references unknown variable".into()));
        }
        for (k, r) in self.rows.iter().enumerate() {
            if r.block.0 >= self.blocks.len() {
                return Err(OptError::InvalidProgram(format!("row {k} has unknown block")));
            }
            if r.constraint.vars().iter().any(|v| v.0 >= n) {
                return Err(OptError::InvalidProgram(format!("row {k} references unknown variable")));
            }
            match &r.constraint {
                ConvexConstraint::Soc { elems, .. } if elems.is_empty() => {
                    return Err(OptError::InvalidProgram(format!(
                        "row {k}: second-order cone needs dimension >= 2"
                    )));
                }
                ConvexConstraint::Quadratic { quad, .. } => {
                    crate::quad::factor_psd(quad)
                        .map_err(|e| OptError::InvalidProgram(format!("row {k}: {e}")))?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RowCounts {
    pub linear_le: usize,
    pub linear_eq: usize,
    pub quadratic: usize,
    pub soc: usize,
}

impl RowCounts {
    pub fn inequalities(&self) -> usize {
        self.linear_le + self.quadratic + self.soc
    }

    pub fn total(&self) -> usize {
        self.linear_le + self.linear_eq + self.quadratic + self.soc
    }
}

/// Largest violation over rows, bounds and (optionally) integrality.
pub fn max_violation(prog: &ConicProgram, x: &[f64], check_integrality: bool) -> f64 {
    let mut worst: f64 = 0.0;
    for r in &prog.rows {
        worst = worst.max(r.constraint.violation(x));
    }
    for (i, v) in prog.vars.iter().enumerate() {
        worst = worst.max(v.lower - x[i]).max(x[i] - v.upper);
        if check_integrality && v.kind.is_integral() {
            worst = worst.max((x[i] - x[i].round()).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_merges_duplicates() {
        let e = LinExpr::new()
            .with_term(VarId(2), 1.0)
            .with_term(VarId(0), 2.0)
            .with_term(VarId(2), -1.0)
            .compact();
        assert_eq!(e.terms, vec![(VarId(0), 2.0)]);
    }

    #[test]
    fn range_respects_signs() {
        let e = LinExpr::new().with_term(VarId(0), 2.0).with_term(VarId(1), -1.0).with_constant(1.0);
        let (lo, hi) = e.range(&[0.0, 0.0], &[1.0, 3.0]);
        assert_eq!((lo, hi), (-2.0, 3.0));
    }

    #[test]
    fn soc_value_and_violation() {
        let mut p = ConicProgram::new();
        let x = p.continuous("x", -10.0, 10.0);
        let t = p.continuous("t", 0.0, 10.0);
        let c = ConvexConstraint::Soc { bound: t.into(), elems: vec![x.into()] };
        assert_eq!(c.violation(&[3.0, 2.0]), 1.0);
        assert_eq!(c.violation(&[-1.0, 2.0]), 0.0);
    }

    #[test]
    fn validate_rejects_bad_programs() {
        let mut p = ConicProgram::new();
        let x = p.continuous("x", 1.0, 0.0);
        assert!(p.validate().is_err());
        let mut p = ConicProgram::new();
        let x2 = p.continuous("x", 0.0, 1.0);
        let b = p.block("b");
        p.add_row(b, ConvexConstraint::Quadratic { quad: vec![(x2, x2, -1.0)], linear: LinExpr::new() });
        assert!(p.validate().is_err());
        let _ = x;
    }
}

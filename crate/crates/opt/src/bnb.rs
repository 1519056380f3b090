//! Branch-and-bound over continuous conic relaxations.

use std::time::Instant;

use crate::continuous::{ClarabelBackend, ConicBackend, ContinuousOptions, RelaxationStatus};
use crate::error::OptError;
use crate::program::{max_violation, ConicProgram};
use crate::propagate::Propagator;
use crate::solution::{relative_gap, KktResiduals, SolveStatus, Solution};
use crate::strategy::{branching_rules, node_selectors, DepthFirst, NodeKey, NodeSelector};

#[derive(Debug, Clone)]
pub struct BnBOptions {
    /// Relative gap, measured against `max(|incumbent|, 1)`.
    pub gap_tol: f64,
    pub abs_gap_tol: f64,
    pub feas_tol: f64,
    pub integrality_tol: f64,
    pub node_limit: Option<usize>,
    /// Seconds.
    pub time_limit: Option<f64>,
    /// Registered node selector name (`best-first`, `depth-first`).
    pub node_order: String,
    /// Registered branching rule name (`most-fractional`, `first-fractional`).
    pub branching: String,
    /// Full assignment used as the starting incumbent when feasible.
    pub incumbent_hint: Option<Vec<f64>>,
    /// Process up to this many nodes depth-first before switching to
    /// `node_order`; the dive ends early once it finds an incumbent of its own.
    pub dive_nodes: usize,
    pub continuous: ContinuousOptions,
}

impl Default for BnBOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            abs_gap_tol: 1e-6,
            feas_tol: 1e-6,
            integrality_tol: 1e-6,
            node_limit: None,
            time_limit: None,
            node_order: "best-first".into(),
            branching: "most-fractional".into(),
            incumbent_hint: None,
            dive_nodes: 0,
            continuous: ContinuousOptions::default(),
        }
    }
}

impl BnBOptions {
    pub fn validate(&self) -> Result<(), OptError> {
        for (name, v) in [
            ("gap_tol", self.gap_tol),
            ("abs_gap_tol", self.abs_gap_tol),
            ("feas_tol", self.feas_tol),
            ("integrality_tol", self.integrality_tol),
        ] {
            if !(v > 0.0) {
                return Err(OptError::InvalidProgram(format!("option {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

struct Node {
    key: NodeKey,
    /// Bounds of the integer variables, parallel to `int_vars`.
    lower: Vec<f64>,
    upper: Vec<f64>,
}

struct Incumbent {
    x: Vec<f64>,
    objective: f64,
    kkt: Option<KktResiduals>,
    from_hint: bool,
}

struct Search<'a> {
    prog: &'a ConicProgram,
    opts: &'a BnBOptions,
    backend: &'a dyn ConicBackend,
    int_vars: Vec<usize>,
    base_lower: Vec<f64>,
    base_upper: Vec<f64>,
    propagator: Propagator,
    incumbent: Option<Incumbent>,
    numerical_failures: usize,
}

impl Search<'_> {
    fn cutoff(&self) -> f64 {
        match &self.incumbent {
            Some(inc) => {
                inc.objective - self.opts.abs_gap_tol.max(self.opts.gap_tol * inc.objective.abs().max(1.0))
            }
            None => f64::INFINITY,
        }
    }

    fn full_bounds(&self, lower: &[f64], upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut lo, mut hi) = (self.base_lower.clone(), self.base_upper.clone());
        for (k, &j) in self.int_vars.iter().enumerate() {
            lo[j] = lower[k];
            hi[j] = upper[k];
        }
        (lo, hi)
    }

    /// Offer an integral point; it becomes the incumbent if feasible and better
    /// than the current cutoff.
    fn offer(&mut self, x: Vec<f64>, kkt: Option<KktResiduals>) {
        let objective = self.prog.objective_value(&x);
        if objective < self.cutoff() {
            self.incumbent = Some(Incumbent { x, objective, kkt, from_hint: false });
        }
    }

    /// Round integer coordinates; if the rounded point violates rows, re-solve with
    /// the integers fixed.
    fn integral_point(&mut self, x: &[f64], kkt: KktResiduals) -> Option<(Vec<f64>, Option<KktResiduals>)> {
        let mut xr = x.to_vec();
        for &j in &self.int_vars {
            xr[j] = xr[j].round();
        }
        if max_violation(self.prog, &xr, true) <= self.opts.feas_tol {
            return Some((xr, Some(kkt)));
        }
        self.polish(&xr)
    }

    fn polish(&mut self, x: &[f64]) -> Option<(Vec<f64>, Option<KktResiduals>)> {
        let (mut lo, mut hi) = (self.base_lower.clone(), self.base_upper.clone());
        for &j in &self.int_vars {
            let v = x[j].round();
            if v < lo[j] || v > hi[j] {
                return None;
            }
            lo[j] = v;
            hi[j] = v;
        }
        let r = match self.backend.solve_bounded(self.prog, &lo, &hi, &self.opts.continuous) {
            Ok(r) => r,
            Err(_) => {
                self.numerical_failures += 1;
                return None;
            }
        };
        if r.status != RelaxationStatus::Optimal {
            return None;
        }
        let mut xp = r.x;
        for &j in &self.int_vars {
            xp[j] = lo[j];
        }
        (max_violation(self.prog, &xp, true) <= self.opts.feas_tol).then_some((xp, Some(r.kkt)))
    }

    fn seed_from_hint(&mut self, hint: &[f64]) -> Result<bool, OptError> {
        if hint.len() != self.prog.num_vars() {
            return Err(OptError::InvalidProgram(format!(
                "incumbent hint has {} entries, program has {} variables",
                hint.len(),
                self.prog.num_vars()
            )));
        }
        let integral = self.int_vars.iter().all(|&j| (hint[j] - hint[j].round()).abs() <= self.opts.integrality_tol);
        if !integral {
            return Ok(false);
        }
        let mut xr = hint.to_vec();
        for &j in &self.int_vars {
            xr[j] = xr[j].round();
        }
        let point = if max_violation(self.prog, &xr, true) <= self.opts.feas_tol {
            Some((xr, None))
        } else {
            self.polish(&xr)
        };
        Ok(match point {
            Some((x, kkt)) => {
                let objective = self.prog.objective_value(&x);
                self.incumbent = Some(Incumbent { x, objective, kkt, from_hint: true });
                true
            }
            None => false,
        })
    }
}

/// Fix the integer variables at the rounded values of `x` and solve the
/// remaining continuous problem. `None` if the rounded point is outside the
/// integer bounds or the continuous problem has no feasible point within
/// `opts.feas_tol`.
pub fn solve_with_fixed_integers(
    prog: &ConicProgram,
    x: &[f64],
    opts: &BnBOptions,
) -> Result<Option<Solution>, OptError> {
    prog.validate()?;
    if x.len() != prog.num_vars() {
        return Err(OptError::InvalidProgram(format!("point has {} entries, program has {} variables", x.len(), prog.num_vars())));
    }
    let (mut lo, mut hi) = (prog.lower_bounds(), prog.upper_bounds());
    for v in prog.integer_vars() {
        let r = x[v.0].round();
        if r < lo[v.0] - opts.integrality_tol || r > hi[v.0] + opts.integrality_tol {
            return Ok(None);
        }
        lo[v.0] = r;
        hi[v.0] = r;
    }
    let r = ClarabelBackend.solve_bounded(prog, &lo, &hi, &opts.continuous)?;
    if r.status != RelaxationStatus::Optimal {
        return Ok(None);
    }
    let mut xp = r.x;
    for v in prog.integer_vars() {
        xp[v.0] = lo[v.0];
    }
    if max_violation(prog, &xp, true) > opts.feas_tol {
        return Ok(None);
    }
    let objective = prog.objective_value(&xp);
    Ok(Some(Solution {
        status: SolveStatus::Optimal,
        objective,
        best_bound: objective,
        gap: 0.0,
        nodes: 1,
        kkt: Some(r.kkt),
        x: xp,
        hint_accepted: false,
        from_hint: false,
        numerical_failures: 0,
    }))
}

/// Solve with the default conic backend.
pub fn solve_miqcp(prog: &ConicProgram, opts: &BnBOptions) -> Result<Solution, OptError> {
    solve_miqcp_with(prog, opts, &ClarabelBackend)
}

pub fn solve_miqcp_with(
    prog: &ConicProgram,
    opts: &BnBOptions,
    backend: &dyn ConicBackend,
) -> Result<Solution, OptError> {
    prog.validate()?;
    opts.validate()?;
    let selector = node_selectors().create(&opts.node_order)?;
    let rule = branching_rules().create(&opts.branching)?;
    let start = Instant::now();

    let int_vars: Vec<usize> = prog.integer_vars().into_iter().map(|v| v.0).collect();
    let (mut base_lower, mut base_upper) = (prog.lower_bounds(), prog.upper_bounds());
    for &j in &int_vars {
        if !base_lower[j].is_finite() || !base_upper[j].is_finite() {
            return Err(OptError::InvalidProgram(format!(
                "integer variable {} ({}) is unbounded",
                j, prog.vars[j].name
            )));
        }
        base_lower[j] = (base_lower[j] - opts.integrality_tol).ceil();
        base_upper[j] = (base_upper[j] + opts.integrality_tol).floor();
    }
    let root = Node {
        key: NodeKey { bound: f64::NEG_INFINITY, depth: 0, seq: 0 },
        lower: int_vars.iter().map(|&j| base_lower[j]).collect(),
        upper: int_vars.iter().map(|&j| base_upper[j]).collect(),
    };
    let mut search = Search {
        prog,
        opts,
        backend,
        int_vars,
        base_lower,
        base_upper,
        propagator: Propagator::new(prog),
        incumbent: None,
        numerical_failures: 0,
    };
    let hint_accepted = match &opts.incumbent_hint {
        Some(h) => search.seed_from_hint(h)?,
        None => false,
    };

    let mut open: Vec<Node> = vec![root];
    let mut keys: Vec<NodeKey> = vec![open[0].key];
    let mut seq = 1;
    let mut nodes = 0;
    // Smallest bound among nodes discarded against the cutoff (not by infeasibility).
    let mut pruned_bound = f64::INFINITY;
    let mut limit: Option<SolveStatus> = None;

    while !open.is_empty() {
        if opts.node_limit.is_some_and(|n| nodes >= n) {
            limit = Some(SolveStatus::GapLimit);
            break;
        }
        if opts.time_limit.is_some_and(|t| start.elapsed().as_secs_f64() >= t) {
            limit = Some(SolveStatus::TimeLimit);
            break;
        }
        let diving = nodes < opts.dive_nodes && search.incumbent.as_ref().is_none_or(|i| i.from_hint);
        let pick = if diving {
            DepthFirst.select(&keys, false)
        } else {
            selector.select(&keys, search.incumbent.is_some())
        };
        let node = open.swap_remove(pick);
        keys.swap_remove(pick);
        if node.key.bound >= search.cutoff() {
            pruned_bound = pruned_bound.min(node.key.bound);
            continue;
        }
        let (mut lo, mut hi) = search.full_bounds(&node.lower, &node.upper);
        if !search.propagator.run(prog, &mut lo, &mut hi, opts.feas_tol) {
            continue;
        }
        nodes += 1;
        let relax = match backend.solve_bounded(prog, &lo, &hi, &opts.continuous) {
            Ok(r) => Some(r),
            Err(_) => {
                search.numerical_failures += 1;
                None
            }
        };
        let branch_var = match &relax {
            None => {
                // No usable relaxation; split the first unfixed integer to make progress.
                match search.int_vars.iter().find(|&&j| lo[j] < hi[j]) {
                    Some(&j) => Some((j, 0.5 * (lo[j] + hi[j]), node.key.bound)),
                    None => continue,
                }
            }
            Some(r) => match r.status {
                RelaxationStatus::Infeasible => continue,
                RelaxationStatus::Unbounded => {
                    return Ok(Solution {
                        nodes,
                        objective: f64::NEG_INFINITY,
                        numerical_failures: search.numerical_failures,
                        ..Solution::empty(SolveStatus::Unbounded)
                    });
                }
                RelaxationStatus::Optimal => {
                    // Interior-point objectives carry ~tolerance-sized error; shade the bound down.
                    let bound = r.objective - 1e-7 * r.objective.abs().max(1.0);
                    let bound = bound.max(node.key.bound);
                    if bound >= search.cutoff() {
                        pruned_bound = pruned_bound.min(bound);
                        continue;
                    }
                    match rule.choose(prog, &r.x, opts.integrality_tol) {
                        Some(v) => Some((v.0, r.x[v.0], bound)),
                        None => {
                            if let Some((x, kkt)) = search.integral_point(&r.x, r.kkt) {
                                search.offer(x, kkt);
                            }
                            None
                        }
                    }
                }
            },
        };
        let Some((j, value, bound)) = branch_var else { continue };
        let k = search.int_vars.iter().position(|&i| i == j).expect("branch variable is integral");
        let down_hi = value.floor().min(hi[j]);
        let up_lo = down_hi + 1.0;
        // Explore the side nearer to the relaxation value first under LIFO selectors.
        let up_first = value - value.floor() < 0.5;
        let mut children = Vec::with_capacity(2);
        for up in [up_first, !up_first] {
            let (mut l, mut u) = (node.lower.clone(), node.upper.clone());
            if up {
                l[k] = up_lo.max(lo[j]);
            } else {
                u[k] = down_hi;
            }
            for (kk, &jj) in search.int_vars.iter().enumerate() {
                // Carry propagated bounds into children.
                l[kk] = l[kk].max(lo[jj]);
                u[kk] = u[kk].min(hi[jj]);
            }
            if l[k] <= u[k] {
                children.push((l, u));
            }
        }
        for (l, u) in children {
            let key = NodeKey { bound, depth: node.key.depth + 1, seq };
            seq += 1;
            keys.push(key);
            open.push(Node { key, lower: l, upper: u });
        }
    }

    let open_bound = keys.iter().map(|k| k.bound).fold(f64::INFINITY, f64::min);
    let numerical_failures = search.numerical_failures;
    let Some(inc) = search.incumbent else {
        let status = limit.unwrap_or(SolveStatus::Infeasible);
        return Ok(Solution { nodes, best_bound: open_bound, numerical_failures, ..Solution::empty(status) });
    };
    let best_bound = inc.objective.min(pruned_bound).min(open_bound);
    let gap = relative_gap(inc.objective, best_bound);
    Ok(Solution {
        status: limit.unwrap_or(SolveStatus::Optimal),
        objective: inc.objective,
        best_bound,
        gap,
        nodes,
        kkt: inc.kkt,
        x: inc.x,
        hint_accepted,
        from_hint: inc.from_hint,
        numerical_failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuous::solve_continuous;
    use crate::program::ConvexConstraint;

    fn knapsack() -> ConicProgram {
        // min -5a - 4b - 3c  s.t.  2a + 3b + c <= 5
        let mut p = ConicProgram::new();
        let a = p.binary("a");
        let b = p.binary("b");
        let c = p.binary("c");
        let blk = p.block("cap");
        p.add_row(blk, ConvexConstraint::le(a * 2.0 + b * 3.0 + c, 5.0));
        p.set_objective(a * -5.0 + b * -4.0 + c * -3.0);
        p
    }

    #[test]
    fn knapsack_optimum() {
        let s = solve_miqcp(&knapsack(), &BnBOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective + 9.0).abs() < 1e-6, "{}", s.objective);
    }

    #[test]
    fn continuous_program_matches_continuous_solve() {
        let mut p = ConicProgram::new();
        let x = p.continuous("x", f64::NEG_INFINITY, f64::INFINITY);
        let blk = p.block("c");
        p.add_row(blk, ConvexConstraint::ge(x, 1.0));
        p.add_objective(x, 1.0);
        let a = solve_miqcp(&p, &BnBOptions::default()).unwrap();
        let b = solve_continuous(&p).unwrap();
        assert_eq!(a.status, b.status);
        assert!((a.objective - b.objective).abs() < 1e-9);
        assert_eq!(a.nodes, 1);
    }

    #[test]
    fn fixed_binary_needs_one_node() {
        let mut p = ConicProgram::new();
        let s = p.add_var("s", 1.0, 1.0, crate::program::VarKind::Binary);
        let x = p.continuous("x", 0.0, 10.0);
        let blk = p.block("c");
        p.add_row(blk, ConvexConstraint::ge(x, s * 2.0));
        p.add_objective(x, 1.0);
        let sol = solve_miqcp(&p, &BnBOptions::default()).unwrap();
        assert_eq!(sol.nodes, 1);
        assert!((sol.objective - 2.0).abs() < 1e-6);
    }

    #[test]
    fn hint_is_kept_on_ties() {
        let p = knapsack();
        // The hint is the optimum; no leaf of equal value may replace it.
        let opts = BnBOptions { incumbent_hint: Some(vec![1.0, 1.0, 0.0]), ..Default::default() };
        let s = solve_miqcp(&p, &opts).unwrap();
        assert!(s.hint_accepted && s.from_hint);
        assert_eq!(s.x, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn infeasible_integer_program() {
        let mut p = ConicProgram::new();
        let a = p.binary("a");
        let b = p.binary("b");
        let blk = p.block("c");
        p.add_row(blk, ConvexConstraint::eq(a * 2.0 + b * 2.0, 1.0));
        let s = solve_miqcp(&p, &BnBOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }
}

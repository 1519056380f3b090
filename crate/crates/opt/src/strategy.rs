//! Pluggable branch-and-bound strategies, looked up by name.

use crate::error::OptError;
use crate::program::{ConicProgram, VarId, VarKind};

/// What a node selector sees of an open node.
#[derive(Debug, Clone, Copy)]
pub struct NodeKey {
    /// Relaxation bound inherited from the parent.
    pub bound: f64,
    pub depth: usize,
    /// Creation order; unique per node.
    pub seq: usize,
}

pub trait NodeSelector: Send + Sync {
    fn name(&self) -> &'static str;
    /// Index into `open` of the node to process next; `open` is nonempty.
    fn select(&self, open: &[NodeKey], has_incumbent: bool) -> usize;
}

pub trait BranchingRule: Send + Sync {
    fn name(&self) -> &'static str;
    /// Integer variable to branch on, or `None` if `x` is integral within `tol`.
    fn choose(&self, prog: &ConicProgram, x: &[f64], tol: f64) -> Option<VarId>;
}

/// Smallest bound first; ties go to the oldest node.
#[derive(Debug, Default)]
pub struct BestFirst;

impl NodeSelector for BestFirst {
    fn name(&self) -> &'static str {
        "best-first"
    }

    fn select(&self, open: &[NodeKey], _has_incumbent: bool) -> usize {
        let mut best = 0;
        for (i, k) in open.iter().enumerate().skip(1) {
            let b = &open[best];
            if k.bound < b.bound || (k.bound == b.bound && k.seq < b.seq) {
                best = i;
            }
        }
        best
    }
}

/// Deepest node first; ties go to the newest node.
#[derive(Debug, Default)]
pub struct DepthFirst;

impl NodeSelector for DepthFirst {
    fn name(&self) -> &'static str {
        "depth-first"
    }

    fn select(&self, open: &[NodeKey], _has_incumbent: bool) -> usize {
        let mut best = 0;
        for (i, k) in open.iter().enumerate().skip(1) {
            let b = &open[best];
            if k.depth > b.depth || (k.depth == b.depth && k.seq > b.seq) {
                best = i;
            }
        }
        best
    }
}

/// Depth-first until an incumbent exists, then best-first.
#[derive(Debug, Default)]
pub struct DiveThenBest;

impl NodeSelector for DiveThenBest {
    fn name(&self) -> &'static str {
        "dive-then-best"
    }

    fn select(&self, open: &[NodeKey], has_incumbent: bool) -> usize {
        if has_incumbent {
            BestFirst.select(open, true)
        } else {
            DepthFirst.select(open, false)
        }
    }
}

fn fractionality(v: f64) -> f64 {
    (v - v.floor()).min(v.ceil() - v)
}

/// Most fractional variable, binaries before general integers, lowest index on ties.
#[derive(Debug, Default)]
pub struct MostFractional;

impl BranchingRule for MostFractional {
    fn name(&self) -> &'static str {
        "most-fractional"
    }

    fn choose(&self, prog: &ConicProgram, x: &[f64], tol: f64) -> Option<VarId> {
        for pass in [VarKind::Binary, VarKind::Integer] {
            let mut best: Option<(usize, f64)> = None;
            for (i, v) in prog.vars.iter().enumerate() {
                if v.kind != pass {
                    continue;
                }
                let f = fractionality(x[i]);
                if f > tol && best.is_none_or(|(_, bf)| f > bf) {
                    best = Some((i, f));
                }
            }
            if let Some((i, _)) = best {
                return Some(VarId(i));
            }
        }
        None
    }
}

/// Lowest-index fractional variable.
#[derive(Debug, Default)]
pub struct FirstFractional;

impl BranchingRule for FirstFractional {
    fn name(&self) -> &'static str {
        "first-fractional"
    }

    fn choose(&self, prog: &ConicProgram, x: &[f64], tol: f64) -> Option<VarId> {
        prog.vars
            .iter()
            .enumerate()
            .find(|(i, v)| v.kind.is_integral() && fractionality(x[*i]) > tol)
            .map(|(i, _)| VarId(i))
    }
}

/// Name-keyed table of strategy constructors.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, fn() -> Box<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, entries: Vec::new() }
    }

    /// Later registrations under an existing name replace the earlier one.
    pub fn register(&mut self, name: &'static str, make: fn() -> Box<T>) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, make));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(&self, name: &str) -> Result<Box<T>, OptError> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, make)| make())
            .ok_or_else(|| OptError::UnknownStrategy {
                name: format!("{} {name}", self.kind),
                known: self.names().join(", "),
            })
    }
}

pub fn node_selectors() -> Registry<dyn NodeSelector> {
    let mut r: Registry<dyn NodeSelector> = Registry::new("node order");
    r.register("best-first", || Box::new(BestFirst));
    r.register("depth-first", || Box::new(DepthFirst));
    r.register("dive-then-best", || Box::new(DiveThenBest));
    r
}

pub fn branching_rules() -> Registry<dyn BranchingRule> {
    let mut r: Registry<dyn BranchingRule> = Registry::new("branching rule");
    r.register("most-fractional", || Box::new(MostFractional));
    r.register("first-fractional", || Box::new(FirstFractional));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys() -> Vec<NodeKey> {
        vec![
            NodeKey { bound: 2.0, depth: 1, seq: 0 },
            NodeKey { bound: 1.0, depth: 3, seq: 1 },
            NodeKey { bound: 1.0, depth: 3, seq: 2 },
        ]
    }

    #[test]
    fn selectors_break_ties_by_age() {
        assert_eq!(BestFirst.select(&keys(), false), 1);
        assert_eq!(DepthFirst.select(&keys(), false), 2);
        assert_eq!(DiveThenBest.select(&keys(), false), 2);
        assert_eq!(DiveThenBest.select(&keys(), true), 1);
    }

    #[test]
    fn most_fractional_prefers_binaries_then_low_index() {
        let mut p = ConicProgram::new();
        p.integer("n", 0.0, 5.0);
        p.binary("a");
        p.binary("b");
        let x = [2.5, 0.25, 0.75];
        assert_eq!(MostFractional.choose(&p, &x, 1e-6), Some(VarId(1)));
        assert_eq!(FirstFractional.choose(&p, &x, 1e-6), Some(VarId(0)));
        assert_eq!(MostFractional.choose(&p, &[2.0, 0.0, 1.0], 1e-6), None);
    }

    #[test]
    fn unknown_name_lists_known() {
        let err = node_selectors().create("random").err().unwrap().to_string();
        assert!(err.contains("best-first") && err.contains("depth-first"));
    }
}

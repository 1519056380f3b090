use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Node limit reached; the incumbent (if any) is returned with its certified gap.
    GapLimit,
    TimeLimit,
}

impl SolveStatus {
    /// True when a primal point accompanies the status.
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::GapLimit | SolveStatus::TimeLimit)
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::GapLimit => "gap-limit",
            SolveStatus::TimeLimit => "time-limit",
        };
        f.write_str(s)
    }
}

/// Scaled residuals of the conic KKT system at a returned primal-dual point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    /// Distance of slacks and duals from their cones.
    pub cone: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity).max(self.cone)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    /// Primal values; empty when no point is available.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Best proven lower bound on the optimal objective.
    pub best_bound: f64,
    /// Relative gap `(objective - best_bound) / max(|objective|, 1)`.
    pub gap: f64,
    pub nodes: usize,
    pub kkt: Option<KktResiduals>,
    /// Whether the supplied incumbent hint was accepted as a starting incumbent.
    pub hint_accepted: bool,
    /// Whether the returned point is the hint itself.
    pub from_hint: bool,
    pub numerical_failures: usize,
}

impl Solution {
    pub fn empty(status: SolveStatus) -> Self {
        Self {
            status,
            x: Vec::new(),
            objective: f64::INFINITY,
            best_bound: f64::NEG_INFINITY,
            gap: f64::INFINITY,
            nodes: 0,
            kkt: None,
            hint_accepted: false,
            from_hint: false,
            numerical_failures: 0,
        }
    }
}

pub(crate) fn relative_gap(objective: f64, bound: f64) -> f64 {
    if !objective.is_finite() {
        return f64::INFINITY;
    }
    ((objective - bound) / objective.abs().max(1.0)).max(0.0)
}

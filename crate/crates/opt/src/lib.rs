//! Conic relaxations and branch-and-bound for mixed-integer quadratically
//! constrained programs with linear objectives.
//!
//! Build a [`ConicProgram`], then call [`solve_continuous`] for the relaxation or
//! [`solve_miqcp`] for the integer problem.

pub mod bnb;
pub mod continuous;
pub mod dump;
pub mod error;
pub mod instances;
pub mod modeling;
pub mod program;
pub mod propagate;
mod quad;
pub mod solution;
pub mod strategy;

pub use bnb::{solve_miqcp, solve_miqcp_with, solve_with_fixed_integers, BnBOptions};
pub use continuous::{
    feasibility_violation, solve_continuous, solve_continuous_with, ClarabelBackend, ConicBackend,
    ContinuousOptions,
};
pub use error::OptError;
pub use modeling::{abs_value_epigraph, big_m_indicator, box_sup, BigM};
pub use program::{
    max_violation, BlockId, ConicProgram, ConstraintKind, ConvexConstraint, LinExpr, RowCounts, VarId,
    VarKind, Variable,
};
pub use solution::{KktResiduals, SolveStatus, Solution};

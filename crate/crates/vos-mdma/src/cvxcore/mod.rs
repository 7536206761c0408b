//! Convex engines shared by both solvers: the power feasibility LP for
//! fixed SNR targets, the difference-of-convex terms behind the SCA step,
//! a small log-barrier Newton solver and the per-sub-frame SCA subproblem.

pub mod barrier;
pub mod dc;
pub mod feasibility;
pub mod lp;
pub mod p4;

pub use feasibility::{feasible_power, FeasibilityOutcome, FeasibilityProblem, SubframeAssignment, SubframeModel};
pub use p4::{solve_p4, P4Options, P4Solution};

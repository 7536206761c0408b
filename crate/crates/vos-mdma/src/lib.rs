//! Value-of-Service driven resource allocation for a base station that
//! serves communication, positioning and sensing users on a shared
//! time-frequency grid with power-domain NOMA.
//!
//! Module map:
//! - [`scenario`]: instance generation, channels, beamformers and gains.
//! - [`vosmetric`]: elastic normalization, per-user VoS, log-objective.
//! - [`kpi`]: SINR, rate, latency, Fisher information, CRB, detection.
//! - [`cvxcore`]: power feasibility LP, DC terms and the SCA subproblem.
//! - [`modp`]: dynamic programming over assignment states with a polyblock
//!   inner solver.
//! - [`sca`]: VoS-prioritized assignment and swap + SCA refinement.
//! - [`harness`]: baselines, Monte-Carlo sweeps and CSV output.

pub mod assignment;
pub mod cvxcore;
pub mod error;
pub mod harness;
pub mod kpi;
pub mod modp;
pub mod result;
pub mod sca;
pub mod scenario;
pub mod vosmetric;

pub use assignment::{Assignment, PowerAlloc, SinrVector};
pub use error::{Error, Result};
pub use result::SolveResult;
pub use scenario::{generate, Scenario, ScenarioConfig, ServiceType};

//! Path simulation of the CBIC equation, the coupled pair, and the
//! Laplace-transform oracle for the model without competition.

pub mod jumps;
pub mod ode;
pub mod path;
pub mod rng;
pub mod stable;
pub mod stats;

pub use ode::{cbi_laplace, solve_vt, solve_vt_detailed, OdeOutcome, OdeTolerance};
pub use path::{
    simulate_coupled, simulate_coupled_ensemble, simulate_coupled_indexed, simulate_ensemble,
    simulate_path, simulate_path_indexed, simulate_refinement_ensemble, simulate_refinement_pair,
    CoupledPath, JumpSource, LassoEvent, LassoSign, Path, Scheme, SimConfig, GAP_TOL,
};
pub use stable::sample_stable_increment;
pub use stats::{ensemble_stats, ks_two_sample, summarize, KsResult, Summary, TimeStats};

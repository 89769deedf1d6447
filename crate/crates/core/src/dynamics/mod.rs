//! Liouvillian construction, steady states, master-equation propagation and
//! quantum trajectories.

mod evolve;
mod generator;
pub mod integrate;
mod mcwf;
mod steady;
mod superop;

pub use evolve::{
    evolve, evolve_with, propagate_observed, Evolution, EvolveOptions, MasterEquation,
    ObservedStep, Schedule, Segment, EVOLVE_TRACE_TOL, PRE_SYMMETRIZATION_TOL,
};
pub use generator::{unvec, vec_of, Generator, Scratch};
pub use mcwf::{
    mcwf_ensemble, mcwf_trajectory, EnsembleAccumulator, EnsembleStats, Jump, TrajectoryRecord,
    TrajectorySystem,
};
pub use steady::{
    steady_state, steady_state_in_sector, steady_state_with, SteadyMethod, SteadyStateOptions,
    SteadyStateReport,
};
pub use superop::{liouvillian, Superoperator};

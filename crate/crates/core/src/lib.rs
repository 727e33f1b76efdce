//! Hybrid control structures that make second-order gradient flows converge
//! at a prescribed exponential rate, with a discrete solver, reference
//! methods and an experiment runner.

pub mod baselines;
pub mod discrete;
pub mod error;
pub mod experiment;
pub mod integrator;
pub mod objectives;
mod ode;
pub mod structure;
pub mod structure_i;
pub mod structure_ii;
pub mod validate;

pub use error::{ControlError, Error, Result};
pub use integrator::{
    simulate, IntegratorSettings, JumpEvent, Sample, Termination, TrajectoryRecord,
};
pub use objectives::{
    make_lmse, make_logistic, make_quadratic, Constants, Objective, Problem, ProblemInfo,
};
pub use ode::locate_crossing;
pub use structure::{sigma, HybridState, HybridStructure, StructureKind};
pub use structure_i::ParamsI;
pub use structure_ii::ParamsII;
pub use validate::{Condition, Violation};

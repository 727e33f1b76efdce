//! Shared vocabulary of the two hybrid structures: the state, the structure
//! tag, and the [`HybridStructure`] trait the integrator is generic over.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ControlError, Result};
use crate::objectives::{Constants, Problem};
use crate::validate::Violation;

/// Position `x1`, velocity `x2` and elapsed time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
    pub t: f64,
}

impl HybridState {
    pub fn new(x1: DVector<f64>, x2: DVector<f64>, t: f64) -> Self {
        debug_assert_eq!(x1.len(), x2.len());
        HybridState { x1, x2, t }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.x1.iter().all(|v| v.is_finite())
            && self.x2.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StructureKind {
    /// State-dependent damping.
    #[serde(rename = "I", alias = "i")]
    I,
    /// State-dependent potential coefficient.
    #[serde(rename = "II", alias = "ii")]
    II,
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureKind::I => f.write_str("I"),
            StructureKind::II => f.write_str("II"),
        }
    }
}

/// Flow map, feedback law, flow set and jump map of one hybrid structure.
pub trait HybridStructure: fmt::Debug + Clone + Send + Sync {
    fn kind(&self) -> StructureKind;

    /// Desired exponential rate.
    fn alpha(&self) -> f64;

    /// Jump gain.
    fn beta(&self) -> f64;

    /// Admissible control interval `[u_lo, u_hi]`.
    fn u_bounds(&self) -> (f64, f64);

    /// Feedback value at `(x1, x2)`.
    fn control(
        &self,
        problem: &Problem,
        x1: &DVector<f64>,
        x2: &DVector<f64>,
    ) -> std::result::Result<f64, ControlError>;

    /// Closed-loop vector field `(dx1/dt, dx2/dt)` together with the control
    /// value used to build it.
    fn vector_field(
        &self,
        problem: &Problem,
        x1: &DVector<f64>,
        x2: &DVector<f64>,
    ) -> std::result::Result<(DVector<f64>, DVector<f64>, f64), ControlError>;

    /// Violated feasibility conditions; empty when the rate guarantee holds.
    fn validate(&self, constants: &Constants) -> Vec<Violation>;

    /// Analytic lower bound on the duration of a flow segment that starts
    /// from a post-jump state with gradient norm `grad_norm0`.
    fn zeno_lower_bound(&self, constants: &Constants, grad_norm0: f64) -> Result<f64>;

    /// Signed distance of the control value to the admissible interval;
    /// nonnegative exactly on the flow set.
    fn margin(
        &self,
        problem: &Problem,
        x1: &DVector<f64>,
        x2: &DVector<f64>,
    ) -> std::result::Result<f64, ControlError> {
        let u = self.control(problem, x1, x2)?;
        let (lo, hi) = self.u_bounds();
        Ok(interval_margin(u, lo, hi))
    }

    /// Reset `x2 <- -beta grad f(x1)`.
    fn jump(
        &self,
        problem: &Problem,
        state: &HybridState,
    ) -> std::result::Result<HybridState, ControlError> {
        gradient_jump(problem, state, self.beta())
    }
}

pub(crate) fn interval_margin(u: f64, lo: f64, hi: f64) -> f64 {
    (hi - u).min(u - lo)
}

pub(crate) fn gradient_jump(
    problem: &Problem,
    state: &HybridState,
    beta: f64,
) -> std::result::Result<HybridState, ControlError> {
    let g = problem.gradient(&state.x1);
    if g.iter().all(|&v| v == 0.0) {
        return Err(ControlError::Converged);
    }
    Ok(HybridState::new(state.x1.clone(), g * -beta, state.t))
}

/// `<grad f(x1), x2> + alpha (f(x1) - f_star)`, absent when `f_star` is
/// unknown. Both closed-loop flows keep it constant.
pub fn sigma(state: &HybridState, alpha: f64, problem: &Problem) -> Option<f64> {
    let gap = problem.gap(&state.x1)?;
    Some(problem.gradient(&state.x1).dot(&state.x2) + alpha * gap)
}

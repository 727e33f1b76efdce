//! Parameter feasibility conditions shared by the continuous structures and
//! the discrete solver.

use std::fmt;

use serde::Serialize;

/// One sufficient condition for a convergence guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Structure I: `u_lo < alpha + 1/beta - L_f * beta`.
    DampingLower,
    /// Structure I: `u_hi > alpha + 1/beta + ell_f * beta`.
    DampingUpper,
    /// Structure I: `alpha <= 2 * mu_f * beta`.
    DampingRate,
    /// Structure II: `u_lo < -ell_f * beta^2 + (1 - alpha) * beta`.
    PotentialLower,
    /// Structure II: `u_hi > L_f * beta^2 + (1 - alpha) * beta`.
    PotentialUpper,
    /// Structure II: `alpha <= 2 * mu_f * beta`.
    PotentialRate,
    /// Discrete: `sqrt(c1) <= c2`.
    FlowSetNonEmpty,
    /// Discrete: `beta^2 * c1 <= 1 <= beta * c2`.
    JumpLandsInside,
    /// Discrete: `c2 * L_f * s < 2 * c1`.
    StepSize,
}

impl Condition {
    pub fn statement(self) -> &'static str {
        match self {
            Condition::DampingLower => "u_lo < alpha + 1/beta - L_f*beta",
            Condition::DampingUpper => "u_hi > alpha + 1/beta + ell_f*beta",
            Condition::DampingRate => "alpha <= 2*mu_f*beta",
            Condition::PotentialLower => "u_lo < -ell_f*beta^2 + (1-alpha)*beta",
            Condition::PotentialUpper => "u_hi > L_f*beta^2 + (1-alpha)*beta",
            Condition::PotentialRate => "alpha <= 2*mu_f*beta",
            Condition::FlowSetNonEmpty => "sqrt(c1) <= c2",
            Condition::JumpLandsInside => "beta^2*c1 <= 1 <= beta*c2",
            Condition::StepSize => "c2*L_f*s < 2*c1",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            Condition::DampingLower => "damping-lower",
            Condition::DampingUpper => "damping-upper",
            Condition::DampingRate => "damping-rate",
            Condition::PotentialLower => "potential-lower",
            Condition::PotentialUpper => "potential-upper",
            Condition::PotentialRate => "potential-rate",
            Condition::FlowSetNonEmpty => "flow-set-nonempty",
            Condition::JumpLandsInside => "jump-lands-inside",
            Condition::StepSize => "step-size",
        };
        write!(f, "{tag} [{}]", self.statement())
    }
}

/// A violated condition with the two sides of the failed inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub condition: Condition,
    pub lhs: f64,
    pub rhs: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated (lhs = {}, rhs = {})",
            self.condition, self.lhs, self.rhs
        )
    }
}

pub(crate) fn require_lt(out: &mut Vec<Violation>, condition: Condition, lhs: f64, rhs: f64) {
    if !(lhs < rhs) {
        out.push(Violation {
            condition,
            lhs,
            rhs,
        });
    }
}

pub(crate) fn require_le(out: &mut Vec<Violation>, condition: Condition, lhs: f64, rhs: f64) {
    if !(lhs <= rhs) {
        out.push(Violation {
            condition,
            lhs,
            rhs,
        });
    }
}

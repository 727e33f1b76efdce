//! Forward-Euler discretization of the hybrid structures.
//!
//! The discrete flow set is
//! `C_d = { c1 |x2|^2 <= |grad f(x1)|^2 <= c2 <grad f(x1), -x2> }`; inside it
//! the state takes one Euler step of the chosen structure's closed-loop field,
//! outside it `x2` is reset to `-beta grad f(x1)`. Under the step conditions
//! each flow step contracts the gap by `lambda_rate(...)`, independently of
//! which structure supplies the feedback.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ControlError, Error, Result};
use crate::objectives::{Constants, Problem};
use crate::structure::{HybridState, StructureKind};
use crate::structure_i::{flow_i, u_i};
use crate::structure_ii::{flow_ii, u_ii};
use crate::validate::{require_le, require_lt, Condition, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteParams {
    pub s: f64,
    pub c1: f64,
    pub c2: f64,
    pub beta: f64,
}

impl DiscreteParams {
    fn check_positive(&self) -> Result<()> {
        let DiscreteParams { s, c1, c2, beta } = *self;
        if [s, c1, c2, beta].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "discrete parameters must be positive: {self:?}"
            )))
        }
    }
}

/// `1 + 2 mu_f (-s/c2 + L_f s^2 / (2 c1))`.
pub fn lambda_rate(s: f64, c1: f64, c2: f64, mu_f: f64, l_f: f64) -> f64 {
    1.0 + 2.0 * mu_f * (-s / c2 + l_f * s * s / (2.0 * c1))
}

pub fn validate_discrete(params: &DiscreteParams, constants: &Constants) -> Vec<Violation> {
    let DiscreteParams { s, c1, c2, beta } = *params;
    let mut out = Vec::new();
    require_le(&mut out, Condition::FlowSetNonEmpty, c1.sqrt(), c2);
    let before = out.len();
    require_le(&mut out, Condition::JumpLandsInside, beta * beta * c1, 1.0);
    if out.len() == before {
        require_le(&mut out, Condition::JumpLandsInside, 1.0, beta * c2);
    }
    require_lt(
        &mut out,
        Condition::StepSize,
        c2 * constants.l_f * s,
        2.0 * c1,
    );
    out
}

/// Parameters with `sqrt(c1) = c2 = 1/beta = L_f s`, the choice that
/// minimizes the guaranteed rate for a given step.
pub fn corollary1_params(l_f: f64, s: f64) -> Result<DiscreteParams> {
    if !(l_f > 0.0 && s > 0.0 && l_f.is_finite() && s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "need L_f > 0 and s > 0, got L_f = {l_f}, s = {s}"
        )));
    }
    let c2 = l_f * s;
    Ok(DiscreteParams {
        s,
        c1: c2 * c2,
        c2,
        beta: 1.0 / c2,
    })
}

/// `1 - mu_f / L_f`, the rate attained by [`corollary1_params`].
pub fn optimal_rate(constants: &Constants) -> f64 {
    1.0 - constants.mu_f / constants.l_f
}

/// Both inequalities of `C_d`, ties counted as inside.
pub fn in_discrete_flow_set(
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    c1: f64,
    c2: f64,
    problem: &Problem,
) -> bool {
    let g = problem.gradient(x1);
    let gsq = g.norm_squared();
    c1 * x2.norm_squared() <= gsq && gsq <= c2 * g.dot(&-x2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Flow,
    Jump,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Flow => "flow",
            Mode::Jump => "jump",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub k: usize,
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
    pub f_gap: Option<f64>,
    /// The update that produced this iterate; `Jump` for the initial state.
    pub mode: Mode,
    /// `f_gap[k] / f_gap[k-1]` on flow steps with a positive previous gap.
    pub per_step_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteTermination {
    MaxIterations,
    Converged,
    /// A reset landed outside `C_d`; further resets would repeat it forever.
    JumpOutsideFlowSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteRun {
    pub structure: StructureKind,
    pub params: DiscreteParams,
    pub alpha: f64,
    /// Guaranteed per-flow-step contraction for the problem's constants.
    pub lambda: f64,
    pub iterates: Vec<Iterate>,
    pub termination: DiscreteTermination,
    /// Jumps taken because the feedback could not be evaluated in `C_d`.
    pub forced_jumps: usize,
}

impl DiscreteRun {
    pub fn iterations(&self) -> usize {
        self.iterates.len().saturating_sub(1)
    }

    pub fn flow_steps(&self) -> usize {
        self.iterates
            .iter()
            .filter(|it| it.k > 0 && it.mode == Mode::Flow)
            .count()
    }

    pub fn jump_steps(&self) -> usize {
        self.iterates
            .iter()
            .filter(|it| it.k > 0 && it.mode == Mode::Jump)
            .count()
    }
}

/// Runs the discrete method after checking the step conditions.
/// `gtol` is relative: iteration stops once
/// `|grad f(x1)| <= gtol (1 + |grad f(x1_0)|)`.
pub fn run_algorithm1(
    problem: &Problem,
    structure: StructureKind,
    params: &DiscreteParams,
    alpha: f64,
    x1_0: &DVector<f64>,
    k_max: usize,
    gtol: f64,
) -> Result<DiscreteRun> {
    params.check_positive()?;
    let violations = validate_discrete(params, problem.constants());
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations));
    }
    run_algorithm1_unchecked(problem, structure, params, alpha, x1_0, k_max, gtol)
}

/// As [`run_algorithm1`] but without the step-condition check, for probing
/// parameter choices outside the guarantee.
pub fn run_algorithm1_unchecked(
    problem: &Problem,
    structure: StructureKind,
    params: &DiscreteParams,
    alpha: f64,
    x1_0: &DVector<f64>,
    k_max: usize,
    gtol: f64,
) -> Result<DiscreteRun> {
    params.check_positive()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(gtol >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "gtol must be nonnegative, got {gtol}"
        )));
    }
    if x1_0.len() != problem.dim() {
        return Err(Error::InvalidInput(format!(
            "initial point has dimension {}, problem has {}",
            x1_0.len(),
            problem.dim()
        )));
    }
    let DiscreteParams { s, c1, c2, beta } = *params;
    let c = problem.constants();
    let mut run = DiscreteRun {
        structure,
        params: *params,
        alpha,
        lambda: lambda_rate(s, c1, c2, c.mu_f, c.l_f),
        iterates: Vec::new(),
        termination: DiscreteTermination::MaxIterations,
        forced_jumps: 0,
    };

    let g0 = problem.gradient(x1_0);
    let tol = gtol * (1.0 + g0.norm());
    let mut x1 = x1_0.clone();
    let mut x2 = g0 * -beta;
    let mut gap = problem.gap(&x1);
    run.iterates.push(Iterate {
        k: 0,
        x1: x1.clone(),
        x2: x2.clone(),
        f_gap: gap,
        mode: Mode::Jump,
        per_step_ratio: None,
    });
    if problem.gradient(&x1).norm() <= tol {
        run.termination = DiscreteTermination::Converged;
        return Ok(run);
    }
    if !in_discrete_flow_set(&x1, &x2, c1, c2, problem) {
        run.termination = DiscreteTermination::JumpOutsideFlowSet;
        return Ok(run);
    }

    for k in 1..=k_max {
        let flow = if in_discrete_flow_set(&x1, &x2, c1, c2, problem) {
            let u = match structure {
                StructureKind::I => u_i(&x1, &x2, alpha, problem),
                StructureKind::II => u_ii(&x1, &x2, alpha, problem),
            };
            match u {
                Ok(u) => Some(u),
                Err(ControlError::Converged | ControlError::DegenerateDenominator) => {
                    run.forced_jumps += 1;
                    None
                }
            }
        } else {
            None
        };

        let mode = match flow {
            Some(u) => {
                let state = HybridState::new(x1.clone(), x2.clone(), 0.0);
                let (d1, d2) = match structure {
                    StructureKind::I => flow_i(&state, u, problem),
                    StructureKind::II => flow_ii(&state, u, problem),
                };
                x1.axpy(s, &d1, 1.0);
                x2.axpy(s, &d2, 1.0);
                Mode::Flow
            }
            None => {
                x2 = problem.gradient(&x1) * -beta;
                Mode::Jump
            }
        };

        let new_gap = problem.gap(&x1);
        let per_step_ratio = match (mode, gap, new_gap) {
            (Mode::Flow, Some(a), Some(b)) if a > 0.0 => Some(b / a),
            _ => None,
        };
        gap = new_gap;
        run.iterates.push(Iterate {
            k,
            x1: x1.clone(),
            x2: x2.clone(),
            f_gap: gap,
            mode,
            per_step_ratio,
        });

        if problem.gradient(&x1).norm() <= tol {
            run.termination = DiscreteTermination::Converged;
            return Ok(run);
        }
        if mode == Mode::Jump && !in_discrete_flow_set(&x1, &x2, c1, c2, problem) {
            run.termination = DiscreteTermination::JumpOutsideFlowSet;
            return Ok(run);
        }
    }
    Ok(run)
}

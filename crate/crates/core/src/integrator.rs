//! Simulation of the continuous-time hybrid systems: adaptive Dormand–Prince
//! flow, guard-crossing location, jump application and diagnostics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ControlError, Error, Result};
use crate::objectives::Problem;
use crate::ode::{dopri5_step, locate_crossing, next_step};
pub use crate::structure::sigma;
use crate::structure::{HybridState, HybridStructure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub min_step: f64,
    /// Width of the final time bracket around a guard crossing.
    pub event_time_tol: f64,
    /// Relative gradient threshold: the run stops once
    /// `|grad f(x1)| <= gtol (1 + |grad f(x1(0))|)`.
    pub gtol: f64,
    /// Minimum spacing of recorded samples. Jumps are always recorded.
    pub sample_interval: f64,
    /// Allowed relative excess over the `exp(-alpha t)` envelope.
    pub envelope_slack: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            rel_tol: 1e-9,
            abs_tol: 1e-9,
            max_step: 0.005,
            min_step: 1e-13,
            event_time_tol: 1e-12,
            gtol: 1e-10,
            sample_interval: 1e-3,
            envelope_slack: 1e-4,
        }
    }
}

impl IntegratorSettings {
    pub fn check(&self) -> Result<()> {
        let all = [
            self.rel_tol,
            self.abs_tol,
            self.max_step,
            self.min_step,
            self.event_time_tol,
            self.gtol,
            self.sample_interval,
            self.envelope_slack,
        ];
        if !all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "integrator settings must be positive: {self:?}"
            )));
        }
        if !(self.min_step < self.max_step) {
            return Err(Error::InvalidInput(
                "min_step must be below max_step".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TimeLimit,
    Converged,
    DegenerateDenominator,
    GuardStuck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub f_gap: Option<f64>,
    pub u: Option<f64>,
    pub sigma: Option<f64>,
    pub grad_norm: f64,
    /// Set on the post-jump state of a jump.
    pub jump: bool,
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub t_jump: f64,
    pub state_before: HybridState,
    pub state_after: HybridState,
    /// Time since the previous jump (or since the start of the run).
    pub inter_jump_duration: f64,
    /// Analytic inter-jump lower bound for the segment ending here, evaluated
    /// at the gradient norm of the segment's initial (post-jump) state.
    pub zeno_lb_at_jump: f64,
    pub sigma_before: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    pub jumps: Vec<JumpEvent>,
    pub termination: Termination,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl TrajectoryRecord {
    /// Largest `|sigma(t) - sigma(t_j+)| / (1 + |sigma(t_j+)|)` over all flow
    /// segments, including the pre-jump state that closes each segment.
    pub fn max_sigma_drift(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        let mut reference: Option<f64> = None;
        let mut jumps = self.jumps.iter();
        let update = |r: f64, s: f64, worst: &mut Option<f64>| {
            let d = (s - r).abs() / (1.0 + r.abs());
            *worst = Some(worst.map_or(d, |w: f64| w.max(d)));
        };
        for (i, s) in self.samples.iter().enumerate() {
            if s.jump {
                if i > 0 {
                    if let (Some(r), Some(ev)) = (reference, jumps.next()) {
                        if let Some(sb) = ev.sigma_before {
                            update(r, sb, &mut worst);
                        }
                    }
                }
                reference = s.sigma;
                continue;
            }
            if i == 0 {
                reference = s.sigma;
                continue;
            }
            if let (Some(r), Some(v)) = (reference, s.sigma) {
                update(r, v, &mut worst);
            }
        }
        worst
    }

    pub fn min_inter_jump(&self) -> Option<f64> {
        self.jumps
            .iter()
            .map(|j| j.inter_jump_duration)
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.min(d))))
    }

    /// Jumps whose observed duration is shorter than their analytic bound.
    pub fn zeno_violations(&self) -> usize {
        self.jumps
            .iter()
            .filter(|j| j.inter_jump_duration < j.zeno_lb_at_jump)
            .count()
    }
}

/// Outcome of one trial flow step.
#[derive(Debug, Clone)]
pub struct FlowStep {
    pub state: HybridState,
    pub accepted: bool,
    /// Scaled RMS local error estimate (acceptable when `<= 1`).
    pub error: f64,
    /// Proposed size of the next step.
    pub h_next: f64,
}

fn pack(state: &HybridState) -> DVector<f64> {
    let n = state.x1.len();
    DVector::from_fn(
        2 * n,
        |i, _| if i < n { state.x1[i] } else { state.x2[i - n] },
    )
}

fn unpack(y: &DVector<f64>, t: f64) -> HybridState {
    let n = y.len() / 2;
    HybridState::new(y.rows(0, n).into_owned(), y.rows(n, n).into_owned(), t)
}

fn closed_loop<'a, S: HybridStructure>(
    params: &'a S,
    problem: &'a Problem,
) -> impl FnMut(f64, &DVector<f64>) -> std::result::Result<DVector<f64>, ControlError> + 'a {
    move |_t, y| {
        let n = y.len() / 2;
        let x1 = y.rows(0, n).into_owned();
        let x2 = y.rows(n, n).into_owned();
        let (d1, d2, _) = params.vector_field(problem, &x1, &x2)?;
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&d1);
        out.rows_mut(n, n).copy_from(&d2);
        Ok(out)
    }
}

/// One trial step of size `h`. The feedback is re-evaluated at every stage.
pub fn step_flow<S: HybridStructure>(
    state: &HybridState,
    params: &S,
    problem: &Problem,
    settings: &IntegratorSettings,
    h: f64,
) -> std::result::Result<FlowStep, ControlError> {
    let mut f = closed_loop(params, problem);
    let trial = dopri5_step(
        &mut f,
        state.t,
        &pack(state),
        h,
        settings.rel_tol,
        settings.abs_tol,
    )?;
    Ok(FlowStep {
        state: unpack(&trial.y, state.t + h),
        accepted: trial.err <= 1.0,
        error: trial.err,
        h_next: next_step(h, trial.err).min(settings.max_step),
    })
}

/// Single unchecked step, used to re-integrate sub-intervals while bisecting.
fn advance<S: HybridStructure>(
    state: &HybridState,
    params: &S,
    problem: &Problem,
    settings: &IntegratorSettings,
    dt: f64,
) -> Option<HybridState> {
    if dt == 0.0 {
        return Some(state.clone());
    }
    let mut f = closed_loop(params, problem);
    dopri5_step(
        &mut f,
        state.t,
        &pack(state),
        dt,
        settings.rel_tol,
        settings.abs_tol,
    )
    .ok()
    .map(|tr| unpack(&tr.y, state.t + dt))
}

fn make_sample<S: HybridStructure>(
    state: &HybridState,
    params: &S,
    problem: &Problem,
    jump: bool,
) -> Sample {
    Sample {
        t: state.t,
        f_gap: problem.gap(&state.x1),
        u: params.control(problem, &state.x1, &state.x2).ok(),
        sigma: sigma(state, params.alpha(), problem),
        grad_norm: problem.gradient(&state.x1).norm(),
        jump,
        x1: state.x1.clone(),
        x2: state.x2.clone(),
    }
}

/// Simulates the hybrid system from the post-jump state
/// `(x1_0, -beta grad f(x1_0))` until `t_end`, convergence or failure.
pub fn simulate<S: HybridStructure>(
    problem: &Problem,
    params: &S,
    x1_0: &DVector<f64>,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<TrajectoryRecord> {
    settings.check()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    if x1_0.len() != problem.dim() {
        return Err(Error::InvalidInput(format!(
            "initial point has dimension {}, problem has {}",
            x1_0.len(),
            problem.dim()
        )));
    }
    let violations = params.validate(problem.constants());
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations));
    }

    let constants = *problem.constants();
    let g0 = problem.gradient(x1_0).norm();
    let gtol = settings.gtol * (1.0 + g0);
    let start = HybridState::new(x1_0.clone(), DVector::zeros(x1_0.len()), 0.0);

    let mut record = TrajectoryRecord {
        samples: Vec::new(),
        jumps: Vec::new(),
        termination: Termination::TimeLimit,
        accepted_steps: 0,
        rejected_steps: 0,
    };

    if g0 <= gtol {
        record
            .samples
            .push(make_sample(&start, params, problem, false));
        record.termination = Termination::Converged;
        return Ok(record);
    }
    let mut state = match params.jump(problem, &start) {
        Ok(s) => s,
        Err(_) => {
            record
                .samples
                .push(make_sample(&start, params, problem, false));
            record.termination = Termination::Converged;
            return Ok(record);
        }
    };
    if !matches!(params.margin(problem, &state.x1, &state.x2), Ok(m) if m > 0.0) {
        record
            .samples
            .push(make_sample(&state, params, problem, false));
        record.termination = Termination::GuardStuck;
        return Ok(record);
    }
    record
        .samples
        .push(make_sample(&state, params, problem, false));

    let mut last_sample_t = 0.0;
    let mut segment_start = 0.0;
    let mut segment_bound = params.zeno_lower_bound(&constants, g0)?;
    let mut h = settings.max_step.min(1e-3).max(settings.min_step);

    let termination = loop {
        let remaining = t_end - state.t;
        if remaining <= 0.0 {
            break Termination::TimeLimit;
        }
        let h_try = h.min(settings.max_step).min(remaining);
        let step = match step_flow(&state, params, problem, settings, h_try) {
            Ok(s) => s,
            Err(e) => {
                // A stage left the domain of the feedback law: shrink.
                record.rejected_steps += 1;
                h = h_try * 0.25;
                if h < settings.min_step {
                    break match e {
                        ControlError::Converged => Termination::Converged,
                        ControlError::DegenerateDenominator => Termination::DegenerateDenominator,
                    };
                }
                continue;
            }
        };
        if !step.accepted {
            record.rejected_steps += 1;
            h = step.h_next;
            if h < settings.min_step {
                break Termination::GuardStuck;
            }
            continue;
        }
        let end_t = if h_try == remaining {
            t_end
        } else {
            step.state.t
        };
        let candidate = HybridState {
            t: end_t,
            ..step.state
        };

        let grad_norm = problem.gradient(&candidate.x1).norm();
        let margin_ok = matches!(
            params.margin(problem, &candidate.x1, &candidate.x2),
            Ok(m) if m >= 0.0
        );
        if margin_ok || grad_norm <= gtol {
            record.accepted_steps += 1;
            state = candidate;
            h = step.h_next;
            if grad_norm <= gtol {
                record
                    .samples
                    .push(make_sample(&state, params, problem, false));
                break Termination::Converged;
            }
            if state.t - last_sample_t >= settings.sample_interval || state.t >= t_end {
                record
                    .samples
                    .push(make_sample(&state, params, problem, false));
                last_sample_t = state.t;
            }
            continue;
        }

        // Guard crossed inside this step: locate the boundary and jump there.
        let from = state.clone();
        let (t_cross, boundary) = locate_crossing(
            &from,
            from.t,
            from.t + h_try,
            |dt| advance(&from, params, problem, settings, dt),
            |s| params.margin(problem, &s.x1, &s.x2).ok(),
            settings.event_time_tol,
        )?;
        let boundary = HybridState {
            t: t_cross,
            ..boundary
        };
        if t_cross > state.t {
            record.accepted_steps += 1;
        }
        let after = match params.jump(problem, &boundary) {
            Ok(a) => a,
            Err(_) => {
                state = boundary;
                record
                    .samples
                    .push(make_sample(&state, params, problem, false));
                break Termination::Converged;
            }
        };
        let duration = t_cross - segment_start;
        record.jumps.push(JumpEvent {
            t_jump: t_cross,
            sigma_before: sigma(&boundary, params.alpha(), problem),
            state_before: boundary,
            state_after: after.clone(),
            inter_jump_duration: duration,
            zeno_lb_at_jump: segment_bound,
        });
        state = after;
        let post_grad = problem.gradient(&state.x1).norm();
        if post_grad <= gtol {
            record
                .samples
                .push(make_sample(&state, params, problem, true));
            break Termination::Converged;
        }
        if !matches!(params.margin(problem, &state.x1, &state.x2), Ok(m) if m > 0.0)
            || duration <= 0.0
        {
            break Termination::GuardStuck;
        }
        if state.t > record.samples.last().map_or(f64::NEG_INFINITY, |s| s.t) {
            record
                .samples
                .push(make_sample(&state, params, problem, true));
        } else if let Some(last) = record.samples.last_mut() {
            *last = make_sample(&state, params, problem, true);
        }
        last_sample_t = state.t;
        segment_start = t_cross;
        segment_bound = params.zeno_lower_bound(&constants, post_grad)?;
    };
    record.termination = termination;
    Ok(record)
}

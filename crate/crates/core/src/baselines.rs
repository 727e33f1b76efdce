//! Reference methods: the Nesterov ODE with `3/t` damping, with and without
//! speed restart, Nesterov's method with gradient restart, speed-restarted
//! discrete Nesterov, and gradient descent.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::IntegratorSettings;
use crate::objectives::Problem;
use crate::ode::{dopri5_step, locate_crossing, next_step};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineSpec {
    /// Nesterov ODE without restart.
    Nwr {
        t_start: f64,
    },
    /// Nesterov ODE restarted whenever `<X', X''>` drops to `threshold`.
    Nsr {
        t_start: f64,
        threshold: f64,
    },
    /// Nesterov iteration with gradient restart.
    Ngr {
        s: f64,
    },
    /// Discrete Nesterov with speed restart after at least `k_min` steps.
    NsrDiscrete {
        s: f64,
        k_min: usize,
    },
    Gd {
        s: f64,
    },
}

impl BaselineSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineSpec::Nwr { .. } => "nwr",
            BaselineSpec::Nsr { .. } => "nsr",
            BaselineSpec::Ngr { .. } => "ngr",
            BaselineSpec::NsrDiscrete { .. } => "nsr_discrete",
            BaselineSpec::Gd { .. } => "gd",
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, BaselineSpec::Nwr { .. } | BaselineSpec::Nsr { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineSample {
    /// ODE time for continuous methods, iteration index for discrete ones.
    pub at: f64,
    pub f_gap: Option<f64>,
    pub grad_norm: f64,
    pub restart: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineTermination {
    Limit,
    Converged,
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub spec: BaselineSpec,
    pub samples: Vec<BaselineSample>,
    pub restarts: usize,
    pub termination: BaselineTermination,
    pub x_final: DVector<f64>,
}

impl BaselineRun {
    /// Largest relative rise `(g[k+1] - g[k]) / g[k]` between consecutive
    /// samples with a positive gap; `None` when no such pair exists.
    pub fn max_relative_rise(&self) -> Option<f64> {
        self.samples
            .windows(2)
            .filter_map(|w| match (w[0].f_gap, w[1].f_gap) {
                (Some(a), Some(b)) if a > 0.0 => Some((b - a) / a),
                _ => None,
            })
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }
}

fn check_dim(problem: &Problem, x: &DVector<f64>) -> Result<()> {
    if x.len() != problem.dim() {
        return Err(Error::InvalidInput(format!(
            "initial point has dimension {}, problem has {}",
            x.len(),
            problem.dim()
        )));
    }
    Ok(())
}

fn check_step(s: f64) -> Result<()> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "step size must be nonnegative, got {s}"
        )));
    }
    Ok(())
}

fn sample(problem: &Problem, at: f64, x: &DVector<f64>, restart: bool) -> BaselineSample {
    BaselineSample {
        at,
        f_gap: problem.gap(x),
        grad_norm: problem.gradient(x).norm(),
        restart,
    }
}

/// Nesterov ODE `X'' + (3/t) X' + grad f(X) = 0` on `[t_start, t_end]` from
/// rest at `x1_0`.
pub fn nwr_ode(
    problem: &Problem,
    x1_0: &DVector<f64>,
    t_start: f64,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<BaselineRun> {
    let mut run = speed_restart(problem, x1_0, t_start, t_end, f64::NEG_INFINITY, settings)?;
    run.spec = BaselineSpec::Nwr { t_start };
    Ok(run)
}

/// Nesterov ODE with speed restart: once `<X', X''>` falls to `threshold`
/// after having exceeded it, the velocity is zeroed and the damping clock
/// goes back to `t_start`. `threshold = -inf` never restarts.
///
/// Samples are stamped with `t_start` plus the elapsed time, so the time
/// axis matches [`nwr_ode`].
pub fn nsr_speed_restart(
    problem: &Problem,
    x1_0: &DVector<f64>,
    t_start: f64,
    t_end: f64,
    threshold: f64,
    settings: &IntegratorSettings,
) -> Result<BaselineRun> {
    speed_restart(problem, x1_0, t_start, t_end, threshold, settings)
}

#[derive(Clone)]
struct OdeState {
    y: DVector<f64>,
    /// Damping clock.
    tau: f64,
}

fn nesterov_rhs(problem: &Problem, tau: f64, y: &DVector<f64>) -> DVector<f64> {
    let n = y.len() / 2;
    let x = y.rows(0, n).into_owned();
    let v = y.rows(n, n).into_owned();
    let acc = -problem.gradient(&x) - &v * (3.0 / tau);
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&v);
    out.rows_mut(n, n).copy_from(&acc);
    out
}

fn speed_rate(problem: &Problem, st: &OdeState) -> f64 {
    let n = st.y.len() / 2;
    let d = nesterov_rhs(problem, st.tau, &st.y);
    st.y.rows(n, n).dot(&d.rows(n, n))
}

fn speed_restart(
    problem: &Problem,
    x1_0: &DVector<f64>,
    t_start: f64,
    t_end: f64,
    threshold: f64,
    settings: &IntegratorSettings,
) -> Result<BaselineRun> {
    settings.check()?;
    check_dim(problem, x1_0)?;
    if !(t_start > 0.0 && t_start.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "t_start must be positive, got {t_start}"
        )));
    }
    if !(t_end > t_start && t_end.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "t_end must exceed t_start, got {t_end}"
        )));
    }
    if threshold.is_nan() || threshold == f64::INFINITY {
        return Err(Error::InvalidInput(format!(
            "invalid restart threshold {threshold}"
        )));
    }
    let n = x1_0.len();
    let mut y0 = DVector::zeros(2 * n);
    y0.rows_mut(0, n).copy_from(x1_0);
    let mut st = OdeState {
        y: y0,
        tau: t_start,
    };
    let mut t = t_start;
    let tol = settings.gtol * (1.0 + problem.gradient(x1_0).norm());
    let position = |st: &OdeState| st.y.rows(0, n).into_owned();

    let mut run = BaselineRun {
        spec: BaselineSpec::Nsr { t_start, threshold },
        samples: vec![sample(problem, t, x1_0, false)],
        restarts: 0,
        termination: BaselineTermination::Limit,
        x_final: x1_0.clone(),
    };
    if run.samples[0].grad_norm <= tol {
        run.termination = BaselineTermination::Converged;
        return Ok(run);
    }
    let mut last_sample_t = t;
    let mut armed = false;
    let mut h = settings.max_step.min(1e-3).max(settings.min_step);
    let mut rhs = |tau: f64, y: &DVector<f64>| Ok::<_, ()>(nesterov_rhs(problem, tau, y));

    loop {
        let remaining = t_end - t;
        if remaining <= 0.0 {
            break;
        }
        let h_try = h.min(settings.max_step).min(remaining);
        let trial = dopri5_step(
            &mut rhs,
            st.tau,
            &st.y,
            h_try,
            settings.rel_tol,
            settings.abs_tol,
        )
        .expect("Nesterov field is total");
        h = next_step(h_try, trial.err).min(settings.max_step);
        if trial.err > 1.0 {
            if h < settings.min_step {
                run.termination = BaselineTermination::StepUnderflow;
                break;
            }
            continue;
        }
        let cand = OdeState {
            y: trial.y,
            tau: st.tau + h_try,
        };
        let t_new = if h_try == remaining { t_end } else { t + h_try };
        let rate_new = speed_rate(problem, &cand);

        if armed && rate_new <= threshold {
            let from = st.clone();
            let (dt, at) = locate_crossing(
                &from,
                0.0,
                h_try,
                |dt| {
                    if dt == 0.0 {
                        return Some(from.clone());
                    }
                    dopri5_step(
                        &mut rhs,
                        from.tau,
                        &from.y,
                        dt,
                        settings.rel_tol,
                        settings.abs_tol,
                    )
                    .ok()
                    .map(|tr| OdeState {
                        y: tr.y,
                        tau: from.tau + dt,
                    })
                },
                |s| Some(speed_rate(problem, s) - threshold),
                settings.event_time_tol,
            )?;
            t += dt;
            st = OdeState {
                y: at.y,
                tau: t_start,
            };
            st.y.rows_mut(n, n).fill(0.0);
            armed = false;
            run.restarts += 1;
            let x = position(&st);
            let s = sample(problem, t, &x, true);
            if t > run.samples.last().map_or(f64::NEG_INFINITY, |p| p.at) {
                run.samples.push(s);
            } else if let Some(last) = run.samples.last_mut() {
                *last = s;
            }
            last_sample_t = t;
            if s.grad_norm <= tol {
                run.termination = BaselineTermination::Converged;
                break;
            }
            continue;
        }

        st = cand;
        t = t_new;
        if rate_new > threshold {
            armed = true;
        }
        let x = position(&st);
        let gnorm = problem.gradient(&x).norm();
        if t - last_sample_t >= settings.sample_interval || t >= t_end || gnorm <= tol {
            run.samples.push(sample(problem, t, &x, false));
            last_sample_t = t;
        }
        if gnorm <= tol {
            run.termination = BaselineTermination::Converged;
            break;
        }
    }
    run.x_final = position(&st);
    Ok(run)
}

fn discrete_run(spec: BaselineSpec, problem: &Problem, x: &DVector<f64>) -> BaselineRun {
    BaselineRun {
        spec,
        samples: vec![sample(problem, 0.0, x, false)],
        restarts: 0,
        termination: BaselineTermination::Limit,
        x_final: x.clone(),
    }
}

/// Nesterov's method with `q = 0` and gradient restart: momentum is
/// dropped whenever `<grad f(y_k), x_{k+1} - x_k> > 0`.
pub fn ngr_discrete(
    problem: &Problem,
    x1_0: &DVector<f64>,
    s: f64,
    k_max: usize,
    gtol: f64,
) -> Result<BaselineRun> {
    check_dim(problem, x1_0)?;
    check_step(s)?;
    let mut run = discrete_run(BaselineSpec::Ngr { s }, problem, x1_0);
    let tol = gtol * (1.0 + run.samples[0].grad_norm);
    if run.samples[0].grad_norm <= tol {
        run.termination = BaselineTermination::Converged;
        return Ok(run);
    }
    let mut x = x1_0.clone();
    let mut y = x1_0.clone();
    let mut theta: f64 = 1.0;
    for k in 1..=k_max {
        let gy = problem.gradient(&y);
        let x_next = &y - &gy * s;
        let step = &x_next - &x;
        let restart = gy.dot(&step) > 0.0;
        if restart {
            theta = 1.0;
            y = x_next.clone();
            run.restarts += 1;
        } else {
            let t2 = theta * theta;
            let theta_next = 0.5 * (-t2 + (t2 * t2 + 4.0 * t2).sqrt());
            let momentum = theta * (1.0 - theta) / (t2 + theta_next);
            y = &x_next + &step * momentum;
            theta = theta_next;
        }
        x = x_next;
        let smp = sample(problem, k as f64, &x, restart);
        run.samples.push(smp);
        if smp.grad_norm <= tol {
            run.termination = BaselineTermination::Converged;
            break;
        }
    }
    run.x_final = x;
    Ok(run)
}

/// Discrete Nesterov `y_k = x_k + (j-1)/(j+2) (x_k - x_{k-1})` with the
/// momentum counter `j` reset once the step length shrinks and `j >= k_min`.
pub fn nsr_discrete(
    problem: &Problem,
    x1_0: &DVector<f64>,
    s: f64,
    k_min: usize,
    k_max: usize,
    gtol: f64,
) -> Result<BaselineRun> {
    check_dim(problem, x1_0)?;
    check_step(s)?;
    let mut run = discrete_run(BaselineSpec::NsrDiscrete { s, k_min }, problem, x1_0);
    let tol = gtol * (1.0 + run.samples[0].grad_norm);
    if run.samples[0].grad_norm <= tol {
        run.termination = BaselineTermination::Converged;
        return Ok(run);
    }
    let mut x = x1_0.clone();
    let mut y = x1_0.clone();
    let mut prev_len = f64::INFINITY;
    let mut j: usize = 1;
    for k in 1..=k_max {
        let x_next = &y - problem.gradient(&y) * s;
        let step = &x_next - &x;
        let len = step.norm();
        let restart = len < prev_len && j >= k_min && k > 1;
        j = if restart { 1 } else { j + 1 };
        let coeff = (j as f64 - 1.0) / (j as f64 + 2.0);
        y = &x_next + &step * coeff;
        prev_len = len;
        x = x_next;
        if restart {
            run.restarts += 1;
        }
        let smp = sample(problem, k as f64, &x, restart);
        run.samples.push(smp);
        if smp.grad_norm <= tol {
            run.termination = BaselineTermination::Converged;
            break;
        }
    }
    run.x_final = x;
    Ok(run)
}

/// `x_{k+1} = x_k - s grad f(x_k)`.
pub fn gd(
    problem: &Problem,
    x1_0: &DVector<f64>,
    s: f64,
    k_max: usize,
    gtol: f64,
) -> Result<BaselineRun> {
    check_dim(problem, x1_0)?;
    check_step(s)?;
    let mut run = discrete_run(BaselineSpec::Gd { s }, problem, x1_0);
    let tol = gtol * (1.0 + run.samples[0].grad_norm);
    if run.samples[0].grad_norm <= tol {
        run.termination = BaselineTermination::Converged;
        return Ok(run);
    }
    let mut x = x1_0.clone();
    for k in 1..=k_max {
        x -= problem.gradient(&x) * s;
        let smp = sample(problem, k as f64, &x, false);
        run.samples.push(smp);
        if smp.grad_norm <= tol {
            run.termination = BaselineTermination::Converged;
            break;
        }
    }
    run.x_final = x;
    Ok(run)
}

/// Dispatches on `spec`; continuous methods integrate up to `t_end`,
/// discrete ones run `k_max` iterations.
pub fn run_baseline(
    problem: &Problem,
    spec: &BaselineSpec,
    x1_0: &DVector<f64>,
    t_end: f64,
    k_max: usize,
    settings: &IntegratorSettings,
) -> Result<BaselineRun> {
    match *spec {
        BaselineSpec::Nwr { t_start } => nwr_ode(problem, x1_0, t_start, t_end, settings),
        BaselineSpec::Nsr { t_start, threshold } => {
            nsr_speed_restart(problem, x1_0, t_start, t_end, threshold, settings)
        }
        BaselineSpec::Ngr { s } => ngr_discrete(problem, x1_0, s, k_max, settings.gtol),
        BaselineSpec::NsrDiscrete { s, k_min } => {
            nsr_discrete(problem, x1_0, s, k_min, k_max, settings.gtol)
        }
        BaselineSpec::Gd { s } => gd(problem, x1_0, s, k_max, settings.gtol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_quadratic, Constants, Objective};
    use nalgebra::{dvector, DMatrix};
    use std::sync::Arc;

    fn scalar_half_square() -> Problem {
        make_quadratic(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap()
    }

    #[derive(Debug)]
    struct Flat;

    impl Objective for Flat {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, _x: &DVector<f64>) -> f64 {
            1.0
        }
        fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(2)
        }
        fn hessian_quad(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> f64 {
            0.0
        }
    }

    #[test]
    fn nesterov_ode_converges_on_scalar_quadratic() {
        let p = scalar_half_square();
        let run = nwr_ode(
            &p,
            &dvector![1.0],
            1.0,
            60.0,
            &IntegratorSettings::default(),
        )
        .unwrap();
        assert!(run.samples.iter().all(|s| s.f_gap.unwrap() <= 0.5 + 1e-12));
        assert!(run.samples.last().unwrap().f_gap.unwrap() < 1e-3);
        assert_eq!(run.restarts, 0);
    }

    #[test]
    fn flat_objective_keeps_position() {
        let p = Problem::from_objective(
            Arc::new(Flat),
            Constants {
                l_f: 1.0,
                ell_f: 0.0,
                mu_f: 1.0,
                h_f: 0.0,
                f_star: None,
            },
            "flat",
        )
        .unwrap();
        let x0 = dvector![0.3, -0.7];
        // The gradient is already below tolerance, so force a pure flow.
        let settings = IntegratorSettings {
            gtol: 1e-300,
            ..Default::default()
        };
        let run = nwr_ode(&p, &x0, 1.0, 2.0, &settings).unwrap();
        assert_eq!(run.x_final, x0);
    }

    #[test]
    fn disabled_restart_matches_plain_ode() {
        let p = make_quadratic(
            DMatrix::from_diagonal(&dvector![1.0, 9.0]),
            dvector![0.5, 0.0],
        )
        .unwrap();
        let settings = IntegratorSettings::default();
        let a = nwr_ode(&p, &dvector![1.0, 1.0], 1.0, 8.0, &settings).unwrap();
        let b = nsr_speed_restart(
            &p,
            &dvector![1.0, 1.0],
            1.0,
            8.0,
            f64::NEG_INFINITY,
            &settings,
        )
        .unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.x_final, b.x_final);
    }

    #[test]
    fn speed_restart_is_monotone_and_restarts_late() {
        let p = make_quadratic(
            DMatrix::from_diagonal(&dvector![1.0, 25.0]),
            dvector![0.0, 0.0],
        )
        .unwrap();
        let run = nsr_speed_restart(
            &p,
            &dvector![1.0, 1.0],
            1.0,
            20.0,
            0.0,
            &IntegratorSettings::default(),
        )
        .unwrap();
        assert!(run.restarts > 0);
        let first = run.samples.iter().find(|s| s.restart).unwrap();
        assert!(first.at > 1.0);
        assert!(run.max_relative_rise().unwrap() <= 1e-9);
    }

    #[test]
    fn invalid_clock_rejected() {
        let p = scalar_half_square();
        let s = IntegratorSettings::default();
        assert!(nwr_ode(&p, &dvector![1.0], 0.0, 5.0, &s).is_err());
        assert!(nwr_ode(&p, &dvector![1.0], -1.0, 5.0, &s).is_err());
        assert!(nwr_ode(&p, &dvector![1.0], 2.0, 1.0, &s).is_err());
        assert!(nsr_speed_restart(&p, &dvector![1.0], 1.0, 5.0, f64::NAN, &s).is_err());
    }

    #[test]
    fn gradient_descent_unit_step_on_scalar_quadratic() {
        let p = scalar_half_square();
        let run = gd(&p, &dvector![1.0], 1.0, 5, 0.0).unwrap();
        assert_eq!(run.samples[1].f_gap, Some(0.0));
        let still = gd(&p, &dvector![1.0], 0.0, 5, 0.0).unwrap();
        assert!(still.samples.iter().all(|s| s.f_gap == Some(0.5)));
        assert!(gd(&p, &dvector![1.0], -1.0, 5, 0.0).is_err());
    }

    #[test]
    fn gradient_restart_first_iterates_by_hand() {
        // f = x^2 / 2, s = 0.5: x1 = 0.5, theta1 = (sqrt 5 - 1)/2, momentum 0,
        // so y1 = x1 and x2 = 0.25. Neither step moves uphill.
        let p = scalar_half_square();
        let run = ngr_discrete(&p, &dvector![1.0], 0.5, 2, 0.0).unwrap();
        assert_eq!(run.restarts, 0);
        assert!((run.samples[1].f_gap.unwrap() - 0.125).abs() < 1e-15);
        assert!((run.samples[2].f_gap.unwrap() - 0.03125).abs() < 1e-15);
    }

    #[test]
    fn gradient_restart_converges() {
        let p = make_quadratic(
            DMatrix::from_diagonal(&dvector![1.0, 100.0]),
            dvector![1.0, 1.0],
        )
        .unwrap();
        let run = ngr_discrete(&p, &dvector![5.0, 5.0], 0.01, 5000, 1e-12).unwrap();
        assert_eq!(run.termination, BaselineTermination::Converged);
        assert!(run.restarts > 0);
    }

    #[test]
    fn discrete_speed_restart_converges() {
        let p = make_quadratic(
            DMatrix::from_diagonal(&dvector![1.0, 100.0]),
            dvector![1.0, 1.0],
        )
        .unwrap();
        let run = nsr_discrete(&p, &dvector![5.0, 5.0], 0.01, 1, 5000, 1e-12).unwrap();
        assert_eq!(run.termination, BaselineTermination::Converged);
        assert!(run.restarts > 0);
    }
}

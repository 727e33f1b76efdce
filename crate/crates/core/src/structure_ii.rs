//! Structure II: state-dependent potential coefficient.
//!
//! Flow `x1' = x2`, `x2' = -x2 - u grad f(x1)` with the feedback
//!
//! ```text
//! u(x) = (<H(x1) x2, x2> + (1 - alpha) <grad f(x1), -x2>) / |grad f(x1)|^2
//! ```
//!
//! Flow set and jump map have the same shape as in Structure I. Unlike
//! Structure I, the inter-jump bound does not depend on the gradient norm.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ControlError, Error, Result};
use crate::objectives::{Constants, Problem};
use crate::structure::{
    gradient_jump, interval_margin, HybridState, HybridStructure, StructureKind,
};
use crate::validate::{require_le, require_lt, Condition, Violation};

pub const DEFAULT_R_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsII {
    pub alpha: f64,
    pub beta: f64,
    pub u_lo: f64,
    pub u_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZenoConstantsII {
    /// Clearance of the post-jump control value from the interval ends.
    pub delta: f64,
    pub u_max: f64,
    pub script_l: f64,
    pub omega: f64,
    pub b1: f64,
    pub b2: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZenoBoundII {
    pub tau_lb: f64,
    pub best_r: f64,
    pub consts: ZenoConstantsII,
}

pub fn u_ii(
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    alpha: f64,
    problem: &Problem,
) -> std::result::Result<f64, ControlError> {
    let g = problem.gradient(x1);
    feedback(&g, x1, x2, alpha, problem)
}

fn feedback(
    g: &DVector<f64>,
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    alpha: f64,
    problem: &Problem,
) -> std::result::Result<f64, ControlError> {
    let gsq = g.norm_squared();
    if !(gsq >= f64::MIN_POSITIVE) {
        return Err(ControlError::Converged);
    }
    let u = (problem.hessian_quad(x1, x2) + (1.0 - alpha) * -g.dot(x2)) / gsq;
    if u.is_finite() {
        Ok(u)
    } else {
        Err(ControlError::DegenerateDenominator)
    }
}

/// `(x2, -x2 - u grad f(x1))`.
pub fn flow_ii(state: &HybridState, u: f64, problem: &Problem) -> (DVector<f64>, DVector<f64>) {
    let g = problem.gradient(&state.x1);
    (state.x2.clone(), -&state.x2 - g * u)
}

pub fn flow_margin_ii(
    state: &HybridState,
    params: &ParamsII,
    problem: &Problem,
) -> std::result::Result<f64, ControlError> {
    let u = u_ii(&state.x1, &state.x2, params.alpha, problem)?;
    Ok(interval_margin(u, params.u_lo, params.u_hi))
}

pub fn jump_ii(
    state: &HybridState,
    beta: f64,
    problem: &Problem,
) -> std::result::Result<HybridState, ControlError> {
    gradient_jump(problem, state, beta)
}

pub fn validate_params_ii(params: &ParamsII, constants: &Constants) -> Vec<Violation> {
    let ParamsII {
        alpha,
        beta,
        u_lo,
        u_hi,
    } = *params;
    let mut out = Vec::new();
    require_lt(
        &mut out,
        Condition::PotentialLower,
        u_lo,
        -constants.ell_f * beta * beta + (1.0 - alpha) * beta,
    );
    require_lt(
        &mut out,
        Condition::PotentialUpper,
        constants.l_f * beta * beta + (1.0 - alpha) * beta,
        u_hi,
    );
    require_le(
        &mut out,
        Condition::PotentialRate,
        alpha,
        2.0 * constants.mu_f * beta,
    );
    out
}

fn check_shape(params: &ParamsII) -> Result<()> {
    let ParamsII {
        alpha,
        beta,
        u_lo,
        u_hi,
    } = *params;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "beta must be positive, got {beta}"
        )));
    }
    if !(u_lo < u_hi) {
        return Err(Error::InvalidInput(format!(
            "control interval must satisfy u_lo < u_hi, got [{u_lo}, {u_hi}]"
        )));
    }
    Ok(())
}

pub fn zeno_constants_ii(
    params: &ParamsII,
    constants: &Constants,
    r: f64,
) -> Result<ZenoConstantsII> {
    check_shape(params)?;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidInput(format!(
            "tuning scalar r must lie in (0, 1), got {r}"
        )));
    }
    let violations = validate_params_ii(params, constants);
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations));
    }
    let ParamsII {
        alpha,
        beta,
        u_lo,
        u_hi,
    } = *params;
    let Constants { l_f, ell_f, .. } = *constants;
    let script_l = constants.script_l();

    let delta = (u_hi - (l_f * beta * beta + (1.0 - alpha) * beta))
        .min((-ell_f * beta * beta + (1.0 - alpha) * beta) - u_lo);
    let u_max = u_hi.max(-u_lo);
    let omega = script_l * (beta * beta + beta * u_max).sqrt();
    let cube = (1.0 - r).powi(3);
    let b1 = 2.0 * script_l * beta * (u_max + omega * (beta + u_max)) / cube;
    let b2 = (alpha - 1.0).abs() * 2.0 * omega * beta / cube
        + (alpha - 1.0).abs() * alpha * beta * (1.0 + r);
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "interval clearance delta = {delta} is not positive"
        )));
    }
    Ok(ZenoConstantsII {
        delta,
        u_max,
        script_l,
        omega,
        b1,
        b2,
        r,
    })
}

/// `min{r / omega, delta / (b1 + b2)}`, maximized over `r_grid`.
pub fn zeno_bound_ii(
    params: &ParamsII,
    constants: &Constants,
    r_grid: &[f64],
) -> Result<ZenoBoundII> {
    if r_grid.is_empty() {
        return Err(Error::InvalidInput("empty r grid".into()));
    }
    let mut best: Option<ZenoBoundII> = None;
    for &r in r_grid {
        let k = zeno_constants_ii(params, constants, r)?;
        let tau = (r / k.omega).min(k.delta / (k.b1 + k.b2));
        if best.map_or(true, |b| tau > b.tau_lb) {
            best = Some(ZenoBoundII {
                tau_lb: tau,
                best_r: r,
                consts: k,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

impl HybridStructure for ParamsII {
    fn kind(&self) -> StructureKind {
        StructureKind::II
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn u_bounds(&self) -> (f64, f64) {
        (self.u_lo, self.u_hi)
    }

    fn control(
        &self,
        problem: &Problem,
        x1: &DVector<f64>,
        x2: &DVector<f64>,
    ) -> std::result::Result<f64, ControlError> {
        u_ii(x1, x2, self.alpha, problem)
    }

    fn vector_field(
        &self,
        problem: &Problem,
        x1: &DVector<f64>,
        x2: &DVector<f64>,
    ) -> std::result::Result<(DVector<f64>, DVector<f64>, f64), ControlError> {
        let g = problem.gradient(x1);
        let u = feedback(&g, x1, x2, self.alpha, problem)?;
        Ok((x2.clone(), -x2 - g * u, u))
    }

    fn validate(&self, constants: &Constants) -> Vec<Violation> {
        validate_params_ii(self, constants)
    }

    fn zeno_lower_bound(&self, constants: &Constants, _grad_norm0: f64) -> Result<f64> {
        Ok(zeno_bound_ii(self, constants, &DEFAULT_R_GRID)?.tau_lb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::make_quadratic;
    use nalgebra::{dvector, DMatrix};

    fn half_norm_sq() -> Problem {
        make_quadratic(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap()
    }

    fn reference_constants() -> Constants {
        Constants {
            l_f: 136.9832,
            ell_f: 0.0,
            mu_f: 3.6878,
            h_f: 0.0,
            f_star: None,
        }
    }

    fn reference_params() -> ParamsII {
        ParamsII {
            alpha: 0.2,
            beta: 0.0298,
            u_lo: -0.1861,
            u_hi: 5.7457,
        }
    }

    #[test]
    fn feedback_values() {
        let p = half_norm_sq();
        let (x1, x2) = (dvector![1.0, 0.0], dvector![-1.0, 0.0]);
        assert!((u_ii(&x1, &x2, 1.0, &p).unwrap() - 1.0).abs() < 1e-15);
        assert!((u_ii(&x1, &x2, 0.2, &p).unwrap() - 1.8).abs() < 1e-15);
        assert_eq!(
            u_ii(&DVector::zeros(2), &x2, 0.2, &p).unwrap_err(),
            ControlError::Converged
        );
    }

    #[test]
    fn flow_map_values() {
        let p = half_norm_sq();
        let s = HybridState::new(dvector![1.0, 0.0], dvector![0.0, 1.0], 0.0);
        let (d1, d2) = flow_ii(&s, 2.0, &p);
        assert_eq!(d1, dvector![0.0, 1.0]);
        assert_eq!(d2, dvector![-2.0, -1.0]);
        let (_, d2) = flow_ii(&s, 0.0, &p);
        assert_eq!(d2, dvector![0.0, -1.0]);
        let eq = HybridState::new(DVector::zeros(2), DVector::zeros(2), 0.0);
        let (d1, d2) = flow_ii(&eq, 1.0, &p);
        assert_eq!((d1, d2), (DVector::zeros(2), DVector::zeros(2)));
    }

    #[test]
    fn margin_shapes() {
        // u = 1.8 at this state.
        let p = half_norm_sq();
        let s = HybridState::new(dvector![1.0, 0.0], dvector![-1.0, 0.0], 0.0);
        let mid = ParamsII {
            alpha: 0.2,
            beta: 0.1,
            u_lo: 0.8,
            u_hi: 2.8,
        };
        assert!((flow_margin_ii(&s, &mid, &p).unwrap() - 1.0).abs() < 1e-14);
        let edge = ParamsII {
            u_lo: 1.8,
            u_hi: 3.0,
            ..mid
        };
        assert!(flow_margin_ii(&s, &edge, &p).unwrap().abs() < 1e-14);
        let out = ParamsII {
            u_lo: 0.0,
            u_hi: 0.8,
            ..mid
        };
        assert!((flow_margin_ii(&s, &out, &p).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn jump_map() {
        let p = half_norm_sq();
        let s = HybridState::new(dvector![1.0, 0.0], dvector![3.0, 3.0], 0.0);
        let j = jump_ii(&s, 0.0298, &p).unwrap();
        assert_eq!(j.x2, dvector![-0.0298, 0.0]);
        let z = HybridState::new(DVector::zeros(2), DVector::zeros(2), 0.0);
        assert_eq!(
            jump_ii(&z, 0.0298, &p).unwrap_err(),
            ControlError::Converged
        );
    }

    #[test]
    fn reference_parameters_are_feasible() {
        let c = reference_constants();
        assert!(validate_params_ii(&reference_params(), &c).is_empty());
        let lower: f64 = (1.0 - 0.2) * 0.0298;
        assert!((lower - 0.02384).abs() < 1e-15);
        let upper = 136.9832 * 0.0298f64.powi(2) + lower;
        assert!((upper - 0.14548).abs() < 1e-4, "{upper}");
    }

    #[test]
    fn single_condition_perturbations() {
        let c = reference_constants();
        let v = validate_params_ii(
            &ParamsII {
                alpha: 0.25,
                ..reference_params()
            },
            &c,
        );
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].condition, Condition::PotentialRate);
        let v = validate_params_ii(
            &ParamsII {
                u_lo: 0.05,
                ..reference_params()
            },
            &c,
        );
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].condition, Condition::PotentialLower);
        let v = validate_params_ii(
            &ParamsII {
                u_hi: 0.1,
                ..reference_params()
            },
            &c,
        );
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].condition, Condition::PotentialUpper);
    }

    #[test]
    fn zeno_bound_is_positive_and_uniform() {
        let c = reference_constants();
        let b = zeno_bound_ii(&reference_params(), &c, &DEFAULT_R_GRID).unwrap();
        assert!(b.tau_lb > 0.0);
        let k = b.consts;
        assert!(k.delta > 0.0 && k.omega > 0.0 && k.b1 > 0.0 && k.b2 >= 0.0);
        let p = reference_params();
        assert_eq!(
            p.zeno_lower_bound(&c, 0.0).unwrap(),
            p.zeno_lower_bound(&c, 1e9).unwrap()
        );
    }

    #[test]
    fn zeno_bound_vanishes_as_r_shrinks() {
        let c = reference_constants();
        let small = zeno_bound_ii(&reference_params(), &c, &[1e-9]).unwrap();
        assert!(small.tau_lb <= 1e-9 / small.consts.omega * (1.0 + 1e-12));
        assert!(zeno_bound_ii(&reference_params(), &c, &[0.0]).is_err());
        assert!(zeno_bound_ii(&reference_params(), &c, &[1.0]).is_err());
    }
}

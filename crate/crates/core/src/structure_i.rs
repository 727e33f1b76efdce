//! Structure I: state-dependent damping.
//!
//! Flow `x1' = x2`, `x2' = -grad f(x1) - u x2` with the feedback
//!
//! ```text
//! u(x) = alpha + (|grad f(x1)|^2 - <H(x1) x2, x2>) / <grad f(x1), -x2>
//! ```
//!
//! which keeps `sigma = <grad f, x2> + alpha (f - f*)` constant. The flow set
//! is `{x : u(x) in [u_lo, u_hi]}` and the jump map resets
//! `x2 <- -beta grad f(x1)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ControlError, Error, Result};
use crate::objectives::{Constants, Problem};
use crate::structure::{
    gradient_jump, interval_margin, HybridState, HybridStructure, StructureKind,
};
use crate::validate::{require_le, require_lt, Condition, Violation};

/// Default tuning grid for the inter-jump bound.
pub const DEFAULT_R_GRID: [f64; 4] = [1.1, 2.0, 4.0, 8.0];

/// Relative floor on `|<grad f, -x2>|` below which the feedback is treated
/// as undefined.
pub const DENOMINATOR_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsI {
    pub alpha: f64,
    pub beta: f64,
    pub u_lo: f64,
    pub u_hi: f64,
}

/// Constants of the inter-jump lower bound for one choice of `r > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZenoConstantsI {
    /// Bound on `|grad f| / |x2|` inside the flow set.
    pub c: f64,
    pub delta: f64,
    pub script_l: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZenoBoundI {
    pub tau_lb: f64,
    pub best_r: f64,
    pub consts: ZenoConstantsI,
}

pub fn u_i(
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
    let gn = g.norm();
    if gn == 0.0 {
        return Err(ControlError::Converged);
    }
    let denom = -g.dot(x2);
    if denom.abs() <= DENOMINATOR_FLOOR * gn * x2.norm() {
        return Err(ControlError::DegenerateDenominator);
    }
    let u = alpha + (gn * gn - problem.hessian_quad(x1, x2)) / denom;
    if u.is_finite() {
        Ok(u)
    } else {
        Err(ControlError::DegenerateDenominator)
    }
}

/// `(x2, -grad f(x1) - u x2)`.
pub fn flow_i(state: &HybridState, u: f64, problem: &Problem) -> (DVector<f64>, DVector<f64>) {
    let g = problem.gradient(&state.x1);
    (state.x2.clone(), -g - &state.x2 * u)
}

/// `min(u_hi - u, u - u_lo)` at the state's feedback value.
pub fn flow_margin_i(
    state: &HybridState,
    params: &ParamsI,
    problem: &Problem,
) -> std::result::Result<f64, ControlError> {
    let u = u_i(&state.x1, &state.x2, params.alpha, problem)?;
    Ok(interval_margin(u, params.u_lo, params.u_hi))
}

/// `(x1, -beta grad f(x1))`; signals `Converged` at a stationary point.
pub fn jump_i(
    state: &HybridState,
    beta: f64,
    problem: &Problem,
) -> std::result::Result<HybridState, ControlError> {
    gradient_jump(problem, state, beta)
}

pub fn validate_params_i(params: &ParamsI, constants: &Constants) -> Vec<Violation> {
    let ParamsI {
        alpha,
        beta,
        u_lo,
        u_hi,
    } = *params;
    let mut out = Vec::new();
    require_lt(
        &mut out,
        Condition::DampingLower,
        u_lo,
        alpha + 1.0 / beta - constants.l_f * beta,
    );
    require_lt(
        &mut out,
        Condition::DampingUpper,
        alpha + 1.0 / beta + constants.ell_f * beta,
        u_hi,
    );
    require_le(
        &mut out,
        Condition::DampingRate,
        alpha,
        2.0 * constants.mu_f * beta,
    );
    out
}

fn check_shape(params: &ParamsI) -> Result<()> {
    let ParamsI {
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

pub fn zeno_constants_i(params: &ParamsI, constants: &Constants, r: f64) -> Result<ZenoConstantsI> {
    check_shape(params)?;
    if !(r > 1.0 && r.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "tuning scalar r must exceed 1, got {r}"
        )));
    }
    let violations = validate_params_i(params, constants);
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations));
    }
    let ParamsI {
        alpha,
        beta,
        u_lo,
        u_hi,
    } = *params;
    let Constants {
        l_f, ell_f, h_f, ..
    } = *constants;
    let script_l = constants.script_l();

    let s = u_hi - alpha;
    let c = (s + (s * s + 4.0 * l_f).sqrt()) / 2.0;
    let delta = c + u_hi.max(-u_lo);
    let a1 =
        (u_hi - (alpha + 1.0 / beta + ell_f * beta)).min((alpha + 1.0 / beta - l_f * beta) - u_lo);
    let a2 =
        r * l_f / delta * (r * beta * c + 1.0) + 1.0 / beta + (r * r + r + 1.0) * beta * script_l;
    let a3 = r.powi(3) * beta * beta * h_f / delta;
    if !(a1 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "interval clearance a1 = {a1} is not positive"
        )));
    }
    Ok(ZenoConstantsI {
        c,
        delta,
        script_l,
        a1,
        a2,
        a3,
        r,
    })
}

/// `(1/delta) log(min{a1 / (a2 + a3 |grad f(x1(0))|) + 1, r})`, maximized
/// over `r_grid`.
pub fn zeno_bound_i(
    params: &ParamsI,
    constants: &Constants,
    grad_norm0: f64,
    r_grid: &[f64],
) -> Result<ZenoBoundI> {
    if !(grad_norm0 >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "gradient norm must be >= 0, got {grad_norm0}"
        )));
    }
    if r_grid.is_empty() {
        return Err(Error::InvalidInput("empty r grid".into()));
    }
    let mut best: Option<ZenoBoundI> = None;
    for &r in r_grid {
        let k = zeno_constants_i(params, constants, r)?;
        let arg = (k.a1 / (k.a2 + k.a3 * grad_norm0) + 1.0).min(r);
        let tau = arg.ln() / k.delta;
        if best.map_or(true, |b| tau > b.tau_lb) {
            best = Some(ZenoBoundI {
                tau_lb: tau,
                best_r: r,
                consts: k,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

impl HybridStructure for ParamsI {
    fn kind(&self) -> StructureKind {
        StructureKind::I
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
        u_i(x1, x2, self.alpha, problem)
    }

    fn vector_field(
        &self,
        problem: &Problem,
        x1: &DVector<f64>,
        x2: &DVector<f64>,
    ) -> std::result::Result<(DVector<f64>, DVector<f64>, f64), ControlError> {
        let g = problem.gradient(x1);
        let u = feedback(&g, x1, x2, self.alpha, problem)?;
        Ok((x2.clone(), -g - x2 * u, u))
    }

    fn validate(&self, constants: &Constants) -> Vec<Violation> {
        validate_params_i(self, constants)
    }

    fn zeno_lower_bound(&self, constants: &Constants, grad_norm0: f64) -> Result<f64> {
        Ok(zeno_bound_i(self, constants, grad_norm0, &DEFAULT_R_GRID)?.tau_lb)
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

    fn reference_params() -> ParamsI {
        ParamsI {
            alpha: 0.2,
            beta: 0.1356,
            u_lo: -14.352,
            u_hi: 15.1511,
        }
    }

    #[test]
    fn feedback_symmetric_cancellation() {
        let p = half_norm_sq();
        let u = u_i(&dvector![1.0, 0.0], &dvector![-1.0, 0.0], 1.0, &p).unwrap();
        assert!((u - 1.0).abs() < 1e-15);
    }

    #[test]
    fn feedback_hand_value() {
        // 0.2 + (4 - 1) / 2
        let p = half_norm_sq();
        let u = u_i(&dvector![2.0, 0.0], &dvector![-1.0, 0.0], 0.2, &p).unwrap();
        assert!((u - 1.7).abs() < 1e-15);
    }

    #[test]
    fn feedback_after_jump() {
        // x2 = -beta x1: u = alpha + 1/beta - beta = 0.2 + 2 - 0.5
        let p = half_norm_sq();
        let s = HybridState::new(dvector![0.3, -1.7], DVector::zeros(2), 0.0);
        let j = jump_i(&s, 0.5, &p).unwrap();
        let u = u_i(&j.x1, &j.x2, 0.2, &p).unwrap();
        assert!((u - 1.7).abs() < 1e-14);
    }

    #[test]
    fn feedback_degenerate_denominator() {
        let p = half_norm_sq();
        let e = u_i(&dvector![1.0, 0.0], &dvector![0.0, 1.0], 0.2, &p).unwrap_err();
        assert_eq!(e, ControlError::DegenerateDenominator);
        let e = u_i(&dvector![0.0, 0.0], &dvector![0.0, 1.0], 0.2, &p).unwrap_err();
        assert_eq!(e, ControlError::Converged);
    }

    #[test]
    fn flow_map_values() {
        let p = half_norm_sq();
        let s = HybridState::new(dvector![1.0, 0.0], dvector![0.0, 1.0], 0.0);
        let (d1, d2) = flow_i(&s, 2.0, &p);
        assert_eq!(d1, dvector![0.0, 1.0]);
        assert_eq!(d2, dvector![-1.0, -2.0]);

        let (d1, d2) = flow_i(&s, 0.0, &p);
        assert_eq!(d1, dvector![0.0, 1.0]);
        assert_eq!(d2, dvector![-1.0, 0.0]);

        let eq = HybridState::new(DVector::zeros(2), DVector::zeros(2), 0.0);
        let (d1, d2) = flow_i(&eq, 3.0, &p);
        assert_eq!(d1, DVector::zeros(2));
        assert_eq!(d2, DVector::zeros(2));
    }

    #[test]
    fn margin_shapes() {
        // u = 1.7 at this state (see feedback_hand_value).
        let p = half_norm_sq();
        let s = HybridState::new(dvector![2.0, 0.0], dvector![-1.0, 0.0], 0.0);
        let mid = ParamsI {
            alpha: 0.2,
            beta: 1.0,
            u_lo: 0.7,
            u_hi: 2.7,
        };
        assert!((flow_margin_i(&s, &mid, &p).unwrap() - 1.0).abs() < 1e-14);
        let edge = ParamsI { u_hi: 1.7, ..mid };
        assert!(flow_margin_i(&s, &edge, &p).unwrap().abs() < 1e-14);
        let out = ParamsI {
            u_hi: 0.7,
            u_lo: -1.0,
            ..mid
        };
        assert!((flow_margin_i(&s, &out, &p).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn jump_map() {
        let p = half_norm_sq();
        let s = HybridState::new(dvector![1.0, 0.0], dvector![5.0, 5.0], 2.5);
        let j = jump_i(&s, 0.5, &p).unwrap();
        assert_eq!(j.x1, s.x1);
        assert_eq!(j.x2, dvector![-0.5, 0.0]);
        assert_eq!(j.t, 2.5);
        let z = HybridState::new(DVector::zeros(2), dvector![1.0, 0.0], 0.0);
        assert_eq!(jump_i(&z, 0.5, &p).unwrap_err(), ControlError::Converged);
    }

    #[test]
    fn reference_parameters_are_feasible() {
        assert!(validate_params_i(&reference_params(), &reference_constants()).is_empty());
        // alpha + 1/beta - L beta ~ -11.0
        let b: f64 = 0.2 + 1.0 / 0.1356 - 136.9832 * 0.1356;
        assert!((b + 11.0003).abs() < 1e-3, "{b}");
    }

    #[test]
    fn single_condition_perturbations() {
        let c = reference_constants();
        let v = validate_params_i(
            &ParamsI {
                beta: 0.01,
                ..reference_params()
            },
            &c,
        );
        assert!(v.iter().any(|v| v.condition == Condition::DampingRate));
        assert!((2.0 * 3.6878 * 0.01f64 - 0.073756).abs() < 1e-12);

        let v = validate_params_i(
            &ParamsI {
                u_hi: 7.0,
                ..reference_params()
            },
            &c,
        );
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].condition, Condition::DampingUpper);
        assert!((v[0].lhs - 7.574_631_268_436_578).abs() < 1e-9);

        let v = validate_params_i(
            &ParamsI {
                u_lo: -10.0,
                ..reference_params()
            },
            &c,
        );
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].condition, Condition::DampingLower);
    }

    #[test]
    fn zeno_constant_c_by_hand() {
        // L = 1, alpha = 1, u_hi = 3: C = (2 + sqrt 8) / 2 = 1 + sqrt 2.
        let c = Constants {
            l_f: 1.0,
            ell_f: 0.0,
            mu_f: 1.0,
            h_f: 0.0,
            f_star: Some(0.0),
        };
        let params = ParamsI {
            alpha: 1.0,
            beta: 1.0,
            u_lo: -1.0,
            u_hi: 3.0,
        };
        assert!(validate_params_i(&params, &c).is_empty());
        let k = zeno_constants_i(&params, &c, 2.0).unwrap();
        assert!((k.c - (1.0 + 2f64.sqrt())).abs() < 1e-14);
        assert_eq!(k.a3, 0.0);
        assert!(k.delta >= k.c);
        assert!(k.a1 > 0.0 && k.a2 > 0.0);
    }

    #[test]
    fn zeno_bound_limits_and_monotonicity() {
        let c = Constants {
            h_f: 2.0,
            ..reference_constants()
        };
        let params = reference_params();
        let r = [2.0];
        let at0 = zeno_bound_i(&params, &c, 0.0, &r).unwrap();
        let k = at0.consts;
        let expect = (k.a1 / k.a2 + 1.0).min(2.0).ln() / k.delta;
        assert!((at0.tau_lb - expect).abs() < 1e-15);
        assert!(at0.tau_lb > 0.0);
        let mut prev = at0.tau_lb;
        for g in [0.1, 1.0, 10.0, 1e3, 1e6] {
            let t = zeno_bound_i(&params, &c, g, &DEFAULT_R_GRID)
                .unwrap()
                .tau_lb;
            let t_fixed = zeno_bound_i(&params, &c, g, &r).unwrap().tau_lb;
            assert!(t_fixed <= prev);
            assert!(t > 0.0);
            prev = t_fixed;
        }
    }

    #[test]
    fn zeno_rejects_infeasible_and_bad_r() {
        let c = reference_constants();
        let bad = ParamsI {
            beta: 0.01,
            ..reference_params()
        };
        assert!(matches!(
            zeno_bound_i(&bad, &c, 1.0, &DEFAULT_R_GRID),
            Err(Error::Infeasible(_))
        ));
        assert!(zeno_bound_i(&reference_params(), &c, 1.0, &[1.0]).is_err());
        assert!(zeno_bound_i(&reference_params(), &c, 1.0, &[]).is_err());
        assert!(zeno_bound_i(&reference_params(), &c, -1.0, &[2.0]).is_err());
    }
}

//! Dormand–Prince 5(4) stepping and time bisection for event location.

use nalgebra::DVector;

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// Difference between the 5th and embedded 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

/// Result of one trial step.
#[derive(Debug, Clone)]
pub(crate) struct Trial {
    pub y: DVector<f64>,
    /// Scaled RMS error; the step is acceptable when `<= 1`.
    pub err: f64,
}

fn combine(y: &DVector<f64>, h: f64, coeffs: &[f64], k: &[DVector<f64>]) -> DVector<f64> {
    let mut out = y.clone();
    for (c, ki) in coeffs.iter().zip(k) {
        if *c != 0.0 {
            out.axpy(h * c, ki, 1.0);
        }
    }
    out
}

/// One Dormand–Prince step of size `h` from `(t, y)`.
pub(crate) fn dopri5_step<E2, F>(
    f: &mut F,
    t: f64,
    y: &DVector<f64>,
    h: f64,
    rtol: f64,
    atol: f64,
) -> std::result::Result<Trial, E2>
where
    F: FnMut(f64, &DVector<f64>) -> std::result::Result<DVector<f64>, E2>,
{
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(f(t, y)?);
    k.push(f(t + C[1] * h, &combine(y, h, &A2, &k))?);
    k.push(f(t + C[2] * h, &combine(y, h, &A3, &k))?);
    k.push(f(t + C[3] * h, &combine(y, h, &A4, &k))?);
    k.push(f(t + C[4] * h, &combine(y, h, &A5, &k))?);
    k.push(f(t + C[5] * h, &combine(y, h, &A6, &k))?);
    let y_new = combine(y, h, &B, &k);
    k.push(f(t + h, &y_new)?);
    let err_vec = combine(&DVector::zeros(y.len()), h, &E, &k);
    let n = y.len().max(1) as f64;
    let sum: f64 = err_vec
        .iter()
        .zip(y.iter().zip(y_new.iter()))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    let err = (sum / n).sqrt();
    Ok(Trial {
        y: y_new,
        err: if err.is_finite() { err } else { f64::INFINITY },
    })
}

/// Step size proposal after a trial with scaled error `err`.
pub(crate) fn next_step(h: f64, err: f64) -> f64 {
    let fac = if err == 0.0 {
        FAC_MAX
    } else {
        (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
    };
    h * fac
}

/// Bisects a guard crossing on `[t_in, t_out]`.
///
/// `propagate(dt)` returns the state at `t_in + dt` (or `None` if the state
/// is undefined there), `margin` is nonnegative on the admissible side.
/// Returns the time and state of the admissible end of the final bracket,
/// whose width is at most `event_time_tol`. Undefined or NaN margins count as
/// outside.
pub fn locate_crossing<S, P, M>(
    inside: &S,
    t_in: f64,
    t_out: f64,
    mut propagate: P,
    mut margin: M,
    event_time_tol: f64,
) -> Result<(f64, S)>
where
    S: Clone,
    P: FnMut(f64) -> Option<S>,
    M: FnMut(&S) -> Option<f64>,
{
    if !(event_time_tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "event_time_tol must be positive, got {event_time_tol}"
        )));
    }
    if !(t_out > t_in) {
        return Err(Error::InvalidInput(format!(
            "empty bracket [{t_in}, {t_out}]"
        )));
    }
    let is_inside = |m: Option<f64>| matches!(m, Some(v) if v >= 0.0);
    let m_in = margin(inside);
    if !is_inside(m_in) {
        return Err(Error::InvalidInput(
            "crossing not bracketed: left end is outside".into(),
        ));
    }
    if m_in == Some(0.0) {
        return Ok((t_in, inside.clone()));
    }
    let outside = propagate(t_out - t_in);
    if outside.as_ref().map_or(false, |s| is_inside(margin(s))) {
        return Err(Error::InvalidInput(
            "crossing not bracketed: right end is inside".into(),
        ));
    }
    let (mut lo, mut hi) = (0.0f64, t_out - t_in);
    let mut best = inside.clone();
    while hi - lo > event_time_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match propagate(mid) {
            Some(s) if is_inside(margin(&s)) => {
                lo = mid;
                best = s;
            }
            _ => hi = mid,
        }
    }
    Ok((t_in + lo, best))
}

//! Objective functions and their regularity constants.
//!
//! A [`Problem`] bundles an [`Objective`] (value, gradient and the Hessian
//! quadratic form `<H(x) v, v>`) with the [`Constants`] the hybrid schemes are
//! tuned against. Problems are immutable and cheap to clone; evaluators take
//! `&self` and may be called from several threads at once.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regularity constants of an objective.
///
/// `-ell_f I <= H(x) <= l_f I`, `0.5 |grad f|^2 >= mu_f (f - f_star)` and
/// `|H(x) - H(y)| <= h_f |x - y|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub l_f: f64,
    pub ell_f: f64,
    pub mu_f: f64,
    pub h_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_star: Option<f64>,
}

impl Constants {
    pub fn check(&self) -> Result<()> {
        let finite = [self.l_f, self.ell_f, self.mu_f, self.h_f]
            .iter()
            .all(|c| c.is_finite());
        if !finite {
            return Err(Error::InvalidProblem(format!(
                "non-finite constants: {self:?}"
            )));
        }
        if !(self.l_f > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "L_f must be positive, got {}",
                self.l_f
            )));
        }
        if self.ell_f < 0.0 {
            return Err(Error::InvalidProblem(format!(
                "ell_f must be >= 0, got {}",
                self.ell_f
            )));
        }
        if !(self.mu_f > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "PL constant mu_f must be positive, got {}",
                self.mu_f
            )));
        }
        if self.h_f < 0.0 {
            return Err(Error::InvalidProblem(format!(
                "H_f must be >= 0, got {}",
                self.h_f
            )));
        }
        if self.mu_f > self.l_f * (1.0 + 1e-12) {
            return Err(Error::InvalidProblem(format!(
                "mu_f = {} exceeds L_f = {}",
                self.mu_f, self.l_f
            )));
        }
        Ok(())
    }

    /// `max(ell_f, L_f)`.
    pub fn script_l(&self) -> f64 {
        self.ell_f.max(self.l_f)
    }
}

/// Evaluation contract of a twice-differentiable objective.
pub trait Objective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `<H(x) v, v>`.
    fn hessian_quad(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64;

    /// Suboptimality `f(x) - f_star`. Objectives that know their minimizer
    /// override this with a cancellation-free formula.
    fn gap(&self, x: &DVector<f64>, f_star: f64) -> f64 {
        self.value(x) - f_star
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemInfo {
    Lmse {
        m: usize,
        n: usize,
        seed: Option<u64>,
    },
    Quadratic {
        n: usize,
    },
    Logistic {
        samples: usize,
        n: usize,
        box_radius: f64,
    },
    Custom {
        name: String,
    },
}

/// An objective together with its constants.
#[derive(Clone)]
pub struct Problem {
    objective: Arc<dyn Objective>,
    constants: Constants,
    info: ProblemInfo,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("info", &self.info)
            .field("constants", &self.constants)
            .finish()
    }
}

impl Problem {
    /// Wraps a user-supplied objective. The constants are taken on trust.
    pub fn from_objective(
        objective: Arc<dyn Objective>,
        constants: Constants,
        name: impl Into<String>,
    ) -> Result<Self> {
        constants.check()?;
        if objective.dim() == 0 {
            return Err(Error::InvalidProblem("dimension must be positive".into()));
        }
        Ok(Problem {
            objective,
            constants,
            info: ProblemInfo::Custom { name: name.into() },
        })
    }

    /// Replaces the constants, e.g. with explicit overrides from a config.
    pub fn with_constants(mut self, constants: Constants) -> Result<Self> {
        constants.check()?;
        self.constants = constants;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn info(&self) -> &ProblemInfo {
        &self.info
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        self.objective.value(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dim());
        self.objective.gradient(x)
    }

    pub fn hessian_quad(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        self.objective.hessian_quad(x, v)
    }

    /// `f(x) - f_star`, absent when the optimal value is unknown.
    pub fn gap(&self, x: &DVector<f64>) -> Option<f64> {
        self.constants.f_star.map(|fs| self.objective.gap(x, fs))
    }
}

/// `f(x) = |A x - b|^2` with `A`, `b` drawn from a seeded standard normal
/// generator (entries of `A` row by row, then `b`).
pub fn make_lmse(m: usize, n: usize, seed: u64) -> Result<Problem> {
    if n == 0 || m < n {
        return Err(Error::InvalidProblem(format!(
            "LMSE needs m >= n >= 1, got m = {m}, n = {n}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut a = DMatrix::<f64>::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let b = DVector::<f64>::from_fn(m, |_, _| rng.sample(StandardNormal));
    let mut p = lmse_from_data(a, b)?;
    p.info = ProblemInfo::Lmse {
        m,
        n,
        seed: Some(seed),
    };
    Ok(p)
}

/// LMSE objective from explicit data.
pub fn lmse_from_data(a: DMatrix<f64>, b: DVector<f64>) -> Result<Problem> {
    let (m, n) = a.shape();
    if n == 0 || m < n {
        return Err(Error::InvalidProblem(format!(
            "LMSE needs m >= n >= 1, got m = {m}, n = {n}"
        )));
    }
    if b.len() != m {
        return Err(Error::InvalidProblem(format!(
            "right-hand side has length {}, expected {m}",
            b.len()
        )));
    }
    let gram = a.transpose() * &a;
    let (lo, hi) = extreme_eigenvalues(&gram);
    if !(lo > 1e-12 * hi) {
        return Err(Error::InvalidProblem(format!(
            "A is rank deficient (lambda_min(A^T A) = {lo:e}, lambda_max = {hi:e}); \
             the PL constant would vanish"
        )));
    }
    let qr = a.clone().qr();
    let rhs = qr.q().transpose() * &b;
    let x_star = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::InvalidProblem("singular triangular factor".into()))?;
    let f_star = (&a * &x_star - &b).norm_squared();
    let constants = Constants {
        l_f: 2.0 * hi,
        ell_f: 0.0,
        mu_f: 2.0 * lo,
        h_f: 0.0,
        f_star: Some(f_star),
    };
    constants.check()?;
    Ok(Problem {
        objective: Arc::new(Lmse { a, b, gram, x_star }),
        constants,
        info: ProblemInfo::Lmse { m, n, seed: None },
    })
}

#[derive(Debug)]
struct Lmse {
    a: DMatrix<f64>,
    b: DVector<f64>,
    gram: DMatrix<f64>,
    x_star: DVector<f64>,
}

impl Objective for Lmse {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).norm_squared()
    }

    // 2 A^T (A x - b) == 2 A^T A (x - x*) since A^T A x* = A^T b.
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        2.0 * (&self.gram * (x - &self.x_star))
    }

    fn hessian_quad(&self, _x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        2.0 * v.dot(&(&self.gram * v))
    }

    fn gap(&self, x: &DVector<f64>, _f_star: f64) -> f64 {
        let d = x - &self.x_star;
        d.dot(&(&self.gram * &d))
    }
}

/// `f(x) = 0.5 x^T Q x + c^T x` with `Q` symmetric positive definite.
pub fn make_quadratic(q: DMatrix<f64>, c: DVector<f64>) -> Result<Problem> {
    let n = q.nrows();
    if n == 0 || q.ncols() != n {
        return Err(Error::InvalidProblem(format!(
            "Q must be square, got {:?}",
            q.shape()
        )));
    }
    if c.len() != n {
        return Err(Error::InvalidProblem(format!(
            "c has length {}, expected {n}",
            c.len()
        )));
    }
    let scale = q.amax().max(f64::MIN_POSITIVE);
    if (&q - q.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidProblem("Q is not symmetric".into()));
    }
    let (lo, hi) = extreme_eigenvalues(&q);
    if !(lo > 0.0) {
        return Err(Error::InvalidProblem(format!(
            "Q must be positive definite, lambda_min = {lo:e}"
        )));
    }
    let chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidProblem("Cholesky factorization of Q failed".into()))?;
    let x_star = -chol.solve(&c);
    let f_star = 0.5 * c.dot(&x_star);
    let constants = Constants {
        l_f: hi,
        ell_f: 0.0,
        mu_f: lo,
        h_f: 0.0,
        f_star: Some(f_star),
    };
    constants.check()?;
    Ok(Problem {
        objective: Arc::new(Quadratic { q, c, x_star }),
        constants,
        info: ProblemInfo::Quadratic { n },
    })
}

#[derive(Debug)]
struct Quadratic {
    q: DMatrix<f64>,
    c: DVector<f64>,
    x_star: DVector<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.c
    }

    fn hessian_quad(&self, _x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.q * v))
    }

    fn gap(&self, x: &DVector<f64>, _f_star: f64) -> f64 {
        let d = x - &self.x_star;
        0.5 * d.dot(&(&self.q * &d))
    }
}

/// `max |sigma''|` of the logistic sigmoid, i.e. `1 / (6 sqrt 3)`.
const SIGMOID_SECOND_DERIVATIVE_MAX: f64 = 0.096_225_044_864_937_63;

/// Log-loss `f(x) = sum_i log(1 + exp(b_i a_i^T x))`, rows of `a` are samples.
///
/// The PL constant is only local and instance specific, so `mu_f` comes from
/// the caller. `H_f = sum_i |a_i|^3 / (6 sqrt 3)` bounds the Hessian's
/// Lipschitz constant globally; `f_star` is left unknown.
pub fn make_logistic(
    a: DMatrix<f64>,
    b: DVector<f64>,
    box_radius: f64,
    mu_f: f64,
) -> Result<Problem> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidProblem("logistic data is empty".into()));
    }
    if b.len() != m {
        return Err(Error::InvalidProblem(format!(
            "labels have length {}, expected {m}",
            b.len()
        )));
    }
    if let Some(bad) = b.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidProblem(format!(
            "labels must be +1 or -1, found {bad}"
        )));
    }
    if !(box_radius > 0.0) {
        return Err(Error::InvalidProblem(format!(
            "box_radius must be positive, got {box_radius}"
        )));
    }
    let gram = a.transpose() * &a;
    let (_, hi) = extreme_eigenvalues(&gram);
    let h_f =
        a.row_iter().map(|row| row.norm().powi(3)).sum::<f64>() * SIGMOID_SECOND_DERIVATIVE_MAX;
    let constants = Constants {
        l_f: hi / 4.0,
        ell_f: 0.0,
        mu_f,
        h_f,
        f_star: None,
    };
    constants.check()?;
    Ok(Problem {
        objective: Arc::new(Logistic { a, b }),
        constants,
        info: ProblemInfo::Logistic {
            samples: m,
            n,
            box_radius,
        },
    })
}

#[derive(Debug)]
struct Logistic {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    fn margins(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.a * x).component_mul(&self.b)
    }
}

impl Objective for Logistic {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.margins(x).iter().map(|&z| softplus(z)).sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let w = self.margins(x).zip_map(&self.b, |z, y| y * sigmoid(z));
        self.a.transpose() * w
    }

    fn hessian_quad(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let av = &self.a * v;
        self.margins(x)
            .iter()
            .zip(av.iter())
            .map(|(&z, &p)| {
                let s = sigmoid(z);
                s * (1.0 - s) * p * p
            })
            .sum()
    }
}

fn extreme_eigenvalues(sym: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(sym.clone());
    let lo = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Finite-difference consistency check of the gradient and the Hessian form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub grad_err: f64,
    pub hess_err: f64,
}

/// Compares `grad f` with central differences of `f`, and `<H v, v>` with
/// central differences of `<grad f, v>` along a random unit `v` drawn from
/// `rng`. Errors are relative with a unit floor on the denominator.
pub fn fd_check<R: Rng + ?Sized>(
    problem: &Problem,
    x: &DVector<f64>,
    h: f64,
    rng: &mut R,
) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let n = problem.dim();
    let g = problem.gradient(x);
    let mut g_fd = DVector::<f64>::zeros(n);
    let mut e = DVector::<f64>::zeros(n);
    for i in 0..n {
        e[i] = h;
        g_fd[i] = (problem.value(&(x + &e)) - problem.value(&(x - &e))) / (2.0 * h);
        e[i] = 0.0;
    }
    let grad_err = (&g - &g_fd).norm() / g.norm().max(1.0);

    let mut v = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
    let vn = v.norm();
    if vn > 0.0 {
        v /= vn;
    } else {
        v[0] = 1.0;
    }
    let q = problem.hessian_quad(x, &v);
    let step = &v * h;
    let q_fd = (problem.gradient(&(x + &step)).dot(&v) - problem.gradient(&(x - &step)).dot(&v))
        / (2.0 * h);
    let hess_err = (q - q_fd).abs() / q.abs().max(1.0);
    Ok(FdReport { grad_err, hess_err })
}

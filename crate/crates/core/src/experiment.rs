//! Config-driven experiment runner: builds the problem, runs every listed
//! method, and writes one CSV plus one metadata JSON per run and a
//! `summary.json`.
//!
//! Output is a pure function of the config: runs are executed in parallel
//! but collected in config order, and nothing time- or host-dependent is
//! written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{run_baseline, BaselineRun, BaselineSpec, BaselineTermination};
use crate::discrete::{
    corollary1_params, run_algorithm1, validate_discrete, DiscreteParams, DiscreteRun,
    DiscreteTermination,
};
use crate::error::{Error, Result};
use crate::integrator::{simulate, IntegratorSettings, Termination, TrajectoryRecord};
use crate::objectives::{
    make_lmse, make_logistic, make_quadratic, Constants, Problem, ProblemInfo,
};
use crate::structure::{HybridStructure, StructureKind};
use crate::structure_i::ParamsI;
use crate::structure_ii::ParamsII;
use crate::validate::Violation;

pub const DEFAULT_SEED: u64 = 53;
pub const DEFAULT_X0_SEED: u64 = 1;

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_x0_seed() -> u64 {
    DEFAULT_X0_SEED
}
fn default_t_end() -> f64 {
    25.0
}
fn default_k_max() -> usize {
    200
}
fn default_rate_window() -> f64 {
    0.5
}
fn default_t_start() -> f64 {
    1.0
}
fn default_k_min() -> usize {
    1
}

/// Entries replace the computed constants of the problem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantOverrides {
    pub l_f: Option<f64>,
    pub ell_f: Option<f64>,
    pub mu_f: Option<f64>,
    pub h_f: Option<f64>,
    pub f_star: Option<f64>,
}

impl ConstantOverrides {
    fn apply(&self, c: Constants) -> Constants {
        Constants {
            l_f: self.l_f.unwrap_or(c.l_f),
            ell_f: self.ell_f.unwrap_or(c.ell_f),
            mu_f: self.mu_f.unwrap_or(c.mu_f),
            h_f: self.h_f.unwrap_or(c.h_f),
            f_star: self.f_star.or(c.f_star),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `|A x - b|^2` with standard normal `A` (`m x n`) and `b`.
    Lmse {
        m: usize,
        n: usize,
        #[serde(default = "default_seed")]
        seed: u64,
        #[serde(default)]
        constants: ConstantOverrides,
    },
    /// `x^T Q x / 2 + c^T x`, `Q` given row by row.
    Quadratic {
        q: Vec<Vec<f64>>,
        c: Vec<f64>,
        #[serde(default)]
        constants: ConstantOverrides,
    },
    /// Mean logistic loss over rows of `a` with labels `b` in {-1, 1}.
    Logistic {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        box_radius: f64,
        mu_f: f64,
        #[serde(default)]
        constants: ConstantOverrides,
    },
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!(
            "{what} must be a non-empty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        let (problem, overrides) = match self {
            ProblemSpec::Lmse {
                m,
                n,
                seed,
                constants,
            } => (make_lmse(*m, *n, *seed)?, constants),
            ProblemSpec::Quadratic { q, c, constants } => (
                make_quadratic(matrix_from_rows(q, "q")?, DVector::from_column_slice(c))?,
                constants,
            ),
            ProblemSpec::Logistic {
                a,
                b,
                box_radius,
                mu_f,
                constants,
            } => (
                make_logistic(
                    matrix_from_rows(a, "a")?,
                    DVector::from_column_slice(b),
                    *box_radius,
                    *mu_f,
                )?,
                constants,
            ),
        };
        if *overrides == ConstantOverrides::default() {
            return Ok(problem);
        }
        let c = overrides.apply(*problem.constants());
        problem.with_constants(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodKind {
    StructureI {
        alpha: f64,
        beta: f64,
        u_lo: f64,
        u_hi: f64,
    },
    StructureIi {
        alpha: f64,
        beta: f64,
        u_lo: f64,
        u_hi: f64,
    },
    /// Forward-Euler hybrid method. Missing `c1`, `c2`, `beta` take the
    /// optimal values for the step; `s` defaults to `1/L_f`.
    Discrete {
        structure: StructureKind,
        alpha: f64,
        s: Option<f64>,
        c1: Option<f64>,
        c2: Option<f64>,
        beta: Option<f64>,
    },
    Nwr {
        #[serde(default = "default_t_start")]
        t_start: f64,
    },
    Nsr {
        #[serde(default = "default_t_start")]
        t_start: f64,
        #[serde(default)]
        threshold: f64,
    },
    /// Step defaults to `1/L_f`.
    Ngr {
        s: Option<f64>,
    },
    NsrDiscrete {
        s: Option<f64>,
        #[serde(default = "default_k_min")]
        k_min: usize,
    },
    Gd {
        s: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodGroup {
    Hybrid,
    Discrete,
    Baseline,
}

impl MethodKind {
    pub fn group(&self) -> MethodGroup {
        match self {
            MethodKind::StructureI { .. } | MethodKind::StructureIi { .. } => MethodGroup::Hybrid,
            MethodKind::Discrete { .. } => MethodGroup::Discrete,
            _ => MethodGroup::Baseline,
        }
    }

    fn default_name(&self) -> String {
        match self {
            MethodKind::StructureI { .. } => "structure_i".into(),
            MethodKind::StructureIi { .. } => "structure_ii".into(),
            MethodKind::Discrete {
                structure: StructureKind::I,
                ..
            } => "discrete_i".into(),
            MethodKind::Discrete {
                structure: StructureKind::II,
                ..
            } => "discrete_ii".into(),
            MethodKind::Nwr { .. } => "nwr".into(),
            MethodKind::Nsr { .. } => "nsr".into(),
            MethodKind::Ngr { .. } => "ngr".into(),
            MethodKind::NsrDiscrete { .. } => "nsr_discrete".into(),
            MethodKind::Gd { .. } => "gd".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    /// File stem of the run's outputs; defaults to the method tag.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub kind: MethodKind,
}

impl MethodSpec {
    pub fn name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.kind.default_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    /// Initial point; drawn standard normal from `x0_seed` when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_x0_seed")]
    pub x0_seed: u64,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Tail fraction of the gap series used by the rate fit.
    #[serde(default = "default_rate_window")]
    pub rate_window: f64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses JSON; errors carry the line and column of the problem.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let text = e.to_string();
            let suffix = format!(" at line {} column {}", e.line(), e.column());
            let msg = text.strip_suffix(&suffix).unwrap_or(&text);
            Error::Config(format!("line {}, column {}: {msg}", e.line(), e.column()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the LMSE seed, if the problem has one.
    pub fn set_seed(&mut self, new_seed: u64) {
        if let ProblemSpec::Lmse { seed, .. } = &mut self.problem {
            *seed = new_seed;
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if !(self.rate_window > 0.0 && self.rate_window <= 1.0) {
            return Err(Error::Config(format!(
                "rate_window must lie in (0, 1], got {}",
                self.rate_window
            )));
        }
        self.integrator
            .check()
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut names: Vec<String> = self.methods.iter().map(MethodSpec::name).collect();
        for n in &names {
            if n.is_empty()
                || !n
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::Config(format!(
                    "method name {n:?} must be [A-Za-z0-9_-]+"
                )));
            }
            if n == "summary" {
                return Err(Error::Config("method name \"summary\" is reserved".into()));
            }
        }
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "duplicate method name {:?}; set distinct \"name\" fields",
                w[0]
            )));
        }
        Ok(())
    }

    pub fn initial_point(&self, dim: usize) -> Result<DVector<f64>> {
        match &self.x0 {
            Some(v) if v.len() == dim => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(Error::Config(format!(
                "x0 has length {}, problem dimension is {dim}",
                v.len()
            ))),
            None => {
                let mut rng = ChaCha20Rng::seed_from_u64(self.x0_seed);
                Ok(DVector::from_fn(dim, |_, _| {
                    StandardNormal.sample(&mut rng)
                }))
            }
        }
    }
}

/// A method with every default filled in from the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResolvedMethod {
    StructureI(ParamsI),
    StructureIi(ParamsII),
    Discrete {
        structure: StructureKind,
        alpha: f64,
        params: DiscreteParams,
    },
    Baseline(BaselineSpec),
}

fn resolve(kind: &MethodKind, c: &Constants) -> Result<ResolvedMethod> {
    let step = |s: Option<f64>| s.unwrap_or(1.0 / c.l_f);
    Ok(match *kind {
        MethodKind::StructureI {
            alpha,
            beta,
            u_lo,
            u_hi,
        } => ResolvedMethod::StructureI(ParamsI {
            alpha,
            beta,
            u_lo,
            u_hi,
        }),
        MethodKind::StructureIi {
            alpha,
            beta,
            u_lo,
            u_hi,
        } => ResolvedMethod::StructureIi(ParamsII {
            alpha,
            beta,
            u_lo,
            u_hi,
        }),
        MethodKind::Discrete {
            structure,
            alpha,
            s,
            c1,
            c2,
            beta,
        } => {
            let s = step(s);
            let opt = corollary1_params(c.l_f, s).map_err(|e| Error::Config(e.to_string()))?;
            let params = DiscreteParams {
                s,
                c1: c1.unwrap_or(opt.c1),
                c2: c2.unwrap_or(opt.c2),
                beta: beta.unwrap_or(opt.beta),
            };
            ResolvedMethod::Discrete {
                structure,
                alpha,
                params,
            }
        }
        MethodKind::Nwr { t_start } => ResolvedMethod::Baseline(BaselineSpec::Nwr { t_start }),
        MethodKind::Nsr { t_start, threshold } => {
            ResolvedMethod::Baseline(BaselineSpec::Nsr { t_start, threshold })
        }
        MethodKind::Ngr { s } => ResolvedMethod::Baseline(BaselineSpec::Ngr { s: step(s) }),
        MethodKind::NsrDiscrete { s, k_min } => {
            ResolvedMethod::Baseline(BaselineSpec::NsrDiscrete { s: step(s), k_min })
        }
        MethodKind::Gd { s } => ResolvedMethod::Baseline(BaselineSpec::Gd { s: step(s) }),
    })
}

impl ResolvedMethod {
    pub fn violations(&self, c: &Constants) -> Vec<Violation> {
        match self {
            ResolvedMethod::StructureI(p) => p.validate(c),
            ResolvedMethod::StructureIi(p) => p.validate(c),
            ResolvedMethod::Discrete { params, .. } => validate_discrete(params, c),
            ResolvedMethod::Baseline(_) => Vec::new(),
        }
    }

    /// Inter-jump lower bound from a post-jump state with gradient norm
    /// `grad_norm0`; `None` for methods without one.
    pub fn zeno_bound(&self, c: &Constants, grad_norm0: f64) -> Option<Result<f64>> {
        match self {
            ResolvedMethod::StructureI(p) => Some(p.zeno_lower_bound(c, grad_norm0)),
            ResolvedMethod::StructureIi(p) => Some(p.zeno_lower_bound(c, grad_norm0)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    /// Negative least-squares slope of `ln f_gap`.
    pub alpha_hat: f64,
    /// `exp(slope)`: the fitted contraction per unit of the time axis.
    pub lambda_hat: f64,
    /// Half-open sample index range used by the fit.
    pub fit_window: [usize; 2],
    /// RMS residual of the fit in log space.
    pub residual: f64,
}

/// Fits `ln f_gap = a + slope * t` over the last `window` fraction of the
/// samples with `f_gap > gap_floor`. Needs at least 10 such samples.
pub fn estimate_rate(series: &[(f64, f64)], window: f64, gap_floor: f64) -> Option<RateEstimate> {
    let usable: Vec<usize> = (0..series.len())
        .filter(|&i| series[i].1 > gap_floor)
        .collect();
    let take = ((usable.len() as f64) * window.clamp(0.0, 1.0)).ceil() as usize;
    if take < 10 {
        return None;
    }
    let idx = &usable[usable.len() - take..];
    let n = idx.len() as f64;
    let pts: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| (series[i].0, series[i].1.ln()))
        .collect();
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mt;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - icept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Some(RateEstimate {
        alpha_hat: -slope,
        lambda_hat: slope.exp(),
        fit_window: [idx[0], idx[idx.len() - 1] + 1],
        residual,
    })
}

/// Raw result of one method.
#[derive(Debug, Clone)]
pub enum RunOutput {
    Hybrid(TrajectoryRecord),
    Discrete(DiscreteRun),
    Baseline(BaselineRun),
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub name: String,
    pub method: ResolvedMethod,
    pub output: RunOutput,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunDiagnostics {
    Hybrid {
        termination: Termination,
        samples: usize,
        jumps: usize,
        min_inter_jump: Option<f64>,
        /// Smallest analytic bound over the observed jumps.
        zeno_lower_bound: Option<f64>,
        zeno_violations: usize,
        max_sigma_drift: Option<f64>,
        /// Largest `f_gap(t) / (exp(-alpha t) f_gap(0))`.
        max_envelope_ratio: Option<f64>,
        envelope_ok: Option<bool>,
        final_gap: Option<f64>,
    },
    Discrete {
        termination: DiscreteTermination,
        iterations: usize,
        flow_steps: usize,
        jump_steps: usize,
        forced_jumps: usize,
        lambda: f64,
        max_per_step_ratio: Option<f64>,
        final_gap: Option<f64>,
    },
    Baseline {
        termination: BaselineTermination,
        samples: usize,
        restarts: usize,
        max_relative_rise: Option<f64>,
        final_gap: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub name: String,
    pub csv: String,
    pub method: ResolvedMethod,
    pub rate: Option<RateEstimate>,
    pub diagnostics: RunDiagnostics,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub problem: ProblemInfo,
    pub constants: Constants,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub k_max: usize,
    pub integrator: IntegratorSettings,
    pub methods: Vec<MethodSummary>,
}

/// Everything produced by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: Problem,
    pub x0: DVector<f64>,
    pub runs: Vec<MethodRun>,
    pub summary: Summary,
}

/// Per-method feasibility report, computed without running anything.
#[derive(Debug, Clone, Serialize)]
pub struct Feasibility {
    pub name: String,
    pub method: ResolvedMethod,
    pub violations: Vec<Violation>,
    pub zeno_lower_bound: Option<f64>,
}

pub struct Prepared {
    pub problem: Problem,
    pub x0: DVector<f64>,
    pub methods: Vec<(String, ResolvedMethod)>,
}

/// Builds the problem and initial point and resolves the methods in `group`
/// (all methods when `None`).
pub fn prepare(config: &ExperimentConfig, group: Option<MethodGroup>) -> Result<Prepared> {
    config.check()?;
    let problem = config.problem.build()?;
    let x0 = config.initial_point(problem.dim())?;
    let methods = config
        .methods
        .iter()
        .filter(|m| group.map_or(true, |g| m.kind.group() == g))
        .map(|m| Ok((m.name(), resolve(&m.kind, problem.constants())?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        problem,
        x0,
        methods,
    })
}

pub fn feasibility(prepared: &Prepared) -> Vec<Feasibility> {
    let c = prepared.problem.constants();
    let g0 = prepared.problem.gradient(&prepared.x0).norm();
    prepared
        .methods
        .iter()
        .map(|(name, m)| {
            let violations = m.violations(c);
            let zeno = if violations.is_empty() {
                m.zeno_bound(c, g0).and_then(|r| r.ok())
            } else {
                None
            };
            Feasibility {
                name: name.clone(),
                method: *m,
                violations,
                zeno_lower_bound: zeno,
            }
        })
        .collect()
}

fn run_one(
    problem: &Problem,
    x0: &DVector<f64>,
    method: &ResolvedMethod,
    config: &ExperimentConfig,
) -> Result<RunOutput> {
    let s = &config.integrator;
    Ok(match method {
        ResolvedMethod::StructureI(p) => {
            RunOutput::Hybrid(simulate(problem, p, x0, config.t_end, s)?)
        }
        ResolvedMethod::StructureIi(p) => {
            RunOutput::Hybrid(simulate(problem, p, x0, config.t_end, s)?)
        }
        ResolvedMethod::Discrete {
            structure,
            alpha,
            params,
        } => RunOutput::Discrete(run_algorithm1(
            problem,
            *structure,
            params,
            *alpha,
            x0,
            config.k_max,
            s.gtol,
        )?),
        ResolvedMethod::Baseline(spec) => RunOutput::Baseline(run_baseline(
            problem,
            spec,
            x0,
            config.t_end,
            config.k_max,
            s,
        )?),
    })
}

fn fold_max(it: impl Iterator<Item = f64>) -> Option<f64> {
    it.fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

fn summarize(run: &MethodRun, config: &ExperimentConfig) -> MethodSummary {
    let floor = config.integrator.gtol.powi(2);
    let (rate, diagnostics) = match &run.output {
        RunOutput::Hybrid(rec) => {
            let alpha = match run.method {
                ResolvedMethod::StructureI(p) => p.alpha,
                ResolvedMethod::StructureIi(p) => p.alpha,
                _ => unreachable!("hybrid output from a hybrid method"),
            };
            let series: Vec<(f64, f64)> = rec
                .samples
                .iter()
                .filter_map(|s| s.f_gap.map(|g| (s.t, g)))
                .collect();
            let gap0 = rec.samples.first().and_then(|s| s.f_gap);
            let ratio = gap0.filter(|g| *g > 0.0).and_then(|g0| {
                fold_max(
                    rec.samples
                        .iter()
                        .filter_map(|s| s.f_gap.map(|g| g / ((-alpha * s.t).exp() * g0))),
                )
            });
            let zeno = rec
                .jumps
                .iter()
                .map(|j| j.zeno_lb_at_jump)
                .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))));
            (
                estimate_rate(&series, config.rate_window, floor),
                RunDiagnostics::Hybrid {
                    termination: rec.termination,
                    samples: rec.samples.len(),
                    jumps: rec.jumps.len(),
                    min_inter_jump: rec.min_inter_jump(),
                    zeno_lower_bound: zeno,
                    zeno_violations: rec.zeno_violations(),
                    max_sigma_drift: rec.max_sigma_drift(),
                    max_envelope_ratio: ratio,
                    envelope_ok: ratio.map(|r| r <= 1.0 + config.integrator.envelope_slack),
                    final_gap: rec.samples.last().and_then(|s| s.f_gap),
                },
            )
        }
        RunOutput::Discrete(d) => {
            let series: Vec<(f64, f64)> = d
                .iterates
                .iter()
                .filter_map(|it| it.f_gap.map(|g| (it.k as f64, g)))
                .collect();
            (
                estimate_rate(&series, config.rate_window, floor),
                RunDiagnostics::Discrete {
                    termination: d.termination,
                    iterations: d.iterations(),
                    flow_steps: d.flow_steps(),
                    jump_steps: d.jump_steps(),
                    forced_jumps: d.forced_jumps,
                    lambda: d.lambda,
                    max_per_step_ratio: fold_max(
                        d.iterates.iter().filter_map(|it| it.per_step_ratio),
                    ),
                    final_gap: d.iterates.last().and_then(|it| it.f_gap),
                },
            )
        }
        RunOutput::Baseline(b) => {
            let series: Vec<(f64, f64)> = b
                .samples
                .iter()
                .filter_map(|s| s.f_gap.map(|g| (s.at, g)))
                .collect();
            (
                estimate_rate(&series, config.rate_window, floor),
                RunDiagnostics::Baseline {
                    termination: b.termination,
                    samples: b.samples.len(),
                    restarts: b.restarts,
                    max_relative_rise: b.max_relative_rise(),
                    final_gap: b.samples.last().and_then(|s| s.f_gap),
                },
            )
        }
    };
    MethodSummary {
        name: run.name.clone(),
        csv: format!("{}.csv", run.name),
        method: run.method,
        rate,
        diagnostics,
    }
}

/// Validates every selected method, then runs them in parallel.
/// Infeasible parameters abort before any run starts.
pub fn run_experiment(config: &ExperimentConfig, group: Option<MethodGroup>) -> Result<Experiment> {
    let prepared = prepare(config, group)?;
    let violations: Vec<Violation> = feasibility(&prepared)
        .into_iter()
        .flat_map(|f| f.violations)
        .collect();
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations));
    }
    let Prepared {
        problem,
        x0,
        methods,
    } = prepared;
    let outputs: Vec<Result<RunOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = methods
            .iter()
            .map(|(_, m)| {
                let (problem, x0) = (&problem, &x0);
                scope.spawn(move || run_one(problem, x0, m, config))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Runtime("method run panicked".into())))
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(methods.len());
    for ((name, method), out) in methods.into_iter().zip(outputs) {
        let output = out.map_err(|e| match e {
            Error::Infeasible(v) => Error::Infeasible(v),
            other => Error::Runtime(format!("{name}: {other}")),
        })?;
        runs.push(MethodRun {
            name,
            method,
            output,
        });
    }
    let summary = Summary {
        problem: problem.info().clone(),
        constants: *problem.constants(),
        x0: x0.iter().copied().collect(),
        t_end: config.t_end,
        k_max: config.k_max,
        integrator: config.integrator,
        methods: runs.iter().map(|r| summarize(r, config)).collect(),
    };
    Ok(Experiment {
        problem,
        x0,
        runs,
        summary,
    })
}

/// Runs the experiment and writes its artifacts into `out_dir`
/// (or the config's `out_dir`, or `./out`). Returns the written paths.
pub fn run_config(
    config: &ExperimentConfig,
    group: Option<MethodGroup>,
    out_dir: Option<&Path>,
) -> Result<(Experiment, Vec<PathBuf>)> {
    let exp = run_experiment(config, group)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let paths = write_artifacts(&exp, config, &dir)?;
    Ok((exp, paths))
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn hybrid_csv(rec: &TrajectoryRecord) -> String {
    let mut out = String::from("t,f_gap,u,sigma,grad_norm,jump_flag\n");
    for s in &rec.samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            num(s.t),
            opt(s.f_gap),
            opt(s.u),
            opt(s.sigma),
            num(s.grad_norm),
            u8::from(s.jump)
        );
    }
    out
}

pub fn discrete_csv(run: &DiscreteRun) -> String {
    let mut out = String::from("k,f_gap,mode,per_step_ratio\n");
    for it in &run.iterates {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            it.k,
            opt(it.f_gap),
            it.mode.as_str(),
            opt(it.per_step_ratio)
        );
    }
    out
}

pub fn baseline_csv(run: &BaselineRun) -> String {
    let continuous = run.spec.is_continuous();
    let mut out = String::from(if continuous {
        "t,f_gap,restart_flag\n"
    } else {
        "k,f_gap,restart_flag\n"
    });
    for s in &run.samples {
        let at = if continuous {
            num(s.at)
        } else {
            format!("{}", s.at as u64)
        };
        let _ = writeln!(out, "{},{},{}", at, opt(s.f_gap), u8::from(s.restart));
    }
    out
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    name: &'a str,
    method: &'a ResolvedMethod,
    problem: &'a ProblemInfo,
    constants: &'a Constants,
    x0: &'a [f64],
    t_end: f64,
    k_max: usize,
    integrator: &'a IntegratorSettings,
    diagnostics: &'a RunDiagnostics,
}

fn write_artifacts(
    exp: &Experiment,
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (run, summary) in exp.runs.iter().zip(&exp.summary.methods) {
        let csv = match &run.output {
            RunOutput::Hybrid(r) => hybrid_csv(r),
            RunOutput::Discrete(d) => discrete_csv(d),
            RunOutput::Baseline(b) => baseline_csv(b),
        };
        let csv_path = dir.join(format!("{}.csv", run.name));
        fs::write(&csv_path, csv)?;
        written.push(csv_path);
        let meta = RunMetadata {
            name: &run.name,
            method: &run.method,
            problem: &exp.summary.problem,
            constants: &exp.summary.constants,
            x0: &exp.summary.x0,
            t_end: config.t_end,
            k_max: config.k_max,
            integrator: &config.integrator,
            diagnostics: &summary.diagnostics,
        };
        let json_path = dir.join(format!("{}.json", run.name));
        fs::write(&json_path, to_json(&meta))?;
        written.push(json_path);
    }
    let summary_path = dir.join("summary.json");
    fs::write(&summary_path, to_json(&exp.summary))?;
    written.push(summary_path);
    Ok(written)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}

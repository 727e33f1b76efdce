use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hyflow_core::experiment::{
    feasibility, prepare, run_config, ExperimentConfig, MethodGroup, RunDiagnostics, Summary,
};
use hyflow_core::Error;

const DEFAULT_CONFIG: &str = include_str!("../../../configs/lmse_compare.json");

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

/// Hybrid exponentially convergent gradient flows: simulation and
/// comparison harness.
#[derive(Debug, Parser)]
#[command(name = "hyflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; the bundled LMSE comparison when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the generated LMSE instance.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Horizon of continuous-time runs.
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
    /// Iteration budget of discrete runs.
    #[arg(long = "k-max", global = true)]
    k_max: Option<usize>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Continuous hybrid structures.
    Simulate,
    /// Forward-Euler hybrid method.
    Discrete,
    /// Reference methods.
    Baseline,
    /// Check parameter conditions without running anything.
    Validate,
    /// Print inter-jump lower bounds of the hybrid methods.
    Zeno,
    /// Every method in the config.
    Compare,
}

enum Failure {
    Config(String),
    Infeasible(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Infeasible(_) => EXIT_INFEASIBLE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Infeasible(m) | Failure::Runtime(m) => m,
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path),
        None => ExperimentConfig::from_json(DEFAULT_CONFIG),
    }
    .map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    if let Some(t) = common.t_end {
        config.t_end = t;
    }
    if let Some(k) = common.k_max {
        config.k_max = k;
    }
    Ok(config)
}

/// Checks every selected method and renders the violations, if any.
fn check_feasible(
    config: &ExperimentConfig,
    group: Option<MethodGroup>,
) -> Result<Vec<String>, Failure> {
    let prepared = prepare(config, group).map_err(|e| Failure::Config(e.to_string()))?;
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for f in feasibility(&prepared) {
        if f.violations.is_empty() {
            let zeno = f
                .zeno_lower_bound
                .map(|z| format!(", inter-jump bound {z:.6e}"))
                .unwrap_or_default();
            ok.push(format!("{}: feasible{zeno}", f.name));
        } else {
            for v in &f.violations {
                bad.push(format!("{}: {v}", f.name));
            }
        }
    }
    if bad.is_empty() {
        Ok(ok)
    } else {
        Err(Failure::Infeasible(bad.join("\n")))
    }
}

fn report(summary: &Summary) -> Vec<String> {
    summary
        .methods
        .iter()
        .map(|m| {
            let rate = m
                .rate
                .map(|r| format!("alpha_hat={:.4}, lambda_hat={:.6}", r.alpha_hat, r.lambda_hat))
                .unwrap_or_else(|| "rate n/a".into());
            let detail = match &m.diagnostics {
                RunDiagnostics::Hybrid { termination, jumps, min_inter_jump, zeno_lower_bound, envelope_ok, .. } => {
                    format!(
                        "{termination:?}, jumps={jumps}, min inter-jump={}, bound={}, envelope_ok={}",
                        fmt_opt(*min_inter_jump),
                        fmt_opt(*zeno_lower_bound),
                        envelope_ok.map_or("n/a".into(), |b| b.to_string())
                    )
                }
                RunDiagnostics::Discrete { termination, flow_steps, jump_steps, lambda, final_gap, .. } => format!(
                    "{termination:?}, flow={flow_steps}, jump={jump_steps}, lambda={lambda:.6}, final gap={}",
                    fmt_opt(*final_gap)
                ),
                RunDiagnostics::Baseline { termination, restarts, final_gap, .. } => {
                    format!("{termination:?}, restarts={restarts}, final gap={}", fmt_opt(*final_gap))
                }
            };
            format!("{}: {detail}; {rate}", m.name)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3e}"))
}

fn run(cli: &Cli) -> Result<Vec<String>, Failure> {
    let config = load_config(&cli.common)?;
    let group = match cli.command {
        Command::Simulate => Some(MethodGroup::Hybrid),
        Command::Discrete => Some(MethodGroup::Discrete),
        Command::Baseline => Some(MethodGroup::Baseline),
        Command::Validate => return check_feasible(&config, None),
        Command::Zeno => return check_feasible(&config, Some(MethodGroup::Hybrid)),
        Command::Compare => None,
    };
    check_feasible(&config, group)?;
    let (exp, paths) =
        run_config(&config, group, cli.common.out.as_deref()).map_err(|e| match e {
            Error::Infeasible(_) => Failure::Infeasible(e.to_string()),
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        })?;
    let mut lines = report(&exp.summary);
    lines.extend(paths.iter().map(|p| format!("wrote {}", p.display())));
    Ok(lines)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(lines) => {
            if !cli.common.quiet {
                for l in lines {
                    println!("{l}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

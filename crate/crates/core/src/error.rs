use thiserror::Error;

use crate::validate::Violation;

/// Construction and orchestration errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible parameters: {}", format_violations(.0))]
    Infeasible(Vec<Violation>),

    #[error("config error: {0}")]
    Config(String),

    #[error("run failed: {0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Signals raised while evaluating a state-dependent feedback law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("feedback denominator fell below the numerical floor")]
    DegenerateDenominator,
    #[error("gradient vanished: stationary point reached")]
    Converged,
}

pub type Result<T> = std::result::Result<T, Error>;

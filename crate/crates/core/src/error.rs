//! Error type shared by every module of the crate.

use thiserror::Error;

use crate::polycg_solver::SolverTrace;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, HopsError>;

#[derive(Debug, Error)]
pub enum HopsError {
    #[error("{context}: dimension mismatch (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at index {index} in {context}")]
    NonFinite { context: &'static str, index: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("data leakage: {0}")]
    Leakage(String),

    #[error("solver diverged at iteration {iteration}: non-finite iterate")]
    Divergence {
        iteration: usize,
        trace: Box<SolverTrace>,
    },

    #[error("input range: {0}")]
    InputRange(String),

    #[error("insufficient history: need {needed} hours before the first usable row, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("missing weather values at {}", .0.join(", "))]
    MissingWeather(Vec<String>),

    #[error("ingestion: {0}")]
    Ingestion(String),

    #[error("zero actual value at index {0}; MAPE undefined")]
    ZeroActual(usize),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HopsError {
    /// Module-qualified machine-readable code, used in CLI error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            HopsError::DimensionMismatch { .. } => "numerics.dimension_mismatch",
            HopsError::NonFinite { .. } => "numerics.non_finite",
            HopsError::NumericalFailure(_) => "numerics.failure",
            HopsError::InvalidParameter(_) => "params.invalid",
            HopsError::Leakage(_) => "dim_reduction.leakage",
            HopsError::Divergence { .. } => "polycg_solver.divergence",
            HopsError::InputRange(_) => "features.input_range",
            HopsError::InsufficientHistory { .. } => "features.insufficient_history",
            HopsError::MissingWeather(_) => "features.missing_weather",
            HopsError::Ingestion(_) => "ingestion.invalid",
            HopsError::ZeroActual(_) => "evaluation.zero_actual",
            HopsError::ModelFormat(_) => "poly_model.format",
            HopsError::Config(_) => "cli.config",
            HopsError::Io(_) => "io",
            HopsError::Csv(_) => "io.csv",
            HopsError::Json(_) => "io.json",
        }
    }
}

pub(crate) fn check_dims(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(HopsError::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Prefixes an I/O error with the path it concerns.
pub(crate) fn at_path(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HopsError + '_ {
    move |e| HopsError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

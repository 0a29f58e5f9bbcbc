use serde::Serialize;
use thiserror::Error;

use crate::prefgen::ParseError;
use crate::sim::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single rejected configuration field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join_fields(.0))]
    InvalidConfig(Vec<FieldError>),

    #[error("action rejected: {}", join_violations(.0))]
    InvalidAction(Vec<Violation>),

    #[error("stochastic jam mode requires an rng seed")]
    MissingSeed,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("fine-tuning subset is empty (top fraction {fraction} of {shifts} shifts)")]
    EmptySubset { fraction: f64, shifts: usize },

    #[error("undefined likelihood: {0}")]
    UndefinedLikelihood(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("bridge: {0}")]
    Bridge(String),

    #[error("mean replay output is zero")]
    ZeroReplayMean,

    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("calibration search space is empty")]
    EmptySearchSpace,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("policy aborted the episode at tick {tick}: {reason}")]
    EpisodeAborted { tick: u32, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numeric failures (divergence, degenerate statistics) as opposed to bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::ZeroReplayMean | Error::TooFewPoints { .. }
        )
    }
}

fn join_fields(fields: &[FieldError]) -> String {
    fields
        .iter()
        .map(|f| format!("{}: {}", f.field, f.message))
        .collect::<Vec<_>>()
        .join("; ")
}

fn join_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

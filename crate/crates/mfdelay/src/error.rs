//! Error type shared by every module of the crate.

use std::fmt;

use thiserror::Error;

/// Which coefficient matrix of a backward-pass stage failed to invert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    /// The mean-field system matrix Υ (acts on E v).
    Upsilon,
    /// The innovation-level matrix Ῡ (acts on the delayed-information parts of v).
    UpsilonBar,
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Upsilon => write!(f, "Upsilon"),
            Coefficient::UpsilonBar => write!(f, "UpsilonBar"),
        }
    }
}

/// Errors raised while loading, solving, simulating or verifying a problem.
#[derive(Debug, Error)]
pub enum Error {
    /// The configuration document does not follow the schema.
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    /// A matrix or vector has the wrong shape.
    #[error("dimension mismatch for `{name}`: expected {expected}, found {found}")]
    Dimension {
        name: String,
        expected: String,
        found: String,
    },

    /// A weight matrix is asymmetric beyond the symmetrization tolerance.
    #[error("`{name}` is not symmetric (relative asymmetry {relative:.3e})")]
    Asymmetric { name: String, relative: f64 },

    /// The problem violates a hard validity requirement.
    #[error("invalid problem: {0}")]
    Invalid(String),

    /// A stage coefficient matrix is numerically singular; the control problem
    /// has no unique solution.
    #[error("unsolvable at tau={tau}, level {level}: {which} has reciprocal condition number {rcond:.3e}")]
    Solvability {
        tau: usize,
        level: usize,
        which: Coefficient,
        rcond: f64,
    },

    /// An index argument is outside its admissible range.
    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    /// `builtin_example` was asked for a name it does not know.
    #[error("unknown built-in example `{0}` (known: sec5, sec5-long)")]
    UnknownExample(String),

    /// A statistic was requested from an empty batch.
    #[error("empty batch")]
    EmptyBatch,

    /// A trajectory lacks the records a verifier needs.
    #[error("history incomplete: {0}")]
    MissingHistory(String),

    /// The brute-force oracle would exceed its size budget.
    #[error("oracle instance too large: {params} parameters over {paths} noise paths (limit {limit})")]
    TooLarge { params: usize, paths: usize, limit: usize },

    /// The oracle's normal equations are singular.
    #[error("oracle normal equations are singular (reciprocal condition number {rcond:.3e})")]
    OracleSingular { rcond: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

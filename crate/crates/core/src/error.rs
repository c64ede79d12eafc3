//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by sample ingestion, estimation, and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("non-finite entry in {block} at row {row}, column {column}")]
    NonFinite {
        block: &'static str,
        row: usize,
        column: usize,
    },

    #[error("invalid sample: {reason}")]
    InvalidSample { reason: String },

    #[error("invalid weights: {reason}")]
    InvalidWeights { reason: String },

    #[error(
        "{matrix} is numerically singular (reciprocal condition estimate {rcond:.3e} < {limit:.0e})"
    )]
    Singular {
        matrix: String,
        rcond: f64,
        limit: f64,
    },

    #[error("{matrix} is not positive definite (eigenvalue {index} is {value:.6e})")]
    NotPositiveDefinite {
        matrix: String,
        index: usize,
        value: f64,
    },

    #[error("{matrix} is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { matrix: String, asymmetry: f64 },

    #[error("csv error at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("monotone pattern violation at line {line}: {reason}")]
    Pattern { line: usize, reason: String },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    #[error("moment estimation failed: {reason}")]
    MomentEstimation { reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

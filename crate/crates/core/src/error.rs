//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, synthesis, and simulation.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("inconsistent model dimensions: {0}")]
    BadModel(String),

    #[error("no equilibrium found after {iterations} iterations (last residual {residual:.3e})")]
    NoEquilibrium { iterations: usize, residual: f64 },

    #[error("equilibrium input lies on or outside the input polytope (row {row}: margin {margin:.3e})")]
    InfeasibleEquilibrium { row: usize, margin: f64 },

    #[error("sector level h = {h} must be >= 1")]
    SectorLevelOutOfRange { h: f64 },

    #[error("sector radius check failed before assembly: channel {channel} needs {needed:.6} but certifies only {available:.6}")]
    SectorPreViolation {
        channel: usize,
        needed: f64,
        available: f64,
    },

    #[error("synthesis failed: {0}")]
    SynthesisFailed(String),

    #[error("degenerate stability certificate: {0}")]
    DegenerateCertificate(String),

    #[error("initial state outside the invariant set (membership value {membership:.6} > 1)")]
    StartOutsideInvariantSet { membership: f64 },

    #[error("non-finite {what} at epoch {epoch}")]
    NonFiniteTraining { what: &'static str, epoch: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("benchmark generation failed after {attempts} attempts: {reason}")]
    BenchmarkGeneration { attempts: usize, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

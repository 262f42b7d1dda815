use thiserror::Error;

/// Errors raised while building or analysing receiver models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("negative light intensity {0} lumen")]
    NegativeIntensity(f64),

    #[error("rate parameter `{name}` must be finite and nonnegative, got {value}")]
    NegativeRate { name: &'static str, value: f64 },

    #[error("time step must be positive and finite, got {0} s")]
    NonPositiveStep(f64),

    #[error(
        "euler step dt = {dt} s is outside the validity bound dt <= 1/max|Q_ii| = {bound} s \
         (entry P[{row}][{col}] = {value})"
    )]
    InvalidStep {
        dt: f64,
        bound: f64,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("stationary distribution is not unique; recurrent classes: {classes:?}")]
    NonUniqueStationary { classes: Vec<Vec<usize>> },

    #[error("single-receptor matrix is not a valid transition matrix: {0}")]
    InvalidSingle(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("observation has zero likelihood under both hypotheses")]
    InfeasibleObservation,

    #[error("posterior table would have {rows} rows (limit {limit})")]
    TableTooLarge { rows: u128, limit: u128 },

    #[error("exact error probability needs {count} observations (limit {limit})")]
    EnumerationTooLarge { count: u128, limit: u128 },

    #[error("exact error probability is unavailable under photon noise: {0}")]
    NoiseUnsupported(String),

    #[error("exact error probability assumes per-bit reset; carryover mode is simulation only")]
    CarryoverUnsupported,

    #[error("invalid parameter `{key}`: {message}")]
    InvalidParameter { key: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("division by a zero-valued operand")]
    DivisionByZero,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what}={value} lies outside [{lo}, {hi}]")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("CFL condition violated: alpha*dt = {alpha_dt} > da = {da} (dt = {dt})")]
    Cfl { alpha_dt: f64, dt: f64, da: f64 },

    #[error("training diverged at epoch {epoch}: total={total} pde={pde} ic={ic} bc={bc}")]
    Diverged {
        epoch: usize,
        total: f64,
        pde: f64,
        ic: f64,
        bc: f64,
        /// Parameters at the start of the failing epoch.
        params: Vec<f64>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed input {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    /// True for failures the CLI reports as numeric (CFL, non-finite, divergence).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DivisionByZero
                | Error::NonFinite { .. }
                | Error::Cfl { .. }
                | Error::Diverged { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

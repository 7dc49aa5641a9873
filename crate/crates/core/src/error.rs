use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid segment `{segment}`: {reason}")]
    InvalidSegment { segment: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical blow-up at step {step} (t = {time:.6} s): {detail}")]
    NumericalBlowUp { step: usize, time: f64, detail: String },

    #[error("CFL violated: dt = {dt:.3e} s exceeds the stable limit, need dt <= {required:.3e} s")]
    Cfl { dt: f64, required: f64 },

    #[error("pre-tuning did not converge after {iterations} iterations (max relative flow error {max_error:.4})")]
    PretuneNotConverged {
        iterations: usize,
        max_error: f64,
        last: Box<crate::lpm::LpmParameterSet>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalBlowUp { .. } | Error::Cfl { .. } | Error::PretuneNotConverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

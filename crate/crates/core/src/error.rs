use thiserror::Error;

/// Errors raised by the simulators, learners and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of the operation (joint limits, step sizes, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative solver stopped without meeting its tolerance.
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    /// A time integrator produced a non-finite state.
    #[error("integration produced a non-finite state at t = {time} s")]
    Integration { time: f64 },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}")]
    Training { epoch: usize },

    /// An optimization produced a non-finite objective.
    #[error("optimization produced a non-finite loss at iteration {iteration}")]
    Optimization { iteration: usize },

    /// The caller violated an API precondition (shapes, masks, counts).
    #[error("usage error: {0}")]
    Usage(String),

    /// The base did not reach its goal in time.
    #[error("navigation timed out at pose ({x:.3}, {y:.3}, {psi:.3})")]
    Navigation { x: f64, y: f64, psi: f64 },

    /// A persisted artifact could not be decoded.
    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}

use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its admissible domain.
    #[error("parameter domain: {0}")]
    ParameterDomain(String),

    /// A time, index or window falls outside the available data.
    #[error("range: {0}")]
    Range(String),

    /// A state became non-finite during integration.
    #[error("divergence at t = {time}: {context}")]
    Divergence { time: f64, context: String },

    /// Picard iteration hit the iteration cap; carries the residual history.
    #[error("no convergence after {iterations} iterations (last residual {last:e})", last = residuals.last().copied().unwrap_or(f64::NAN))]
    NonConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

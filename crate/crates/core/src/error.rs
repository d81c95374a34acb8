//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A model coefficient evaluated to NaN or infinity.
    #[error("non-finite coefficient evaluation at x = {x:?}")]
    Evaluation { x: Vec<f64> },

    /// A simulated path left the finite range. The estimator treats
    /// this as fatal; silently resampling a diverged path would bias
    /// the estimate.
    #[error("non-finite state in {leg} leg at step {step}")]
    Divergence { leg: &'static str, step: usize },

    /// Divergence inside the MLMC estimator, tagged with its origin.
    #[error("simulation failed at level {level}, replicate {replicate}: {source}")]
    LevelReplicate {
        level: usize,
        replicate: u64,
        #[source]
        source: Box<Error>,
    },

    /// A statistic required a non-degenerate sample.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad configuration rather than by the
    /// simulation itself; the CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidArgument(_))
    }
}

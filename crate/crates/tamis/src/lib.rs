//! Adaptive importance sampling with tempered, anti-truncated weights and
//! Gaussian mixture proposals.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`model`]: diagonal-covariance Gaussian mixtures (sampling, log-density,
//!   text serialization).
//! * [`targets`]: built-in target densities plus a line-protocol client for
//!   black-box targets running in a subprocess.
//! * [`weights`]: importance weights in log space, effective sample size,
//!   temperature calibration, anti-truncation and final-sample recycling.
//! * [`adapt`]: resampling schemes and the EM update of the mixture proposal.
//! * [`engine`]: the sampler loops (`run_tamis` and the `run_amis` /
//!   `run_npmc` baselines) with per-stage diagnostics.
//! * [`oracle`]: one-dimensional quadrature checks for the identities the
//!   sampler relies on (tempered normalizing constants, KL orderings, the
//!   anti-truncated mixture decomposition).
//!
//! All weight arithmetic is carried out in log space; the only places weights
//! are exponentiated are self-normalized estimates and resampling, both after
//! subtracting the running log-sum.

pub mod adapt;
pub mod engine;
pub mod math;
pub mod model;
pub mod oracle;
pub mod targets;
pub mod weights;

/// Errors shared by all modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("blackbox target: {0}")]
    Blackbox(String),

    #[error("target evaluation failed for particle {particle} at stage {stage}: {source}")]
    TargetEval {
        stage: usize,
        particle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors surfaced by the sampler, trainer and oracle machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite {quantity} at recorded operation {op_index}")]
    NonFinite {
        op_index: usize,
        quantity: &'static str,
    },

    #[error("non-finite state in leapfrog iteration {iteration}")]
    LeapfrogDiverged { iteration: usize },

    #[error("chain {chain} failed at step {step}: {source}")]
    ChainFailed {
        chain: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training aborted at iteration {iteration}: {source}")]
    TrainingFailed {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown target `{0}`")]
    UnknownTarget(String),

    #[error("no analytic entropy for target `{0}`")]
    NoAnalyticEntropy(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("entropy constraint violated: H(P0) = {entropy} <= h = {floor}")]
    EntropyConstraint { entropy: f64, floor: f64 },

    #[error(
        "rejection sampler acceptance rate {rate:.3e} below 1e-4 (check sampling box or bound)"
    )]
    RejectionRateTooLow { rate: f64 },

    #[error("importance weights degenerate: effective sample size {ess:.3} < 2")]
    DegenerateWeights { ess: f64 },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors surfaced by loss oracles, the 1-D fitting machinery and the
/// optimizer state machines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("batch must contain at least one index")]
    EmptyBatch,

    #[error("duplicate index {index} in batch (indices are drawn without replacement)")]
    DuplicateIndex { index: usize },

    #[error("batch index {index} out of range for dataset of {dataset_size} samples")]
    IndexOutOfRange { index: usize, dataset_size: usize },

    #[error("batch size {batch_size} exceeds dataset size {dataset_size}")]
    BatchTooLarge { batch_size: usize, dataset_size: usize },

    #[error("non-finite loss for sample {index}")]
    NonFiniteLoss { index: usize },

    #[error("non-finite gradient component {component}")]
    NonFiniteGradient { component: usize },

    #[error("zero-norm gradient: no descent direction (possibly converged)")]
    ZeroGradient,

    #[error("direction norm {norm} is not unit")]
    NonUnitDirection { norm: f64 },

    #[error("probe abscissae must be distinct and ascending (got {s0}, {s1}, {s2})")]
    BadAbscissae { s0: f64, s1: f64, s2: f64 },

    #[error("non-finite probe loss at s = {s}")]
    NonFiniteProbeLoss { s: f64 },

    #[error("nonpositive curvature a = {a}: parabola has no interior minimum")]
    NonpositiveCurvature { a: f64 },

    #[error("alpha = {alpha} outside the supported domain [1, 2)")]
    AlphaOutOfRange { alpha: f64 },

    #[error("non-finite parameter update at step {t}")]
    NonFiniteUpdate { t: u64 },

    #[error("divergence detected at step {t}: loss {loss:e} exceeds 1000x the initial loss")]
    Divergence { t: u64, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

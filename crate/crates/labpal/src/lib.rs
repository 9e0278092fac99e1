//! Large-batch parabolic-approximation line search (LABPAL) over
//! pluggable finite-sum loss oracles.
//!
//! The optimizer exploits two empirical properties of full-batch losses
//! along stochastic descent directions: they are locally parabolic, and
//! the trend of the optimal step size changes slowly. It therefore
//! estimates the full-batch loss at three points along the current
//! direction with a large batch accumulated over several inferences, fits
//! a parabola, derives a learning rate (or absolute update step) from the
//! minimizer with a deliberate overshoot factor, and reuses that value
//! for the next block of (N)SGD steps. A batch-size schedule and a noise
//! adaptation factor keep the gradient noise the hyperparameters were
//! tuned for roughly constant across batch sizes and dataset sizes.
//!
//! The crate also ships the reference baselines (SGD with momentum under
//! a piecewise-constant schedule, fixed-step NSGD) and the desk-scale
//! problems used as correctness oracles.

pub mod baseline;
mod error;
pub mod loss;
pub mod metrics;
pub mod optimizer;
pub mod parabola;
pub mod schedule;
pub mod sum;

pub use error::{Error, Result};
pub use loss::{
    make_mlp_classifier, make_stochastic_quadratic, normalize, Batch, BatchSampler,
    DatasetHandle, GradientVector, LossOracle, MlpClassifier, MlpSpec, ParameterVector,
    QuadraticSpec, StochasticQuadratic,
};
pub use metrics::{MetricsRecord, NullObserver, Phase, RunObserver, RunStats};
pub use optimizer::{run, LabpalConfig, LabpalState, LineSearchEvent, StepOutcome, Variant};
pub use parabola::{
    fit_parabola, mean_abs_fit_error, parabola_min, propose_step, wolfe_constant_from_alpha,
    FallbackReason, LineProbe, Parabola, StepProposal,
};
pub use schedule::{
    apply_noise_adaptation, noise_adaptation_factor, noise_scale, BatchSizeSchedule,
};

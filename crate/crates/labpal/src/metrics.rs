//! Per-step training telemetry and run-level counters.

use crate::loss::ParameterVector;
use crate::optimizer::LineSearchEvent;

/// Which half of the optimizer cycle a super-batch belonged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    LineSearch,
    SgdTraining,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::LineSearch => "line_search",
            Phase::SgdTraining => "sgd",
        }
    }
}

/// One row of training telemetry, emitted once per processed super-batch.
///
/// `full_batch_loss` and `val_accuracy` are cadence-gated and filled in
/// by the harness; the optimizer leaves them empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// Global step counter after this super-batch (steps count sampled
    /// inference batches, so `t` advances by `k` per record).
    pub t: u64,
    pub phase: Phase,
    /// Mean loss of this super-batch at the pre-update parameters.
    pub train_loss: f64,
    pub full_batch_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// Learning rate of the proposal in effect (0 before the first fit).
    pub learning_rate: f64,
    /// Update step of the proposal in effect (0 before the first fit).
    pub update_step: f64,
    /// Gradient norm of this super-batch (for probe-accumulation records,
    /// of the line's direction-defining super-batch).
    pub grad_norm: f64,
    /// Batch-size multiplier this super-batch was sampled with.
    pub k: u32,
    /// Whether the proposal in effect came from a fallback.
    pub fallback: bool,
}

/// Counters reported at the end of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    /// Parabola fits performed.
    pub line_searches: u64,
    /// Degenerate fits absorbed by reusing the previous proposal (or the
    /// maximal exploratory step).
    pub fallbacks: u64,
    /// Accepted proposals cut off by the maximal step size.
    pub clamps: u64,
    /// Super-batches processed; equals the number of metrics records.
    pub total_inferences: u64,
    /// Final value of the step counter; equals the sum of `k` over all
    /// records.
    pub t_final: u64,
    /// Updates skipped because the (momentum-blended) gradient had zero
    /// norm.
    pub skipped_updates: u64,
}

/// Receives telemetry while a run is in flight. All hooks are invoked
/// synchronously from the training loop.
pub trait RunObserver {
    /// Called after every processed super-batch.
    fn on_record(&mut self, _record: MetricsRecord, _theta: &ParameterVector) {}

    /// Called after every parabola fit.
    fn on_line_search(&mut self, _event: &LineSearchEvent<'_>) {}
}

/// Observer that discards everything.
pub struct NullObserver;

impl RunObserver for NullObserver {}

impl<F> RunObserver for F
where
    F: FnMut(MetricsRecord, &ParameterVector),
{
    fn on_record(&mut self, record: MetricsRecord, theta: &ParameterVector) {
        self(record, theta)
    }
}

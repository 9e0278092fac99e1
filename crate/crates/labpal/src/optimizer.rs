//! The two-phase optimizer: a large-batch parabolic line-search phase
//! estimating the full-batch loss along the current descent direction,
//! alternating with a training phase that reuses the derived learning
//! rate (SGD variant) or absolute update step (NSGD variant).
//!
//! Step accounting follows the "one step = one sampled inference batch"
//! convention: every processed super-batch advances `t` by its batch-size
//! multiplier `k(t)`, in both phases, and nothing else mutates `t`.

use crate::error::{Error, Result};
use crate::loss::{
    euclidean_norm, Batch, BatchSampler, GradientVector, LossOracle, ParameterVector,
};
use crate::metrics::{MetricsRecord, Phase, RunObserver, RunStats};
use crate::parabola::{fit_parabola, propose_step, LineProbe, Parabola, StepProposal};
use crate::schedule::BatchSizeSchedule;
use crate::sum::CompensatedSum;

/// Whether the training phase replays the learning rate (step scaled by
/// the current gradient) or the absolute update step (along the
/// normalized gradient).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Sgd,
    Nsgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabpalConfig {
    /// Samples accumulated for one parabola fit.
    pub approximation_batch_size: usize,
    /// Samples per inference.
    pub inference_batch_size: usize,
    /// Training steps between line searches.
    pub sgd_steps: u64,
    /// Overshoot factor applied to the fitted minimizer, in [1, 2).
    pub alpha: f64,
    pub t_max: u64,
    pub variant: Variant,
    /// Heavy-ball coefficient on the raw gradient, in [0, 1).
    pub momentum: f64,
    /// Upper bound on the absolute update step.
    pub max_step: f64,
    /// Abscissae the line loss is probed at; must start at 0 and ascend.
    pub probe_points: [f64; 3],
    pub schedule: BatchSizeSchedule,
}

impl Default for LabpalConfig {
    fn default() -> Self {
        Self {
            approximation_batch_size: 1280,
            inference_batch_size: 128,
            sgd_steps: 1000,
            alpha: 1.8,
            t_max: 150_000,
            variant: Variant::Sgd,
            momentum: 0.0,
            max_step: 1.0,
            probe_points: [0.0, 1e-4, 1e-2],
            schedule: BatchSizeSchedule::default(),
        }
    }
}

impl LabpalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inference_batch_size < 1 {
            return Err(Error::InvalidConfig(
                "inference batch size must be >= 1".into(),
            ));
        }
        if self.approximation_batch_size < self.inference_batch_size {
            return Err(Error::InvalidConfig(
                "approximation batch size must be >= inference batch size".into(),
            ));
        }
        if !(1.0..2.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} outside [1, 2)",
                self.alpha
            )));
        }
        if self.sgd_steps < 1 {
            return Err(Error::InvalidConfig("sgd_steps must be >= 1".into()));
        }
        if self.t_max < 1 {
            return Err(Error::InvalidConfig("t_max must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum = {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidConfig("max_step must be positive".into()));
        }
        let [p0, p1, p2] = self.probe_points;
        if p0 != 0.0 || !(p0 < p1 && p1 < p2) || !p2.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "probe points must be 0 < p1 < p2, got ({p0}, {p1}, {p2})"
            )));
        }
        Ok(())
    }
}

/// Everything produced by one parabola fit.
#[derive(Debug, Clone)]
pub struct FitRecord {
    /// 1-based index of the line search this fit concluded.
    pub cycle: u64,
    /// Step counter at fit time.
    pub t: u64,
    pub probe: LineProbe,
    pub parabola: Parabola,
    pub proposal: StepProposal,
    /// Gradient norm of the direction-defining super-batch.
    pub grad_norm: f64,
}

/// Borrowed view of a fit, handed to observers.
pub struct LineSearchEvent<'a> {
    pub fit: &'a FitRecord,
    pub origin: &'a ParameterVector,
    /// Unit descent direction (the negated normalized gradient).
    pub descent_direction: &'a [f64],
}

/// What one state-machine call did.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    /// A super-batch was processed.
    Sampled(MetricsRecord),
    /// The accumulated probe was fitted and the phase flipped; no samples
    /// were drawn.
    Fitted,
}

/// Mutable state of one training run.
#[derive(Debug)]
pub struct LabpalState {
    phase: Phase,
    t: u64,
    cycle: u64,
    sampled_batch_size: usize,
    performed_sgd_steps: u64,
    theta: ParameterVector,
    origin: ParameterVector,
    /// Unit descent direction of the current line (-g/||g||).
    direction: Vec<f64>,
    direction_grad_norm: f64,
    probe_sums: [CompensatedSum; 3],
    probe_sample_count: usize,
    probe_indices: Vec<usize>,
    current_proposal: Option<StepProposal>,
    momentum_buffer: Vec<f64>,
    last_fit: Option<FitRecord>,
    stats: RunStats,
    sampler: BatchSampler,
}

impl LabpalState {
    /// Sets up a run: snapshots the starting parameters, samples the
    /// first direction-defining super-batch and enters the line-search
    /// phase. Fails if the gradient at `theta0` has zero norm.
    pub fn init<O: LossOracle + ?Sized>(
        config: &LabpalConfig,
        oracle: &O,
        theta0: ParameterVector,
        seed: u64,
    ) -> Result<(Self, MetricsRecord)> {
        config.validate()?;
        oracle.check_dim(&theta0)?;
        if !theta0.all_finite() {
            return Err(Error::InvalidConfig(
                "initial parameters contain non-finite entries".into(),
            ));
        }
        if config.inference_batch_size > oracle.dataset().sample_count() {
            return Err(Error::BatchTooLarge {
                batch_size: config.inference_batch_size,
                dataset_size: oracle.dataset().sample_count(),
            });
        }
        let dim = theta0.dim();
        let mut state = Self {
            phase: Phase::LineSearch,
            t: 0,
            cycle: 0,
            sampled_batch_size: 0,
            performed_sgd_steps: 0,
            origin: theta0.clone(),
            theta: theta0,
            direction: vec![0.0; dim],
            direction_grad_norm: 0.0,
            probe_sums: [CompensatedSum::new(); 3],
            probe_sample_count: 0,
            probe_indices: Vec::new(),
            current_proposal: None,
            momentum_buffer: vec![0.0; dim],
            last_fit: None,
            stats: RunStats::default(),
            sampler: BatchSampler::new(oracle.dataset(), seed),
        };
        let record = state.begin_line_search(config, oracle)?;
        Ok((state, record))
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Completed line searches.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn theta(&self) -> &ParameterVector {
        &self.theta
    }

    pub fn origin(&self) -> &ParameterVector {
        &self.origin
    }

    pub fn descent_direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn direction_grad_norm(&self) -> f64 {
        self.direction_grad_norm
    }

    pub fn sampled_batch_size(&self) -> usize {
        self.sampled_batch_size
    }

    pub fn current_proposal(&self) -> Option<&StepProposal> {
        self.current_proposal.as_ref()
    }

    pub fn last_fit(&self) -> Option<&FitRecord> {
        self.last_fit.as_ref()
    }

    pub fn line_search_event(&self) -> Option<LineSearchEvent<'_>> {
        self.last_fit.as_ref().map(|fit| LineSearchEvent {
            fit,
            origin: &self.origin,
            descent_direction: &self.direction,
        })
    }

    /// Mean accumulated probe loss at probe point `index`.
    pub fn probe_mean(&self, index: usize) -> Option<f64> {
        (self.probe_sample_count > 0)
            .then(|| self.probe_sums[index].value() / self.probe_sample_count as f64)
    }

    /// Multiset of sample indices accumulated into the current probe.
    pub fn probe_indices(&self) -> &[usize] {
        &self.probe_indices
    }

    /// Counters so far, with `t_final` set to the current step.
    pub fn stats(&self) -> RunStats {
        self.finished_stats()
    }

    /// One inference batch's loss and gradient at `theta`.
    fn super_batch<O: LossOracle + ?Sized>(
        &mut self,
        config: &LabpalConfig,
        oracle: &O,
        k: u32,
    ) -> Result<(Vec<Batch>, f64, GradientVector)> {
        let mut batches = Vec::with_capacity(k as usize);
        let mut loss_acc = CompensatedSum::new();
        let mut grad_acc = vec![0.0; self.theta.dim()];
        for _ in 0..k {
            let batch = self.sampler.next_batch(config.inference_batch_size)?;
            let (loss, grad) = oracle.batch_loss_and_gradient(&self.theta, &batch)?;
            loss_acc.add(loss);
            for (acc, &g) in grad_acc.iter_mut().zip(grad.values()) {
                *acc += g;
            }
            batches.push(batch);
        }
        let scale = 1.0 / k as f64;
        for g in grad_acc.iter_mut() {
            *g *= scale;
        }
        Ok((
            batches,
            loss_acc.value() * scale,
            GradientVector::new(grad_acc),
        ))
    }

    /// Adds a super-batch's losses at the three probe abscissae to the
    /// accumulators. The same samples are reused for all three points so
    /// batch-selection noise cancels out of the fitted curvature.
    fn accumulate_probe<O: LossOracle + ?Sized>(
        &mut self,
        config: &LabpalConfig,
        oracle: &O,
        batches: &[Batch],
        loss_at_origin: f64,
    ) -> Result<()> {
        let size = config.inference_batch_size as f64;
        // s = 0 is the already-evaluated loss at the origin.
        self.probe_sums[0].add(loss_at_origin * size * batches.len() as f64);
        for (slot, &s) in config.probe_points.iter().enumerate().skip(1) {
            let shifted = self.origin.offset_along(&self.direction, s);
            for batch in batches {
                let loss = oracle.batch_loss(&shifted, batch)?;
                self.probe_sums[slot].add(loss * size);
            }
        }
        for batch in batches {
            self.probe_indices.extend_from_slice(batch.indices());
            self.probe_sample_count += batch.size();
        }
        Ok(())
    }

    /// Samples a fresh super-batch, makes its gradient the new line
    /// direction, snapshots the origin and seeds the probe accumulators
    /// with it. Every line search starts here.
    fn begin_line_search<O: LossOracle + ?Sized>(
        &mut self,
        config: &LabpalConfig,
        oracle: &O,
    ) -> Result<MetricsRecord> {
        let k = config.schedule.batch_factor(self.t, config.t_max);
        let (batches, loss, grad) = self.super_batch(config, oracle, k)?;
        if grad.norm() == 0.0 {
            return Err(Error::ZeroGradient);
        }
        self.origin = self.theta.clone();
        self.direction = grad.values().iter().map(|g| -g / grad.norm()).collect();
        self.direction_grad_norm = grad.norm();
        self.probe_sums = [CompensatedSum::new(); 3];
        self.probe_sample_count = 0;
        self.probe_indices.clear();
        self.accumulate_probe(config, oracle, &batches, loss)?;
        self.sampled_batch_size = batches.len() * config.inference_batch_size;
        self.performed_sgd_steps = 0;
        self.phase = Phase::LineSearch;
        self.t += k as u64;
        Ok(self.record(Phase::LineSearch, loss, grad.norm(), k))
    }

    /// Line-search phase: accumulate one more super-batch into the probe,
    /// or, once the approximation batch size is reached, fit the parabola
    /// and flip to the training phase.
    pub fn line_search_step<O: LossOracle + ?Sized>(
        &mut self,
        config: &LabpalConfig,
        oracle: &O,
    ) -> Result<StepOutcome> {
        assert_eq!(self.phase, Phase::LineSearch, "not in line-search phase");
        if self.sampled_batch_size < config.approximation_batch_size {
            let k = config.schedule.batch_factor(self.t, config.t_max);
            let (batches, loss) = self.probe_super_batch(config, oracle, k)?;
            self.accumulate_probe(config, oracle, &batches, loss)?;
            self.sampled_batch_size += batches.len() * config.inference_batch_size;
            self.t += k as u64;
            return Ok(StepOutcome::Sampled(self.record(
                Phase::LineSearch,
                loss,
                self.direction_grad_norm,
                k,
            )));
        }

        let count = self.probe_sample_count as f64;
        let points = [
            (config.probe_points[0], self.probe_sums[0].value() / count),
            (config.probe_points[1], self.probe_sums[1].value() / count),
            (config.probe_points[2], self.probe_sums[2].value() / count),
        ];
        let probe = LineProbe::new(points, self.probe_sample_count)?;
        let parabola = fit_parabola(&probe)?;
        let proposal = propose_step(
            &parabola,
            self.direction_grad_norm,
            config.alpha,
            config.max_step,
            self.current_proposal.as_ref(),
        );
        self.stats.line_searches += 1;
        match proposal.fallback {
            Some(crate::parabola::FallbackReason::Clamped) => self.stats.clamps += 1,
            Some(_) => self.stats.fallbacks += 1,
            None => {}
        }
        self.cycle += 1;
        self.last_fit = Some(FitRecord {
            cycle: self.cycle,
            t: self.t,
            probe,
            parabola,
            proposal,
            grad_norm: self.direction_grad_norm,
        });
        self.current_proposal = Some(proposal);
        self.sampled_batch_size = 0;
        self.performed_sgd_steps = 0;
        self.phase = Phase::SgdTraining;
        Ok(StepOutcome::Fitted)
    }

    /// Loss-only super-batch for probe accumulation (no gradient needed).
    fn probe_super_batch<O: LossOracle + ?Sized>(
        &mut self,
        config: &LabpalConfig,
        oracle: &O,
        k: u32,
    ) -> Result<(Vec<Batch>, f64)> {
        let mut batches = Vec::with_capacity(k as usize);
        let mut loss_acc = CompensatedSum::new();
        for _ in 0..k {
            let batch = self.sampler.next_batch(config.inference_batch_size)?;
            loss_acc.add(oracle.batch_loss(&self.theta, &batch)?);
            batches.push(batch);
        }
        Ok((batches, loss_acc.value() / k as f64))
    }

    /// Training phase: one (N)SGD update with the reused proposal, or,
    /// once `sgd_steps` updates are done, a fresh direction super-batch
    /// that opens the next line search.
    pub fn sgd_training_step<O: LossOracle + ?Sized>(
        &mut self,
        config: &LabpalConfig,
        oracle: &O,
    ) -> Result<StepOutcome> {
        assert_eq!(self.phase, Phase::SgdTraining, "not in training phase");
        if self.performed_sgd_steps >= config.sgd_steps {
            return Ok(StepOutcome::Sampled(
                self.begin_line_search(config, oracle)?,
            ));
        }
        let k = config.schedule.batch_factor(self.t, config.t_max);
        let (_, loss, grad) = self.super_batch(config, oracle, k)?;
        let proposal = self
            .current_proposal
            .expect("training phase is only entered after a fit");

        for (v, &g) in self.momentum_buffer.iter_mut().zip(grad.values()) {
            *v = config.momentum * *v + g;
        }
        match config.variant {
            Variant::Sgd => {
                self.theta
                    .add_scaled(&self.momentum_buffer, -proposal.learning_rate);
            }
            Variant::Nsgd => {
                let norm = euclidean_norm(&self.momentum_buffer);
                if norm == 0.0 {
                    self.stats.skipped_updates += 1;
                    log::warn!(
                        "skipping update at t = {}: zero-norm momentum-blended gradient",
                        self.t
                    );
                } else {
                    let unit: Vec<f64> =
                        self.momentum_buffer.iter().map(|v| v / norm).collect();
                    self.theta.add_scaled(&unit, -proposal.update_step);
                }
            }
        }
        if !self.theta.all_finite() {
            return Err(Error::NonFiniteUpdate { t: self.t });
        }
        self.t += k as u64;
        self.performed_sgd_steps += 1;
        Ok(StepOutcome::Sampled(self.record(
            Phase::SgdTraining,
            loss,
            grad.norm(),
            k,
        )))
    }

    fn record(&mut self, phase: Phase, train_loss: f64, grad_norm: f64, k: u32) -> MetricsRecord {
        self.stats.total_inferences += 1;
        let (learning_rate, update_step, fallback) = match &self.current_proposal {
            Some(p) => (p.learning_rate, p.update_step, p.fallback.is_some()),
            None => (0.0, 0.0, false),
        };
        MetricsRecord {
            t: self.t,
            phase,
            train_loss,
            full_batch_loss: None,
            val_accuracy: None,
            learning_rate,
            update_step,
            grad_norm,
            k,
            fallback,
        }
    }

    fn finished_stats(&self) -> RunStats {
        let mut stats = self.stats.clone();
        stats.t_final = self.t;
        stats
    }
}

/// Drives the state machine until `t >= t_max`, invoking the observer
/// after every super-batch and every fit. Returns the final parameters
/// and the run counters.
pub fn run<O: LossOracle + ?Sized, Obs: RunObserver>(
    config: &LabpalConfig,
    oracle: &O,
    theta0: ParameterVector,
    seed: u64,
    observer: &mut Obs,
) -> Result<(ParameterVector, RunStats)> {
    let (mut state, first) = LabpalState::init(config, oracle, theta0, seed)?;
    observer.on_record(first, &state.theta);
    while state.t < config.t_max {
        let outcome = match state.phase {
            Phase::LineSearch => state.line_search_step(config, oracle)?,
            Phase::SgdTraining => state.sgd_training_step(config, oracle)?,
        };
        match outcome {
            StepOutcome::Sampled(record) => observer.on_record(record, &state.theta),
            StepOutcome::Fitted => {
                if let Some(event) = state.line_search_event() {
                    observer.on_line_search(&event);
                }
            }
        }
    }
    let stats = state.finished_stats();
    Ok((state.theta, stats))
}

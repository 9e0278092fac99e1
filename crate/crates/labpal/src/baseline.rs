//! Reference optimizers for comparison: SGD with momentum under a
//! piecewise-constant learning-rate schedule, and plain NSGD with a fixed
//! step size.

use crate::error::{Error, Result};
use crate::loss::{euclidean_norm, BatchSampler, LossOracle, ParameterVector};
use crate::metrics::{MetricsRecord, Phase, RunObserver, RunStats};

/// Loss growth beyond this factor over the initial loss aborts a
/// baseline run, so a grid search survives bad learning rates without
/// poisoning the comparison.
const DIVERGENCE_FACTOR: f64 = 1e3;

/// Piecewise-constant divisors applied to the base learning rate at
/// fractions of the training budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLrSchedule {
    /// `(threshold fraction of t_max, divisor)`; the divisor applies
    /// while `t <= floor(fraction * t_max)`.
    segments: Vec<(f64, f64)>,
    final_divisor: f64,
}

impl Default for PiecewiseLrSchedule {
    /// The published baseline schedule: lambda until half of training,
    /// lambda/10 until three quarters, lambda/100 afterwards.
    fn default() -> Self {
        Self {
            segments: vec![(0.5, 1.0), (0.75, 10.0)],
            final_divisor: 100.0,
        }
    }
}

impl PiecewiseLrSchedule {
    pub fn new(segments: Vec<(f64, f64)>, final_divisor: f64) -> Result<Self> {
        let mut last = 0.0;
        for &(fraction, divisor) in &segments {
            if !(fraction > last && fraction < 1.0) {
                return Err(Error::InvalidConfig(
                    "schedule fractions must be strictly increasing in (0, 1)".into(),
                ));
            }
            if divisor < 1.0 {
                return Err(Error::InvalidConfig("divisors must be >= 1".into()));
            }
            last = fraction;
        }
        if final_divisor < 1.0 {
            return Err(Error::InvalidConfig("divisors must be >= 1".into()));
        }
        Ok(Self {
            segments,
            final_divisor,
        })
    }

    /// Constant learning rate.
    pub fn constant() -> Self {
        Self {
            segments: Vec::new(),
            final_divisor: 1.0,
        }
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn final_divisor(&self) -> f64 {
        self.final_divisor
    }
}

/// Learning rate at step `t`: thresholds are inclusive,
/// `floor(fraction * t_max)`.
pub fn schedule_lr(schedule: &PiecewiseLrSchedule, lambda0: f64, t: u64, t_max: u64) -> f64 {
    for &(fraction, divisor) in &schedule.segments {
        if t <= (fraction * t_max as f64).floor() as u64 {
            return lambda0 / divisor;
        }
    }
    lambda0 / schedule.final_divisor
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub schedule: PiecewiseLrSchedule,
    pub batch_size: usize,
    pub t_max: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.0,
            schedule: PiecewiseLrSchedule::default(),
            batch_size: 128,
            t_max: 150_000,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size < 1 || self.t_max < 1 {
            return Err(Error::InvalidConfig(
                "batch size and t_max must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed-step normalized-gradient baseline (ablation partner of the
/// NSGD line-search variant).
#[derive(Debug, Clone, PartialEq)]
pub struct NsgdConfig {
    pub step_size: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub t_max: u64,
}

impl Default for NsgdConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            momentum: 0.0,
            batch_size: 128,
            t_max: 150_000,
        }
    }
}

impl NsgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig("step size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size < 1 || self.t_max < 1 {
            return Err(Error::InvalidConfig(
                "batch size and t_max must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Heavy-ball SGD: `v <- beta v + g`, `theta <- theta - lambda(t) v`, one
/// batch per step. Aborts with a divergence error once the batch loss
/// exceeds 1000x its initial value or turns non-finite.
pub fn sgd_run<O: LossOracle + ?Sized, Obs: RunObserver>(
    config: &SgdConfig,
    oracle: &O,
    theta0: ParameterVector,
    seed: u64,
    observer: &mut Obs,
) -> Result<(ParameterVector, RunStats)> {
    config.validate()?;
    oracle.check_dim(&theta0)?;
    let mut theta = theta0;
    let mut sampler = BatchSampler::new(oracle.dataset(), seed);
    let mut velocity = vec![0.0; theta.dim()];
    let mut stats = RunStats::default();
    let mut initial_loss: Option<f64> = None;
    let mut t: u64 = 0;
    while t < config.t_max {
        let batch = sampler.next_batch(config.batch_size)?;
        let (loss, grad) = oracle.batch_loss_and_gradient(&theta, &batch)?;
        let reference = *initial_loss.get_or_insert(loss.abs().max(1e-12));
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * reference {
            return Err(Error::Divergence { t, loss });
        }
        let lambda = schedule_lr(&config.schedule, config.learning_rate, t, config.t_max);
        for (v, &g) in velocity.iter_mut().zip(grad.values()) {
            *v = config.momentum * *v + g;
        }
        theta.add_scaled(&velocity, -lambda);
        if !theta.all_finite() {
            return Err(Error::NonFiniteUpdate { t });
        }
        t += 1;
        stats.total_inferences += 1;
        observer.on_record(
            MetricsRecord {
                t,
                phase: Phase::SgdTraining,
                train_loss: loss,
                full_batch_loss: None,
                val_accuracy: None,
                learning_rate: lambda,
                update_step: lambda * euclidean_norm(&velocity),
                grad_norm: grad.norm(),
                k: 1,
                fallback: false,
            },
            &theta,
        );
    }
    stats.t_final = t;
    Ok((theta, stats))
}

/// Normalized-gradient descent with a fixed absolute step.
pub fn nsgd_run<O: LossOracle + ?Sized, Obs: RunObserver>(
    config: &NsgdConfig,
    oracle: &O,
    theta0: ParameterVector,
    seed: u64,
    observer: &mut Obs,
) -> Result<(ParameterVector, RunStats)> {
    config.validate()?;
    oracle.check_dim(&theta0)?;
    let mut theta = theta0;
    let mut sampler = BatchSampler::new(oracle.dataset(), seed);
    let mut velocity = vec![0.0; theta.dim()];
    let mut stats = RunStats::default();
    let mut initial_loss: Option<f64> = None;
    let mut t: u64 = 0;
    while t < config.t_max {
        let batch = sampler.next_batch(config.batch_size)?;
        let (loss, grad) = oracle.batch_loss_and_gradient(&theta, &batch)?;
        let reference = *initial_loss.get_or_insert(loss.abs().max(1e-12));
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * reference {
            return Err(Error::Divergence { t, loss });
        }
        for (v, &g) in velocity.iter_mut().zip(grad.values()) {
            *v = config.momentum * *v + g;
        }
        let norm = euclidean_norm(&velocity);
        if norm == 0.0 {
            stats.skipped_updates += 1;
        } else {
            let unit: Vec<f64> = velocity.iter().map(|v| v / norm).collect();
            theta.add_scaled(&unit, -config.step_size);
        }
        if !theta.all_finite() {
            return Err(Error::NonFiniteUpdate { t });
        }
        t += 1;
        stats.total_inferences += 1;
        observer.on_record(
            MetricsRecord {
                t,
                phase: Phase::SgdTraining,
                train_loss: loss,
                full_batch_loss: None,
                val_accuracy: None,
                learning_rate: if norm == 0.0 {
                    0.0
                } else {
                    config.step_size / norm
                },
                update_step: config.step_size,
                grad_norm: grad.norm(),
                k: 1,
                fallback: false,
            },
            &theta,
        );
    }
    stats.t_final = t;
    Ok((theta, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{QuadraticSpec, StochasticQuadratic};
    use crate::metrics::NullObserver;

    fn identity_quadratic(dim: usize, samples: usize) -> StochasticQuadratic {
        StochasticQuadratic::generate(&QuadraticSpec {
            dim,
            sample_count: samples,
            noise_magnitude: 0.0,
            seed: 2,
            eigenvalues: Some(vec![1.0; dim]),
            ..QuadraticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn schedule_boundaries() {
        let schedule = PiecewiseLrSchedule::default();
        let t_max = 150_000;
        assert_eq!(schedule_lr(&schedule, 0.1, 0, t_max), 0.1);
        assert_eq!(schedule_lr(&schedule, 0.1, 75_000, t_max), 0.1);
        assert_eq!(schedule_lr(&schedule, 0.1, 75_001, t_max), 0.01);
        assert_eq!(schedule_lr(&schedule, 0.1, 112_500, t_max), 0.01);
        assert_eq!(schedule_lr(&schedule, 0.1, 112_501, t_max), 0.001);
    }

    #[test]
    fn schedule_is_nonincreasing() {
        let schedule = PiecewiseLrSchedule::default();
        let mut last = f64::INFINITY;
        for t in 0..=1000 {
            let lr = schedule_lr(&schedule, 1.0, t, 1000);
            assert!(lr <= last);
            last = lr;
        }
    }

    #[test]
    fn identity_hessian_newton_step_reaches_minimum() {
        let oracle = identity_quadratic(4, 6);
        let config = SgdConfig {
            learning_rate: 1.0,
            momentum: 0.0,
            schedule: PiecewiseLrSchedule::constant(),
            batch_size: 6,
            t_max: 1,
        };
        let (theta, _) = sgd_run(
            &config,
            &oracle,
            oracle.initial_parameters(),
            0,
            &mut NullObserver,
        )
        .unwrap();
        for (a, b) in theta.as_slice().iter().zip(oracle.theta_star().as_slice()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn unstable_learning_rate_triggers_divergence() {
        // L-smooth with L = 1 (identity Hessian); lambda = 4 > 2/L.
        let oracle = identity_quadratic(3, 8);
        let config = SgdConfig {
            learning_rate: 4.0,
            momentum: 0.0,
            schedule: PiecewiseLrSchedule::constant(),
            batch_size: 8,
            t_max: 100,
        };
        let err = sgd_run(
            &config,
            &oracle,
            oracle.initial_parameters(),
            0,
            &mut NullObserver,
        )
        .unwrap_err();
        match err {
            Error::Divergence { t, .. } => assert!(t < 100, "diverged only at t = {t}"),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn plain_sgd_update_is_theta_minus_lambda_g() {
        let oracle = identity_quadratic(3, 8);
        let theta0 = oracle.initial_parameters();
        let config = SgdConfig {
            learning_rate: 0.2,
            momentum: 0.0,
            schedule: PiecewiseLrSchedule::constant(),
            batch_size: 8,
            t_max: 1,
        };
        let (theta, _) = sgd_run(&config, &oracle, theta0.clone(), 0, &mut NullObserver).unwrap();
        let batch = crate::loss::Batch::full(oracle.dataset());
        let g = oracle.batch_gradient(&theta0, &batch).unwrap();
        for i in 0..3 {
            let expected = theta0[i] - 0.2 * g.values()[i];
            assert_eq!(theta[i].to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let oracle =
            crate::loss::make_stochastic_quadratic(4, 40, 1.0, 9).unwrap();
        let config = SgdConfig {
            learning_rate: 0.05,
            momentum: 0.4,
            schedule: PiecewiseLrSchedule::default(),
            batch_size: 8,
            t_max: 200,
        };
        let run = || {
            let mut trace: Vec<u64> = Vec::new();
            let (theta, _) = sgd_run(
                &config,
                &oracle,
                oracle.initial_parameters(),
                123,
                &mut |record: MetricsRecord, _: &ParameterVector| {
                    trace.push(record.train_loss.to_bits());
                },
            )
            .unwrap();
            (trace, theta)
        };
        let (trace_a, theta_a) = run();
        let (trace_b, theta_b) = run();
        assert_eq!(trace_a, trace_b);
        assert_eq!(theta_a.as_slice(), theta_b.as_slice());
    }

    #[test]
    fn nsgd_fixed_step_has_constant_update_norm() {
        let oracle = identity_quadratic(5, 10);
        let config = NsgdConfig {
            step_size: 0.03,
            momentum: 0.0,
            batch_size: 10,
            t_max: 5,
        };
        let mut last: Option<ParameterVector> = Some(oracle.initial_parameters());
        let mut steps = Vec::new();
        let (_, stats) = nsgd_run(
            &config,
            &oracle,
            oracle.initial_parameters(),
            0,
            &mut |_: MetricsRecord, theta: &ParameterVector| {
                if let Some(prev) = last.take() {
                    let d: f64 = prev
                        .as_slice()
                        .iter()
                        .zip(theta.as_slice())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    steps.push(d);
                }
                last = Some(theta.clone());
            },
        )
        .unwrap();
        assert_eq!(stats.t_final, 5);
        for d in steps {
            assert!((d - 0.03).abs() < 1e-12);
        }
    }
}

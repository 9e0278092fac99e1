//! Batch-size scheduling `k(t)`, noise-scale estimation and the noise
//! adaptation factor with its config-rewriting rule.

use crate::error::{Error, Result};
use crate::optimizer::LabpalConfig;

/// Batch size and dataset size the default hyperparameters were tuned
/// against; the noise adaptation factor is the ratio of a run's noise
/// scale to this reference configuration's.
pub const REFERENCE_BATCH_SIZE: usize = 128;
pub const REFERENCE_DATASET_SIZE: usize = 40_000;
pub const REFERENCE_T_MAX: u64 = 150_000;

/// Piecewise-constant multiplier schedule: the super-batch processed at
/// step `t` holds `k(t) * |B_i|` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSizeSchedule {
    /// `(threshold fraction of t_max, multiplier)` pairs; the multiplier
    /// applies while `t <= floor(fraction * t_max)`.
    segments: Vec<(f64, u32)>,
    /// Multiplier once `t` is past every threshold.
    final_multiplier: u32,
}

impl Default for BatchSizeSchedule {
    /// The published schedule: 1 until half of training, 2 until three
    /// quarters, 4 afterwards.
    fn default() -> Self {
        Self {
            segments: vec![(0.5, 1), (0.75, 2)],
            final_multiplier: 4,
        }
    }
}

impl BatchSizeSchedule {
    pub fn new(segments: Vec<(f64, u32)>, final_multiplier: u32) -> Result<Self> {
        let mut last_fraction = 0.0;
        let mut last_multiplier = 0;
        for &(fraction, multiplier) in &segments {
            if !(fraction > last_fraction && fraction < 1.0) {
                return Err(Error::InvalidConfig(
                    "schedule fractions must be strictly increasing in (0, 1)".into(),
                ));
            }
            if multiplier == 0 || multiplier < last_multiplier {
                return Err(Error::InvalidConfig(
                    "schedule multipliers must be positive and nondecreasing".into(),
                ));
            }
            last_fraction = fraction;
            last_multiplier = multiplier;
        }
        if final_multiplier == 0 || final_multiplier < last_multiplier {
            return Err(Error::InvalidConfig(
                "final multiplier must be positive and nondecreasing".into(),
            ));
        }
        Ok(Self {
            segments,
            final_multiplier,
        })
    }

    /// Constant multiplier (used by the ground-truth replay preset).
    pub fn constant(multiplier: u32) -> Self {
        Self {
            segments: Vec::new(),
            final_multiplier: multiplier,
        }
    }

    pub fn segments(&self) -> &[(f64, u32)] {
        &self.segments
    }

    pub fn final_multiplier(&self) -> u32 {
        self.final_multiplier
    }

    /// `k(t)`: thresholds are inclusive, `floor(fraction * t_max)`.
    pub fn batch_factor(&self, t: u64, t_max: u64) -> u32 {
        for &(fraction, multiplier) in &self.segments {
            if t <= (fraction * t_max as f64).floor() as u64 {
                return multiplier;
            }
        }
        self.final_multiplier
    }

    /// Largest multiplier the schedule can return.
    pub fn max_multiplier(&self) -> u32 {
        self.final_multiplier
    }

    /// Scales every multiplier by `epsilon`, rounding up to an integer of
    /// at least 1. Rounding up keeps the effective noise at or below the
    /// intended level.
    pub fn scaled(&self, epsilon: f64) -> Self {
        let scale = |m: u32| -> u32 {
            let x = m as f64 * epsilon;
            // Guard against float fuzz pushing an exact integer over the
            // next ceiling.
            let guarded = x - 1e-9 * x.abs().max(1.0);
            (guarded.ceil().max(1.0)) as u32
        };
        Self {
            segments: self
                .segments
                .iter()
                .map(|&(f, m)| (f, scale(m)))
                .collect(),
            final_multiplier: scale(self.final_multiplier),
        }
    }
}

/// Magnitude proxy for the random gradient fluctuations of mini-batch
/// training: `nu = lambda |D| / |B|`. Exposed for diagnostics only; the
/// optimizer never feeds it back into the learning rate.
pub fn noise_scale(lambda: f64, dataset_size: usize, batch_size: usize) -> f64 {
    assert!(lambda > 0.0 && dataset_size > 0 && batch_size > 0);
    lambda * dataset_size as f64 / batch_size as f64
}

/// Ratio of a run's noise scale to the reference configuration's:
/// `epsilon = (128 / |B_new|) * (|D_new| / 40000)`.
pub fn noise_adaptation_factor(new_batch: usize, new_dataset_size: usize) -> f64 {
    assert!(new_batch > 0 && new_dataset_size > 0);
    (REFERENCE_BATCH_SIZE as f64 / new_batch as f64)
        * (new_dataset_size as f64 / REFERENCE_DATASET_SIZE as f64)
}

/// Rewrites a config for a different noise level: training steps scale to
/// `round(t_max * epsilon)` and every schedule multiplier scales by
/// `epsilon` (rounded up to an integer >= 1). The inference batch size is
/// whatever the run actually uses; all other fields are unchanged.
pub fn apply_noise_adaptation(config: &LabpalConfig, epsilon: f64) -> Result<LabpalConfig> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise adaptation factor must be positive, got {epsilon}"
        )));
    }
    let mut adapted = config.clone();
    adapted.t_max = ((config.t_max as f64 * epsilon).round() as u64).max(1);
    adapted.schedule = config.schedule.scaled(epsilon);
    Ok(adapted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_schedule_boundaries() {
        let schedule = BatchSizeSchedule::default();
        let t_max = 150_000;
        assert_eq!(schedule.batch_factor(0, t_max), 1);
        assert_eq!(schedule.batch_factor(75_000, t_max), 1);
        assert_eq!(schedule.batch_factor(75_001, t_max), 2);
        assert_eq!(schedule.batch_factor(112_500, t_max), 2);
        assert_eq!(schedule.batch_factor(112_501, t_max), 4);
    }

    #[test]
    fn tiny_t_max_floor_arithmetic() {
        let schedule = BatchSizeSchedule::default();
        assert_eq!(schedule.batch_factor(1, 3), 1);
        assert_eq!(schedule.batch_factor(2, 3), 2);
        assert_eq!(schedule.batch_factor(3, 3), 4);
    }

    #[test]
    fn schedule_is_piecewise_constant_between_breakpoints() {
        let schedule = BatchSizeSchedule::default();
        let t_max = 10_000;
        let mut changes = Vec::new();
        for t in 1..=t_max {
            if schedule.batch_factor(t, t_max) != schedule.batch_factor(t - 1, t_max) {
                changes.push(t);
            }
        }
        assert_eq!(changes, vec![5001, 7501]);
    }

    #[test]
    fn noise_scale_values() {
        assert_eq!(noise_scale(0.1, 40_000, 128), 31.25);
        assert_eq!(noise_scale(0.3, 500, 500), 0.3);
        let nu = noise_scale(0.2, 10_000, 64);
        assert_eq!(noise_scale(0.2, 10_000, 128), nu / 2.0);
    }

    #[test]
    fn adaptation_factor_reference_points() {
        assert_eq!(noise_adaptation_factor(128, 40_000), 1.0);
        assert_eq!(noise_adaptation_factor(32, 40_000), 4.0);
        assert_eq!(noise_adaptation_factor(8, 40_000), 16.0);
        assert!((noise_adaptation_factor(128, 4_000) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn adaptation_composes_to_reference_noise_scale() {
        // nu of the adapted configuration equals nu of the reference for
        // equal lambda.
        let lambda = 0.05;
        let reference = noise_scale(lambda, REFERENCE_DATASET_SIZE, REFERENCE_BATCH_SIZE);
        for (batch, dataset) in [(8, 40_000), (32, 40_000), (128, 4_000), (64, 20_000)] {
            let eps = noise_adaptation_factor(batch, dataset);
            let nu = noise_scale(lambda, dataset, batch);
            assert!((nu / eps - reference).abs() < 1e-12 * reference);
        }
    }

    #[test]
    fn identity_adaptation_leaves_config_unchanged() {
        let config = LabpalConfig::default();
        let adapted = apply_noise_adaptation(&config, 1.0).unwrap();
        assert_eq!(adapted.t_max, config.t_max);
        assert_eq!(adapted.schedule, config.schedule);
    }

    #[test]
    fn sixteenfold_adaptation_preserves_super_batch_sizes() {
        let mut config = LabpalConfig::default();
        config.inference_batch_size = 8;
        let adapted = apply_noise_adaptation(&config, 16.0).unwrap();
        assert_eq!(adapted.t_max, 2_400_000);
        assert_eq!(adapted.schedule.segments(), &[(0.5, 16), (0.75, 32)]);
        assert_eq!(adapted.schedule.final_multiplier(), 64);
        // Effective super-batch sizes match the reference configuration
        // (inference batch 128, multipliers 1/2/4) exactly.
        for (k, reference_k) in [(16u32, 1u32), (32, 2), (64, 4)] {
            assert_eq!(k as usize * 8, reference_k as usize * 128);
        }
    }

    #[test]
    fn fourfold_adaptation_example() {
        let config = LabpalConfig::default();
        let adapted = apply_noise_adaptation(&config, 4.0).unwrap();
        assert_eq!(adapted.t_max, 600_000);
        assert_eq!(adapted.schedule.segments(), &[(0.5, 4), (0.75, 8)]);
        assert_eq!(adapted.schedule.final_multiplier(), 16);
    }

    #[test]
    fn fractional_adaptation_rounds_multipliers_up() {
        let config = LabpalConfig::default();
        let adapted = apply_noise_adaptation(&config, 0.05).unwrap();
        assert_eq!(adapted.t_max, 7_500);
        assert_eq!(adapted.schedule.segments(), &[(0.5, 1), (0.75, 1)]);
        assert_eq!(adapted.schedule.final_multiplier(), 1);
    }

    #[test]
    fn epsilon_invariance_is_exact_for_batch_ratios() {
        // For epsilon = 128 / |B_new| the adapted effective super-batch
        // size matches the reference at corresponding training fractions.
        let reference = LabpalConfig::default();
        for new_batch in [8usize, 16, 32, 64] {
            let eps = noise_adaptation_factor(new_batch, REFERENCE_DATASET_SIZE);
            let mut low_batch = reference.clone();
            low_batch.inference_batch_size = new_batch;
            let adapted = apply_noise_adaptation(&low_batch, eps).unwrap();
            for fraction in [0.1, 0.6, 0.9] {
                let t_ref = (fraction * reference.t_max as f64) as u64;
                let t_new = (fraction * adapted.t_max as f64) as u64;
                let ref_super = reference.schedule.batch_factor(t_ref, reference.t_max) as usize
                    * reference.inference_batch_size;
                let new_super = adapted.schedule.batch_factor(t_new, adapted.t_max) as usize
                    * adapted.inference_batch_size;
                assert_eq!(ref_super, new_super, "batch {new_batch} fraction {fraction}");
            }
        }
    }

    #[test]
    fn rejects_decreasing_multipliers() {
        assert!(BatchSizeSchedule::new(vec![(0.5, 2), (0.75, 1)], 4).is_err());
        assert!(BatchSizeSchedule::new(vec![(0.8, 1), (0.5, 2)], 4).is_err());
        assert!(BatchSizeSchedule::new(vec![(0.5, 1)], 0).is_err());
    }
}

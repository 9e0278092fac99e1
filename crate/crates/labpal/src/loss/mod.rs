//! Finite-sum loss abstraction: full-batch and mini-batch losses,
//! gradients and line restrictions over a finite dataset, plus the
//! concrete desk-scale problems (stochastic quadratic, MLP classifier).
//!
//! The full-batch loss is the mean of per-sample losses over the whole
//! dataset; a mini-batch loss is the mean over a sampled subset and acts
//! as a noisy estimator of it. All evaluations are pure functions of
//! `(oracle, theta, batch)` and accumulate in a fixed order, so repeated
//! runs are bit-identical.

mod mlp;
mod quadratic;

pub use mlp::{make_mlp_classifier, MlpClassifier, MlpSpec};
pub use quadratic::{make_stochastic_quadratic, QuadraticSpec, StochasticQuadratic};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sum::CompensatedSum;

/// Flat real-valued model parameter state.
///
/// The dimension is fixed for the lifetime of a training run and every
/// accepted update must leave all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + s * direction`, leaving `self` untouched.
    pub fn offset_along(&self, direction: &[f64], s: f64) -> ParameterVector {
        debug_assert_eq!(self.dim(), direction.len());
        let values = self
            .values
            .iter()
            .zip(direction)
            .map(|(&t, &d)| t + s * d)
            .collect();
        ParameterVector { values }
    }

    /// In-place `self += s * direction`.
    pub fn add_scaled(&mut self, direction: &[f64], s: f64) {
        debug_assert_eq!(self.dim(), direction.len());
        for (t, &d) in self.values.iter_mut().zip(direction) {
            *t += s * d;
        }
    }
}

impl std::ops::Index<usize> for ParameterVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Size and index range of the finite dataset behind an oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHandle {
    sample_count: usize,
}

impl DatasetHandle {
    pub fn new(sample_count: usize) -> Self {
        assert!(sample_count >= 1, "dataset must hold at least one sample");
        Self { sample_count }
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Checks that a batch is usable against this dataset: indices in
    /// range and batch no larger than the dataset.
    pub fn validate_batch(&self, batch: &Batch) -> Result<()> {
        if batch.size() > self.sample_count {
            return Err(Error::BatchTooLarge {
                batch_size: batch.size(),
                dataset_size: self.sample_count,
            });
        }
        for &index in batch.indices() {
            if index >= self.sample_count {
                return Err(Error::IndexOutOfRange {
                    index,
                    dataset_size: self.sample_count,
                });
            }
        }
        Ok(())
    }
}

/// A multiset-free selection of dataset indices: nonempty, drawn without
/// replacement within the batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    indices: Vec<usize>,
}

impl Batch {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        for pair in seen.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::DuplicateIndex { index: pair[0] });
            }
        }
        Ok(Self { indices })
    }

    /// The whole dataset in index order (so the batch loss accumulates in
    /// exactly the full-batch order).
    pub fn full(dataset: &DatasetHandle) -> Self {
        Self {
            indices: (0..dataset.sample_count()).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

/// A gradient with its Euclidean norm cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
    norm: f64,
}

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = euclidean_norm(&values);
        Self { values, norm }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn euclidean_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `g / ||g||`. Fails on a zero-norm gradient, which signals a degenerate
/// (converged) direction.
pub fn normalize(g: &GradientVector) -> Result<GradientVector> {
    if g.norm() == 0.0 {
        return Err(Error::ZeroGradient);
    }
    let scaled: Vec<f64> = g.values().iter().map(|v| v / g.norm()).collect();
    Ok(GradientVector::new(scaled))
}

/// A finite dataset of differentiable per-sample losses.
///
/// Implementations must be deterministic: identical `(theta, batch)`
/// inputs give bit-identical outputs. Evaluations are pure and safe to
/// call concurrently.
pub trait LossOracle {
    fn dataset(&self) -> &DatasetHandle;

    /// Parameter dimension `n`.
    fn dim(&self) -> usize;

    /// Loss of a single sample at `theta`.
    fn sample_loss(&self, theta: &ParameterVector, index: usize) -> f64;

    /// Mean gradient over the batch.
    fn batch_gradient(&self, theta: &ParameterVector, batch: &Batch) -> Result<GradientVector>;

    /// Mean loss over the batch, accumulated in batch order.
    fn batch_loss(&self, theta: &ParameterVector, batch: &Batch) -> Result<f64> {
        self.check_dim(theta)?;
        self.dataset().validate_batch(batch)?;
        let mut acc = CompensatedSum::new();
        for &index in batch.indices() {
            let loss = self.sample_loss(theta, index);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { index });
            }
            acc.add(loss);
        }
        Ok(acc.value() / batch.size() as f64)
    }

    /// Loss and gradient of the same batch in one call.
    fn batch_loss_and_gradient(
        &self,
        theta: &ParameterVector,
        batch: &Batch,
    ) -> Result<(f64, GradientVector)> {
        Ok((
            self.batch_loss(theta, batch)?,
            self.batch_gradient(theta, batch)?,
        ))
    }

    /// Mean loss over the entire dataset, accumulated in index order.
    fn full_batch_loss(&self, theta: &ParameterVector) -> Result<f64> {
        self.check_dim(theta)?;
        let mut acc = CompensatedSum::new();
        for index in 0..self.dataset().sample_count() {
            let loss = self.sample_loss(theta, index);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { index });
            }
            acc.add(loss);
        }
        Ok(acc.value() / self.dataset().sample_count() as f64)
    }

    /// Loss along the ray `theta(s) = origin + s * (-direction)` where
    /// `direction` is the normalized gradient. `batch = None` evaluates
    /// the full-batch restriction.
    fn line_loss(
        &self,
        origin: &ParameterVector,
        direction: &GradientVector,
        s: f64,
        batch: Option<&Batch>,
    ) -> Result<f64> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnitDirection {
                norm: direction.norm(),
            });
        }
        let shifted = origin.offset_along(direction.values(), -s);
        match batch {
            Some(b) => self.batch_loss(&shifted, b),
            None => self.full_batch_loss(&shifted),
        }
    }

    /// Fraction of held-out samples classified correctly, when the
    /// problem has a validation split.
    fn validation_accuracy(&self, _theta: &ParameterVector) -> Option<f64> {
        None
    }

    /// Mean loss over held-out samples, when the problem has a
    /// validation split.
    fn validation_loss(&self, _theta: &ParameterVector) -> Option<f64> {
        None
    }

    /// Canonical starting parameters generated with the problem.
    fn initial_parameters(&self) -> ParameterVector {
        ParameterVector::zeros(self.dim())
    }

    fn check_dim(&self, theta: &ParameterVector) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.dim(),
            });
        }
        Ok(())
    }
}

/// Epoch-based batch source: each epoch is a fresh shuffle of the index
/// pool and batches are cut from it without replacement. A batch never
/// straddles an epoch boundary (the remainder is dropped and the pool
/// reshuffled), so the without-replacement invariant holds within every
/// batch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pool: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(dataset: &DatasetHandle, seed: u64) -> Self {
        Self::over_indices((0..dataset.sample_count()).collect(), seed)
    }

    pub fn over_indices(indices: Vec<usize>, seed: u64) -> Self {
        assert!(!indices.is_empty(), "sampler needs a nonempty index pool");
        let mut sampler = Self {
            pool: indices,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        sampler.pool.shuffle(&mut sampler.rng);
        sampler
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    pub fn next_batch(&mut self, size: usize) -> Result<Batch> {
        if size == 0 {
            return Err(Error::EmptyBatch);
        }
        if size > self.pool.len() {
            return Err(Error::BatchTooLarge {
                batch_size: size,
                dataset_size: self.pool.len(),
            });
        }
        if self.cursor + size > self.pool.len() {
            self.pool.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let indices = self.pool[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        Batch::new(indices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two scalar samples: L0 = x^2, L1 = (x - 2)^2, mean (x-1)^2 + 1.
    fn two_sample_oracle() -> StochasticQuadratic {
        StochasticQuadratic::from_parts(
            vec![vec![2.0]],
            ParameterVector::new(vec![1.0]),
            1.0,
            vec![vec![2.0], vec![-2.0]],
        )
        .unwrap()
    }

    #[test]
    fn full_batch_loss_of_two_sample_oracle() {
        let oracle = two_sample_oracle();
        let theta = ParameterVector::new(vec![0.0]);
        let loss = oracle.full_batch_loss(&theta).unwrap();
        assert!((loss - 2.0).abs() < 1e-12, "expected (0 + 4)/2, got {loss}");
    }

    #[test]
    fn single_sample_dataset_collapses_to_mini_batch() {
        let oracle = StochasticQuadratic::from_parts(
            vec![vec![3.0]],
            ParameterVector::new(vec![0.5]),
            0.25,
            vec![vec![0.0]],
        )
        .unwrap();
        let theta = ParameterVector::new(vec![2.0]);
        let batch = Batch::new(vec![0]).unwrap();
        assert_eq!(
            oracle.full_batch_loss(&theta).unwrap().to_bits(),
            oracle.batch_loss(&theta, &batch).unwrap().to_bits()
        );
    }

    #[test]
    fn whole_dataset_batch_equals_full_batch_exactly() {
        let oracle = make_stochastic_quadratic(4, 17, 0.7, 99).unwrap();
        let theta = oracle.initial_parameters();
        let batch = Batch::full(oracle.dataset());
        assert_eq!(
            oracle.full_batch_loss(&theta).unwrap().to_bits(),
            oracle.batch_loss(&theta, &batch).unwrap().to_bits()
        );
    }

    #[test]
    fn single_sample_mini_batch_loss() {
        let oracle = two_sample_oracle();
        let theta = ParameterVector::new(vec![0.0]);
        let batch = Batch::new(vec![1]).unwrap();
        let loss = oracle.batch_loss(&theta, &batch).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_batch_index_rejected() {
        assert_eq!(
            Batch::new(vec![0, 0]).unwrap_err(),
            Error::DuplicateIndex { index: 0 }
        );
    }

    #[test]
    fn empty_batch_rejected() {
        assert_eq!(Batch::new(vec![]).unwrap_err(), Error::EmptyBatch);
    }

    #[test]
    fn gradient_at_minimum_is_zero() {
        let spec = QuadraticSpec {
            dim: 3,
            sample_count: 5,
            noise_magnitude: 0.0,
            seed: 7,
            eigenvalues: Some(vec![1.0, 1.0, 1.0]),
            ..QuadraticSpec::default()
        };
        let oracle = StochasticQuadratic::generate(&spec).unwrap();
        let batch = Batch::full(oracle.dataset());
        let g = oracle
            .batch_gradient(oracle.theta_star(), &batch)
            .unwrap();
        assert!(g.norm() < 1e-12, "gradient norm {}", g.norm());
    }

    #[test]
    fn scalar_gradient_matches_analytic_derivative() {
        // L(x) = x^2 as a one-sample quadratic: A = [2], theta* = 0.
        let oracle = StochasticQuadratic::from_parts(
            vec![vec![2.0]],
            ParameterVector::new(vec![0.0]),
            0.0,
            vec![vec![0.0]],
        )
        .unwrap();
        let batch = Batch::full(oracle.dataset());
        let g = oracle
            .batch_gradient(&ParameterVector::new(vec![3.0]), &batch)
            .unwrap();
        assert!((g.values()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_three_four_five() {
        let g = GradientVector::new(vec![3.0, 4.0]);
        let unit = normalize(&g).unwrap();
        assert!((unit.values()[0] - 0.6).abs() < 1e-15);
        assert!((unit.values()[1] - 0.8).abs() < 1e-15);
        assert!((unit.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent_on_unit_input() {
        let g = GradientVector::new(vec![1.0, 0.0, 0.0]);
        let unit = normalize(&g).unwrap();
        assert_eq!(unit.values(), g.values());
    }

    #[test]
    fn normalize_zero_fails() {
        let g = GradientVector::new(vec![0.0, 0.0]);
        assert_eq!(normalize(&g).unwrap_err(), Error::ZeroGradient);
    }

    #[test]
    fn line_loss_at_origin_is_batch_loss() {
        let oracle = make_stochastic_quadratic(3, 12, 0.4, 21).unwrap();
        let theta = oracle.initial_parameters();
        let batch = Batch::new(vec![1, 4, 7]).unwrap();
        let g = oracle.batch_gradient(&theta, &batch).unwrap();
        let unit = normalize(&g).unwrap();
        let at_zero = oracle.line_loss(&theta, &unit, 0.0, Some(&batch)).unwrap();
        let direct = oracle.batch_loss(&theta, &batch).unwrap();
        assert_eq!(at_zero.to_bits(), direct.to_bits());
    }

    #[test]
    fn line_loss_of_unit_quadratic_closes_at_one() {
        // Mean loss 0.5 * ||theta - theta*||^2, origin theta* + u.
        let dim = 4;
        let a: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let star = ParameterVector::zeros(dim);
        let oracle =
            StochasticQuadratic::from_parts(a, star, 0.0, vec![vec![0.0; dim]; 3]).unwrap();
        let mut u = vec![0.0; dim];
        u[0] = 1.0;
        let origin = ParameterVector::new(u.clone());
        let direction = GradientVector::new(u);
        for (s, expected) in [(0.0, 0.5), (0.5, 0.125), (1.0, 0.0), (2.0, 0.5)] {
            let l = oracle.line_loss(&origin, &direction, s, None).unwrap();
            assert!((l - expected).abs() < 1e-12, "l({s}) = {l}");
        }
    }

    #[test]
    fn line_loss_rejects_non_unit_direction() {
        let oracle = make_stochastic_quadratic(2, 4, 0.0, 1).unwrap();
        let direction = GradientVector::new(vec![0.5, 0.0]);
        let err = oracle
            .line_loss(&oracle.initial_parameters(), &direction, 0.1, None)
            .unwrap_err();
        assert!(matches!(err, Error::NonUnitDirection { .. }));
    }

    #[test]
    fn partition_means_recover_full_batch_loss() {
        let oracle = make_stochastic_quadratic(5, 24, 1.3, 5).unwrap();
        let theta = oracle.initial_parameters();
        let full = oracle.full_batch_loss(&theta).unwrap();
        let mut acc = 0.0;
        for chunk in 0..4 {
            let indices: Vec<usize> = (chunk * 6..(chunk + 1) * 6).collect();
            let batch = Batch::new(indices).unwrap();
            acc += oracle.batch_loss(&theta, &batch).unwrap();
        }
        let partition_mean = acc / 4.0;
        assert!(
            (partition_mean - full).abs() <= 1e-10 * full.abs().max(1.0),
            "partition mean {partition_mean} vs full {full}"
        );
    }

    #[test]
    fn sampler_is_deterministic_and_duplicate_free() {
        let dataset = DatasetHandle::new(10);
        let mut a = BatchSampler::new(&dataset, 3);
        let mut b = BatchSampler::new(&dataset, 3);
        for _ in 0..20 {
            let ba = a.next_batch(4).unwrap();
            let bb = b.next_batch(4).unwrap();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn sampler_covers_an_epoch_without_replacement() {
        let dataset = DatasetHandle::new(12);
        let mut sampler = BatchSampler::new(&dataset, 11);
        let mut seen: Vec<usize> = Vec::new();
        for _ in 0..3 {
            seen.extend_from_slice(sampler.next_batch(4).unwrap().indices());
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn mini_batch_variance_shrinks_with_batch_size() {
        // Empirical check of the 1/sqrt(|B|) standard-error claim: the
        // variance over batches of size 4k is smaller than over size k by
        // a factor in [3, 5] (finite-population corrected it is
        // 4 (N - k) / (N - 4k), close to 4 for N >> k).
        let oracle = make_stochastic_quadratic(6, 4000, 2.0, 13).unwrap();
        let theta = oracle.initial_parameters();
        let mut sampler = BatchSampler::new(oracle.dataset(), 77);
        let variance_of = |sampler: &mut BatchSampler, size: usize| {
            let losses: Vec<f64> = (0..600)
                .map(|_| {
                    let batch = sampler.next_batch(size).unwrap();
                    oracle.batch_loss(&theta, &batch).unwrap()
                })
                .collect();
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (losses.len() - 1) as f64
        };
        let var_small = variance_of(&mut sampler, 8);
        let var_large = variance_of(&mut sampler, 32);
        let ratio = var_small / var_large;
        assert!(
            (3.0..=5.0).contains(&ratio),
            "variance ratio {ratio} outside [3, 5]"
        );
    }

    #[test]
    fn evaluations_are_pure() {
        let oracle = make_stochastic_quadratic(4, 30, 0.9, 17).unwrap();
        let theta = oracle.initial_parameters();
        let batch = Batch::new(vec![3, 1, 9, 22]).unwrap();
        let l1 = oracle.batch_loss(&theta, &batch).unwrap();
        let g1 = oracle.batch_gradient(&theta, &batch).unwrap();
        let l2 = oracle.batch_loss(&theta, &batch).unwrap();
        let g2 = oracle.batch_gradient(&theta, &batch).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1.values(), g2.values());
    }
}

//! Stochastic quadratic test problem.
//!
//! Per-sample losses are a shared positive-definite quadratic plus a
//! per-sample linear perturbation:
//!
//! ```text
//! L_d(theta) = 0.5 (theta - theta*)' A (theta - theta*) + c + eps_d' (theta - theta*)
//! ```
//!
//! The perturbations are generated in cancelling pairs so their sum is
//! exactly zero, which makes the mean loss exactly the quadratic while
//! every mini-batch has a distinct minimizer. This is the correctness
//! oracle for the line-search machinery: any three-point fit along any
//! line must reproduce the measured full-batch losses.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loss::{
    euclidean_norm, Batch, DatasetHandle, GradientVector, LossOracle, ParameterVector,
};
use crate::sum::CompensatedSum;

/// Generation knobs for [`StochasticQuadratic`].
#[derive(Debug, Clone)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub sample_count: usize,
    pub noise_magnitude: f64,
    pub seed: u64,
    /// Uniform range the random eigenvalues are drawn from.
    pub eigenvalue_range: (f64, f64),
    /// Explicit spectrum override; length must equal `dim`.
    pub eigenvalues: Option<Vec<f64>>,
    /// Distance of the canonical starting point from the minimizer.
    pub init_distance: f64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            sample_count: 2,
            noise_magnitude: 0.0,
            seed: 0,
            eigenvalue_range: (0.1, 10.0),
            eigenvalues: None,
            init_distance: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StochasticQuadratic {
    dataset: DatasetHandle,
    hessian: Vec<Vec<f64>>,
    theta_star: ParameterVector,
    offset: f64,
    perturbations: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    initial: ParameterVector,
}

/// Generates the default stochastic quadratic: symmetric positive
/// definite Hessian with eigenvalues in [0.1, 10], per-sample linear
/// perturbations with exact zero sum scaled by `noise_magnitude`.
pub fn make_stochastic_quadratic(
    dim: usize,
    sample_count: usize,
    noise_magnitude: f64,
    seed: u64,
) -> Result<StochasticQuadratic> {
    StochasticQuadratic::generate(&QuadraticSpec {
        dim,
        sample_count,
        noise_magnitude,
        seed,
        ..QuadraticSpec::default()
    })
}

impl StochasticQuadratic {
    pub fn generate(spec: &QuadraticSpec) -> Result<Self> {
        if spec.dim < 1 {
            return Err(Error::InvalidConfig("quadratic dim must be >= 1".into()));
        }
        if spec.sample_count < 2 {
            return Err(Error::InvalidConfig(
                "quadratic sample_count must be >= 2".into(),
            ));
        }
        if spec.noise_magnitude < 0.0 {
            return Err(Error::InvalidConfig(
                "noise_magnitude must be >= 0".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        let eigenvalues = match &spec.eigenvalues {
            Some(eigs) => {
                if eigs.len() != spec.dim {
                    return Err(Error::InvalidConfig(format!(
                        "expected {} eigenvalues, got {}",
                        spec.dim,
                        eigs.len()
                    )));
                }
                if eigs.iter().any(|&e| e <= 0.0) {
                    return Err(Error::InvalidConfig(
                        "eigenvalues must be positive".into(),
                    ));
                }
                eigs.clone()
            }
            None => {
                let (lo, hi) = spec.eigenvalue_range;
                if !(lo > 0.0 && hi >= lo) {
                    return Err(Error::InvalidConfig(
                        "eigenvalue range must satisfy 0 < lo <= hi".into(),
                    ));
                }
                (0..spec.dim).map(|_| rng.gen_range(lo..=hi)).collect()
            }
        };

        let q = random_orthogonal(spec.dim, &mut rng);
        // A = Q diag(eig) Q', symmetrized so a_ij == a_ji bit-exactly.
        let mut hessian = vec![vec![0.0; spec.dim]; spec.dim];
        for i in 0..spec.dim {
            for j in 0..=i {
                let mut acc = 0.0;
                for (k, &eig) in eigenvalues.iter().enumerate() {
                    acc += q[i][k] * eig * q[j][k];
                }
                hessian[i][j] = acc;
                hessian[j][i] = acc;
            }
        }

        let theta_star =
            ParameterVector::new((0..spec.dim).map(|_| rng.sample(StandardNormal)).collect());
        let offset: f64 = rng.gen_range(0.0..1.0);

        // Perturbations in cancelling pairs: eps_{2i+1} = -eps_{2i}, odd
        // remainder zero. Sequential summation over the dataset is then
        // exactly zero in every component.
        let mut perturbations = vec![vec![0.0; spec.dim]; spec.sample_count];
        for pair in 0..spec.sample_count / 2 {
            let raw: Vec<f64> = (0..spec.dim)
                .map(|_| spec.noise_magnitude * rng.sample::<f64, _>(StandardNormal))
                .collect();
            perturbations[2 * pair + 1] = raw.iter().map(|v| -v).collect();
            perturbations[2 * pair] = raw;
        }

        let direction = random_unit(spec.dim, &mut rng);
        let initial = theta_star.offset_along(&direction, spec.init_distance);

        Ok(Self {
            dataset: DatasetHandle::new(spec.sample_count),
            hessian,
            theta_star,
            offset,
            perturbations,
            eigenvalues,
            initial,
        })
    }

    /// Builds the problem from explicit parts. Intended for tests and
    /// hand-crafted instances; validates symmetry and the zero-sum
    /// perturbation constraint.
    pub fn from_parts(
        hessian: Vec<Vec<f64>>,
        theta_star: ParameterVector,
        offset: f64,
        perturbations: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = theta_star.dim();
        if hessian.len() != dim || hessian.iter().any(|row| row.len() != dim) {
            return Err(Error::InvalidConfig("hessian shape mismatch".into()));
        }
        for i in 0..dim {
            for j in 0..dim {
                if hessian[i][j] != hessian[j][i] {
                    return Err(Error::InvalidConfig("hessian must be symmetric".into()));
                }
            }
        }
        if perturbations.is_empty() || perturbations.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidConfig(
                "perturbations must be nonempty with matching dimension".into(),
            ));
        }
        for component in 0..dim {
            let total: f64 = perturbations.iter().map(|p| p[component]).sum();
            if total.abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "perturbations must sum to zero (component {component} sums to {total})"
                )));
            }
        }
        let sample_count = perturbations.len();
        let initial = theta_star.offset_along(&unit_axis(dim), 1.0);
        Ok(Self {
            dataset: DatasetHandle::new(sample_count),
            hessian,
            theta_star,
            offset,
            perturbations,
            eigenvalues: Vec::new(),
            initial,
        })
    }

    pub fn theta_star(&self) -> &ParameterVector {
        &self.theta_star
    }

    /// Value of the mean loss at its minimizer.
    pub fn optimum_value(&self) -> f64 {
        self.offset
    }

    pub fn hessian(&self) -> &[Vec<f64>] {
        &self.hessian
    }

    /// Spectrum the Hessian was built from (empty for `from_parts`).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn condition_number(&self) -> f64 {
        let max = self.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    pub fn perturbation(&self, index: usize) -> &[f64] {
        &self.perturbations[index]
    }

    fn displacement(&self, theta: &ParameterVector) -> Vec<f64> {
        theta
            .as_slice()
            .iter()
            .zip(self.theta_star.as_slice())
            .map(|(&t, &s)| t - s)
            .collect()
    }

    /// 0.5 d'Ad + c for d = theta - theta*.
    fn quadratic_part(&self, displacement: &[f64]) -> f64 {
        let mut acc = CompensatedSum::new();
        for (i, row) in self.hessian.iter().enumerate() {
            let mut inner = 0.0;
            for (j, &a) in row.iter().enumerate() {
                inner += a * displacement[j];
            }
            acc.add(displacement[i] * inner);
        }
        0.5 * acc.value() + self.offset
    }

    fn hessian_times(&self, displacement: &[f64]) -> Vec<f64> {
        self.hessian
            .iter()
            .map(|row| row.iter().zip(displacement).map(|(&a, &d)| a * d).sum())
            .collect()
    }
}

impl LossOracle for StochasticQuadratic {
    fn dataset(&self) -> &DatasetHandle {
        &self.dataset
    }

    fn dim(&self) -> usize {
        self.theta_star.dim()
    }

    fn sample_loss(&self, theta: &ParameterVector, index: usize) -> f64 {
        let d = self.displacement(theta);
        self.quadratic_part(&d) + dot(&self.perturbations[index], &d)
    }

    fn batch_loss(&self, theta: &ParameterVector, batch: &Batch) -> Result<f64> {
        self.check_dim(theta)?;
        self.dataset.validate_batch(batch)?;
        // Shared quadratic part computed once; bit-identical to the
        // per-sample path because the per-sample float ops are the same.
        let d = self.displacement(theta);
        let q = self.quadratic_part(&d);
        let mut acc = CompensatedSum::new();
        for &index in batch.indices() {
            let loss = q + dot(&self.perturbations[index], &d);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { index });
            }
            acc.add(loss);
        }
        Ok(acc.value() / batch.size() as f64)
    }

    fn full_batch_loss(&self, theta: &ParameterVector) -> Result<f64> {
        self.batch_loss(theta, &Batch::full(&self.dataset))
    }

    fn batch_gradient(&self, theta: &ParameterVector, batch: &Batch) -> Result<GradientVector> {
        self.check_dim(theta)?;
        self.dataset.validate_batch(batch)?;
        let d = self.displacement(theta);
        let mut grad = self.hessian_times(&d);
        // Mean perturbation of the batch, accumulated in batch order.
        let scale = 1.0 / batch.size() as f64;
        for (component, g) in grad.iter_mut().enumerate() {
            let mut acc = CompensatedSum::new();
            for &index in batch.indices() {
                acc.add(self.perturbations[index][component]);
            }
            *g += scale * acc.value();
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { component });
            }
        }
        Ok(GradientVector::new(grad))
    }

    fn initial_parameters(&self) -> ParameterVector {
        self.initial.clone()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn unit_axis(dim: usize) -> Vec<f64> {
    let mut u = vec![0.0; dim];
    u[0] = 1.0;
    u
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = euclidean_norm(&v);
        if norm > 1e-6 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Random orthogonal matrix (columns of Q) via Gram-Schmidt on Gaussian
/// draws. Returned row-major: q[i][k] is component i of basis vector k.
fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let proj = dot(&v, b);
            for (x, &bi) in v.iter_mut().zip(b) {
                *x -= proj * bi;
            }
        }
        let norm = euclidean_norm(&v);
        if norm > 1e-8 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    // Transpose so q[i][k] indexes (row, basis vector).
    let mut q = vec![vec![0.0; dim]; dim];
    for (k, b) in basis.iter().enumerate() {
        for i in 0..dim {
            q[i][k] = b[i];
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_at_minimizer_is_offset() {
        let oracle = make_stochastic_quadratic(5, 9, 1.5, 3).unwrap();
        let loss = oracle.full_batch_loss(oracle.theta_star()).unwrap();
        assert!(
            (loss - oracle.optimum_value()).abs() < 1e-12,
            "loss {loss} vs offset {}",
            oracle.optimum_value()
        );
    }

    #[test]
    fn zero_noise_makes_every_batch_loss_full_batch() {
        let oracle = make_stochastic_quadratic(4, 20, 0.0, 8).unwrap();
        let theta = oracle.initial_parameters();
        let full = oracle.full_batch_loss(&theta).unwrap();
        for batch in [
            Batch::new(vec![0]).unwrap(),
            Batch::new(vec![3, 17, 5]).unwrap(),
            Batch::new((0..10).collect()).unwrap(),
        ] {
            let loss = oracle.batch_loss(&theta, &batch).unwrap();
            assert!(
                (loss - full).abs() < 1e-13,
                "batch loss {loss} vs full {full}"
            );
        }
    }

    #[test]
    fn perturbations_sum_to_zero_componentwise() {
        for sample_count in [2, 7, 64] {
            let oracle = make_stochastic_quadratic(6, sample_count, 3.0, 42).unwrap();
            for component in 0..6 {
                let total: f64 = (0..sample_count)
                    .map(|d| oracle.perturbation(d)[component])
                    .sum();
                assert!(
                    total.abs() <= 1e-12,
                    "component {component} sums to {total}"
                );
            }
        }
    }

    #[test]
    fn hessian_is_exactly_symmetric_with_requested_spectrum() {
        let spec = QuadraticSpec {
            dim: 8,
            sample_count: 4,
            seed: 5,
            eigenvalues: Some((1..=8).map(|i| i as f64).collect()),
            ..QuadraticSpec::default()
        };
        let oracle = StochasticQuadratic::generate(&spec).unwrap();
        let h = oracle.hessian();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(h[i][j].to_bits(), h[j][i].to_bits());
            }
        }
        // trace(A) == sum of eigenvalues up to orthogonalization error
        let trace: f64 = (0..8).map(|i| h[i][i]).sum();
        assert!((trace - 36.0).abs() < 1e-9, "trace {trace}");
        assert!((oracle.condition_number() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = make_stochastic_quadratic(5, 11, 0.8, 1234).unwrap();
        let b = make_stochastic_quadratic(5, 11, 0.8, 1234).unwrap();
        assert_eq!(a.theta_star().as_slice(), b.theta_star().as_slice());
        assert_eq!(a.hessian(), b.hessian());
        assert_eq!(
            a.initial_parameters().as_slice(),
            b.initial_parameters().as_slice()
        );
        for d in 0..11 {
            assert_eq!(a.perturbation(d), b.perturbation(d));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let oracle = make_stochastic_quadratic(7, 40, 1.1, 55).unwrap();
        let mut sampler = crate::loss::BatchSampler::new(oracle.dataset(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let theta = ParameterVector::new(
                (0..7)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            let batch = sampler.next_batch(6).unwrap();
            let grad = oracle.batch_gradient(&theta, &batch).unwrap();
            let h = 1e-5;
            for component in 0..7 {
                let mut plus = theta.clone();
                plus.as_mut_slice()[component] += h;
                let mut minus = theta.clone();
                minus.as_mut_slice()[component] -= h;
                let fd = (oracle.batch_loss(&plus, &batch).unwrap()
                    - oracle.batch_loss(&minus, &batch).unwrap())
                    / (2.0 * h);
                let g = grad.values()[component];
                let tol = 1e-5 * g.abs().max(1.0);
                assert!((fd - g).abs() <= tol, "component {component}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn initial_parameters_sit_at_requested_distance() {
        let spec = QuadraticSpec {
            dim: 9,
            sample_count: 6,
            seed: 77,
            init_distance: 0.25,
            ..QuadraticSpec::default()
        };
        let oracle = StochasticQuadratic::generate(&spec).unwrap();
        let d: f64 = oracle
            .initial_parameters()
            .as_slice()
            .iter()
            .zip(oracle.theta_star().as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((d - 0.25).abs() < 1e-12);
    }
}

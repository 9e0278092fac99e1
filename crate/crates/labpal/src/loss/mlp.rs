//! Small tanh MLP with softmax cross-entropy on a synthetic Gaussian-blob
//! classification dataset. Stands in for the image classification tasks
//! at desk scale: smooth everywhere, so finite-difference gradient checks
//! are clean.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loss::{Batch, DatasetHandle, GradientVector, LossOracle, ParameterVector};
use crate::sum::CompensatedSum;

#[derive(Debug, Clone)]
pub struct MlpSpec {
    /// Full layer chain including input and output, e.g. `[2, 16, 2]`.
    pub layer_sizes: Vec<usize>,
    pub sample_count: usize,
    pub class_count: usize,
    pub seed: u64,
    /// Scale of the random class centers.
    pub blob_spread: f64,
    /// Fraction of samples held out for validation, in [0, 0.5].
    pub validation_split: f64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            layer_sizes: vec![2, 16, 2],
            sample_count: 2000,
            class_count: 2,
            seed: 0,
            blob_spread: 3.0,
            validation_split: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpClassifier {
    dataset: DatasetHandle,
    layer_sizes: Vec<usize>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    /// Samples `train_count..` are the held-out validation split.
    train_count: usize,
    initial: ParameterVector,
}

/// Generates the blob dataset and a tanh MLP with softmax cross-entropy
/// per-sample losses. Parameters are initialized from a seeded uniform
/// distribution scaled by `1/sqrt(fan_in)`.
pub fn make_mlp_classifier(
    layer_sizes: &[usize],
    sample_count: usize,
    class_count: usize,
    seed: u64,
) -> Result<MlpClassifier> {
    MlpClassifier::generate(&MlpSpec {
        layer_sizes: layer_sizes.to_vec(),
        sample_count,
        class_count,
        seed,
        ..MlpSpec::default()
    })
}

impl MlpClassifier {
    pub fn generate(spec: &MlpSpec) -> Result<Self> {
        if spec.layer_sizes.len() < 3 {
            return Err(Error::InvalidConfig(
                "mlp needs at least one hidden layer (layer_sizes of length >= 3)".into(),
            ));
        }
        if spec.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if *spec.layer_sizes.last().unwrap() != spec.class_count {
            return Err(Error::InvalidConfig(format!(
                "output layer size {} must equal class_count {}",
                spec.layer_sizes.last().unwrap(),
                spec.class_count
            )));
        }
        if spec.class_count < 2 {
            return Err(Error::InvalidConfig("class_count must be >= 2".into()));
        }
        if spec.sample_count < spec.class_count {
            return Err(Error::InvalidConfig(
                "sample_count must be >= class_count".into(),
            ));
        }
        if !(0.0..=0.5).contains(&spec.validation_split) {
            return Err(Error::InvalidConfig(
                "validation_split must lie in [0, 0.5]".into(),
            ));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let input_dim = spec.layer_sizes[0];

        let centers: Vec<Vec<f64>> = (0..spec.class_count)
            .map(|_| {
                (0..input_dim)
                    .map(|_| spec.blob_spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();

        let mut features = Vec::with_capacity(spec.sample_count);
        let mut labels = Vec::with_capacity(spec.sample_count);
        for i in 0..spec.sample_count {
            let class = i % spec.class_count;
            let x: Vec<f64> = centers[class]
                .iter()
                .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
                .collect();
            features.push(x);
            labels.push(class);
        }

        let mut init = Vec::new();
        for l in 1..spec.layer_sizes.len() {
            let fan_in = spec.layer_sizes[l - 1];
            let fan_out = spec.layer_sizes[l];
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_out * fan_in + fan_out {
                init.push(scale * rng.gen_range(-1.0..1.0));
            }
        }

        let held_out = (spec.validation_split * spec.sample_count as f64).floor() as usize;
        let train_count = spec.sample_count - held_out;
        if train_count == 0 {
            return Err(Error::InvalidConfig("validation split leaves no training samples".into()));
        }

        Ok(Self {
            dataset: DatasetHandle::new(train_count),
            layer_sizes: spec.layer_sizes.clone(),
            features,
            labels,
            train_count,
            initial: ParameterVector::new(init),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn validation_count(&self) -> usize {
        self.features.len() - self.train_count
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Forward pass; returns output logits and (when requested) the
    /// input activation of every layer for backprop, so
    /// `inputs[l-1]` is what layer `l` consumed (`inputs[0]` is the raw
    /// feature vector).
    fn forward(
        &self,
        theta: &[f64],
        input: &[f64],
        keep_inputs: bool,
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut inputs: Vec<Vec<f64>> = Vec::new();
        let mut current: Vec<f64> = input.to_vec();
        let mut offset = 0;
        let last = self.layer_sizes.len() - 1;
        for l in 1..=last {
            let fan_in = self.layer_sizes[l - 1];
            let fan_out = self.layer_sizes[l];
            let weights = &theta[offset..offset + fan_out * fan_in];
            let biases = &theta[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out];
            offset += fan_out * fan_in + fan_out;
            let mut z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    row.iter().zip(&current).map(|(&w, &x)| w * x).sum::<f64>() + biases[o]
                })
                .collect();
            if l < last {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            if keep_inputs {
                inputs.push(std::mem::replace(&mut current, z));
            } else {
                current = z;
            }
        }
        (current, inputs)
    }

    fn cross_entropy(logits: &[f64], label: usize) -> f64 {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
        lse - logits[label]
    }

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / total).collect()
    }

    /// Per-sample backprop, accumulating the raw (unaveraged) gradient
    /// into `grad`. Returns the sample loss.
    fn accumulate_sample_gradient(&self, theta: &[f64], index: usize, grad: &mut [f64]) -> f64 {
        let input = &self.features[index];
        let label = self.labels[index];
        let (logits, activations) = self.forward(theta, input, true);
        let loss = Self::cross_entropy(&logits, label);

        let mut delta = Self::softmax(&logits);
        delta[label] -= 1.0;

        // Layer offsets into theta.
        let last = self.layer_sizes.len() - 1;
        let mut offsets = Vec::with_capacity(last);
        let mut offset = 0;
        for l in 1..=last {
            offsets.push(offset);
            offset += self.layer_sizes[l] * self.layer_sizes[l - 1] + self.layer_sizes[l];
        }

        for l in (1..=last).rev() {
            let fan_in = self.layer_sizes[l - 1];
            let fan_out = self.layer_sizes[l];
            let base = offsets[l - 1];
            let input_act = &activations[l - 1];
            for o in 0..fan_out {
                for i in 0..fan_in {
                    grad[base + o * fan_in + i] += delta[o] * input_act[i];
                }
                grad[base + fan_out * fan_in + o] += delta[o];
            }
            if l > 1 {
                let weights = &theta[base..base + fan_out * fan_in];
                let mut upstream = vec![0.0; fan_in];
                for (o, &d) in delta.iter().enumerate() {
                    for (i, u) in upstream.iter_mut().enumerate() {
                        *u += weights[o * fan_in + i] * d;
                    }
                }
                // tanh'(z) = 1 - tanh(z)^2, and input_act holds tanh(z).
                for (u, &a) in upstream.iter_mut().zip(input_act) {
                    *u *= 1.0 - a * a;
                }
                delta = upstream;
            }
        }
        loss
    }

    /// Predicted class for a raw feature vector.
    pub fn classify(&self, theta: &ParameterVector, input: &[f64]) -> usize {
        let (logits, _) = self.forward(theta.as_slice(), input, false);
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }
}

impl LossOracle for MlpClassifier {
    fn dataset(&self) -> &DatasetHandle {
        &self.dataset
    }

    fn dim(&self) -> usize {
        self.parameter_count()
    }

    fn sample_loss(&self, theta: &ParameterVector, index: usize) -> f64 {
        let (logits, _) = self.forward(theta.as_slice(), &self.features[index], false);
        Self::cross_entropy(&logits, self.labels[index])
    }

    fn batch_gradient(&self, theta: &ParameterVector, batch: &Batch) -> Result<GradientVector> {
        Ok(self.batch_loss_and_gradient(theta, batch)?.1)
    }

    fn batch_loss_and_gradient(
        &self,
        theta: &ParameterVector,
        batch: &Batch,
    ) -> Result<(f64, GradientVector)> {
        self.check_dim(theta)?;
        self.dataset.validate_batch(batch)?;
        let mut grad = vec![0.0; self.dim()];
        let mut acc = CompensatedSum::new();
        for &index in batch.indices() {
            let loss = self.accumulate_sample_gradient(theta.as_slice(), index, &mut grad);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { index });
            }
            acc.add(loss);
        }
        let scale = 1.0 / batch.size() as f64;
        for (component, g) in grad.iter_mut().enumerate() {
            *g *= scale;
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { component });
            }
        }
        Ok((acc.value() / batch.size() as f64, GradientVector::new(grad)))
    }

    fn validation_accuracy(&self, theta: &ParameterVector) -> Option<f64> {
        if self.train_count == self.features.len() {
            return None;
        }
        let mut correct = 0usize;
        for index in self.train_count..self.features.len() {
            if self.classify(theta, &self.features[index]) == self.labels[index] {
                correct += 1;
            }
        }
        Some(correct as f64 / self.validation_count() as f64)
    }

    fn validation_loss(&self, theta: &ParameterVector) -> Option<f64> {
        if self.train_count == self.features.len() {
            return None;
        }
        let mut acc = CompensatedSum::new();
        for index in self.train_count..self.features.len() {
            let (logits, _) = self.forward(theta.as_slice(), &self.features[index], false);
            acc.add(Self::cross_entropy(&logits, self.labels[index]));
        }
        Some(acc.value() / self.validation_count() as f64)
    }

    fn initial_parameters(&self) -> ParameterVector {
        self.initial.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::BatchSampler;

    #[test]
    fn ten_parameter_gradient_matches_central_differences() {
        // layer_sizes [1, 2, 2]: 1*2+2 + 2*2+2 = 10 parameters.
        let oracle = make_mlp_classifier(&[1, 2, 2], 8, 2, 4).unwrap();
        assert_eq!(oracle.dim(), 10);
        let theta = oracle.initial_parameters();
        let batch = Batch::new(vec![0, 3, 5]).unwrap();
        let grad = oracle.batch_gradient(&theta, &batch).unwrap();
        let h = 1e-5;
        for component in 0..10 {
            let mut plus = theta.clone();
            plus.as_mut_slice()[component] += h;
            let mut minus = theta.clone();
            minus.as_mut_slice()[component] -= h;
            let fd = (oracle.batch_loss(&plus, &batch).unwrap()
                - oracle.batch_loss(&minus, &batch).unwrap())
                / (2.0 * h);
            let g = grad.values()[component];
            assert!(
                (fd - g).abs() <= 1e-5 * g.abs().max(1e-2),
                "component {component}: fd {fd} vs analytic {g}"
            );
        }
    }

    #[test]
    fn gradient_check_over_random_points_and_batches() {
        let oracle = make_mlp_classifier(&[2, 5, 3], 30, 3, 11).unwrap();
        let mut sampler = BatchSampler::new(oracle.dataset(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let theta = ParameterVector::new(
                (0..oracle.dim())
                    .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            let batch = sampler.next_batch(5).unwrap();
            let grad = oracle.batch_gradient(&theta, &batch).unwrap();
            let h = 1e-5;
            for component in (0..oracle.dim()).step_by(7) {
                let mut plus = theta.clone();
                plus.as_mut_slice()[component] += h;
                let mut minus = theta.clone();
                minus.as_mut_slice()[component] -= h;
                let fd = (oracle.batch_loss(&plus, &batch).unwrap()
                    - oracle.batch_loss(&minus, &batch).unwrap())
                    / (2.0 * h);
                let g = grad.values()[component];
                assert!(
                    (fd - g).abs() <= 1e-5 * g.abs().max(1e-2),
                    "component {component}: fd {fd} vs analytic {g}"
                );
            }
        }
    }

    #[test]
    fn initial_loss_near_log_class_count() {
        // Near-uniform softmax at init gives a mean loss close to ln C;
        // the baseline is empirical, averaged over seeds.
        for classes in [2usize, 4, 10] {
            let mean_loss: f64 = (0..10)
                .map(|seed| {
                    let oracle =
                        make_mlp_classifier(&[3, 8, classes], 40 * classes, classes, seed)
                            .unwrap();
                    oracle
                        .full_batch_loss(&oracle.initial_parameters())
                        .unwrap()
                })
                .sum::<f64>()
                / 10.0;
            let baseline = (classes as f64).ln();
            assert!(
                (mean_loss - baseline).abs() <= 0.3 * baseline,
                "{classes} classes: mean init loss {mean_loss} vs ln C {baseline}"
            );
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = make_mlp_classifier(&[2, 6, 3], 24, 3, 7).unwrap();
        let b = make_mlp_classifier(&[2, 6, 3], 24, 3, 7).unwrap();
        assert_eq!(
            a.initial_parameters().as_slice(),
            b.initial_parameters().as_slice()
        );
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn validation_split_shrinks_training_dataset() {
        let spec = MlpSpec {
            layer_sizes: vec![2, 4, 2],
            sample_count: 100,
            class_count: 2,
            seed: 3,
            validation_split: 0.2,
            ..MlpSpec::default()
        };
        let oracle = MlpClassifier::generate(&spec).unwrap();
        assert_eq!(oracle.dataset().sample_count(), 80);
        assert_eq!(oracle.validation_count(), 20);
        let theta = oracle.initial_parameters();
        assert!(oracle.validation_accuracy(&theta).is_some());
        assert!(oracle.validation_loss(&theta).is_some());
    }

    #[test]
    fn rejects_missing_hidden_layer() {
        assert!(make_mlp_classifier(&[2, 2], 10, 2, 0).is_err());
    }
}

//! Training-run execution: oracle construction, noise adaptation,
//! metrics persistence, per-seed repeats and the mean/stddev aggregate.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use labpal::baseline::{nsgd_run, sgd_run};
use labpal::{
    apply_noise_adaptation, noise_adaptation_factor, Error, LossOracle, MetricsRecord,
    MlpClassifier, MlpSpec, ParameterVector, QuadraticSpec, RunObserver, RunStats,
    StochasticQuadratic,
};

use crate::config::{EpsilonMode, OptimizerSpec, ProblemSpec, RunConfig};
use crate::csv;
use crate::error::{io_err, HarnessError, Result};

pub enum ProblemOracle {
    Quadratic(StochasticQuadratic),
    Mlp(MlpClassifier),
}

impl ProblemOracle {
    pub fn build(problem: &ProblemSpec, validation_split: f64, seed: u64) -> Result<Self> {
        match problem {
            ProblemSpec::Quadratic {
                dim,
                sample_count,
                noise,
                eig_min,
                eig_max,
                init_distance,
                ..
            } => {
                let spec = QuadraticSpec {
                    dim: *dim,
                    sample_count: *sample_count,
                    noise_magnitude: *noise,
                    seed,
                    eigenvalue_range: (*eig_min, *eig_max),
                    eigenvalues: None,
                    init_distance: *init_distance,
                };
                Ok(ProblemOracle::Quadratic(StochasticQuadratic::generate(
                    &spec,
                )?))
            }
            ProblemSpec::Mlp {
                layer_sizes,
                sample_count,
                class_count,
                blob_spread,
                ..
            } => {
                let spec = MlpSpec {
                    layer_sizes: layer_sizes.clone(),
                    sample_count: *sample_count,
                    class_count: *class_count,
                    seed,
                    blob_spread: *blob_spread,
                    validation_split,
                };
                Ok(ProblemOracle::Mlp(MlpClassifier::generate(&spec)?))
            }
        }
    }

    pub fn oracle(&self) -> &dyn LossOracle {
        match self {
            ProblemOracle::Quadratic(q) => q,
            ProblemOracle::Mlp(m) => m,
        }
    }
}

/// Final metrics of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub epsilon: f64,
    pub final_theta: ParameterVector,
    pub stats: RunStats,
    pub final_full_batch_loss: f64,
    pub final_val_loss: Option<f64>,
    pub final_val_accuracy: Option<f64>,
    pub best_full_batch_loss: f64,
    pub best_val_accuracy: Option<f64>,
    pub diverged: bool,
    pub wall_seconds: f64,
}

pub(crate) struct HarnessObserver<'a> {
    oracle: &'a dyn LossOracle,
    sink: Option<&'a mut dyn Write>,
    full_batch_every: u64,
    validation_every: u64,
    records: u64,
    best_full: f64,
    best_acc: Option<f64>,
    pub(crate) last_theta: Option<ParameterVector>,
    io_error: Option<std::io::Error>,
}

impl<'a> HarnessObserver<'a> {
    pub(crate) fn new(
        oracle: &'a dyn LossOracle,
        sink: Option<&'a mut dyn Write>,
        full_batch_every: u64,
        validation_every: u64,
    ) -> Self {
        Self {
            oracle,
            sink,
            full_batch_every,
            validation_every,
            records: 0,
            best_full: f64::INFINITY,
            best_acc: None,
            last_theta: None,
            io_error: None,
        }
    }
}

impl HarnessObserver<'_> {
    pub(crate) fn take_io_error(&mut self) -> Option<std::io::Error> {
        self.io_error.take()
    }
}

impl RunObserver for HarnessObserver<'_> {
    fn on_record(&mut self, mut record: MetricsRecord, theta: &ParameterVector) {
        self.records += 1;
        if (self.records - 1) % self.full_batch_every == 0 {
            if let Ok(loss) = self.oracle.full_batch_loss(theta) {
                record.full_batch_loss = Some(loss);
                if loss < self.best_full {
                    self.best_full = loss;
                }
            }
        }
        if (self.records - 1) % self.validation_every == 0 {
            record.val_accuracy = self.oracle.validation_accuracy(theta);
            if let Some(acc) = record.val_accuracy {
                if self.best_acc.is_none_or(|best| acc > best) {
                    self.best_acc = Some(acc);
                }
            }
        }
        if let Some(sink) = self.sink.as_mut() {
            if self.io_error.is_none() {
                if let Err(err) = csv::write_record(sink, &record) {
                    self.io_error = Some(err);
                }
            }
        }
        self.last_theta = Some(theta.clone());
    }
}

/// Effective labpal configuration after noise adaptation, plus the
/// epsilon that was applied.
pub fn effective_optimizer(
    config: &RunConfig,
    dataset_size: usize,
) -> Result<(OptimizerSpec, f64)> {
    match (&config.optimizer, config.epsilon) {
        (OptimizerSpec::LabpalSgd(c) | OptimizerSpec::LabpalNsgd(c), mode) => {
            let epsilon = match mode {
                EpsilonMode::Off => 1.0,
                EpsilonMode::Fixed(e) => e,
                EpsilonMode::Auto => {
                    noise_adaptation_factor(c.inference_batch_size, dataset_size)
                }
            };
            let adapted = apply_noise_adaptation(c, epsilon)?;
            let spec = match &config.optimizer {
                OptimizerSpec::LabpalSgd(_) => OptimizerSpec::LabpalSgd(adapted),
                _ => OptimizerSpec::LabpalNsgd(adapted),
            };
            Ok((spec, epsilon))
        }
        (other, _) => Ok(((*other).clone(), 1.0)),
    }
}

/// Runs one configured training run end to end. `run_index` picks the
/// derived seed (`problem seed + run_index`); `sink`, when given,
/// receives the metrics CSV body (header included).
pub fn execute_run(
    config: &RunConfig,
    run_index: u32,
    mut sink: Option<&mut dyn Write>,
) -> Result<RunOutcome> {
    let seed = config.problem.seed() + run_index as u64;
    let problem = ProblemOracle::build(&config.problem, config.validation_split, seed)?;
    let oracle = problem.oracle();
    let theta0 = oracle.initial_parameters();
    let (optimizer, epsilon) = effective_optimizer(config, oracle.dataset().sample_count())?;

    if let Some(sink) = sink.as_mut() {
        csv::write_header(sink).map_err(io_err("metrics sink"))?;
    }
    let mut observer = HarnessObserver::new(
        oracle,
        sink.map(|s| s as &mut dyn Write),
        config.output.full_batch_every,
        config.output.validation_every,
    );

    let started = Instant::now();
    let result = match &optimizer {
        OptimizerSpec::LabpalSgd(c) | OptimizerSpec::LabpalNsgd(c) => {
            labpal::run(c, oracle, theta0.clone(), seed, &mut observer)
        }
        OptimizerSpec::Sgd(c) => sgd_run(c, oracle, theta0.clone(), seed, &mut observer),
        OptimizerSpec::Nsgd(c) => nsgd_run(c, oracle, theta0.clone(), seed, &mut observer),
    };
    let wall_seconds = started.elapsed().as_secs_f64();

    let (final_theta, stats, diverged) = match result {
        Ok((theta, stats)) => (theta, stats, false),
        Err(Error::Divergence { t, .. }) => {
            let theta = observer.last_theta.clone().unwrap_or(theta0);
            let stats = RunStats {
                total_inferences: observer.records,
                t_final: t,
                ..RunStats::default()
            };
            (theta, stats, true)
        }
        Err(other) => return Err(other.into()),
    };
    if let Some(err) = observer.io_error.take() {
        return Err(HarnessError::Io {
            path: PathBuf::from("metrics sink"),
            source: err,
        });
    }

    let final_full_batch_loss = oracle
        .full_batch_loss(&final_theta)
        .unwrap_or(f64::INFINITY);
    let best_full_batch_loss = observer.best_full.min(final_full_batch_loss);
    let final_val_accuracy = oracle.validation_accuracy(&final_theta);
    let best_val_accuracy = match (observer.best_acc, final_val_accuracy) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    };
    Ok(RunOutcome {
        seed,
        epsilon,
        final_val_loss: oracle.validation_loss(&final_theta),
        final_theta,
        stats,
        final_full_batch_loss,
        final_val_accuracy,
        best_full_batch_loss,
        best_val_accuracy,
        diverged,
        wall_seconds,
    })
}

fn format_optional(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_summary(path: &Path, config: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    let mut out = String::new();
    let status = if outcome.diverged { "diverged" } else { "ok" };
    out.push_str(&format!("optimizer = {}\n", config.optimizer.kind_name()));
    out.push_str(&format!("problem = {}\n", config.problem.kind_name()));
    out.push_str(&format!("seed = {}\n", outcome.seed));
    out.push_str(&format!("status = {status}\n"));
    out.push_str(&format!("epsilon = {}\n", outcome.epsilon));
    out.push_str(&format!("t_final = {}\n", outcome.stats.t_final));
    out.push_str(&format!(
        "total_inferences = {}\n",
        outcome.stats.total_inferences
    ));
    out.push_str(&format!(
        "line_searches = {}\n",
        outcome.stats.line_searches
    ));
    out.push_str(&format!("fallbacks = {}\n", outcome.stats.fallbacks));
    out.push_str(&format!("clamps = {}\n", outcome.stats.clamps));
    out.push_str(&format!(
        "skipped_updates = {}\n",
        outcome.stats.skipped_updates
    ));
    out.push_str(&format!(
        "final_full_batch_loss = {}\n",
        outcome.final_full_batch_loss
    ));
    out.push_str(&format!(
        "final_val_loss = {}\n",
        format_optional(outcome.final_val_loss)
    ));
    out.push_str(&format!(
        "final_val_accuracy = {}\n",
        format_optional(outcome.final_val_accuracy)
    ));
    out.push_str(&format!(
        "best_full_batch_loss = {}\n",
        outcome.best_full_batch_loss
    ));
    out.push_str(&format!("wall_seconds = {}\n", outcome.wall_seconds));
    fs::write(path, out).map_err(io_err(path))
}

/// Reads a `key = value` summary file back into pairs.
pub fn read_summary(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .filter_map(|line| line.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

pub fn summary_value(pairs: &[(String, String)], key: &str) -> Option<String> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
}

/// One parameter value per line.
pub fn write_parameters(path: &Path, theta: &ParameterVector) -> Result<()> {
    let mut out = String::new();
    for v in theta.as_slice() {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_parameters(path: &Path) -> Result<ParameterVector> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut values = Vec::new();
    for (index, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        values.push(line.parse::<f64>().map_err(|_| {
            HarnessError::ConfigGeneral(format!(
                "{}:{}: cannot parse `{line}` as a parameter value",
                path.display(),
                index + 1
            ))
        })?);
    }
    if values.is_empty() {
        return Err(HarnessError::ConfigGeneral(format!(
            "{}: empty parameter file",
            path.display()
        )));
    }
    Ok(ParameterVector::new(values))
}

pub struct TrainingReport {
    pub outcomes: Vec<RunOutcome>,
    pub any_diverged: bool,
}

/// Executes the configured run (with repeats), writing per-seed metrics,
/// summaries and final parameters plus a mean/stddev aggregate.
pub fn run_training(config: &RunConfig) -> Result<TrainingReport> {
    let dir = &config.output.directory;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut outcomes = Vec::new();
    for run_index in 0..config.output.repeats {
        let metrics_path = dir.join(format!("metrics_{run_index}.csv"));
        let file = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
        let mut writer = BufWriter::new(file);
        let outcome = execute_run(config, run_index, Some(&mut writer))?;
        writer.flush().map_err(io_err(&metrics_path))?;
        write_parameters(
            &dir.join(format!("final_parameters_{run_index}.txt")),
            &outcome.final_theta,
        )?;
        write_summary(
            &dir.join(format!("summary_{run_index}.txt")),
            config,
            &outcome,
        )?;
        outcomes.push(outcome);
    }
    if config.output.repeats > 1 {
        write_aggregate(&dir.join("aggregate.txt"), &outcomes)?;
    }
    let any_diverged = outcomes.iter().any(|o| o.diverged);
    Ok(TrainingReport {
        outcomes,
        any_diverged,
    })
}

fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_aggregate(path: &Path, outcomes: &[RunOutcome]) -> Result<()> {
    let completed: Vec<&RunOutcome> = outcomes.iter().filter(|o| !o.diverged).collect();
    let mut out = String::new();
    out.push_str(&format!("repeats = {}\n", outcomes.len()));
    out.push_str(&format!(
        "diverged_runs = {}\n",
        outcomes.len() - completed.len()
    ));
    if !completed.is_empty() {
        let losses: Vec<f64> = completed.iter().map(|o| o.final_full_batch_loss).collect();
        let (mean, stddev) = mean_stddev(&losses);
        out.push_str(&format!("final_full_batch_loss_mean = {mean}\n"));
        out.push_str(&format!("final_full_batch_loss_stddev = {stddev}\n"));
        let accuracies: Vec<f64> = completed
            .iter()
            .filter_map(|o| o.final_val_accuracy)
            .collect();
        if accuracies.len() == completed.len() {
            let (mean, stddev) = mean_stddev(&accuracies);
            out.push_str(&format!("final_val_accuracy_mean = {mean}\n"));
            out.push_str(&format!("final_val_accuracy_stddev = {stddev}\n"));
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

//! Ground-truth replay preset: full-dataset probes, a short reuse window
//! and no overshoot, so every fitted parabola is measured on the exact
//! full-batch loss. Emits per-line-search metrics: update step, local
//! improvement against the line's optimum, and the step/gradient-norm
//! ratio.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use labpal::{
    BatchSizeSchedule, LineSearchEvent, LossOracle, MetricsRecord, ParameterVector, RunObserver,
};

use crate::config::{OptimizerSpec, RunConfig};
use crate::error::{io_err, HarnessError, Result};
use crate::runner::{self, HarnessObserver, ProblemOracle, RunOutcome};

#[derive(Debug, Clone)]
pub struct ReplayRow {
    pub cycle: u64,
    pub t: u64,
    pub s_min: Option<f64>,
    pub s_upd: f64,
    pub grad_norm: f64,
    /// `s_min / ||g||` of the direction-defining batch.
    pub ratio: Option<f64>,
    /// Full-batch `l(0) - l(s_upd)` along the fitted line.
    pub improvement: f64,
    /// Full-batch `l(0) - l(s_min)`.
    pub optimal_improvement: Option<f64>,
    pub accumulated_improvement: f64,
}

struct ReplayObserver<'a> {
    inner: HarnessObserver<'a>,
    oracle: &'a dyn LossOracle,
    rows: Vec<ReplayRow>,
    accumulated: f64,
}

impl RunObserver for ReplayObserver<'_> {
    fn on_record(&mut self, record: MetricsRecord, theta: &ParameterVector) {
        self.inner.on_record(record, theta);
    }

    fn on_line_search(&mut self, event: &LineSearchEvent<'_>) {
        let line_loss = |s: f64| -> f64 {
            let shifted = event.origin.offset_along(event.descent_direction, s);
            self.oracle.full_batch_loss(&shifted).unwrap_or(f64::NAN)
        };
        let l0 = line_loss(0.0);
        let proposal = event.fit.proposal;
        let improvement = l0 - line_loss(proposal.update_step);
        self.accumulated += improvement;
        let optimal_improvement = proposal.s_min.map(|s| l0 - line_loss(s));
        self.rows.push(ReplayRow {
            cycle: event.fit.cycle,
            t: event.fit.t,
            s_min: proposal.s_min,
            s_upd: proposal.update_step,
            grad_norm: event.fit.grad_norm,
            ratio: proposal.s_min.map(|s| s / event.fit.grad_norm),
            improvement,
            optimal_improvement,
            accumulated_improvement: self.accumulated,
        });
    }
}

/// Rewrites a labpal configuration into the replay preset: the probe uses
/// the whole training set, the proposal is reused for 100 steps and no
/// step adaptation is applied.
pub fn replay_preset(config: &RunConfig, dataset_size: usize) -> Result<RunConfig> {
    let Some((labpal_config, _)) = config.optimizer.labpal() else {
        return Err(HarnessError::ConfigGeneral(
            "replay needs a labpal optimizer".into(),
        ));
    };
    let mut preset = labpal_config.clone();
    preset.approximation_batch_size = dataset_size;
    preset.inference_batch_size = preset.inference_batch_size.min(dataset_size);
    preset.sgd_steps = 100;
    preset.alpha = 1.0;
    preset.schedule = BatchSizeSchedule::constant(1);
    let mut rewritten = config.clone();
    rewritten.optimizer = match config.optimizer {
        OptimizerSpec::LabpalNsgd(_) => OptimizerSpec::LabpalNsgd(preset),
        _ => OptimizerSpec::LabpalSgd(preset),
    };
    Ok(rewritten)
}

const REPLAY_HEADER: &str =
    "cycle,t,s_min,s_upd,grad_norm,ratio,improvement,optimal_improvement,accumulated_improvement";

fn write_rows(path: &Path, rows: &[ReplayRow]) -> Result<()> {
    let mut out = String::from(REPLAY_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.cycle,
            row.t,
            opt(row.s_min),
            row.s_upd,
            row.grad_norm,
            opt(row.ratio),
            row.improvement,
            opt(row.optimal_improvement),
            row.accumulated_improvement,
        );
    }
    fs::write(path, out).map_err(io_err(path))
}

pub struct ReplayReport {
    pub rows_per_run: Vec<Vec<ReplayRow>>,
    pub outcomes: Vec<RunOutcome>,
}

/// Runs the replay preset for every repeat, writing the usual metrics
/// files plus `replay_{i}.csv`.
pub fn replay_ground_truth_mode(config: &RunConfig) -> Result<ReplayReport> {
    let dir = &config.output.directory;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut rows_per_run = Vec::new();
    let mut outcomes = Vec::new();
    for run_index in 0..config.output.repeats {
        let seed = config.problem.seed() + run_index as u64;
        let problem = ProblemOracle::build(&config.problem, config.validation_split, seed)?;
        let oracle = problem.oracle();
        let preset = replay_preset(config, oracle.dataset().sample_count())?;
        let (effective, epsilon) =
            runner::effective_optimizer(&preset, oracle.dataset().sample_count())?;
        let labpal_config = match &effective {
            OptimizerSpec::LabpalSgd(c) | OptimizerSpec::LabpalNsgd(c) => c.clone(),
            _ => unreachable!("replay preset is always labpal"),
        };

        let metrics_path = dir.join(format!("metrics_{run_index}.csv"));
        let file = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
        let mut writer = BufWriter::new(file);
        crate::csv::write_header(&mut writer).map_err(io_err(&metrics_path))?;
        let theta0 = oracle.initial_parameters();
        let started = std::time::Instant::now();
        let (final_theta, stats, rows) = {
            let mut observer = ReplayObserver {
                inner: HarnessObserver::new(
                    oracle,
                    Some(&mut writer as &mut dyn Write),
                    config.output.full_batch_every,
                    config.output.validation_every,
                ),
                oracle,
                rows: Vec::new(),
                accumulated: 0.0,
            };
            let (theta, stats) = labpal::run(&labpal_config, oracle, theta0, seed, &mut observer)?;
            if let Some(err) = observer.inner.take_io_error() {
                return Err(HarnessError::Io {
                    path: metrics_path.clone(),
                    source: err,
                });
            }
            (theta, stats, observer.rows)
        };
        let wall_seconds = started.elapsed().as_secs_f64();
        writer.flush().map_err(io_err(&metrics_path))?;

        write_rows(&dir.join(format!("replay_{run_index}.csv")), &rows)?;
        let final_full_batch_loss = oracle
            .full_batch_loss(&final_theta)
            .unwrap_or(f64::INFINITY);
        let outcome = RunOutcome {
            seed,
            epsilon,
            final_full_batch_loss,
            final_val_loss: oracle.validation_loss(&final_theta),
            final_val_accuracy: oracle.validation_accuracy(&final_theta),
            best_full_batch_loss: final_full_batch_loss,
            best_val_accuracy: oracle.validation_accuracy(&final_theta),
            final_theta,
            stats,
            diverged: false,
            wall_seconds,
        };
        runner::write_summary(
            &dir.join(format!("summary_{run_index}.txt")),
            config,
            &outcome,
        )?;
        rows_per_run.push(rows);
        outcomes.push(outcome);
    }
    Ok(ReplayReport {
        rows_per_run,
        outcomes,
    })
}

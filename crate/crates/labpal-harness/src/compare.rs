//! Multi-optimizer comparison over a shared problem. SGD configs expand
//! into the tuned learning-rate grid unless the hyperparameters are
//! frozen; the best cell is selected on the lowest final validation loss
//! (final full-batch loss when the problem has no validation split).

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{OptimizerSpec, RunConfig};
use crate::error::{io_err, HarnessError, Result};
use crate::runner::{execute_run, RunOutcome};

/// Learning rates searched for the SGD baseline.
pub const SGD_LR_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

#[derive(Debug, Clone)]
pub struct ComparisonCell {
    pub label: String,
    /// Mean over repeats; infinite when every repeat diverged.
    pub final_full_batch_loss: f64,
    pub final_val_loss: Option<f64>,
    pub final_val_accuracy: Option<f64>,
    pub best_full_batch_loss: f64,
    pub diverged_runs: u32,
    pub repeats: u32,
}

impl ComparisonCell {
    /// Selection metric: validation loss when available, else the final
    /// full-batch loss; diverged cells never win.
    fn selection_loss(&self) -> f64 {
        if self.diverged_runs == self.repeats {
            return f64::INFINITY;
        }
        self.final_val_loss.unwrap_or(self.final_full_batch_loss)
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub cells: Vec<ComparisonCell>,
    /// Index of the winning cell per the selection metric.
    pub winner: usize,
    /// Index of the best SGD grid cell, when a grid was run.
    pub best_sgd: Option<usize>,
}

fn aggregate(label: String, outcomes: &[RunOutcome]) -> ComparisonCell {
    let completed: Vec<&RunOutcome> = outcomes.iter().filter(|o| !o.diverged).collect();
    let mean = |f: &dyn Fn(&RunOutcome) -> f64| -> f64 {
        if completed.is_empty() {
            f64::INFINITY
        } else {
            completed.iter().map(|o| f(o)).sum::<f64>() / completed.len() as f64
        }
    };
    let mean_opt = |f: &dyn Fn(&RunOutcome) -> Option<f64>| -> Option<f64> {
        let values: Vec<f64> = completed.iter().filter_map(|o| f(o)).collect();
        (!values.is_empty() && values.len() == completed.len())
            .then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    ComparisonCell {
        label,
        final_full_batch_loss: mean(&|o| o.final_full_batch_loss),
        final_val_loss: mean_opt(&|o| o.final_val_loss),
        final_val_accuracy: mean_opt(&|o| o.final_val_accuracy),
        best_full_batch_loss: mean(&|o| o.best_full_batch_loss),
        diverged_runs: (outcomes.len() - completed.len()) as u32,
        repeats: outcomes.len() as u32,
    }
}

fn run_cell(config: &RunConfig, label: String) -> Result<ComparisonCell> {
    let mut outcomes = Vec::new();
    for run_index in 0..config.output.repeats {
        outcomes.push(execute_run(config, run_index, None)?);
    }
    Ok(aggregate(label, &outcomes))
}

/// Runs every configuration (expanding SGD into the learning-rate grid
/// unless `frozen`) and assembles the comparison.
pub fn compare_runs(configs: &[RunConfig], frozen: bool) -> Result<ComparisonReport> {
    if configs.len() < 2 {
        return Err(HarnessError::ConfigGeneral(
            "compare needs at least two configurations".into(),
        ));
    }
    let reference = &configs[0];
    for other in &configs[1..] {
        if other.problem != reference.problem
            || other.validation_split != reference.validation_split
            || other.output.repeats != reference.output.repeats
        {
            return Err(HarnessError::ConfigGeneral(
                "compared configurations must share the problem spec and seed policy".into(),
            ));
        }
    }

    let mut cells = Vec::new();
    let mut sgd_cells: Vec<usize> = Vec::new();
    for config in configs {
        match (&config.optimizer, frozen) {
            (OptimizerSpec::Sgd(sgd), false) => {
                for lr in SGD_LR_GRID {
                    let mut cell_config = config.clone();
                    let mut cell_sgd = sgd.clone();
                    cell_sgd.learning_rate = lr;
                    cell_config.optimizer = OptimizerSpec::Sgd(cell_sgd);
                    sgd_cells.push(cells.len());
                    cells.push(run_cell(&cell_config, format!("sgd lr={lr}"))?);
                }
            }
            _ => {
                let label = match &config.optimizer {
                    OptimizerSpec::Sgd(c) => format!("sgd lr={}", c.learning_rate),
                    other => other.kind_name().to_string(),
                };
                cells.push(run_cell(config, label)?);
            }
        }
    }

    let winner = cells
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.selection_loss().partial_cmp(&b.1.selection_loss()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let best_sgd = sgd_cells
        .iter()
        .copied()
        .min_by(|&a, &b| {
            cells[a]
                .selection_loss()
                .partial_cmp(&cells[b].selection_loss())
                .unwrap()
        });
    Ok(ComparisonReport {
        cells,
        winner,
        best_sgd,
    })
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

/// Deterministic text table; no timing information, so identical inputs
/// reproduce the report byte for byte.
pub fn render_report(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>16} {:>16} {:>14} {:>16} {:>10}",
        "optimizer", "final_loss", "val_loss", "val_accuracy", "best_loss", "status"
    );
    let best_loss_winner = report
        .cells
        .iter()
        .enumerate()
        .min_by(|a, b| {
            a.1.best_full_batch_loss
                .partial_cmp(&b.1.best_full_batch_loss)
                .unwrap()
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let acc_winner = report
        .cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.final_val_accuracy.map(|a| (i, a)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(i, _)| i);
    for (index, cell) in report.cells.iter().enumerate() {
        let status = if cell.diverged_runs == cell.repeats {
            "diverged".to_string()
        } else if cell.diverged_runs > 0 {
            format!("{}/{} diverged", cell.diverged_runs, cell.repeats)
        } else {
            "ok".to_string()
        };
        let mark = |is_winner: bool| if is_winner { "*" } else { " " };
        let _ = writeln!(
            out,
            "{:<24} {:>15}{} {:>16} {:>13}{} {:>15}{} {:>10}",
            cell.label,
            format!("{:.6}", cell.final_full_batch_loss),
            mark(index == report.winner),
            fmt_opt(cell.final_val_loss),
            fmt_opt(cell.final_val_accuracy),
            mark(Some(index) == acc_winner),
            format!("{:.6}", cell.best_full_batch_loss),
            mark(index == best_loss_winner),
            status
        );
    }
    if let Some(best) = report.best_sgd {
        let _ = writeln!(out, "\nbest sgd grid cell: {}", report.cells[best].label);
    }
    let _ = writeln!(out, "winner: {}", report.cells[report.winner].label);
    out
}

pub fn write_report(report: &ComparisonReport, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    std::fs::write(path, render_report(report)).map_err(io_err(path))
}

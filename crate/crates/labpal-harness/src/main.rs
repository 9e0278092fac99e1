use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use labpal_harness::{
    compare, load_config, profile,
    profile::GridSpec,
    replay, runner, HarnessError,
};

#[derive(Parser)]
#[command(
    name = "labpal",
    about = "Parabolic-approximation line-search optimizer harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured training (with repeats) and write metrics CSVs,
    /// run summaries and final parameters.
    Train { config: PathBuf },
    /// Measure the full-batch loss along a line from a checkpoint and
    /// compare the three-point fit against the ground-truth minimizer.
    Profile {
        config: PathBuf,
        /// Parameter file (one value per line), e.g. a final_parameters
        /// file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grid as lo:hi:n; defaults to 167 points over [0, 2 s_min].
        #[arg(long)]
        grid: Option<String>,
    },
    /// Run several configurations over the same problem and write a
    /// comparison table.
    Compare {
        /// Two or more run configurations sharing the problem section.
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Use each config's hyperparameters as-is instead of expanding
        /// SGD into the tuned learning-rate grid.
        #[arg(long)]
        frozen: bool,
    },
    /// Ground-truth replay preset: full-dataset probes, 100-step reuse,
    /// no step adaptation; writes per-line-search improvement metrics.
    Replay { config: PathBuf },
}

fn run(cli: Cli) -> labpal_harness::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let config = load_config(&config)?;
            let report = runner::run_training(&config)?;
            for (index, outcome) in report.outcomes.iter().enumerate() {
                println!(
                    "run {index}: seed {} final_full_batch_loss {} ({})",
                    outcome.seed,
                    outcome.final_full_batch_loss,
                    if outcome.diverged { "diverged" } else { "ok" }
                );
            }
            if report.any_diverged {
                return Err(HarnessError::Divergence(labpal::Error::Divergence {
                    t: 0,
                    loss: f64::INFINITY,
                }));
            }
            Ok(())
        }
        Command::Profile {
            config,
            checkpoint,
            grid,
        } => {
            let config = load_config(&config)?;
            let theta = runner::read_parameters(&checkpoint)?;
            let grid = grid.as_deref().map(GridSpec::parse).transpose()?;
            let origin_id = checkpoint.display().to_string();
            let result = profile::profile_line(&config, &theta, grid, &origin_id)?;
            profile::write_profile(&config.output.directory, &result)?;
            println!(
                "profiled {} grid points: mae {} s_min_fit {:?} ground truth {}{}",
                result.grid.len(),
                result.mae,
                result.s_min_fit,
                result.s_min_ground_truth,
                if result.boundary_hit {
                    " (boundary hit)"
                } else {
                    ""
                }
            );
            Ok(())
        }
        Command::Compare {
            configs,
            out,
            frozen,
        } => {
            let loaded: labpal_harness::Result<Vec<_>> =
                configs.iter().map(|p| load_config(p)).collect();
            let report = compare::compare_runs(&loaded?, frozen)?;
            compare::write_report(&report, &out)?;
            print!("{}", compare::render_report(&report));
            Ok(())
        }
        Command::Replay { config } => {
            let config = load_config(&config)?;
            let report = replay::replay_ground_truth_mode(&config)?;
            for (index, rows) in report.rows_per_run.iter().enumerate() {
                println!("run {index}: {} line searches replayed", rows.len());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

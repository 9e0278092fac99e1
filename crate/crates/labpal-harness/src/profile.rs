//! Full-batch line profiler: the ground-truth instrument. Measures the
//! full-batch loss on a dense grid along a mini-batch descent direction,
//! fits the three-point parabola the optimizer would use, and compares
//! the fitted minimizer against a ternary-search refinement of the grid
//! argmin.

use std::fmt::Write as _;
use std::path::Path;

use labpal::sum::CompensatedSum;
use labpal::{
    fit_parabola, mean_abs_fit_error, parabola_min, BatchSampler, LineProbe, LossOracle,
    Parabola, ParameterVector,
};

use crate::config::RunConfig;
use crate::error::{io_err, HarnessError, Result};
use crate::runner::ProblemOracle;

/// `lo:hi:n` grid request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(HarnessError::ConfigGeneral(format!(
                "grid must be lo:hi:n, got `{text}`"
            )));
        }
        let lo: f64 = parts[0]
            .parse()
            .map_err(|_| HarnessError::ConfigGeneral(format!("bad grid lo `{}`", parts[0])))?;
        let hi: f64 = parts[1]
            .parse()
            .map_err(|_| HarnessError::ConfigGeneral(format!("bad grid hi `{}`", parts[1])))?;
        let n: usize = parts[2]
            .parse()
            .map_err(|_| HarnessError::ConfigGeneral(format!("bad grid count `{}`", parts[2])))?;
        if !(hi > lo) || n < 3 {
            return Err(HarnessError::ConfigGeneral(
                "grid needs hi > lo and at least 3 points".into(),
            ));
        }
        Ok(Self { lo, hi, n })
    }
}

/// Measured line: grid of full-batch losses, the probe fit, and the
/// ground-truth minimizer.
#[derive(Debug, Clone)]
pub struct LineProfile {
    pub origin_id: String,
    pub direction_id: String,
    pub grid: Vec<(f64, f64)>,
    pub parabola: Parabola,
    pub mae: f64,
    pub s_min_fit: Option<f64>,
    /// Grid argmin refined by ternary search (to 1e-8 step tolerance).
    pub s_min_ground_truth: f64,
    pub grad_norm: f64,
    /// `s_min_fit / grad_norm`.
    pub ratio: Option<f64>,
    /// Ground-truth minimizer sits on a grid endpoint.
    pub boundary_hit: bool,
    /// The fit had no positive curvature (or no usable direction).
    pub flat: bool,
}

/// Number of grid points when no grid is requested, mirroring the
/// ground-truth measurement protocol's resolution.
pub const DEFAULT_GRID_POINTS: usize = 167;

pub struct ProfileRequest<'a> {
    pub probe_points: [f64; 3],
    pub approximation_batch_size: usize,
    pub inference_batch_size: usize,
    pub alpha: f64,
    pub seed: u64,
    pub grid: Option<GridSpec>,
    pub origin_id: &'a str,
}

/// Profiles the full-batch loss along one line from `checkpoint`.
///
/// The direction comes from a single inference batch (zero gradient
/// falls back to the first coordinate axis and flags the profile flat);
/// the probe accumulates `approximation_batch_size` samples exactly like
/// the optimizer would.
pub fn profile_line_on(
    oracle: &dyn LossOracle,
    checkpoint: &ParameterVector,
    request: &ProfileRequest<'_>,
) -> Result<LineProfile> {
    if checkpoint.dim() != oracle.dim() {
        return Err(HarnessError::ConfigGeneral(format!(
            "checkpoint has {} parameters, problem needs {}",
            checkpoint.dim(),
            oracle.dim()
        )));
    }
    let mut sampler = BatchSampler::new(oracle.dataset(), request.seed);
    let direction_batch = sampler.next_batch(request.inference_batch_size)?;
    let grad = oracle.batch_gradient(checkpoint, &direction_batch)?;
    let grad_norm = grad.norm();
    let mut flat = false;
    let direction: Vec<f64> = if grad_norm == 0.0 {
        flat = true;
        let mut axis = vec![0.0; oracle.dim()];
        axis[0] = -1.0;
        axis
    } else {
        grad.values().iter().map(|g| -g / grad_norm).collect()
    };
    let direction_id = format!(
        "batch(seed={}, size={})",
        request.seed,
        direction_batch.size()
    );

    // Probe accumulation: same samples at all three abscissae.
    let mut sums = [CompensatedSum::new(); 3];
    let mut sample_count = 0usize;
    let mut accumulated = direction_batch.size();
    let mut batches = vec![direction_batch];
    while accumulated < request.approximation_batch_size {
        let batch = sampler.next_batch(request.inference_batch_size)?;
        accumulated += batch.size();
        batches.push(batch);
    }
    for (slot, &s) in request.probe_points.iter().enumerate() {
        let shifted = checkpoint.offset_along(&direction, s);
        for batch in &batches {
            let loss = oracle.batch_loss(&shifted, batch)?;
            sums[slot].add(loss * batch.size() as f64);
        }
    }
    for batch in &batches {
        sample_count += batch.size();
    }

    let points = [
        (
            request.probe_points[0],
            sums[0].value() / sample_count as f64,
        ),
        (
            request.probe_points[1],
            sums[1].value() / sample_count as f64,
        ),
        (
            request.probe_points[2],
            sums[2].value() / sample_count as f64,
        ),
    ];
    let probe = LineProbe::new(points, sample_count)?;
    let parabola = fit_parabola(&probe)?;
    let s_min_fit = match parabola_min(&parabola) {
        Ok(s) => Some(s),
        Err(_) => {
            flat = true;
            None
        }
    };

    let grid_spec = request.grid.unwrap_or_else(|| {
        let hi = match s_min_fit {
            Some(s) if s > 0.0 => (2.0 * s).max(request.probe_points[2]),
            _ => request.probe_points[2],
        };
        GridSpec {
            lo: 0.0,
            hi,
            n: DEFAULT_GRID_POINTS,
        }
    });

    let line_loss = |s: f64| -> Result<f64> {
        let shifted = checkpoint.offset_along(&direction, s);
        Ok(oracle.full_batch_loss(&shifted)?)
    };

    let mut grid = Vec::with_capacity(grid_spec.n);
    let span = grid_spec.hi - grid_spec.lo;
    for i in 0..grid_spec.n {
        let s = grid_spec.lo + span * i as f64 / (grid_spec.n - 1) as f64;
        grid.push((s, line_loss(s)?));
    }

    let argmin = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let boundary_hit = argmin == 0 || argmin == grid.len() - 1;
    let s_min_ground_truth = if boundary_hit {
        grid[argmin].0
    } else {
        ternary_refine(
            &line_loss,
            grid[argmin - 1].0,
            grid[argmin + 1].0,
            1e-8,
        )?
    };

    let mae = mean_abs_fit_error(&parabola, &grid);

    // Overshoot identity on the fitted parabola: the improvement at
    // alpha * s_min is alpha (2 - alpha) times the optimal improvement.
    if let Some(s_min) = s_min_fit {
        if s_min > 0.0 {
            let optimal = parabola.eval(0.0) - parabola.eval(s_min);
            let at_alpha = parabola.eval(0.0) - parabola.eval(request.alpha * s_min);
            let expected = request.alpha * (2.0 - request.alpha) * optimal;
            if (at_alpha - expected).abs() > 1e-9 * optimal.abs().max(1.0) {
                return Err(HarnessError::Oracle(labpal::Error::Internal(format!(
                    "overshoot identity violated: {at_alpha} vs {expected}"
                ))));
            }
        }
    }

    Ok(LineProfile {
        origin_id: request.origin_id.to_string(),
        direction_id,
        grid,
        parabola,
        mae,
        s_min_fit,
        s_min_ground_truth,
        grad_norm,
        ratio: s_min_fit.map(|s| s / grad_norm).filter(|r| r.is_finite()),
        boundary_hit,
        flat,
    })
}

/// Ternary search on a unimodal function over `[lo, hi]` until the
/// bracket is narrower than `tol`.
fn ternary_refine(
    f: &dyn Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64> {
    while hi - lo > tol {
        let third = (hi - lo) / 3.0;
        let a = lo + third;
        let b = hi - third;
        if f(a)? <= f(b)? {
            hi = b;
        } else {
            lo = a;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Config-level wrapper: builds the problem oracle, loads the checkpoint
/// and profiles with the optimizer's probe settings.
pub fn profile_line(
    config: &RunConfig,
    checkpoint: &ParameterVector,
    grid: Option<GridSpec>,
    origin_id: &str,
) -> Result<LineProfile> {
    let seed = config.problem.seed();
    let problem = ProblemOracle::build(&config.problem, config.validation_split, seed)?;
    let (probe_points, approximation, inference, alpha) = match config.optimizer.labpal() {
        Some((c, _)) => (
            c.probe_points,
            c.approximation_batch_size,
            c.inference_batch_size,
            c.alpha,
        ),
        None => {
            let d = labpal::LabpalConfig::default();
            (
                d.probe_points,
                d.approximation_batch_size.min(problem.oracle().dataset().sample_count()),
                d.inference_batch_size.min(problem.oracle().dataset().sample_count()),
                d.alpha,
            )
        }
    };
    profile_line_on(
        problem.oracle(),
        checkpoint,
        &ProfileRequest {
            probe_points,
            approximation_batch_size: approximation,
            inference_batch_size: inference,
            alpha,
            seed,
            grid,
            origin_id,
        },
    )
}

fn optional(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `profile.txt` (scalars) and `profile_grid.csv` (the measured
/// line and the fitted parabola).
pub fn write_profile(dir: &Path, profile: &LineProfile) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = String::new();
    let _ = writeln!(out, "origin = {}", profile.origin_id);
    let _ = writeln!(out, "direction = {}", profile.direction_id);
    let _ = writeln!(out, "grid_points = {}", profile.grid.len());
    let _ = writeln!(out, "parabola_a = {}", profile.parabola.a);
    let _ = writeln!(out, "parabola_b = {}", profile.parabola.b);
    let _ = writeln!(out, "parabola_c = {}", profile.parabola.c);
    let _ = writeln!(out, "mae = {}", profile.mae);
    let _ = writeln!(out, "s_min_fit = {}", optional(profile.s_min_fit));
    let _ = writeln!(out, "s_min_ground_truth = {}", profile.s_min_ground_truth);
    let _ = writeln!(out, "grad_norm = {}", profile.grad_norm);
    let _ = writeln!(out, "ratio_s_min_to_grad_norm = {}", optional(profile.ratio));
    let _ = writeln!(out, "boundary_hit = {}", profile.boundary_hit);
    let _ = writeln!(out, "flat = {}", profile.flat);
    let path = dir.join("profile.txt");
    std::fs::write(&path, out).map_err(io_err(&path))?;

    let mut csv = String::from("s,full_batch_loss,parabola\n");
    for &(s, loss) in &profile.grid {
        let _ = writeln!(csv, "{s},{loss},{}", profile.parabola.eval(s));
    }
    let path = dir.join("profile_grid.csv");
    std::fs::write(&path, csv).map_err(io_err(&path))?;
    Ok(())
}

//! Flat `key = value` run configuration with bracketed sections.
//!
//! Sections are `[problem]`, `[optimizer]`, `[schedule]` and `[output]`;
//! `#` starts a comment. Unknown sections or keys are errors, reported
//! with their line number. Absent keys take the documented defaults.

use std::path::{Path, PathBuf};

use labpal::baseline::{NsgdConfig, PiecewiseLrSchedule, SgdConfig};
use labpal::{BatchSizeSchedule, LabpalConfig, Variant};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Quadratic {
        dim: usize,
        sample_count: usize,
        noise: f64,
        seed: u64,
        eig_min: f64,
        eig_max: f64,
        init_distance: f64,
    },
    Mlp {
        layer_sizes: Vec<usize>,
        sample_count: usize,
        class_count: usize,
        seed: u64,
        blob_spread: f64,
    },
}

impl ProblemSpec {
    pub fn seed(&self) -> u64 {
        match self {
            ProblemSpec::Quadratic { seed, .. } => *seed,
            ProblemSpec::Mlp { seed, .. } => *seed,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ProblemSpec::Quadratic { .. } => "stochastic-quadratic",
            ProblemSpec::Mlp { .. } => "mlp-classifier",
        }
    }

    pub fn sample_count(&self) -> usize {
        match self {
            ProblemSpec::Quadratic { sample_count, .. } => *sample_count,
            ProblemSpec::Mlp { sample_count, .. } => *sample_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonMode {
    Off,
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerSpec {
    LabpalSgd(LabpalConfig),
    LabpalNsgd(LabpalConfig),
    Sgd(SgdConfig),
    Nsgd(NsgdConfig),
}

impl OptimizerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            OptimizerSpec::LabpalSgd(_) => "labpal-sgd",
            OptimizerSpec::LabpalNsgd(_) => "labpal-nsgd",
            OptimizerSpec::Sgd(_) => "sgd",
            OptimizerSpec::Nsgd(_) => "nsgd",
        }
    }

    pub fn labpal(&self) -> Option<(&LabpalConfig, Variant)> {
        match self {
            OptimizerSpec::LabpalSgd(c) => Some((c, Variant::Sgd)),
            OptimizerSpec::LabpalNsgd(c) => Some((c, Variant::Nsgd)),
            _ => None,
        }
    }

    pub fn t_max(&self) -> u64 {
        match self {
            OptimizerSpec::LabpalSgd(c) | OptimizerSpec::LabpalNsgd(c) => c.t_max,
            OptimizerSpec::Sgd(c) => c.t_max,
            OptimizerSpec::Nsgd(c) => c.t_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub directory: PathBuf,
    /// Compute the full-batch loss every this many records.
    pub full_batch_every: u64,
    /// Compute validation metrics every this many records.
    pub validation_every: u64,
    pub repeats: u32,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            full_batch_every: 100,
            validation_every: 250,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub validation_split: f64,
    pub optimizer: OptimizerSpec,
    pub epsilon: EpsilonMode,
    pub output: OutputSpec,
}

/// One parsed `key = value` line.
#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    key: String,
    value: String,
    consumed: bool,
}

struct Section {
    name: String,
    entries: Vec<Entry>,
}

struct Parsed {
    path: String,
    sections: Vec<Section>,
}

impl Parsed {
    fn err(&self, line: usize, message: impl Into<String>) -> HarnessError {
        HarnessError::Config {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn section(&mut self, name: &str) -> Option<&mut Section> {
        self.sections.iter_mut().find(|s| s.name == name)
    }

    /// Takes a key's value out of a section, marking it consumed.
    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        let section = self.section(section)?;
        let entry = section
            .entries
            .iter_mut()
            .find(|e| e.key == key && !e.consumed)?;
        entry.consumed = true;
        Some((entry.line, entry.value.clone()))
    }

    /// Every key must have been consumed by now.
    fn finish(&self) -> Result<()> {
        for section in &self.sections {
            for entry in &section.entries {
                if !entry.consumed {
                    return Err(self.err(
                        entry.line,
                        format!("unknown key `{}` in [{}]", entry.key, section.name),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn parse_file(path: &Path) -> Result<Parsed> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let path_str = path.display().to_string();
    let mut sections: Vec<Section> = Vec::new();
    let known = ["problem", "optimizer", "schedule", "output"];
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            if !content.ends_with(']') {
                return Err(HarnessError::Config {
                    path: path_str,
                    line,
                    message: format!("malformed section header `{content}`"),
                });
            }
            let name = content[1..content.len() - 1].trim().to_string();
            if !known.contains(&name.as_str()) {
                return Err(HarnessError::Config {
                    path: path_str,
                    line,
                    message: format!("unknown section `[{name}]`"),
                });
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(HarnessError::Config {
                    path: path_str,
                    line,
                    message: format!("duplicate section `[{name}]`"),
                });
            }
            sections.push(Section {
                name,
                entries: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(HarnessError::Config {
                path: path_str,
                line,
                message: format!("expected `key = value`, got `{content}`"),
            });
        };
        let Some(section) = sections.last_mut() else {
            return Err(HarnessError::Config {
                path: path_str,
                line,
                message: "key outside of any section".into(),
            });
        };
        let key = key.trim().to_string();
        if section.entries.iter().any(|e| e.key == key) {
            return Err(HarnessError::Config {
                path: path_str,
                line,
                message: format!("duplicate key `{key}` in [{}]", section.name),
            });
        }
        section.entries.push(Entry {
            line,
            key,
            value: value.trim().to_string(),
            consumed: false,
        });
    }
    Ok(Parsed {
        path: path_str,
        sections,
    })
}

macro_rules! parse_value {
    ($parsed:expr, $line:expr, $value:expr, $ty:ty, $what:expr) => {
        $value.parse::<$ty>().map_err(|_| {
            $parsed.err($line, format!("cannot parse `{}` as {}", $value, $what))
        })
    };
}

/// Loads, validates and defaults a run configuration.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let mut parsed = parse_file(path)?;

    let problem = read_problem(&mut parsed)?;
    let validation_split = match parsed.take("problem", "validation_split") {
        Some((line, v)) => {
            let split = parse_value!(parsed, line, v, f64, "a number")?;
            if !(0.0..=0.5).contains(&split) {
                return Err(parsed.err(line, format!("validation_split = {split} outside [0, 0.5]")));
            }
            if matches!(problem, ProblemSpec::Quadratic { .. }) && split > 0.0 {
                return Err(parsed.err(
                    line,
                    "validation_split is not supported for stochastic-quadratic \
                     (holding out samples would break the exact-quadratic mean)",
                ));
            }
            split
        }
        None => 0.0,
    };

    let batch_schedule = read_batch_schedule(&mut parsed)?;
    let lr_schedule = read_lr_schedule(&mut parsed)?;
    let (optimizer, epsilon) = read_optimizer(&mut parsed, batch_schedule, lr_schedule)?;
    let output = read_output(&mut parsed)?;

    parsed.finish()?;

    let config = RunConfig {
        problem,
        validation_split,
        optimizer,
        epsilon,
        output,
    };
    cross_validate(&config)?;
    Ok(config)
}

fn read_problem(parsed: &mut Parsed) -> Result<ProblemSpec> {
    let kind = match parsed.take("problem", "kind") {
        Some((line, v)) => match v.as_str() {
            "stochastic-quadratic" | "mlp-classifier" => v,
            other => {
                return Err(parsed.err(
                    line,
                    format!(
                        "unknown problem kind `{other}` \
                         (expected stochastic-quadratic or mlp-classifier)"
                    ),
                ))
            }
        },
        None => "stochastic-quadratic".to_string(),
    };
    let seed = match parsed.take("problem", "seed") {
        Some((line, v)) => parse_value!(parsed, line, v, u64, "an unsigned integer")?,
        None => 0,
    };
    let sample_count = match parsed.take("problem", "sample_count") {
        Some((line, v)) => {
            let n = parse_value!(parsed, line, v, usize, "a positive integer")?;
            if n == 0 {
                return Err(parsed.err(line, "sample_count must be positive"));
            }
            n
        }
        None => 2000,
    };

    if kind == "stochastic-quadratic" {
        let dim = match parsed.take("problem", "dim") {
            Some((line, v)) => parse_value!(parsed, line, v, usize, "a positive integer")?,
            None => 10,
        };
        let noise = match parsed.take("problem", "noise") {
            Some((line, v)) => {
                let noise = parse_value!(parsed, line, v, f64, "a number")?;
                if noise < 0.0 {
                    return Err(parsed.err(line, "noise must be >= 0"));
                }
                noise
            }
            None => 0.0,
        };
        let eig_min = match parsed.take("problem", "eig_min") {
            Some((line, v)) => parse_value!(parsed, line, v, f64, "a number")?,
            None => 0.1,
        };
        let eig_max = match parsed.take("problem", "eig_max") {
            Some((line, v)) => parse_value!(parsed, line, v, f64, "a number")?,
            None => 10.0,
        };
        let init_distance = match parsed.take("problem", "init_distance") {
            Some((line, v)) => parse_value!(parsed, line, v, f64, "a number")?,
            None => 1.0,
        };
        Ok(ProblemSpec::Quadratic {
            dim,
            sample_count,
            noise,
            seed,
            eig_min,
            eig_max,
            init_distance,
        })
    } else {
        let layer_sizes = match parsed.take("problem", "layer_sizes") {
            Some((line, v)) => {
                let sizes: std::result::Result<Vec<usize>, _> =
                    v.split(',').map(|s| s.trim().parse::<usize>()).collect();
                sizes.map_err(|_| {
                    parsed.err(line, format!("cannot parse `{v}` as a list of layer sizes"))
                })?
            }
            None => vec![2, 16, 2],
        };
        let class_count = match parsed.take("problem", "class_count") {
            Some((line, v)) => parse_value!(parsed, line, v, usize, "a positive integer")?,
            None => *layer_sizes.last().unwrap_or(&2),
        };
        let blob_spread = match parsed.take("problem", "blob_spread") {
            Some((line, v)) => parse_value!(parsed, line, v, f64, "a number")?,
            None => 3.0,
        };
        Ok(ProblemSpec::Mlp {
            layer_sizes,
            sample_count,
            class_count,
            seed,
            blob_spread,
        })
    }
}

fn read_batch_schedule(parsed: &mut Parsed) -> Result<BatchSizeSchedule> {
    let breaks = match parsed.take("schedule", "batch_breaks") {
        Some((line, v)) => Some((line, parse_f64_list(parsed, line, &v)?)),
        None => None,
    };
    let multipliers = match parsed.take("schedule", "batch_multipliers") {
        Some((line, v)) => Some((line, parse_u32_list(parsed, line, &v)?)),
        None => None,
    };
    match (breaks, multipliers) {
        (None, None) => Ok(BatchSizeSchedule::default()),
        (Some((line, _)), None) | (None, Some((line, _))) => Err(parsed.err(
            line,
            "batch_breaks and batch_multipliers must be given together",
        )),
        (Some((line, breaks)), Some((mline, multipliers))) => {
            if multipliers.len() != breaks.len() + 1 {
                return Err(parsed.err(
                    mline,
                    format!(
                        "expected {} multipliers for {} breakpoints",
                        breaks.len() + 1,
                        breaks.len()
                    ),
                ));
            }
            let segments: Vec<(f64, u32)> = breaks
                .iter()
                .cloned()
                .zip(multipliers.iter().cloned())
                .collect();
            BatchSizeSchedule::new(segments, *multipliers.last().unwrap())
                .map_err(|e| parsed.err(line, e.to_string()))
        }
    }
}

fn read_lr_schedule(parsed: &mut Parsed) -> Result<PiecewiseLrSchedule> {
    let breaks = match parsed.take("schedule", "lr_breaks") {
        Some((line, v)) => Some((line, parse_f64_list(parsed, line, &v)?)),
        None => None,
    };
    let divisors = match parsed.take("schedule", "lr_divisors") {
        Some((line, v)) => Some((line, parse_f64_list(parsed, line, &v)?)),
        None => None,
    };
    match (breaks, divisors) {
        (None, None) => Ok(PiecewiseLrSchedule::default()),
        (Some((line, _)), None) | (None, Some((line, _))) => Err(parsed.err(
            line,
            "lr_breaks and lr_divisors must be given together",
        )),
        (Some((line, breaks)), Some((dline, divisors))) => {
            if divisors.len() != breaks.len() + 1 {
                return Err(parsed.err(
                    dline,
                    format!(
                        "expected {} divisors for {} breakpoints",
                        breaks.len() + 1,
                        breaks.len()
                    ),
                ));
            }
            let segments: Vec<(f64, f64)> = breaks
                .iter()
                .cloned()
                .zip(divisors.iter().cloned())
                .collect();
            PiecewiseLrSchedule::new(segments, *divisors.last().unwrap())
                .map_err(|e| parsed.err(line, e.to_string()))
        }
    }
}

fn read_optimizer(
    parsed: &mut Parsed,
    batch_schedule: BatchSizeSchedule,
    lr_schedule: PiecewiseLrSchedule,
) -> Result<(OptimizerSpec, EpsilonMode)> {
    let kind = match parsed.take("optimizer", "kind") {
        Some((line, v)) => match v.as_str() {
            "labpal-sgd" | "labpal-nsgd" | "sgd" | "nsgd" => v,
            other => {
                return Err(parsed.err(
                    line,
                    format!(
                        "unknown optimizer kind `{other}` \
                         (expected labpal-sgd, labpal-nsgd, sgd or nsgd)"
                    ),
                ))
            }
        },
        None => "labpal-sgd".to_string(),
    };

    let t_max = match parsed.take("optimizer", "t_max") {
        Some((line, v)) => Some(parse_value!(parsed, line, v, u64, "an unsigned integer")?),
        None => None,
    };
    let momentum = match parsed.take("optimizer", "momentum") {
        Some((line, v)) => {
            let m = parse_value!(parsed, line, v, f64, "a number")?;
            if !(0.0..1.0).contains(&m) {
                return Err(parsed.err(line, format!("momentum = {m} outside [0, 1)")));
            }
            Some(m)
        }
        None => None,
    };

    let epsilon = match parsed.take("optimizer", "epsilon_adaptation") {
        Some((line, v)) => {
            if !kind.starts_with("labpal") {
                return Err(parsed.err(
                    line,
                    "epsilon_adaptation only applies to labpal optimizers",
                ));
            }
            match v.as_str() {
                "off" => EpsilonMode::Off,
                "auto" => EpsilonMode::Auto,
                other => {
                    let eps = parse_value!(parsed, line, other.to_string(), f64, "a number")?;
                    if !(eps > 0.0) {
                        return Err(parsed.err(line, "epsilon_adaptation must be positive"));
                    }
                    EpsilonMode::Fixed(eps)
                }
            }
        }
        None => EpsilonMode::Off,
    };

    let spec = if kind.starts_with("labpal") {
        let mut config = LabpalConfig {
            schedule: batch_schedule,
            variant: if kind == "labpal-nsgd" {
                Variant::Nsgd
            } else {
                Variant::Sgd
            },
            ..LabpalConfig::default()
        };
        if let Some((line, v)) = parsed.take("optimizer", "approximation_batch_size") {
            config.approximation_batch_size =
                parse_value!(parsed, line, v, usize, "a positive integer")?;
        }
        if let Some((line, v)) = parsed.take("optimizer", "inference_batch_size") {
            config.inference_batch_size =
                parse_value!(parsed, line, v, usize, "a positive integer")?;
        }
        if let Some((line, v)) = parsed.take("optimizer", "sgd_steps") {
            config.sgd_steps = parse_value!(parsed, line, v, u64, "an unsigned integer")?;
        }
        if let Some((line, v)) = parsed.take("optimizer", "alpha") {
            let alpha = parse_value!(parsed, line, v, f64, "a number")?;
            if !(1.0..2.0).contains(&alpha) {
                return Err(parsed.err(line, format!("alpha = {alpha} outside [1, 2)")));
            }
            config.alpha = alpha;
        }
        if let Some((line, v)) = parsed.take("optimizer", "max_step") {
            let max_step = parse_value!(parsed, line, v, f64, "a number")?;
            if !(max_step > 0.0) {
                return Err(parsed.err(line, "max_step must be positive"));
            }
            config.max_step = max_step;
        }
        if let Some((line, v)) = parsed.take("optimizer", "probe_points") {
            let points = parse_f64_list(parsed, line, &v)?;
            if points.len() != 3 {
                return Err(parsed.err(line, "probe_points needs exactly three values"));
            }
            config.probe_points = [points[0], points[1], points[2]];
        }
        if let Some(t) = t_max {
            config.t_max = t;
        }
        if let Some(m) = momentum {
            config.momentum = m;
        }
        if kind == "labpal-nsgd" {
            OptimizerSpec::LabpalNsgd(config)
        } else {
            OptimizerSpec::LabpalSgd(config)
        }
    } else if kind == "sgd" {
        let mut config = SgdConfig {
            schedule: lr_schedule,
            ..SgdConfig::default()
        };
        if let Some((line, v)) = parsed.take("optimizer", "learning_rate") {
            let lr = parse_value!(parsed, line, v, f64, "a number")?;
            if !(lr > 0.0) {
                return Err(parsed.err(line, "learning_rate must be positive"));
            }
            config.learning_rate = lr;
        }
        if let Some((line, v)) = parsed.take("optimizer", "batch_size") {
            config.batch_size = parse_value!(parsed, line, v, usize, "a positive integer")?;
        }
        if let Some(t) = t_max {
            config.t_max = t;
        }
        if let Some(m) = momentum {
            config.momentum = m;
        }
        OptimizerSpec::Sgd(config)
    } else {
        let mut config = NsgdConfig::default();
        if let Some((line, v)) = parsed.take("optimizer", "step_size") {
            let s = parse_value!(parsed, line, v, f64, "a number")?;
            if !(s > 0.0) {
                return Err(parsed.err(line, "step_size must be positive"));
            }
            config.step_size = s;
        }
        if let Some((line, v)) = parsed.take("optimizer", "batch_size") {
            config.batch_size = parse_value!(parsed, line, v, usize, "a positive integer")?;
        }
        if let Some(t) = t_max {
            config.t_max = t;
        }
        if let Some(m) = momentum {
            config.momentum = m;
        }
        OptimizerSpec::Nsgd(config)
    };
    Ok((spec, epsilon))
}

fn read_output(parsed: &mut Parsed) -> Result<OutputSpec> {
    let mut output = OutputSpec::default();
    if let Some((_, v)) = parsed.take("output", "directory") {
        output.directory = PathBuf::from(v);
    }
    if let Some((line, v)) = parsed.take("output", "full_batch_every") {
        output.full_batch_every = parse_value!(parsed, line, v, u64, "a positive integer")?;
        if output.full_batch_every == 0 {
            return Err(parsed.err(line, "full_batch_every must be positive"));
        }
    }
    if let Some((line, v)) = parsed.take("output", "validation_every") {
        output.validation_every = parse_value!(parsed, line, v, u64, "a positive integer")?;
        if output.validation_every == 0 {
            return Err(parsed.err(line, "validation_every must be positive"));
        }
    }
    if let Some((line, v)) = parsed.take("output", "repeats") {
        output.repeats = parse_value!(parsed, line, v, u32, "a positive integer")?;
        if output.repeats == 0 {
            return Err(parsed.err(line, "repeats must be positive"));
        }
    }
    Ok(output)
}

fn parse_f64_list(parsed: &Parsed, line: usize, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| parsed.err(line, format!("cannot parse `{s}` as a number")))
        })
        .collect()
}

fn parse_u32_list(parsed: &Parsed, line: usize, value: &str) -> Result<Vec<u32>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| parsed.err(line, format!("cannot parse `{s}` as an integer")))
        })
        .collect()
}

fn cross_validate(config: &RunConfig) -> Result<()> {
    match &config.problem {
        ProblemSpec::Quadratic {
            dim,
            sample_count,
            eig_min,
            eig_max,
            ..
        } => {
            if *dim == 0 {
                return Err(HarnessError::ConfigGeneral("dim must be positive".into()));
            }
            if *sample_count < 2 {
                return Err(HarnessError::ConfigGeneral(
                    "stochastic-quadratic needs sample_count >= 2".into(),
                ));
            }
            if !(*eig_min > 0.0 && eig_max >= eig_min) {
                return Err(HarnessError::ConfigGeneral(
                    "eigenvalue range must satisfy 0 < eig_min <= eig_max".into(),
                ));
            }
        }
        ProblemSpec::Mlp {
            layer_sizes,
            sample_count,
            class_count,
            ..
        } => {
            if layer_sizes.len() < 3 {
                return Err(HarnessError::ConfigGeneral(
                    "mlp-classifier needs at least one hidden layer".into(),
                ));
            }
            if layer_sizes.last() != Some(class_count) {
                return Err(HarnessError::ConfigGeneral(format!(
                    "output layer size {} must equal class_count {class_count}",
                    layer_sizes.last().unwrap()
                )));
            }
            if sample_count < class_count {
                return Err(HarnessError::ConfigGeneral(
                    "sample_count must be >= class_count".into(),
                ));
            }
        }
    }
    if let Some((labpal, _)) = config.optimizer.labpal() {
        labpal.validate()?;
    }
    match &config.optimizer {
        OptimizerSpec::Sgd(c) => c.validate()?,
        OptimizerSpec::Nsgd(c) => c.validate()?,
        _ => {}
    }
    Ok(())
}


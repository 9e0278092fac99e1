//! Metrics CSV: header row, one record per super-batch, optional columns
//! empty but present.

use std::io::Write;
use std::path::Path;

use labpal::MetricsRecord;

use crate::error::{io_err, Result};

pub const HEADER: &str =
    "t,phase,train_loss,full_batch_loss,val_accuracy,learning_rate,update_step,grad_norm,k,fallback";

pub fn write_header(out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{HEADER}")
}

fn optional(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_record(out: &mut impl Write, record: &MetricsRecord) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{}",
        record.t,
        record.phase.as_str(),
        record.train_loss,
        optional(record.full_batch_loss),
        optional(record.val_accuracy),
        record.learning_rate,
        record.update_step,
        record.grad_norm,
        record.k,
        record.fallback as u8,
    )
}

/// Parsed-back metrics row (used by the report assembly and tests).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: u64,
    pub phase: String,
    pub train_loss: f64,
    pub full_batch_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub learning_rate: f64,
    pub update_step: f64,
    pub grad_norm: f64,
    pub k: u32,
    pub fallback: bool,
}

pub fn read_rows(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != HEADER {
        return Err(crate::error::HarnessError::ConfigGeneral(format!(
            "unexpected metrics header in {}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(crate::error::HarnessError::ConfigGeneral(format!(
                "malformed metrics row in {}: `{line}`",
                path.display()
            )));
        }
        let opt = |s: &str| -> Option<f64> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        rows.push(CsvRow {
            t: fields[0].parse().unwrap_or(0),
            phase: fields[1].to_string(),
            train_loss: fields[2].parse().unwrap_or(f64::NAN),
            full_batch_loss: opt(fields[3]),
            val_accuracy: opt(fields[4]),
            learning_rate: fields[5].parse().unwrap_or(f64::NAN),
            update_step: fields[6].parse().unwrap_or(f64::NAN),
            grad_norm: fields[7].parse().unwrap_or(f64::NAN),
            k: fields[8].parse().unwrap_or(0),
            fallback: fields[9] == "1",
        });
    }
    Ok(rows)
}

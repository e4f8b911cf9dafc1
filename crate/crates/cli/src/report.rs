//! CSV report writers and the multi-run merge.
//!
//! All files are UTF-8 with LF line endings, header row mandatory, column
//! order fixed. Floats use the shortest representation that parses back
//! exactly, so identical inputs always produce identical bytes.

use std::path::{Path, PathBuf};

use ratio_forge_core::diagnostics::DynamicsReport;
use ratio_forge_core::sim::TrainMetrics;

use crate::error::CliError;

pub const DYNAMICS_HEADER: [&str; 11] = [
    "phase",
    "up_prop",
    "down_prop",
    "on_prop",
    "up_rl",
    "down_rl",
    "on_rl",
    "switch_freq",
    "lfr",
    "glob_var",
    "win_var",
];

pub const METRICS_HEADER: [&str; 5] = ["step", "reward_mean", "entropy", "clip_fraction", "pg_loss"];

pub const LOSS_HEADER: [&str; 8] = [
    "group_id",
    "sample_id",
    "method",
    "score",
    "advantage",
    "loss",
    "clip_fraction",
    "degenerate",
];

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn open_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

/// Shortest exact representation, using the exponent form outside the
/// range where plain decimal stays compact.
pub fn fmt(value: f64) -> String {
    let magnitude = value.abs();
    if value != 0.0 && !(1e-4..1e16).contains(&magnitude) {
        format!("{value:e}")
    } else {
        value.to_string()
    }
}

/// Writes labeled dynamics rows in the fixed Table-style layout.
pub fn write_dynamics_csv(
    path: &Path,
    rows: &[(&str, &DynamicsReport)],
) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    writer.write_record(DYNAMICS_HEADER).map_err(|e| io_err(path, e))?;
    for (label, report) in rows {
        let (up, down, on) = report.proportions;
        let (up_rl, down_rl, on_rl) = report.mean_run_lengths;
        writer
            .write_record([
                label.to_string(),
                fmt(up),
                fmt(down),
                fmt(on),
                fmt(up_rl),
                fmt(down_rl),
                fmt(on_rl),
                fmt(report.switch_frequency),
                fmt(report.lfr),
                fmt(report.global_variance),
                fmt(report.windowed_local_variance),
            ])
            .map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Writes the per-step training metrics timeline.
pub fn write_metrics_csv(path: &Path, metrics: &TrainMetrics) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    writer.write_record(METRICS_HEADER).map_err(|e| io_err(path, e))?;
    for (step, r) in metrics.records.iter().enumerate() {
        writer
            .write_record([
                step.to_string(),
                fmt(r.reward_mean),
                fmt(r.entropy),
                fmt(r.clip_fraction),
                fmt(r.pg_loss),
            ])
            .map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// One per-response row of the loss report.
pub struct LossRow {
    pub group_id: String,
    pub sample_id: String,
    pub method: &'static str,
    pub score: f64,
    pub advantage: f64,
    pub loss: f64,
    pub clip_fraction: f64,
    pub degenerate: bool,
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<(), CliError> {
    let mut writer = open_writer(path)?;
    writer.write_record(LOSS_HEADER).map_err(|e| io_err(path, e))?;
    for row in rows {
        writer
            .write_record([
                row.group_id.clone(),
                row.sample_id.clone(),
                row.method.to_string(),
                fmt(row.score),
                fmt(row.advantage),
                fmt(row.loss),
                fmt(row.clip_fraction),
                row.degenerate.to_string(),
            ])
            .map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Merges report CSVs into one table keyed by a run label. All inputs
/// must share an identical header; the first divergent column is named.
pub fn merge_reports(
    inputs: &[(String, PathBuf)],
    output: &Path,
) -> Result<(), CliError> {
    let mut reference: Option<(PathBuf, Vec<String>)> = None;
    let mut merged: Vec<Vec<String>> = Vec::new();
    for (label, path) in inputs {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| io_err(path, e))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| io_err(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        match &reference {
            None => reference = Some((path.clone(), header)),
            Some((ref_path, ref_header)) => {
                check_headers_match(ref_path, ref_header, path, &header)?;
            }
        }
        for record in reader.records() {
            let record = record.map_err(|e| io_err(path, e))?;
            let mut row = Vec::with_capacity(record.len() + 1);
            row.push(label.clone());
            row.extend(record.iter().map(str::to_string));
            merged.push(row);
        }
    }
    let (_, header) = reference.ok_or_else(|| CliError::Input("no input reports".to_string()))?;
    let mut writer = open_writer(output)?;
    let mut out_header = Vec::with_capacity(header.len() + 1);
    out_header.push("run".to_string());
    out_header.extend(header);
    writer.write_record(&out_header).map_err(|e| io_err(output, e))?;
    for row in &merged {
        writer.write_record(row).map_err(|e| io_err(output, e))?;
    }
    writer.flush().map_err(|e| io_err(output, e))
}

fn check_headers_match(
    ref_path: &Path,
    reference: &[String],
    path: &Path,
    header: &[String],
) -> Result<(), CliError> {
    for (index, (a, b)) in reference.iter().zip(header).enumerate() {
        if a != b {
            return Err(CliError::Input(format!(
                "{}: column {} is `{}`, but {} has `{}`",
                path.display(),
                index + 1,
                b,
                ref_path.display(),
                a,
            )));
        }
    }
    if reference.len() != header.len() {
        let index = reference.len().min(header.len());
        let which = if header.len() > reference.len() {
            header[index].as_str()
        } else {
            reference[index].as_str()
        };
        return Err(CliError::Input(format!(
            "{}: header length {} does not match {} ({}; first divergent column `{}`)",
            path.display(),
            header.len(),
            ref_path.display(),
            reference.len(),
            which,
        )));
    }
    Ok(())
}

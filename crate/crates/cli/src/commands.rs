//! Subcommand implementations.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use ratio_forge_core::diagnostics::{
    aggregate_window_curves, classify_token_states, paired_dynamics_report, window_offpolicy_frequency,
    BandMode, DynamicsConfig, DynamicsReport, SeriesRepresentation,
};
use ratio_forge_core::filter::{kalman_filter_sequence, KalmanParams};
use ratio_forge_core::objectives::{
    grpo_objective, group_relative_advantage, kpo_objective, sequence_level_objective, Aggregation,
    ClipConfig, KpoMode, ObjectiveReport, RatioGroup,
};
use ratio_forge_core::sim::{run_training, run_training_with_rollouts, Method};
use ratio_forge_core::trace::{LogRatioSeries, RatioSeries, TokenTrace};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::record::{read_records, write_filtered};
use crate::report::{self, fmt, LossRow};
use crate::svg::{line_chart, Series};

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// `filter`: run the per-sequence Kalman filter over a trace file.
pub fn cmd_filter(
    input: &Path,
    output: &Path,
    config: &RunConfig,
    over: &Overrides,
) -> Result<(), CliError> {
    let params = config.kalman_params(over)?;
    let records = read_records(input)?;
    // Collect before surfacing the first failure so the reported record
    // never depends on scheduling.
    let results: Vec<_> = records
        .into_par_iter()
        .map(|record| -> Result<_, CliError> {
            let trace = record.to_trace()?;
            let series = kalman_filter_sequence(&trace.log_ratios(), &params)?;
            let ratios = series.to_ratio_space()?;
            Ok((record, series, ratios))
        })
        .collect();
    let filtered: Vec<_> = results.into_iter().collect::<Result<_, _>>()?;
    write_filtered(output, &filtered)?;
    let sequences = filtered.len();
    let tokens: usize = filtered
        .iter()
        .map(|(r, ..)| r.mask.iter().filter(|&&m| m).count())
        .sum();
    let gain_sum: f64 = filtered.iter().map(|(_, s, _)| s.mean_gain()).sum();
    let mean_gain = if sequences == 0 { 0.0 } else { gain_sum / sequences as f64 };
    println!(
        "filtered {sequences} sequences, {tokens} tokens, mean gain {}",
        fmt(mean_gain)
    );
    Ok(())
}

fn band_from(config: &RunConfig, over: &Overrides) -> Result<BandMode, CliError> {
    Ok(BandMode::Band(config.clip_config(
        over,
        ClipConfig::filtered_default(),
    )?))
}

fn representation_from(config: &RunConfig, flag: Option<&str>) -> Result<SeriesRepresentation, CliError> {
    let name = flag
        .map(str::to_string)
        .or_else(|| config.diagnostics.representation.clone());
    match name.as_deref() {
        None | Some("ratio") => Ok(SeriesRepresentation::Ratio),
        Some("log") => Ok(SeriesRepresentation::LogRatio),
        Some(other) => Err(CliError::Usage(format!(
            "unknown representation `{other}` (expected ratio or log)"
        ))),
    }
}

/// `analyze`: dynamics report (and optional plots) for raw and, when
/// present, filtered ratio series.
#[allow(clippy::too_many_arguments)]
pub fn cmd_analyze(
    input: &Path,
    output: &Path,
    config: &RunConfig,
    over: &Overrides,
    representation: Option<&str>,
    plot: Option<&Path>,
) -> Result<(), CliError> {
    let records = read_records(input)?;
    let traces: Vec<TokenTrace> = records
        .iter()
        .map(|r| r.to_trace().map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let raw: Vec<RatioSeries> = traces.iter().map(TokenTrace::raw_ratios).collect();
    let filtered: Option<Vec<RatioSeries>> = records
        .iter()
        .map(|r| r.filtered_series())
        .collect::<Option<Vec<_>>>();

    let dyn_config = DynamicsConfig {
        band: band_from(config, over)?,
        window: config.window(over),
        k_c: config.kc(over),
        representation: representation_from(config, representation)?,
    };

    let mut rows: Vec<(&str, DynamicsReport)> = Vec::new();
    match &filtered {
        Some(filtered_series) => {
            let (before, after) = paired_dynamics_report(&raw, filtered_series, &dyn_config)?;
            rows.push(("raw", before));
            rows.push(("filtered", after));
        }
        None => {
            let report = ratio_forge_core::diagnostics::dynamics_report(&raw, &dyn_config)?;
            rows.push(("raw", report));
        }
    }
    let borrowed: Vec<(&str, &DynamicsReport)> =
        rows.iter().map(|(label, r)| (*label, r)).collect();
    report::write_dynamics_csv(output, &borrowed)?;

    if let Some(prefix) = plot {
        write_analysis_plots(prefix, &raw, filtered.as_deref(), &dyn_config)?;
    }
    for (label, r) in &rows {
        println!(
            "{label}: {} samples, switch_freq {}, lfr {}",
            r.sample_count,
            fmt(r.switch_frequency),
            fmt(r.lfr)
        );
    }
    Ok(())
}

fn window_curve_points(samples: &[RatioSeries], dyn_config: &DynamicsConfig) -> Vec<(f64, f64)> {
    let per_sample: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let states = classify_token_states(s, dyn_config.band);
            window_offpolicy_frequency(&states, dyn_config.window).unwrap_or_default()
        })
        .collect();
    aggregate_window_curves(&per_sample)
        .mean
        .iter()
        .enumerate()
        .map(|(w, &m)| (w as f64, m))
        .collect()
}

fn write_analysis_plots(
    prefix: &Path,
    raw: &[RatioSeries],
    filtered: Option<&[RatioSeries]>,
    dyn_config: &DynamicsConfig,
) -> Result<(), CliError> {
    let raw_curve = window_curve_points(raw, dyn_config);
    let filtered_curve = filtered.map(|f| window_curve_points(f, dyn_config));
    let mut series = vec![Series {
        label: "raw",
        points: &raw_curve,
    }];
    if let Some(curve) = &filtered_curve {
        series.push(Series {
            label: "filtered",
            points: curve,
        });
    }
    let chart = line_chart(
        "window off-policy frequency",
        "window index",
        "frequency",
        &series,
    );
    write_text(&suffixed(prefix, "window_freq.svg"), &chart)?;

    // First sample's trajectory, raw vs filtered.
    let raw_points: Vec<(f64, f64)> = raw
        .first()
        .map(|s| {
            s.iter_valid()
                .enumerate()
                .map(|(i, (_, v))| (i as f64, v))
                .collect()
        })
        .unwrap_or_default();
    let filtered_points: Vec<(f64, f64)> = filtered
        .and_then(|f| f.first())
        .map(|s| {
            s.iter_valid()
                .enumerate()
                .map(|(i, (_, v))| (i as f64, v))
                .collect()
        })
        .unwrap_or_default();
    let mut series = vec![Series {
        label: "raw",
        points: &raw_points,
    }];
    if !filtered_points.is_empty() {
        series.push(Series {
            label: "filtered",
            points: &filtered_points,
        });
    }
    let chart = line_chart("sample ratio trajectory", "token", "ratio", &series);
    write_text(&suffixed(prefix, "trajectory.svg"), &chart)
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    if name.is_empty() {
        return prefix.join(suffix);
    }
    name.push("_");
    name.push(suffix);
    prefix.with_file_name(name)
}

/// `loss`: per-group objective evaluation for one method.
pub fn cmd_loss(
    input: &Path,
    output: &Path,
    method_name: &str,
    aggregation: Aggregation,
    config: &RunConfig,
    over: &Overrides,
) -> Result<(), CliError> {
    let method = crate::config::parse_method(method_name)?;
    let clip = config.clip_config(over, method.default_clip())?;
    let kalman = config.kalman_params(over)?;
    let records = read_records(input)?;
    let traces: Vec<TokenTrace> = records
        .iter()
        .map(|r| r.to_trace().map_err(CliError::from))
        .collect::<Result<_, _>>()?;

    // Group by group_id, preserving first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut by_group: HashMap<String, Vec<usize>> = HashMap::new();
    for (index, trace) in traces.iter().enumerate() {
        let entry = by_group.entry(trace.group_id().to_string()).or_default();
        if entry.is_empty() {
            order.push(trace.group_id().to_string());
        }
        entry.push(index);
    }

    let mut rows: Vec<LossRow> = Vec::new();
    for group_id in &order {
        let members = &by_group[group_id];
        if members.len() < 2 {
            return Err(CliError::Input(format!(
                "group `{group_id}` has {} response(s); need at least 2",
                members.len()
            )));
        }
        let scores: Vec<f64> = members.iter().map(|&i| traces[i].score()).collect();
        let advantages = group_relative_advantage(&scores)?;
        let report = evaluate_group(&traces, members, &advantages, method, &clip, &kalman, aggregation)?;
        for (&index, &advantage) in members.iter().zip(advantages.values()) {
            rows.push(LossRow {
                group_id: group_id.clone(),
                sample_id: traces[index].sample_id().to_string(),
                method: method.name(),
                score: traces[index].score(),
                advantage,
                loss: report.loss,
                clip_fraction: report.clip_fraction,
                degenerate: advantages.is_degenerate(),
            });
        }
    }
    report::write_loss_csv(output, &rows)?;
    println!("evaluated {} groups with method {}", order.len(), method.name());
    Ok(())
}

fn evaluate_group(
    traces: &[TokenTrace],
    members: &[usize],
    advantages: &ratio_forge_core::objectives::AdvantageSet,
    method: Method,
    clip: &ClipConfig,
    kalman: &KalmanParams,
    aggregation: Aggregation,
) -> Result<ObjectiveReport, CliError> {
    match method {
        Method::Grpo | Method::SeqLevel => {
            let zs: Vec<LogRatioSeries> =
                members.iter().map(|&i| traces[i].log_ratios()).collect();
            let groups = [RatioGroup {
                responses: &zs,
                advantages,
            }];
            let report = if method == Method::Grpo {
                grpo_objective(&groups, clip, aggregation)?
            } else {
                sequence_level_objective(&groups, clip, aggregation)?
            };
            Ok(report)
        }
        Method::KpoClipped | Method::KpoUnclipped => {
            let mut filtered: Vec<RatioSeries> = Vec::with_capacity(members.len());
            for &i in members {
                let series = kalman_filter_sequence(&traces[i].log_ratios(), kalman)?;
                filtered.push(series.to_ratio_space()?);
            }
            let groups = [RatioGroup {
                responses: &filtered,
                advantages,
            }];
            let mode = if method == Method::KpoClipped {
                KpoMode::Clipped
            } else {
                KpoMode::Unclipped
            };
            Ok(kpo_objective(&groups, mode, clip, aggregation)?)
        }
    }
}

/// `simulate`: deterministic toy training run.
#[allow(clippy::too_many_arguments)]
pub fn cmd_simulate(
    output: &Path,
    config: &RunConfig,
    over: &Overrides,
    method: Option<&str>,
    steps: Option<usize>,
    seed: Option<u64>,
    plot: Option<&Path>,
    dump_traces: Option<&Path>,
) -> Result<(), CliError> {
    let train_config = config.train_config(over, method, steps, seed)?;
    let metrics = match dump_traces {
        None => run_training(&train_config)?,
        Some(path) => {
            let (metrics, rollouts) = run_training_with_rollouts(&train_config)?;
            let records: Vec<_> = rollouts
                .iter()
                .map(crate::record::TraceRecordV1::from_trace)
                .collect();
            crate::record::write_records(path, &records)?;
            metrics
        }
    };
    report::write_metrics_csv(output, &metrics)?;
    if let Some(prefix) = plot {
        let curve = |f: fn(&ratio_forge_core::sim::StepRecord) -> f64| -> Vec<(f64, f64)> {
            metrics
                .records
                .iter()
                .enumerate()
                .map(|(step, r)| (step as f64, f(r)))
                .collect()
        };
        let panels: [(&str, Vec<(f64, f64)>); 4] = [
            ("reward", curve(|r| r.reward_mean)),
            ("entropy", curve(|r| r.entropy)),
            ("clip_fraction", curve(|r| r.clip_fraction)),
            ("pg_loss", curve(|r| r.pg_loss)),
        ];
        for (name, points) in &panels {
            let chart = line_chart(
                &format!("{} ({})", name, train_config.method.name()),
                "step",
                name,
                &[Series {
                    label: train_config.method.name(),
                    points,
                }],
            );
            write_text(&suffixed(prefix, &format!("{name}.svg")), &chart)?;
        }
    }
    let final_reward = metrics.records.last().map(|r| r.reward_mean).unwrap_or(0.0);
    println!(
        "simulated {} steps with {}, final reward {}",
        metrics.len(),
        train_config.method.name(),
        fmt(final_reward)
    );
    Ok(())
}

/// `report`: merge labeled report CSVs into one comparison table.
pub fn cmd_report(
    inputs: &[PathBuf],
    labels: Option<&[String]>,
    output: &Path,
) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(CliError::Usage("report needs at least one input".to_string()));
    }
    if let Some(labels) = labels {
        if labels.len() != inputs.len() {
            return Err(CliError::Usage(format!(
                "{} labels for {} inputs",
                labels.len(),
                inputs.len()
            )));
        }
    }
    let labeled: Vec<(String, PathBuf)> = inputs
        .iter()
        .enumerate()
        .map(|(index, path)| {
            let label = match labels {
                Some(labels) => labels[index].clone(),
                None => path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("run{index}")),
            };
            (label, path.clone())
        })
        .collect();
    report::merge_reports(&labeled, output)?;
    println!("merged {} reports", labeled.len());
    Ok(())
}

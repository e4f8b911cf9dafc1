use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use ratio_forge::commands;
use ratio_forge::config::{resolve_config, Overrides};
use ratio_forge::error::CliError;

/// Kalman-filtered importance-sampling ratios: filter traces, analyze
/// off-policy dynamics, evaluate surrogate losses, and run the toy
/// training simulator.
#[derive(Parser)]
#[command(name = "ratio-forge", version, disable_help_subcommand = true)]
struct Cli {
    /// Config file (TOML); falls back to $RATIO_FORGE_CONFIG.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Upper bound on worker threads (default: available parallelism).
    /// Never affects output bytes.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct KalmanFlags {
    /// Process-noise variance Q.
    #[arg(long, value_name = "Q")]
    q: Option<f64>,
    /// Observation-noise variance V.
    #[arg(long, value_name = "V")]
    v: Option<f64>,
    /// Prior mean of the latent log-ratio.
    #[arg(long, value_name = "RHO0")]
    rho0: Option<f64>,
    /// Prior variance of the latent log-ratio.
    #[arg(long, value_name = "P0")]
    p0: Option<f64>,
}

#[derive(clap::Args)]
struct ClipFlags {
    /// Lower clip offset (band lower bound is 1 - eps_lo).
    #[arg(long = "eps-lo", value_name = "EPS")]
    eps_lo: Option<f64>,
    /// Upper clip offset (band upper bound is 1 + eps_hi).
    #[arg(long = "eps-hi", value_name = "EPS")]
    eps_hi: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Kalman-filter the log IS ratios of every trace in a file.
    Filter {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        #[command(flatten)]
        kalman: KalmanFlags,
    },
    /// Token-dynamics report (and optional plots) for a trace file.
    Analyze {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        #[command(flatten)]
        clip: ClipFlags,
        /// Window length for frequency/variance statistics.
        #[arg(long, value_name = "LEN")]
        window: Option<usize>,
        /// DFT cutoff index for the low-frequency ratio
        /// (default: floor(T/20) per sample).
        #[arg(long, value_name = "KC")]
        kc: Option<usize>,
        /// Which series the spectral/variance metrics analyze:
        /// ratio or log.
        #[arg(long, value_name = "REPR")]
        representation: Option<String>,
        /// Write SVG charts next to this path prefix.
        #[arg(long, value_name = "PREFIX")]
        plot: Option<PathBuf>,
    },
    /// Evaluate a surrogate objective per group.
    Loss {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        /// grpo, seq_level, kpo_clipped, or kpo_unclipped.
        #[arg(long, value_name = "METHOD")]
        method: String,
        /// sequence_mean_token_mean (default) or global_token_mean.
        #[arg(long, value_name = "MODE")]
        aggregation: Option<String>,
        #[command(flatten)]
        kalman: KalmanFlags,
        #[command(flatten)]
        clip: ClipFlags,
    },
    /// Run the toy trainer and write its metrics timeline.
    Simulate {
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        /// grpo, seq_level, kpo_clipped, or kpo_unclipped.
        #[arg(long, value_name = "METHOD")]
        method: Option<String>,
        #[arg(long, value_name = "N")]
        steps: Option<usize>,
        #[arg(long, value_name = "SEED")]
        seed: Option<u64>,
        #[command(flatten)]
        kalman: KalmanFlags,
        #[command(flatten)]
        clip: ClipFlags,
        /// Write the four metric panels as SVGs next to this path prefix.
        #[arg(long, value_name = "PREFIX")]
        plot: Option<PathBuf>,
        /// Dump every sampled rollout as a trace file for reuse by
        /// `filter`/`analyze`/`loss`.
        #[arg(long = "dump-traces", value_name = "PATH")]
        dump_traces: Option<PathBuf>,
    },
    /// Merge report CSVs into one table keyed by run label.
    Report {
        /// Input report CSVs.
        #[arg(long = "input", value_name = "PATH", action = ArgAction::Append, required = true)]
        inputs: Vec<PathBuf>,
        /// One label per input (default: file stems).
        #[arg(long = "label", value_name = "NAME", action = ArgAction::Append)]
        labels: Vec<String>,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".to_string()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let config = resolve_config(cli.config.as_deref())?;
    match cli.command {
        Command::Filter { input, output, kalman } => {
            let over = Overrides {
                q: kalman.q,
                v: kalman.v,
                rho0: kalman.rho0,
                p0: kalman.p0,
                ..Overrides::default()
            };
            commands::cmd_filter(&input, &output, &config, &over)
        }
        Command::Analyze {
            input,
            output,
            clip,
            window,
            kc,
            representation,
            plot,
        } => {
            let over = Overrides {
                eps_lo: clip.eps_lo,
                eps_hi: clip.eps_hi,
                window,
                kc,
                ..Overrides::default()
            };
            commands::cmd_analyze(
                &input,
                &output,
                &config,
                &over,
                representation.as_deref(),
                plot.as_deref(),
            )
        }
        Command::Loss {
            input,
            output,
            method,
            aggregation,
            kalman,
            clip,
        } => {
            let over = Overrides {
                q: kalman.q,
                v: kalman.v,
                rho0: kalman.rho0,
                p0: kalman.p0,
                eps_lo: clip.eps_lo,
                eps_hi: clip.eps_hi,
                ..Overrides::default()
            };
            let aggregation = match aggregation.as_deref() {
                None => ratio_forge_core::objectives::Aggregation::SequenceMeanTokenMean,
                Some(name) => ratio_forge::config::parse_aggregation(name)?,
            };
            commands::cmd_loss(&input, &output, &method, aggregation, &config, &over)
        }
        Command::Simulate {
            output,
            method,
            steps,
            seed,
            kalman,
            clip,
            plot,
            dump_traces,
        } => {
            let over = Overrides {
                q: kalman.q,
                v: kalman.v,
                rho0: kalman.rho0,
                p0: kalman.p0,
                eps_lo: clip.eps_lo,
                eps_hi: clip.eps_hi,
                ..Overrides::default()
            };
            commands::cmd_simulate(
                &output,
                &config,
                &over,
                method.as_deref(),
                steps,
                seed,
                plot.as_deref(),
                dump_traces.as_deref(),
            )
        }
        Command::Report { inputs, labels, output } => {
            let labels = if labels.is_empty() { None } else { Some(labels) };
            commands::cmd_report(&inputs, labels.as_deref(), &output)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ratio-forge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

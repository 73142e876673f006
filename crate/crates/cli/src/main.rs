//! `diskfail` command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 gradient check
//! above tolerance.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Knobs;

#[derive(Debug, Parser)]
#[command(
    name = "diskfail",
    version,
    about = "Device failure prediction from telemetry time series"
)]
struct Cli {
    /// TOML configuration file; flags take precedence over its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensemble fitting and repeated runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output (info, debug, trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse daily snapshot CSV files into a corpus of device histories.
    Ingest {
        /// One or more snapshot CSV files.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated columns such as `smart_5_raw,smart_187_raw`;
        /// default is raw and normalized values of the standard ids.
        #[arg(long, value_delimiter = ',')]
        attributes: Vec<String>,
    },
    /// Generate a synthetic corpus from a named preset.
    Synth {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        devices: Option<usize>,
        #[arg(long)]
        failure_fraction: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the corpus as snapshot CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Featurize every usable window of a corpus.
    Derive {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Write one PGM image per channel of a device's window.
    Render {
        #[arg(long)]
        corpus: PathBuf,
        /// Serial number of the device to render.
        #[arg(long)]
        device: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Train one classifier on a balanced split and score the held-out part.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON report path; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Train a bagged majority-vote ensemble.
    Ensemble {
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for the manifest and member models.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Repeated balanced-resampling experiment per feature set.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Repeated experiment at several prediction horizons.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Classify the latest window of every device with a saved model or
    /// ensemble directory.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare backpropagation with finite differences on small random networks.
    Gradcheck {
        /// Number of random configurations to check.
        #[arg(long, default_value_t = 3)]
        configs: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

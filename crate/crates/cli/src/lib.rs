//! Command-line driver for the predsafe evaluation harness.
//!
//! Exit codes: 0 success, 1 usage error, 2 data validation error,
//! 3 internal error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use predsafe::report::TableFormat;
use predsafe::synth::Preset;

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "predsafe",
    version,
    about = "Stratified evaluation of trajectory predictors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; flags override its values.
    #[arg(long, env = config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify scenes, score both conditions, and write stratified reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Scene files or directories of *.scenes.jsonl.
        #[arg(long, num_args = 1..)]
        scenes: Vec<PathBuf>,
        /// Prediction files or directories made with the semantic map.
        #[arg(long, num_args = 1..)]
        preds_with: Vec<PathBuf>,
        /// Prediction files or directories made without the semantic map.
        #[arg(long, num_args = 1..)]
        preds_without: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Table format: markdown or csv.
        #[arg(long)]
        format: Option<TableFormat>,
    },
    /// Print or write the per-scene (density, geometry) classification.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1..)]
        scenes: Vec<PathBuf>,
        /// Directory for classification.csv; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with reference predictions.
    Synth {
        #[command(flatten)]
        common: Common,
        /// straight_sparse, curved_dense or mixed_grid.
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild report tables from the metrics of an earlier evaluate run.
    Report {
        #[command(flatten)]
        common: Common,
        /// Output directory of the evaluate run.
        #[arg(long)]
        from: PathBuf,
        /// Defaults to --from.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<TableFormat>,
    },
}

fn base_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn set_paths(target: &mut Vec<PathBuf>, flag: Vec<PathBuf>) {
    if !flag.is_empty() {
        *target = flag;
    }
}

/// Runs one parsed command and returns what it prints on success.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Evaluate {
            common,
            scenes,
            preds_with,
            preds_without,
            out,
            format,
        } => {
            let mut cfg = base_config(&common)?;
            set_paths(&mut cfg.scenes, scenes);
            set_paths(&mut cfg.preds_with, preds_with);
            set_paths(&mut cfg.preds_without, preds_without);
            cfg.out = out.or(cfg.out);
            cfg.format = format.unwrap_or(cfg.format);
            commands::run_evaluate(&cfg)
        }
        Command::Classify {
            common,
            scenes,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            set_paths(&mut cfg.scenes, scenes);
            cfg.out = out.or(cfg.out);
            commands::run_classify(&cfg)
        }
        Command::Synth {
            common,
            preset,
            seed,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            cfg.preset = preset.unwrap_or(cfg.preset);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.out = out.or(cfg.out);
            commands::run_synth(&cfg)
        }
        Command::Report {
            common,
            from,
            out,
            format,
        } => {
            let mut cfg = base_config(&common)?;
            cfg.out = out;
            cfg.format = format.unwrap_or(cfg.format);
            commands::run_report(&cfg, &from)
        }
    }
}

/// Parses `args`, runs the command, reports to stdout/stderr, and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

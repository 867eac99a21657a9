//! `dmq`: battery degradation-mode quantification from charging data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dmq_core::error::Error;
use dmq_core::eval::FeatureSetChoice;

use config::{RunConfig, CONFIG_HELP};

#[derive(Parser)]
#[command(
    name = "dmq",
    version,
    about = "Quantify battery degradation modes (LLI, LAMpe, LAMne) from constant-current charging data",
    after_long_help = CONFIG_HELP
)]
struct Cli {
    /// Path to the TOML run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap stage-internal worker threads; 1 guarantees fully serial,
    /// bitwise-reproducible runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Restrict the evaluated network variants to one feature set.
    #[arg(long, global = true, value_enum)]
    features: Option<FeatureMode>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureMode {
    Critical,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic aging corpus into the data directory.
    Synth,
    /// Ingest per-cell cycle files, clean them, interpolate labels.
    Ingest,
    /// Extract the 91-feature matrix from the ingested datasets.
    Features,
    /// Run the three-stage critical-feature filter pipeline.
    Filter,
    /// Run the six-test evaluation protocol and emit the report.
    Evaluate,
    /// Re-emit report tables and plots from a persisted report.
    Report,
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::Parameter(_) | Error::SchemaMismatch { .. } => 1,
        Error::Parse { .. }
        | Error::InsufficientAnchors { .. }
        | Error::NonMonotoneAnchors { .. }
        | Error::InsufficientData(_)
        | Error::SignalQuality(_)
        | Error::Dependency(_)
        | Error::Io { .. } => 2,
        Error::Numerical(_) | Error::UndefinedMetric(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let config = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => RunConfig::default(),
    };
    let features = cli.features.map(|mode| match mode {
        FeatureMode::Critical => FeatureSetChoice::Critical,
        FeatureMode::All => FeatureSetChoice::All,
    });
    let config = config.with_overrides(cli.seed, cli.jobs, features);

    let outcome = match cli.command {
        Command::Synth => commands::cmd_synth(&config).map(|()| false),
        Command::Ingest => commands::cmd_ingest(&config).map(|()| false),
        Command::Features => commands::cmd_features(&config).map(|()| false),
        Command::Filter => commands::cmd_filter(&config).map(|()| false),
        Command::Evaluate => commands::cmd_evaluate(&config),
        Command::Report => commands::cmd_report(&config).map(|()| false),
    };

    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        // Completed, but one or more evaluation folds failed.
        Ok(true) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

//! `sonokin`: synthesize cohorts, extract features, train and evaluate
//! ultrasound-to-kinematics models, and summarize the results.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{InvalidSettings, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "sonokin",
    version,
    about = "Ultrasound-to-knee-kinematics pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat TOML file of settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Override one setting, `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its manifest.
    Synth,
    /// Write per-trial feature matrices from a manifest.
    Extract,
    /// Fit and save one model per subject and configured cell.
    Train,
    /// Cross-validate every configured cell and write RMSE and trajectory CSVs.
    Evaluate,
    /// ANOVA and Bonferroni posthoc CSVs from an RMSE report.
    Stats,
    /// Render summary tables from an RMSE report.
    Report,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let settings = Settings::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(InvalidSettings("workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Synth => commands::synth(&settings, out),
        Command::Extract => commands::extract(&settings, out),
        Command::Train => commands::train(&settings, out),
        Command::Evaluate => commands::evaluate(&settings, out),
        Command::Stats => commands::stats(&settings, out),
        Command::Report => commands::report(&settings, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<InvalidSettings>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

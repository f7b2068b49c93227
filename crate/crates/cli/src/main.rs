use std::path::PathBuf;
use std::process::ExitCode;

use bsa_cli::commands;
use bsa_cli::manifest::{Overrides, RunManifest};
use bsa_cli::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bell state analyzer simulator: count records, deduced BSM tables, QBER reports and sweeps.
#[derive(Debug, Parser)]
#[command(name = "bsa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    options: Options,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one count record per configuration and basis setting.
    Simulate,
    /// Deduce single-photon BSM distributions from record triples.
    Deduce {
        /// Record files or directories of them [default: the output directory]
        inputs: Vec<PathBuf>,
    },
    /// QBER and C table per provenance, as JSON.
    Report {
        /// Record files or directories of them [default: the output directory]
        inputs: Vec<PathBuf>,
    },
    /// QBER and C curves over beta or mu, as CSV.
    Sweep,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Sampled,
}

#[derive(Debug, Args)]
struct Options {
    /// TOML run manifest
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Pulse pairs per configuration in sampled mode
    #[arg(long, global = true, value_name = "N")]
    pulses: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Bootstrap trials for standard errors (0 disables)
    #[arg(long, global = true, value_name = "N")]
    trials: Option<usize>,
    /// Maximum total photon number per simulated sector
    #[arg(long, global = true, value_name = "N")]
    truncation: Option<u32>,
}

fn inputs_or_default(inputs: Vec<PathBuf>, manifest: &RunManifest) -> Vec<PathBuf> {
    if inputs.is_empty() {
        vec![manifest.output.dir.clone()]
    } else {
        inputs
    }
}

fn run(cli: Cli) -> Result<()> {
    let o = cli.options;
    let mut manifest = match &o.config {
        Some(path) => RunManifest::load(path)?,
        None => RunManifest::default(),
    };
    manifest.apply(&Overrides {
        out: o.out,
        mode: o.mode.map(|m| match m {
            Mode::Exact => "exact".to_string(),
            Mode::Sampled => "sampled".to_string(),
        }),
        pulses: o.pulses,
        seed: o.seed,
        trials: o.trials,
        truncation: o.truncation,
    });

    match cli.command {
        Command::Simulate => {
            let written = commands::simulate(&manifest)?;
            println!("wrote {} record files to {}", written.len(), manifest.output.dir.display());
        }
        Command::Deduce { inputs } => {
            let path = commands::deduce(&manifest, &inputs_or_default(inputs, &manifest))?;
            println!("wrote {}", path.display());
        }
        Command::Report { inputs } => {
            let path = commands::report(&manifest, &inputs_or_default(inputs, &manifest))?;
            println!("wrote {}", path.display());
        }
        Command::Sweep => {
            let path = commands::sweep(&manifest)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bsa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

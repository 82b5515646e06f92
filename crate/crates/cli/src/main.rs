//! `projlm`: check, simulate, diagnose and verify projective stochastic
//! equations from a JSON run configuration.
//!
//! Exit codes: 0 success or existence yes; 1 error (bad config, I/O, digest
//! mismatch, wrong family); 2 existence no, refusal, or oracle deviation
//! above tolerance; 3 existence undetermined.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use projlm::commands::{self, Overrides, EXIT_ERROR};
use projlm::config::{OutputFormat, RunConfig};

#[derive(Parser)]
#[command(
    name = "projlm",
    version,
    about = "Projective stochastic equations: solvability, simulation and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Proceed even when the existence check says no.
    #[arg(long)]
    force: bool,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Existence check; exit 0 yes, 2 no, 3 undetermined.
    Check(Common),
    /// Simulate paths and write them with a manifest.
    Simulate(Common),
    /// Long-memory diagnostics on simulated paths.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Manifest file or the directory holding `manifest.json`.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Nested-Volterra oracle against the engine on small windows.
    OracleCompare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Draw a random Family I equation per trial.
        #[arg(long)]
        random: bool,
    },
    /// LARCH existence, variance and moment bounds; optionally simulate.
    Larch {
        #[command(flatten)]
        common: Common,
        /// Also simulate (r_t, sigma_t) into `larch.csv`.
        #[arg(long)]
        simulate: bool,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            replicates: self.replicates,
            format: self.format,
            force: self.force,
        }
    }

    fn load(&self) -> Result<Option<RunConfig>> {
        let ov = self.overrides();
        self.config
            .as_deref()
            .map(|p| RunConfig::load(p).map(|c| ov.apply(c)))
            .transpose()
    }

    fn require(&self) -> Result<RunConfig> {
        self.load()?.context("--config is required")
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Check(c) => commands::check(&c.require()?, &c.overrides()),
        Command::Simulate(c) => commands::simulate_cmd(&c.require()?, &c.overrides()),
        Command::Diagnose { common, manifest } => {
            commands::diagnose(&manifest, common.load()?.as_ref(), &common.overrides())
        }
        Command::OracleCompare {
            common,
            window,
            trials,
            random,
        } => {
            let mut cfg = common.require()?;
            if let Some(w) = window {
                cfg.oracle.window = w;
            }
            if let Some(t) = trials {
                cfg.oracle.trials = t;
            }
            cfg.oracle.random_specs |= random;
            commands::oracle_compare(&cfg, &common.overrides())
        }
        Command::Larch { common, simulate } => commands::larch(&common.require()?, &common.overrides(), simulate),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hlm_gibbs::io::{self, KeyValues, RunOptions, SimulationConfig};
use hlm_gibbs::GibbsConfig;

#[derive(Parser)]
#[command(name = "hlm-gibbs", version, about = "Gibbs sampler for two-level linear models with missing cluster covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a long-format data file.
    Fit {
        /// Delimited data file, one row per level-1 unit.
        #[arg(long)]
        data: PathBuf,
        /// Column schema (key-value file).
        #[arg(long)]
        schema: PathBuf,
        /// Interaction terms and prior overrides (key-value file).
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Run a replication study for one of the built-in scenarios.
    Simulate {
        /// Scenario configuration (key-value file).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["baseline", "lognormal-covariate", "mnar", "extra-interactions"])]
        scenario: Option<String>,
        /// Number of clusters J.
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Recompute diagnostics from saved trace files (one file per chain).
    Diagnose {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    kept: Option<usize>,
    /// Worker threads for replications.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl RunFlags {
    fn options(&self) -> RunOptions {
        RunOptions { seed: self.seed, chains: self.chains, burn_in: self.burn_in, kept: self.kept, workers: self.workers }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { data, schema, model, run } => {
            let mut config = GibbsConfig::default();
            run.options().apply(&mut config);
            let report = io::fit(&data, &schema, model.as_deref(), &config, &run.out_dir)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", run.out_dir.join("summary.txt").display());
        }
        Command::Simulate { config, scenario, clusters, replications, run } => {
            let mut kv = match &config {
                Some(path) => KeyValues::from_path(path)?,
                None => KeyValues::default(),
            };
            if let Some(s) = scenario {
                kv.set("scenario", s);
            }
            if let Some(j) = clusters {
                kv.set("clusters", j.to_string());
            }
            if let Some(r) = replications {
                kv.set("replications", r.to_string());
            }
            let mut cfg = SimulationConfig::from_kv(&kv).context("invalid simulation configuration")?;
            cfg.apply(&run.options());
            let report = io::simulate(&cfg, &run.out_dir)?;
            if !report.failures.is_empty() {
                eprintln!("warning: {} of {} replications failed", report.failures.len(), report.requested);
            }
            println!("{}", run.out_dir.join("simulation.csv").display());
        }
        Command::Diagnose { traces, out_dir } => {
            io::diagnose(&traces, &out_dir)?;
            println!("{}", out_dir.join("diagnostics.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

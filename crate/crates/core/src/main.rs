use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use padmm::harness::{self, HarnessError};

/// Differentially private decentralized ADMM simulator.
#[derive(Parser)]
#[command(name = "padmm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all trials of a configuration and write trace and summary CSVs.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output` in the config.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the per-agent privacy budget.
    Account {
        config: PathBuf,
        /// Emit CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Evaluate convergence-bound constants and compare bounds with the run.
    Bounds {
        config: PathBuf,
        /// Also write a (k, bound, empirical) CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run two configurations and write a joint summary CSV.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        /// Output file; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Repeat a configuration over several agent counts.
    Sweep {
        config: PathBuf,
        /// Comma-separated agent counts.
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        agents: Vec<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn emit(output: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => {
            harness::write_file(path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = harness::load_config(&config)?;
            let dir = output
                .or_else(|| cfg.output.clone())
                .context("no output directory: pass --output or set `output` in the config")?;
            let outcome = harness::run_trials(&cfg)?;
            let written = harness::write_outputs(&cfg, &outcome, &dir)?;
            let s = &outcome.summary;
            if let Some(last) = s.k.len().checked_sub(1) {
                println!("final k = {}: f_mean = {:.6}, f_std = {:.6}", s.k[last], s.f_mean[last], s.f_std[last]);
            }
            match &outcome.budget {
                Some(b) => println!("privacy: epsilon = {:.6}, delta = {}, rho = {:.6e}", b.epsilon, b.delta, b.rho_total_worst),
                None => println!("privacy: none"),
            }
            println!("wrote {} files to {}", written.len(), dir.display());
        }
        Command::Account { config, csv } => {
            let cfg = harness::load_config(&config)?;
            let report = harness::account(&cfg)?;
            if csv {
                print!("{}", report.to_csv(&cfg));
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::Bounds { config, csv } => {
            let cfg = harness::load_config(&config)?;
            let report = harness::bounds_report(&cfg)?;
            print!("{}", report.to_text());
            if let Some(path) = csv {
                emit(Some(&path), &report.to_csv(&cfg))?;
            }
        }
        Command::Compare {
            config_a,
            config_b,
            output,
        } => {
            let a = harness::load_config(&config_a)?;
            let b = harness::load_config(&config_b)?;
            emit(output.as_ref(), &harness::compare(&a, &b)?)?;
        }
        Command::Sweep { config, agents, output } => {
            let cfg = harness::load_config(&config)?;
            let (_, csv) = harness::sweep(&cfg, &agents)?;
            emit(output.as_ref(), &csv)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err.downcast_ref::<HarnessError>().map_or("Error", HarnessError::kind);
            eprintln!("{kind}: {err:#}");
            ExitCode::FAILURE
        }
    }
}

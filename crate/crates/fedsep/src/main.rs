use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsep::experiment::{self, SweepRow};
use fedsep::{ExperimentConfig, Result};
use fedsep_core::federation::{participants_per_round, round_traffic_bytes};

#[derive(Parser)]
#[command(name = "fedsep", version, about = "Federated speech enhancement experiments on a synthetic corpus")]
struct Cli {
    /// Flat TOML config file; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set rounds=30`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus and its manifest.
    Generate {
        /// Write the pre-training corpus instead.
        #[arg(long)]
        pretrain: bool,
    },
    /// Supervised single-node training on the pre-training corpus.
    Pretrain,
    /// Federated training.
    Train,
    /// One training run per supervised fraction in `sweep_fractions`.
    Sweep,
    /// Re-score a checkpoint on the validation and test splits.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn print_row(label: &str, m: &fedsep_core::federation::RoundMetrics) {
    println!(
        "{label}: valid_1n {:.3} dB, valid_2n {:.3} dB, test_1n {:.3} dB, test_2n {:.3} dB",
        m.valid_1n, m.valid_2n, m.test_1n, m.test_2n
    );
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Generate { pretrain } => {
            let path = experiment::generate(&cfg, pretrain)?;
            println!("{}", path.display());
        }
        Command::Pretrain => {
            let (path, report) = experiment::pretrain(&cfg)?;
            if let Some(r) = report {
                print_row(&format!("best epoch {}", r.best_round), &r.best_metrics);
            }
            println!("{}", path.display());
        }
        Command::Train => {
            let r = experiment::train(&cfg)?;
            print_row(&format!("best round {}", r.best_round), &r.best_metrics);
            let participants = participants_per_round(r.client_mixtures.len());
            println!(
                "server traffic: {} bytes per round ({participants} participants, {} parameters)",
                round_traffic_bytes(participants, r.final_params.len()),
                r.final_params.len()
            );
            println!("{}", r.metrics_csv.display());
            println!("{}", r.best_checkpoint.display());
        }
        Command::Sweep => {
            let (path, rows) = experiment::sweep(&cfg)?;
            for SweepRow { supervised_fraction, best_round, metrics, .. } in &rows {
                print_row(&format!("p_s {supervised_fraction:.2} (round {best_round})"), metrics);
            }
            println!("{}", path.display());
        }
        Command::Evaluate { checkpoint } => {
            let m = experiment::evaluate(&cfg, &checkpoint)?;
            print_row("checkpoint", &m);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}

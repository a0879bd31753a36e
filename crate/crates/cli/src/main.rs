use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ffsipp_cli::{render, report, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ffsipp", about = "Run placement experiments and aggregate their metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario for each approach and seed.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ffsipp,sipp")]
        approach: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's SLA factor.
        #[arg(long)]
        sla_factor: Option<f64>,
        /// Writes each round's model as an LP file under this directory.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// Re-aggregates the metrics CSV of a previous run.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            approach,
            seeds,
            out,
            sla_factor,
            dump_lp,
        } => run_experiment(&ExperimentConfig {
            scenario,
            approaches: approach,
            seeds,
            out,
            sla_factor,
            dump_lp,
        })
        .map(|s| s.aggregate),
        Command::Report { input } => report(&input),
    };
    match result {
        Ok(agg) => {
            print!("{}", render(&agg));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

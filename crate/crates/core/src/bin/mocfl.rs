use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mocfl::harness::{
    compare_report, config_from_flags, format_comparison, parse_config, run, Overrides,
};
use mocfl::protocol::Algorithm;

#[derive(Parser)]
#[command(name = "mocfl", version, about = "Federated learning simulator under client churn")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write metrics to the output directory.
    Run(RunArgs),
    /// Summarize one or more metrics.csv files by algorithm and activity rate.
    Compare {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    car: Option<f64>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_affinity: bool,
    #[arg(long)]
    dump_reps: bool,
    /// Data source when no config file is given: synthetic or csv.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
}

fn execute(cli: Cli) -> mocfl::Result<()> {
    match cli.command {
        Command::Run(a) => {
            let overrides = Overrides {
                algorithm: a.algorithm,
                car: a.car,
                clients: a.clients,
                rounds: a.rounds,
                seed: a.seed,
                out_dir: a.out,
                dump_affinity: a.dump_affinity,
                dump_reps: a.dump_reps,
                source: a.source,
                csv_path: a.csv,
                label_column: a.label_column,
            };
            let cfg = match &a.config {
                Some(path) => parse_config(path, &overrides)?,
                None => config_from_flags(&overrides)?,
            };
            let out = run(&cfg)?;
            print!("{}", out.summary);
            log::info!("wrote results to {}", cfg.out_dir.display());
        }
        Command::Compare { files } => {
            print!("{}", format_comparison(&compare_report(&files)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

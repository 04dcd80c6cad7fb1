use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fairfl::cli::{read_records_csv, run_experiment, Emit, ExperimentSpec};
use fairfl::config::load_config;
use fairfl::engine::Scheme;
use fairfl::par::Execution;
use fairfl::summary::{print_summary, summarize};

#[derive(Parser)]
#[command(name = "fairfl", version, about = "Fairness-aware DP federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Proposed,
    Benchmark,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write its outputs.
    Run {
        config: PathBuf,
        #[arg(long, env = "FAIRFL_OUT_DIR")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Outputs to write (default: all).
        #[arg(long, value_enum, value_delimiter = ',')]
        emit: Vec<Emit>,
        /// Run per-device work on the calling thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Check a config file and print the resolved settings.
    Validate { config: PathBuf },
    /// Print summary statistics of a rounds.csv.
    Summarize { records: PathBuf },
}

fn run(cli: Cli) -> fairfl::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            scheme,
            rounds,
            emit,
            sequential,
        } => {
            let mut spec = ExperimentSpec::new(config, out);
            spec.seed = seed;
            spec.rounds = rounds;
            spec.scheme = scheme.map(|s| match s {
                SchemeArg::Proposed => Scheme::Proposed,
                SchemeArg::Benchmark => Scheme::Benchmark,
                SchemeArg::Both => Scheme::Both,
            });
            if !emit.is_empty() {
                spec.emit = emit.into_iter().collect();
            }
            if sequential {
                spec.execution = Some(Execution::Sequential);
            }
            let output = run_experiment(&spec)?;
            print!("{}", print_summary(&output.summary));
            println!("outputs written to {}", spec.output_dir.display());
        }
        Command::Validate { config } => {
            let c = load_config(&config)?;
            println!("{c:#?}");
            println!("config ok");
        }
        Command::Summarize { records } => {
            let recs = read_records_csv(&records)?;
            print!("{}", print_summary(&summarize(&recs)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cnmimo::harness::{emit_csv, load_scenario, parse_snr_grid, run_sweep, to_csv};
use cnmimo::Error;

#[derive(Parser)]
#[command(name = "cnmimo", version, about = "Comparator-network 1-bit MIMO receiver simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write the CSV report.
    Simulate {
        scenario: PathBuf,
        /// SNR grid override, `a:b:step` or a comma list (dB).
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the scenario's paper_n_channels / paper_n_noise counts.
        #[arg(long)]
        paper_scale: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Singular(_) | Error::SkipBudget { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let Command::Simulate {
        scenario,
        snr,
        seed,
        threads,
        out,
        paper_scale,
    } = cli.command;
    let mut s = load_scenario(&scenario)?;
    if let Some(grid) = snr {
        s.snr_grid_db = parse_snr_grid(&grid).map_err(Error::InvalidInput)?;
    }
    if let Some(seed) = seed {
        s.master_seed = seed;
    }
    if paper_scale {
        s = s.at_paper_scale();
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let report = pool.install(|| run_sweep(&s))?;
    match out {
        Some(path) => emit_csv(&report, path),
        None => {
            print!("{}", to_csv(&report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cnmimo: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

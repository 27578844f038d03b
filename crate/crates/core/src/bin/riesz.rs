use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use riesz::cli::{self, CliError, ReproduceOptions};
use riesz::fields::ExampleId;
use riesz::optimizer::ExecMode;

#[derive(Parser)]
#[command(name = "riesz", version, about = "Riesz (s, d, q)-energy minimizers with external fields")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrium solve, minimization and diagnostics from a JSON run config.
    Solve { config: PathBuf },
    /// Re-run one of the catalog examples and compare against reference values.
    Reproduce {
        example: ExampleId,
        /// Smaller N with widened tolerances.
        #[arg(long)]
        reduced: bool,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Parallel pair sums (not bit-reproducible).
        #[arg(long)]
        fast: bool,
    },
    /// Field whose minimizers follow a prescribed density.
    Design {
        set: PathBuf,
        rho: PathBuf,
        #[arg(long)]
        s: f64,
    },
    /// C_{s,d} and M_{s,d}.
    Constants {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        d: usize,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::io)?;
    println!("{text}");
    Ok(())
}

fn run(args: Args) -> Result<(), CliError> {
    cli::configure_threads()?;
    match args.command {
        Command::Solve { config } => {
            let report = cli::cmd_solve(&config)?;
            eprintln!("wrote {} files to {}", report.files.len(), report.output_dir.display());
            print_json(&report)
        }
        Command::Reproduce {
            example,
            reduced,
            n,
            out,
            seed,
            max_iters,
            restarts,
            fast,
        } => {
            let options = ReproduceOptions {
                reduced,
                n,
                output_dir: out,
                seed,
                max_iters,
                restarts,
                mode: fast.then_some(ExecMode::Fast),
            };
            let report = cli::cmd_reproduce(example, &options)?;
            for c in report.comparison.iter().flatten() {
                eprintln!(
                    "{:<26} reference {:<12.6} computed {:<12.6} {}",
                    c.quantity,
                    c.reference,
                    c.computed,
                    if c.pass { "ok" } else { "MISS" }
                );
            }
            print_json(&report)
        }
        Command::Design { set, rho, s } => print_json(&cli::cmd_design(&set, &rho, s)?),
        Command::Constants { s, d } => print_json(&cli::cmd_constants(s, d)?),
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { cli::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

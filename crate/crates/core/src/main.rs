use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qhfilters::cli::{self, CliResult, RunConfig};

/// Quasi-Helmholtz Laplacian filters and EFIE preconditioners.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write Σ, Λ, their Laplacians and projector diagnostics for one mesh.
    Decompose {
        /// `gen:<name>/<args>` or a mesh file (.obj, .msh).
        mesh: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Build the configured spectral filter and compare it with the SVD oracle.
    Filter {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `filter.n`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Condition numbers for every mesh, frequency and formulation.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the preconditioned EFIE on the first mesh and frequency.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the default configuration.
    PrintConfig,
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(args: Args) -> CliResult<()> {
    cli::configure_threads()?;
    match args.command {
        Command::Decompose { mesh, out } => print_json(&cli::cmd_decompose(&mesh, &out)?),
        Command::Filter { config, n } => {
            let mut cfg = RunConfig::load(&config)?;
            if n.is_some() {
                cfg.filter.n = n;
            }
            print_json(&cli::cmd_filter(&cfg)?);
        }
        Command::Sweep { config } => print_json(&cli::cmd_sweep(&RunConfig::load(&config)?)?.0),
        Command::Solve { config } => print_json(&cli::cmd_solve(&RunConfig::load(&config)?)?),
        Command::PrintConfig => print!("{}", RunConfig::default().to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use jacreg::cli::{self, EstimateMethod, EstimateTarget};

#[derive(Parser)]
#[command(name = "jacreg", version, about = "Jacobian-regularized training for linear inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    J,
    Ja,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Spectral,
    Frobenius,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a norm of a saved checkpoint.
    Estimate {
        checkpoint: PathBuf,
        config: PathBuf,
        #[arg(long, value_enum)]
        target: TargetArg,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Power iterations (spectral) or projections (frobenius).
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time/memory comparison of matrix-free estimators vs the explicit
    /// Jacobian path; CSV on stdout.
    Bench {
        /// Comma-separated p:q sizes.
        #[arg(long, default_value = "784:784")]
        sizes: String,
        /// Comma-separated subset of spectral,frobenius,explicit.
        #[arg(long, default_value = "spectral,frobenius,explicit")]
        methods: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out } => cli::cmd_run(&config, out.as_deref()),
        Command::Estimate {
            checkpoint,
            config,
            target,
            method,
            n,
            seed,
        } => cli::cmd_estimate(
            &checkpoint,
            &config,
            match target {
                TargetArg::J => EstimateTarget::J,
                TargetArg::Ja => EstimateTarget::Ja,
            },
            match method {
                MethodArg::Spectral => EstimateMethod::Spectral,
                MethodArg::Frobenius => EstimateMethod::Frobenius,
            },
            n,
            seed,
        ),
        Command::Bench { sizes, methods } => {
            let sizes = match cli::parse_sizes(&sizes) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(cli::EXIT_CONFIG as u8);
                }
            };
            let methods = match cli::parse_methods(&methods) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(cli::EXIT_CONFIG as u8);
                }
            };
            cli::cmd_bench(&sizes, &methods)
        }
    };
    ExitCode::from(code as u8)
}

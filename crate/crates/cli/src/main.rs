use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ftsdn::netsim::CrashTarget;
use ftsdn::replica::Variant;
use ftsdn_cli::{cmd_check, cmd_compare, cmd_run, cmd_sweep, parse_variant, RunOpts, SweepOpts};

/// Deterministic simulator and checker for replicated SDN controllers.
#[derive(Parser)]
#[command(name = "ftsdn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and check the resulting trace.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario variant.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Crash one controller at every send/deliver point of a base run.
    Sweep {
        scenario: PathBuf,
        /// `leader` or `replica:<id>`.
        #[arg(long, default_value = "leader")]
        crash: CrashTarget,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Run the workload under every variant, fault-free and swept.
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a stored trace.
    Check { trace: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mut out, mut err) = (std::io::stdout().lock(), std::io::stderr().lock());
    let code = match cli.command {
        Command::Run {
            scenario,
            trace,
            metrics,
            seed,
            variant,
        } => cmd_run(
            &scenario,
            &RunOpts {
                trace,
                metrics,
                seed,
                variant,
            },
            &mut out,
            &mut err,
        ),
        Command::Sweep {
            scenario,
            crash,
            jobs,
            seed,
            variant,
        } => cmd_sweep(
            &scenario,
            crash,
            &SweepOpts {
                jobs,
                seed,
                variant,
            },
            &mut out,
            &mut err,
        ),
        Command::Compare {
            scenario,
            jobs,
            seed,
        } => cmd_compare(
            &scenario,
            &SweepOpts {
                jobs,
                seed,
                variant: None,
            },
            &mut out,
            &mut err,
        ),
        Command::Check { trace } => cmd_check(&trace, &mut out, &mut err),
    };
    ExitCode::from(code as u8)
}

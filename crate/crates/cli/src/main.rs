use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qtraj_cli::config::{Format, Task};
use qtraj_cli::{execute, Invocation};

#[derive(Parser)]
#[command(name = "qtraj", version, about = "Short-time propagators, Bohmian trajectories and repeated-observation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a wavefunction with a chosen kernel or the reference integrator.
    Propagate(Common),
    /// Bohmian trajectories, short-time laws or quantum potential drift.
    Bohm(Common),
    /// Convergence-order studies over a sweep.
    Convergence(Common),
    /// Repeated-observation runs over a sweep of interval counts.
    Zeno(Common),
    /// Two-dimensional emission tracks.
    Mott(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario document (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output file; overrides `output.path`. Defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed; overrides the document's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output format; overrides `output.format`.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, c) = match cli.command {
        Command::Propagate(c) => (Task::Propagate, c),
        Command::Bohm(c) => (Task::Bohm, c),
        Command::Convergence(c) => (Task::Convergence, c),
        Command::Zeno(c) => (Task::Zeno, c),
        Command::Mott(c) => (Task::Mott, c),
    };
    let inv = Invocation {
        task,
        config: c.config,
        output: c.output,
        seed: c.seed,
        format: c.format.map(|f| match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }),
    };
    match execute(&inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

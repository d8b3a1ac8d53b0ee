use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod server;

#[derive(Parser)]
#[command(name = "alloc-lab", version, about = "Response-adaptive randomization lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form limits, variances and lower bounds for a scenario.
    Asympt(RunArgs),
    /// Monte Carlo study of one scenario.
    Simulate(RunArgs),
    /// Runs several scenarios and prints them side by side.
    Compare(RunArgs),
    /// Serves live allocation sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args)]
pub struct RunArgs {
    /// Scenario file (`key = value` or JSON); repeat for `compare`.
    #[arg(long, short, required = true)]
    config: Vec<PathBuf>,
    /// Directory for report files.
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Prints the report on stdout in this format instead of the summary.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Overrides `delay.entry_rate` and enables delays.
    #[arg(long)]
    delay_entry_rate: Option<f64>,
    /// One shared rate or a comma separated rate per arm; enables delays.
    #[arg(long)]
    delay_response_rate: Option<String>,
    /// Any other override, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Event logs live here, one file per session; replayed on start.
    #[arg(long, default_value = "sessions")]
    state_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Asympt(args) => commands::asympt(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Compare(args) => commands::compare(&args),
        Command::Serve(args) => server::serve(args.addr, args.state_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("alloc-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or parameters.
    Invalid(alloc_lab::Error),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<alloc_lab::Error> for CliError {
    fn from(e: alloc_lab::Error) -> Self {
        match e {
            alloc_lab::Error::Io(s) => CliError::Io(s),
            e => CliError::Invalid(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

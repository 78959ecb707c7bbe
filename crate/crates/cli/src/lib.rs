//! Command-line front end: study management, benchmarks, export and plots.
pub mod bench;
pub mod export;
pub mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trialforge::storage::StorageUrl;
use trialforge::{PrunerSpec, SamplerSpec, StudyDirection};

#[derive(Debug, Parser)]
#[command(name = "trialforge", version, about = "Define-by-run hyperparameter optimization")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a named study in a storage.
    CreateStudy(CreateStudyArgs),
    /// Run a benchmark study, suite, pruning or scaling experiment.
    RunBench(bench::RunBenchArgs),
    /// Write one CSV row per trial of a study.
    Export(ExportArgs),
    /// Write figure data (CSV) and SVG renderings.
    Plot(plot::PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    Min,
    Max,
}

impl From<Direction> for StudyDirection {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Min => StudyDirection::Minimize,
            Direction::Max => StudyDirection::Maximize,
        }
    }
}

pub fn parse_storage(s: &str) -> Result<StorageUrl, String> {
    StorageUrl::parse(s).map_err(|e| e.to_string())
}

pub fn parse_sampler(s: &str) -> Result<SamplerSpec, String> {
    s.parse().map_err(|e: trialforge::Error| e.to_string())
}

pub fn parse_pruner(s: &str) -> Result<PrunerSpec, String> {
    s.parse().map_err(|e: trialforge::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    /// `memory://` or `journal://<path>`.
    #[arg(long, default_value = "memory://", value_parser = parse_storage)]
    pub storage: StorageUrl,
    #[arg(long, visible_alias = "name")]
    pub study: String,
}

#[derive(Debug, Args)]
pub struct CreateStudyArgs {
    #[command(flatten)]
    target: StudyArgs,
    #[arg(long, value_enum, default_value = "min")]
    direction: Direction,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    target: StudyArgs,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure after argument parsing, with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn create_study(args: CreateStudyArgs) -> CliResult {
    let storage = args.target.storage.open()?;
    let id = storage.create_study(&args.target.study, args.direction.into())?;
    println!("created study {:?} with id {id}", args.target.study);
    Ok(())
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::CreateStudy(args) => create_study(args),
        Command::RunBench(args) => bench::run_bench(args),
        Command::Export(args) => export::export(&args.target, args.out.as_deref()),
        Command::Plot(args) => plot::plot(args),
    }
}

/// Parses the process arguments, runs the command and maps failures to exit codes.
pub fn main_entry() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

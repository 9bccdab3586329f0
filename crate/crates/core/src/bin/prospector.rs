use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prospector::pipeline::{Config, Pipeline, PipelineError};

#[derive(Parser)]
#[command(name = "prospector", version, about = "Find, characterize and benchmark ML models inside app packages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate and validate model candidates in every package.
    Scan(Common),
    /// Parse validated models into layer statistics and fingerprints.
    Analyze(Common),
    /// Run each unique model on the configured devices.
    Bench(Common),
    /// Aggregate stage outputs into report.json and per-table CSVs.
    Report {
        #[command(flatten)]
        common: Common,
        /// Output directory of an earlier snapshot to diff against.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn pipeline(c: &Common) -> Result<Pipeline, PipelineError> {
    if !c.corpus.is_dir() {
        return Err(PipelineError::Config(format!("corpus {} is not a directory", c.corpus.display())));
    }
    let config = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    Ok(Pipeline::new(&c.corpus, &c.out, config, c.jobs))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Scan(c) => {
            let s = pipeline(&c)?.scan()?;
            log::info!("{} packages, {} unreadable, {} valid candidates", s.packages, s.unreadable, s.valid_candidates);
        }
        Command::Analyze(c) => {
            let s = pipeline(&c)?.analyze()?;
            log::info!("{} models, {} skipped, {} from cache", s.models, s.skipped, s.cache_hits);
        }
        Command::Bench(c) => {
            let records = pipeline(&c)?.bench()?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            log::info!("{} jobs, {failed} failed", records.len());
        }
        Command::Report { common, compare } => {
            let (report, _) = pipeline(&common)?.report(compare.as_deref())?;
            log::info!("sections: {}", report.sections().join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PROSPECTOR_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

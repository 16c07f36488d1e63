use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use log::info;

use hydroprice::fixture::{synthetic_fixture, write_fixture, FixtureSpec, MIN_FIXTURE_HOURS};
use hydroprice::ingest::{ingest_files, write_hourly};
use hydroprice::metrics::DEFAULT_SPAN;
use hydroprice::study::{build_frame, read_bundle, run_study, write_bundle, StudyConfig};
use hydroprice::{report, Error, Result};

/// System electricity price versus generation mix: ingest, detrend, fit and
/// report.
#[derive(Debug, Parser)]
#[command(name = "hydroprice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Join prices and generation into hourly records.
    Ingest {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        generation: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest, remove calendar effects and write the analysis frame.
    Detrend {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        generation: PathBuf,
        /// EWMSD span in hours.
        #[arg(long, default_value_t = DEFAULT_SPAN)]
        span: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full study and write the results bundle and report.
    Study {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured bootstrap seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured EWMSD span.
        #[arg(long)]
        span: Option<f64>,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render tables and figures from an existing results bundle.
    Report {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset with known coefficients.
    Fixture {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = MIN_FIXTURE_HOURS)]
        hours: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { prices, generation, out } => {
            let ingested = ingest_files(&prices, &generation)?;
            make_dir(&out)?;
            write_hourly(create(&out.join("hourly.csv"))?, &ingested.records)?;
            write_json(&out.join("ingest_report.json"), &ingested.report)?;
            info!("{} hourly rows written to {}", ingested.records.len(), out.display());
        }
        Command::Detrend {
            prices,
            generation,
            span,
            out,
        } => {
            let ingested = ingest_files(&prices, &generation)?;
            let (frame, model) = build_frame(&ingested.records, span)?;
            make_dir(&out)?;
            frame.write_csv(create(&out.join("frame.csv"))?)?;
            write_json(&out.join("detrend_model.json"), &model)?;
            write_json(&out.join("ingest_report.json"), &ingested.report)?;
            info!("{} frame rows written to {}", frame.len(), out.display());
        }
        Command::Study { config, seed, span, out } => {
            let mut config = StudyConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(span) = span {
                config.ewmsd_span = span;
            }
            if let Some(out) = out {
                config.out_dir = out;
            }
            config.validate()?;
            let run = run_study(&config)?;
            write_bundle(&run, &config.out_dir)?;
            report::write_report(&run.bundle, &run.frame, &config.out_dir)?;
            let failures = run.bundle.failures().count();
            info!(
                "{} fits ({} failed) written to {}",
                run.bundle.fit_count(),
                failures,
                config.out_dir.display()
            );
        }
        Command::Report { bundle, out } => {
            let (bundle, frame) = read_bundle(&bundle)?;
            report::write_report(&bundle, &frame, &out)?;
        }
        Command::Fixture { seed, hours, out } => {
            let fixture = synthetic_fixture(&FixtureSpec::new(seed, hours))?;
            let config = write_fixture(&fixture, &out)?;
            info!("fixture written; study configuration at {}", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

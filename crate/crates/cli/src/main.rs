//! `craqan`: ingest a corpus, run the generate/review loop, serve the human
//! review API, export the release and report statistics.
//!
//! Exit codes: 0 success, 1 partial failure, 2 configuration or usage
//! error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use commands::{Completion, Failure};
use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "craqan", version, about = "Coreference QA dataset pipeline")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use this mock script for every persona role.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, split, sample and segment the corpus into sections.jsonl.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        sections_per_article: Option<usize>,
    },
    /// Run the generator and reviewer panel over every section.
    Generate {
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        max_iterations: Option<u32>,
    },
    /// Queue accepted candidates and serve the review API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
    /// Drop duplicate sections and write the release.
    Export,
    /// Compute release statistics, yield and rejection tallies.
    Stats {
        /// Release file to describe instead of the exported one.
        #[arg(long)]
        release: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();

    let mut overrides = Overrides {
        output_dir: cli.output_dir,
        seed: cli.seed,
        mock_script: cli.mock_script,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Ingest { corpus, sections_per_article } => {
            overrides.corpus_path = corpus.clone();
            overrides.sections_per_article = *sections_per_article;
        }
        Command::Generate { run_id, parallelism, max_iterations } => {
            overrides.run_id = run_id.clone();
            overrides.parallelism = *parallelism;
            overrides.max_iterations = *max_iterations;
        }
        Command::Serve { port } => overrides.service_port = *port,
        Command::Export | Command::Stats { .. } => {}
    }
    let config = match RunConfig::load(cli.config.as_deref(), overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };

    let result = match &cli.command {
        Command::Ingest { .. } => commands::ingest(&config),
        Command::Generate { .. } => {
            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            let handler = ctrlc::set_handler(move || {
                if flag.swap(true, Ordering::SeqCst) {
                    std::process::exit(130);
                }
                eprintln!("stopping after in-flight sections finish (press ctrl-c again to abort)");
            });
            if let Err(e) = handler {
                tracing::warn!("cannot install interrupt handler: {e}");
            }
            commands::generate(&config, stop)
        }
        Command::Serve { .. } => commands::serve(&config),
        Command::Export => commands::export(&config),
        Command::Stats { release } => commands::stats(&config, release.as_deref()),
    };
    match result {
        Ok(Completion::Full) => ExitCode::SUCCESS,
        Ok(Completion::Partial) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

//! `qrf`: run pipeline stages over a work directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use qrf_core::config::{Overrides, PipelineConfig};
use qrf_core::index::RetrieverProfile;
use qrf_core::pipeline::{Pipeline, Stage};
use qrf_core::Error;

#[derive(Parser, Debug)]
#[command(name = "qrf", version, about = "Retriever-feedback pipeline for conversational query rewriting")]
struct Cli {
    /// Pipeline config (JSON). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_profile)]
    retriever_profile: Option<RetrieverProfile>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    threshold_optimal: Option<u32>,
    #[arg(long, global = true)]
    threshold_preferred: Option<u32>,
    #[arg(long, global = true)]
    max_pairs: Option<usize>,
    /// Use the deterministic offline LLM client.
    #[arg(long, global = true)]
    mock_llm: bool,
    /// Leave fallback optimal sets out of the SFT export.
    #[arg(long, global = true)]
    exclude_fallback: bool,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Re-run stages even if their manifests are current.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Validate conversations; write qrels and turn classes.
    Ingest,
    /// Build the BM25 index.
    Index,
    /// Generate candidate rewrites with the LLM client.
    Explore,
    /// Score candidates and baselines; write run files.
    Feedback,
    /// Build optimal-query sets and preference pairs.
    BuildRf,
    /// Write SFT and DPO training files.
    Export,
    /// Evaluate run files.
    Eval,
    /// Train the toy model with SFT then DPO.
    TrainToy,
    /// Judge preference pairs pairwise.
    Judge,
    /// Summarize every stage.
    Report,
    /// Run every stage in order.
    All,
    /// Print the effective config.
    Config,
}

fn parse_profile(s: &str) -> Result<RetrieverProfile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn stage_of(cmd: Command) -> Option<Stage> {
    Some(match cmd {
        Command::Ingest => Stage::Ingest,
        Command::Index => Stage::Index,
        Command::Explore => Stage::Explore,
        Command::Feedback => Stage::Feedback,
        Command::BuildRf => Stage::BuildRf,
        Command::Export => Stage::Export,
        Command::Eval => Stage::Eval,
        Command::TrainToy => Stage::TrainToy,
        Command::Judge => Stage::Judge,
        Command::Report => Stage::Report,
        Command::All | Command::Config => return None,
    })
}

fn run(cli: Cli) -> qrf_core::Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        retriever_profile: cli.retriever_profile,
        top_k: cli.top_k,
        threshold_optimal: cli.threshold_optimal,
        threshold_preferred: cli.threshold_preferred,
        max_pairs: cli.max_pairs,
        mock_llm: cli.mock_llm,
        exclude_fallback: cli.exclude_fallback,
        work_dir: cli.work_dir.clone(),
    };
    overrides.apply(&mut config)?;

    if let Command::Config = cli.command {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(());
    }
    let pipeline = Pipeline::new(config).force(cli.force);
    let results = match stage_of(cli.command) {
        Some(stage) => vec![pipeline.run(stage)?],
        None => pipeline.run_all()?,
    };
    for r in results {
        println!("{}", serde_json::to_string(&r)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = json!({ "error": { "kind": "usage", "message": e.to_string().trim_end() } });
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}

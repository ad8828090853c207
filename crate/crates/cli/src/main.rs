//! `cartier` command-line interface.
//!
//! Exit codes: 0 success, 1 data or build error, 2 configuration or
//! authentication error, 3 LLM backend error, 4 the model's answer named no
//! object from the vocabulary.

mod backend;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use cartier::dataset::DatasetError;
use cartier::evaluation::EvaluationError;
use cartier::grounding::GroundingError;
use cartier::index::IndexError;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cartier", version, about = "Ground natural-language requests to locations in a mapped scene")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic scene, trajectory and explicit queries.
    GenSynthetic(commands::GenSyntheticArgs),
    /// Build a spatial index from a trajectory directory.
    BuildIndex(commands::BuildIndexArgs),
    /// Ground one request (or a stream of them with --interactive).
    Query(commands::QueryArgs),
    /// Evaluate methods and indices over datasets and write CSV and Markdown reports.
    Evaluate(commands::EvaluateArgs),
    /// Resolve object matches that need a human decision.
    Adjudicate(commands::AdjudicateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Call the HTTP endpoint; nothing is cached.
    Live,
    /// Call the HTTP endpoint and append responses to --cache.
    Record,
    /// Answer only from --cache; never touches the network.
    Replay,
    /// Deterministic offline mock (recorded to --cache when given).
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MockKind {
    /// Answer a plausible label for the query (needs the query set).
    Oracle,
    /// Answer the longest listed object named in the request.
    Keyword,
    /// Answer the first listed object.
    FirstObject,
    /// Answer verbatim from --mock-responses.
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderKind {
    /// Deterministic bag-of-words test embedder.
    Test,
    /// No embedder (object indices only).
    None,
}

/// LLM selection shared by `query` and `evaluate`.
#[derive(Args, Debug, Clone)]
pub struct LlmArgs {
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Response cache file (JSON lines).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    mock_strategy: Option<MockKind>,
    /// JSON object mapping request text to a verbatim response.
    #[arg(long)]
    mock_responses: Option<PathBuf>,
    /// Prompt template file containing {objects} and {query} once each.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, default_value_t = cartier::grounding::DEFAULT_MAX_TOKENS)]
    max_tokens: u32,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 4)]
    max_retries: u32,
    /// HTTP timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
}

/// Maps an error chain to the documented exit code.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<GroundingError>() {
            return grounding_code(e);
        }
        if let Some(e) = cause.downcast_ref::<EvaluationError>() {
            return match e {
                EvaluationError::InvalidConfig(_) => 2,
                EvaluationError::Grounding(g) => grounding_code(g),
                _ => 1,
            };
        }
        if cause.downcast_ref::<IndexError>().is_some() || cause.downcast_ref::<DatasetError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<commands::UsageError>() {
            return e.0;
        }
    }
    1
}

fn grounding_code(e: &GroundingError) -> u8 {
    match e {
        GroundingError::AuthFailure(_)
        | GroundingError::InvalidTemplate(_)
        | GroundingError::InvalidParameter(_)
        | GroundingError::EmptyQuery => 2,
        GroundingError::Network(_)
        | GroundingError::RateLimited { .. }
        | GroundingError::Backend(_)
        | GroundingError::CacheMiss { .. }
        | GroundingError::Cache { .. } => 3,
        GroundingError::NoMatch { .. } => 4,
        GroundingError::EmptyVocabulary | GroundingError::Index(_) => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
        Command::BuildIndex(a) => commands::build_index(a),
        Command::Query(a) => commands::query(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Adjudicate(a) => commands::adjudicate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

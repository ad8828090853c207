//! Turning CLI flags into an LLM client and an embedder.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use cartier::grounding::{
    CacheMode, HttpBackend, LlmBackend, LlmClient, LlmParams, MockBackend, MockStrategy, OfflineBackend,
    PromptTemplate, ResponseCache, RetryPolicy,
};
use cartier::index::{Embedder, IndexError, WordHashEmbedder};

use crate::commands::UsageError;
use crate::{BackendKind, EmbedderKind, LlmArgs, MockKind};

pub fn template(args: &LlmArgs) -> Result<PromptTemplate> {
    Ok(match &args.template {
        Some(p) => PromptTemplate::load(p)?,
        None => PromptTemplate::default(),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| UsageError::new(format!("{}: {e}", path.display())).into())
}

/// Builds one client per model. `oracle` supplies the answers for the
/// oracle mock; it is `None` where no query set is available.
pub fn clients(
    args: &LlmArgs,
    models: &[String],
    oracle: Option<HashMap<String, Vec<String>>>,
    default_mock: MockKind,
) -> Result<Vec<LlmClient>> {
    let template = template(args)?;
    let cache = match (&args.cache, args.backend) {
        (Some(p), _) => Some(Arc::new(ResponseCache::open(p)?)),
        (None, BackendKind::Record | BackendKind::Replay) => {
            return Err(UsageError::new(format!("--backend {:?} requires --cache", args.backend).to_lowercase()).into())
        }
        (None, _) => None,
    };
    let timeout = Duration::from_secs_f64(args.timeout.max(0.001));
    let backend: Arc<dyn LlmBackend> = match args.backend {
        BackendKind::Live | BackendKind::Record => Arc::new(HttpBackend::from_env(timeout)?),
        BackendKind::Replay => Arc::new(OfflineBackend),
        BackendKind::Mock => {
            let strategy = match args.mock_strategy.unwrap_or(default_mock) {
                MockKind::Keyword => MockStrategy::Keyword,
                MockKind::FirstObject => MockStrategy::FirstObject,
                MockKind::Oracle => {
                    MockStrategy::Oracle(oracle.ok_or_else(|| UsageError::new("the oracle mock needs a query set"))?)
                }
                MockKind::Scripted => {
                    let path = args
                        .mock_responses
                        .as_ref()
                        .ok_or_else(|| UsageError::new("--mock-strategy scripted requires --mock-responses"))?;
                    MockStrategy::Scripted(read_json(path)?)
                }
            };
            Arc::new(MockBackend::new(strategy).with_template(template))
        }
    };
    let mode = match (args.backend, &cache) {
        (BackendKind::Replay, _) => CacheMode::Replay,
        (BackendKind::Record, _) | (BackendKind::Mock, Some(_)) => CacheMode::Record,
        _ => CacheMode::Live,
    };
    let retry = RetryPolicy { max_retries: args.max_retries, ..RetryPolicy::default() };
    models
        .iter()
        .map(|m| {
            let params = LlmParams { max_tokens: args.max_tokens, ..LlmParams::new(m.clone()) };
            let mut c =
                LlmClient::new(backend.clone(), params)?.with_retry(retry).with_max_in_flight(args.max_in_flight);
            if let Some(cache) = &cache {
                c = c.with_cache(cache.clone(), mode);
            }
            Ok(c)
        })
        .collect()
}

pub fn embedder(kind: EmbedderKind) -> Option<Box<dyn Embedder>> {
    match kind {
        EmbedderKind::Test => Some(Box::new(WordHashEmbedder::default())),
        EmbedderKind::None => None,
    }
}

/// The embedder a grid build needs, or the capability error.
pub fn pixel_embedder(e: &Option<Box<dyn Embedder>>) -> Result<&dyn Embedder> {
    e.as_deref().ok_or_else(|| IndexError::EmbedderLacksPixelCapability("none".into()).into())
}

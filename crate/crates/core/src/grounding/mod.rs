//! From a user request to a labeled world point.
//!
//! The detector vocabulary and the request are substituted into a prompt
//! template, the prompt goes to a language model (through a response cache
//! that supports record and replay), the response is parsed back to one
//! vocabulary label, and the spatial index resolves that label.

mod cache;
mod client;
mod llm;
mod parse;
mod prompt;

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::geometry::WorldPoint;
use crate::index::{Embedder, IndexError, SpatialIndex};

pub use cache::{cache_key, CacheRecord, ResponseCache};
pub use client::{CacheMode, LlmClient, RetryPolicy};
pub use llm::{
    model_from_env, HttpBackend, LlmBackend, LlmParams, MockBackend, MockStrategy, OfflineBackend, DEFAULT_BASE_URL,
    DEFAULT_MAX_TOKENS, DEFAULT_MODEL, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL,
};
pub use parse::parse_object;
pub use prompt::{build_prompt, PromptTemplate, DEFAULT_TEMPLATE, DEFAULT_TEMPLATE_ID};

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("the object vocabulary is empty")]
    EmptyVocabulary,
    #[error("the query is empty")]
    EmptyQuery,
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("rate limited by the LLM endpoint")]
    RateLimited { retry_after: Option<Duration> },
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("LLM backend error: {0}")]
    Backend(String),
    #[error("no cached response for request {key} (replay mode)")]
    CacheMiss { key: String },
    #[error("response cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error("no vocabulary object found in the response {response:?}")]
    NoMatch { response: String },
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub type Result<T> = std::result::Result<T, GroundingError>;

/// Outcome of one grounded request.
#[derive(Debug, Clone, PartialEq)]
pub struct Grounding {
    pub label: String,
    pub point: WorldPoint,
    pub response: String,
}

/// Prompt, complete, parse, then look the chosen label up in `index`.
///
/// `embedder` is required only for an embedding-grid index.
pub fn ground_query<S: AsRef<str>>(
    vocabulary: &[S],
    query: &str,
    template: &PromptTemplate,
    client: &LlmClient,
    index: &SpatialIndex,
    embedder: Option<&dyn Embedder>,
) -> Result<Grounding> {
    let prompt = build_prompt(template, vocabulary, query)?;
    let response = client.complete(&prompt, template.id())?;
    let label = parse_object(&response, vocabulary)?.to_string();
    let entry = index.lookup(&label, embedder)?;
    Ok(Grounding { label, point: entry.point, response })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{IndexEntry, ObjectIndex, ObjectVariant};
    use std::sync::Arc;

    fn index() -> SpatialIndex {
        let entry = |l: &str, x: f64| IndexEntry {
            label: l.into(),
            point: WorldPoint::new(x, 0.0, 0.0),
            source_frame: Some(0),
            score: 1.0,
        };
        SpatialIndex::Object(ObjectIndex::new(
            ObjectVariant::ObjectDepth,
            0.8,
            false,
            vec![entry("bed", 1.0), entry("sofa", 2.0)],
        ))
    }

    fn client(strategy: MockStrategy) -> LlmClient {
        LlmClient::new(Arc::new(MockBackend::new(strategy)), LlmParams::new("mock")).unwrap()
    }

    #[test]
    fn composes_the_pipeline() {
        let g = ground_query(
            &["sofa", "bed"],
            "I'm tired",
            &PromptTemplate::default(),
            &client(MockStrategy::Fixed("The bed.".into())),
            &index(),
            None,
        )
        .unwrap();
        assert_eq!(g.label, "bed");
        assert_eq!(g.point, WorldPoint::new(1.0, 0.0, 0.0));
        assert_eq!(g.response, "The bed.");
    }

    #[test]
    fn parse_failure_keeps_response() {
        let err = ground_query(
            &["sofa", "bed"],
            "q",
            &PromptTemplate::default(),
            &client(MockStrategy::Fixed("I am unsure.".into())),
            &index(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, GroundingError::NoMatch { response } if response == "I am unsure."));
    }

    #[test]
    fn unindexed_label_surfaces() {
        let err = ground_query(
            &["mug", "bed"],
            "q",
            &PromptTemplate::default(),
            &client(MockStrategy::FirstObject),
            &index(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, GroundingError::Index(IndexError::LabelNotIndexed(l)) if l == "mug"));
    }
}

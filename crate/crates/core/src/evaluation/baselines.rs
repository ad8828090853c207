//! The two comparison methods: querying the embedding grid with the raw
//! request, and thresholding LLM object proposals against the grid before
//! the final LLM choice.

use std::sync::Arc;

use super::{EvaluationError, Result};
use crate::grounding::{build_prompt, parse_object, LlmClient, PromptTemplate};
use crate::index::{query_grid, Embedder, EmbeddingGrid, IndexEntry};
use crate::label;

/// Token budget of the text encoder used by the direct-query baseline.
pub const DEFAULT_TOKEN_LIMIT: usize = 77;
/// Proposal threshold on the original unnormalized CLIP similarity scale.
pub const DEFAULT_PROPOSAL_THRESHOLD: f64 = 12.05;
/// Proposal threshold for embedders whose similarity is a cosine in [-1, 1].
pub const COSINE_PROPOSAL_THRESHOLD: f64 = 0.5;

/// Default threshold for `embedder`'s similarity scale.
pub fn default_proposal_threshold(embedder: &dyn Embedder) -> f64 {
    if embedder.max_similarity() <= 1.0 {
        COSINE_PROPOSAL_THRESHOLD
    } else {
        DEFAULT_PROPOSAL_THRESHOLD
    }
}

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
    fn detokenize(&self, tokens: &[String]) -> String;
}

/// Splits on Unicode whitespace and rejoins with single spaces.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    fn detokenize(&self, tokens: &[String]) -> String {
        tokens.join(" ")
    }
}

/// Keeps the first `limit` tokens. Text within the limit is returned as is.
pub fn truncate_tokens(text: &str, tokenizer: &dyn Tokenizer, limit: usize) -> String {
    let tokens = tokenizer.tokenize(text);
    if tokens.len() <= limit {
        text.to_string()
    } else {
        tokenizer.detokenize(&tokens[..limit])
    }
}

/// Embeds the (truncated) request and returns the best grid cell.
pub fn run_direct_index(
    query: &str,
    grid: &EmbeddingGrid,
    embedder: &dyn Embedder,
    tokenizer: &dyn Tokenizer,
    token_limit: usize,
) -> Result<IndexEntry> {
    let text = truncate_tokens(query, tokenizer, token_limit);
    Ok(query_grid(grid, &text, embedder)?)
}

/// Source of candidate object names for a request.
pub trait Proposer: Send + Sync {
    fn propose(&self, query: &str) -> Result<Vec<String>>;
}

/// The same candidates for every request.
#[derive(Debug, Clone)]
pub struct FixedProposer(pub Vec<String>);

impl Proposer for FixedProposer {
    fn propose(&self, _query: &str) -> Result<Vec<String>> {
        Ok(label::dedup(&self.0))
    }
}

pub const PROPOSAL_TEMPLATE_ID: &str = "proposal-v1";
pub const PROPOSAL_PROMPT: &str = "A user talking to a home robot says: \"{query}\". \
List the household objects the robot could navigate to in order to help, as a comma-separated list of object names.";

/// Asks a language model for candidates and splits its reply on commas,
/// semicolons and line breaks.
#[derive(Debug)]
pub struct LlmProposer {
    client: Arc<LlmClient>,
}

impl LlmProposer {
    pub fn new(client: Arc<LlmClient>) -> Self {
        Self { client }
    }
}

fn split_proposals(reply: &str) -> Vec<String> {
    let items = reply.split([',', ';', '\n']).filter_map(|item| {
        let item = item.trim().trim_start_matches(|c: char| c.is_ascii_digit() || "-*.) ".contains(c));
        let item = item.trim_matches(|c: char| !c.is_alphanumeric());
        (!item.is_empty()).then(|| item.strip_prefix("and ").unwrap_or(item).to_string())
    });
    label::dedup(items.collect::<Vec<_>>())
}

impl Proposer for LlmProposer {
    fn propose(&self, query: &str) -> Result<Vec<String>> {
        let prompt = PROPOSAL_PROMPT.replacen("{query}", query, 1);
        let reply = self.client.complete(&prompt, PROPOSAL_TEMPLATE_ID)?;
        Ok(split_proposals(&reply))
    }
}

/// Result of the proposal-threshold method.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalOutcome {
    /// Proposals at or above the threshold, with their best similarity.
    pub survivors: Vec<(String, f64)>,
    pub label: String,
    pub entry: IndexEntry,
    pub response: String,
}

/// Grid-scores each proposal, keeps those at or above `threshold`, asks the
/// LLM to choose among them with the grounding prompt, and grid-locates the
/// choice.
#[allow(clippy::too_many_arguments)]
pub fn run_proposal_threshold(
    query: &str,
    grid: &EmbeddingGrid,
    embedder: &dyn Embedder,
    proposer: &dyn Proposer,
    threshold: f64,
    template: &PromptTemplate,
    client: &LlmClient,
) -> Result<ProposalOutcome> {
    let proposals = proposer.propose(query)?;
    let mut best: Option<f64> = None;
    let mut survivors = Vec::new();
    for p in proposals {
        let score = match query_grid(grid, &p, embedder) {
            Ok(e) => e.score,
            Err(crate::index::IndexError::EmptyGrid) => continue,
            Err(e) => return Err(e.into()),
        };
        best = Some(best.map_or(score, |b: f64| b.max(score)));
        if score >= threshold {
            survivors.push((p, score));
        }
    }
    if survivors.is_empty() {
        return Err(EvaluationError::NoSurvivingProposals {
            best,
            threshold,
            scale_warning: threshold > embedder.max_similarity(),
        });
    }
    let names: Vec<&str> = survivors.iter().map(|(p, _)| p.as_str()).collect();
    let prompt = build_prompt(template, &names, query)?;
    let response = client.complete(&prompt, template.id())?;
    let label = parse_object(&response, &names)?.to_string();
    let entry = query_grid(grid, &label, embedder)?;
    Ok(ProposalOutcome { survivors, label, entry, response })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{LlmParams, MockBackend, MockStrategy};
    use crate::index::WordHashEmbedder;
    use proptest::prelude::*;

    #[test]
    fn truncates_to_limit() {
        let q: Vec<String> = (0..80).map(|i| format!("w{i}")).collect();
        let t = truncate_tokens(&q.join(" "), &WhitespaceTokenizer, 77);
        assert_eq!(WhitespaceTokenizer.tokenize(&t), q[..77]);
        let short = "ten  tokens here,\tspacing kept as is ok yes no";
        assert_eq!(truncate_tokens(short, &WhitespaceTokenizer, 77), short);
    }

    #[test]
    fn proposals_split_and_dedup() {
        assert_eq!(
            split_proposals("1. Coffee machine\n2. kettle, and mug; Mug.\n- bed"),
            vec!["Coffee machine", "kettle", "mug", "bed"]
        );
    }

    #[test]
    fn default_thresholds() {
        assert_eq!(default_proposal_threshold(&WordHashEmbedder::default()), 0.5);
    }

    fn client() -> LlmClient {
        LlmClient::new(Arc::new(MockBackend::new(MockStrategy::FirstObject)), LlmParams::new("m")).unwrap()
    }

    fn grid() -> (EmbeddingGrid, WordHashEmbedder) {
        crate::index::two_label_grid()
    }

    #[test]
    fn threshold_filters_proposals() {
        let (g, e) = grid();
        let proposer = FixedProposer(vec!["lamp".into(), "rug".into(), "piano".into()]);
        let all_low = run_proposal_threshold("q", &g, &e, &proposer, 1.5, &PromptTemplate::default(), &client());
        assert!(matches!(all_low, Err(EvaluationError::NoSurvivingProposals { scale_warning: true, .. })));

        let only_rug = FixedProposer(vec!["piano".into(), "rug".into()]);
        let out = run_proposal_threshold("q", &g, &e, &only_rug, 0.9, &PromptTemplate::default(), &client()).unwrap();
        assert_eq!(out.survivors.len(), 1);
        assert_eq!(out.label, "rug");
    }

    #[test]
    fn clip_scale_threshold_never_passes_cosine() {
        let (g, e) = grid();
        let proposer = FixedProposer(vec!["lamp".into(), "rug".into()]);
        let r = run_proposal_threshold(
            "q",
            &g,
            &e,
            &proposer,
            DEFAULT_PROPOSAL_THRESHOLD,
            &PromptTemplate::default(),
            &client(),
        );
        assert!(matches!(r, Err(EvaluationError::NoSurvivingProposals { scale_warning: true, best: Some(_), .. })));
    }

    proptest! {
        #[test]
        fn truncation_is_a_prefix(words in prop::collection::vec("[a-z0-9]{1,5}", 0..120), limit in 1..100usize) {
            let text = words.join(" ");
            let t = WhitespaceTokenizer.tokenize(&truncate_tokens(&text, &WhitespaceTokenizer, limit));
            prop_assert_eq!(t.len(), words.len().min(limit));
            prop_assert_eq!(&t[..], &words[..t.len()]);
        }
    }
}

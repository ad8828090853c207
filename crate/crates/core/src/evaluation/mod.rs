//! Metrics, baselines, batch evaluation and reports.
//!
//! Every (scene, query, method/index, model) combination becomes one
//! [`PredictionRecord`]. Records are computed in parallel and collected in
//! enumeration order, so a report does not depend on the worker count.

mod adjudicate;
mod baselines;
mod metrics;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::dataset::{detector_vocabulary, DatasetDir, Query, SceneTruth};
use crate::grounding::{ground_query, GroundingError, LlmClient, PromptTemplate};
use crate::index::{accumulate_grid, build_object_depth, build_object_viewpoint, Embedder, IndexError, SpatialIndex};
use crate::par;

pub use adjudicate::{adjudicate, rescore, AdjudicationSummary};
pub use baselines::{
    default_proposal_threshold, run_direct_index, run_proposal_threshold, truncate_tokens, FixedProposer, LlmProposer,
    ProposalOutcome, Proposer, Tokenizer, WhitespaceTokenizer, COSINE_PROPOSAL_THRESHOLD, DEFAULT_PROPOSAL_THRESHOLD,
    DEFAULT_TOKEN_LIMIT, PROPOSAL_PROMPT, PROPOSAL_TEMPLATE_ID,
};
pub use metrics::{distance_metric, object_match, Colocation, ColocationVerdict, EquivalenceConfig, MatchVerdict};
pub use report::{CellKey, CellSummary, PredictionRecord, Report, CSV_HEADER, NO_MODEL};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("plausible label {label:?} does not name an object in scene {scene_id}")]
    UnknownPlausibleLabel { label: String, scene_id: String },
    #[error("no proposal reached the similarity threshold {threshold} (best {best:?}){}",
        if *scale_warning { "; the threshold exceeds the embedder's similarity range" } else { "" })]
    NoSurvivingProposals { best: Option<f64>, threshold: f64, scale_warning: bool },
    #[error("invalid evaluation setup: {0}")]
    InvalidConfig(String),
    #[error("report line {line}: {message}")]
    MalformedReport { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub type Result<T> = std::result::Result<T, EvaluationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Detector vocabulary in the prompt, LLM choice, index lookup.
    Cartier,
    /// The raw request queried against the embedding grid.
    DirectIndex,
    /// LLM proposals filtered by grid similarity, then the LLM choice.
    ProposalThreshold,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Cartier => "cartier",
            Method::DirectIndex => "direct-index",
            Method::ProposalThreshold => "proposal-threshold",
        }
    }

    pub fn uses_llm(&self) -> bool {
        *self != Method::DirectIndex
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cartier" => Ok(Method::Cartier),
            "direct-index" => Ok(Method::DirectIndex),
            "proposal-threshold" => Ok(Method::ProposalThreshold),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IndexKind {
    ObjectDepth,
    ObjectViewpoint,
    EmbeddingGrid,
}

impl IndexKind {
    pub const ALL: [IndexKind; 3] = [IndexKind::ObjectDepth, IndexKind::ObjectViewpoint, IndexKind::EmbeddingGrid];

    pub fn as_str(&self) -> &'static str {
        match self {
            IndexKind::ObjectDepth => "object-depth",
            IndexKind::ObjectViewpoint => "object-viewpoint",
            IndexKind::EmbeddingGrid => "embedding-grid",
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndexKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "object-depth" => Ok(IndexKind::ObjectDepth),
            "object-viewpoint" => Ok(IndexKind::ObjectViewpoint),
            "embedding-grid" => Ok(IndexKind::EmbeddingGrid),
            other => Err(format!("unknown index type {other:?}")),
        }
    }
}

/// A method paired with the index it reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Target {
    pub method: Method,
    pub index: IndexKind,
}

impl Target {
    /// Report columns, left to right.
    pub const TABLE_COLUMNS: [Target; 5] = [
        Target { method: Method::Cartier, index: IndexKind::ObjectDepth },
        Target { method: Method::Cartier, index: IndexKind::ObjectViewpoint },
        Target { method: Method::Cartier, index: IndexKind::EmbeddingGrid },
        Target { method: Method::ProposalThreshold, index: IndexKind::EmbeddingGrid },
        Target { method: Method::DirectIndex, index: IndexKind::EmbeddingGrid },
    ];

    /// The baselines only work on the open-vocabulary grid.
    pub fn new(method: Method, index: IndexKind) -> Result<Self> {
        if method != Method::Cartier && index != IndexKind::EmbeddingGrid {
            return Err(EvaluationError::InvalidConfig(format!("method {method} requires the embedding-grid index")));
        }
        Ok(Self { method, index })
    }

    pub fn column_title(&self) -> &'static str {
        match (self.method, self.index) {
            (Method::Cartier, IndexKind::ObjectDepth) => "CARTIER ObjectDepth",
            (Method::Cartier, IndexKind::ObjectViewpoint) => "CARTIER ObjectViewpoint",
            (Method::Cartier, IndexKind::EmbeddingGrid) => "CARTIER VLMaps",
            (Method::ProposalThreshold, _) => "NLMap",
            (Method::DirectIndex, _) => "VLMaps Baseline",
        }
    }
}

/// Index construction settings shared by every scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexSettings {
    pub confidence_threshold: f64,
    pub compensate: bool,
    pub cell_size: f64,
}

impl Default for IndexSettings {
    fn default() -> Self {
        Self {
            confidence_threshold: crate::dataset::DEFAULT_CONFIDENCE_THRESHOLD,
            compensate: true,
            cell_size: crate::index::DEFAULT_CELL_SIZE,
        }
    }
}

/// One scene ready for evaluation: ground truth, queries, the detector
/// vocabulary, and the indices the targets need.
#[derive(Debug, Clone)]
pub struct EvalScene {
    pub truth: SceneTruth,
    pub queries: Vec<Query>,
    pub vocabulary: Vec<String>,
    pub indices: BTreeMap<IndexKind, SpatialIndex>,
}

impl EvalScene {
    /// Builds the requested indices from the dataset's trajectory.
    pub fn build(
        data: DatasetDir,
        kinds: &[IndexKind],
        settings: &IndexSettings,
        embedder: Option<&dyn Embedder>,
    ) -> Result<Self> {
        let traj = &data.trajectory;
        let mut indices = BTreeMap::new();
        for kind in kinds {
            let idx = match kind {
                IndexKind::ObjectDepth => {
                    SpatialIndex::Object(build_object_depth(traj, settings.confidence_threshold)?)
                }
                IndexKind::ObjectViewpoint => SpatialIndex::Object(build_object_viewpoint(
                    traj,
                    settings.confidence_threshold,
                    settings.compensate,
                )?),
                IndexKind::EmbeddingGrid => {
                    let e = embedder.ok_or(IndexError::MissingEmbedder)?;
                    SpatialIndex::Grid(accumulate_grid(traj, e, settings.cell_size)?)
                }
            };
            indices.insert(*kind, idx);
        }
        Ok(Self {
            vocabulary: detector_vocabulary(traj, settings.confidence_threshold),
            truth: data.truth,
            queries: data.queries,
            indices,
        })
    }
}

/// Everything besides the scenes that an evaluation run needs.
pub struct EvalConfig<'a> {
    pub targets: Vec<Target>,
    /// One client per model under test.
    pub clients: Vec<&'a LlmClient>,
    pub template: PromptTemplate,
    pub embedder: Option<&'a dyn Embedder>,
    pub proposer: Option<&'a dyn Proposer>,
    pub proposal_threshold: f64,
    pub tokenizer: &'a dyn Tokenizer,
    pub token_limit: usize,
    pub equivalence: EquivalenceConfig,
}

impl<'a> EvalConfig<'a> {
    pub fn new(targets: Vec<Target>, clients: Vec<&'a LlmClient>) -> Self {
        Self {
            targets,
            clients,
            template: PromptTemplate::default(),
            embedder: None,
            proposer: None,
            proposal_threshold: DEFAULT_PROPOSAL_THRESHOLD,
            tokenizer: &WhitespaceTokenizer,
            token_limit: DEFAULT_TOKEN_LIMIT,
            equivalence: EquivalenceConfig::default(),
        }
    }

    fn check(&self, scenes: &[EvalScene]) -> Result<()> {
        if self.targets.is_empty() {
            return Err(EvaluationError::InvalidConfig("no method/index selected".into()));
        }
        let invalid = |m: String| Err(EvaluationError::InvalidConfig(m));
        for t in &self.targets {
            Target::new(t.method, t.index)?;
            if t.method.uses_llm() && self.clients.is_empty() {
                return invalid(format!("method {} needs an LLM backend", t.method));
            }
            if t.index == IndexKind::EmbeddingGrid && self.embedder.is_none() {
                return invalid("the embedding grid needs an embedder".into());
            }
            if t.method == Method::ProposalThreshold && self.proposer.is_none() {
                return invalid("proposal-threshold needs a proposer".into());
            }
            if let Some(s) = scenes.iter().find(|s| !s.indices.contains_key(&t.index)) {
                return invalid(format!("scene {} has no {} index", s.truth.scene_id, t.index));
            }
        }
        if self.token_limit == 0 {
            return invalid("token limit must be positive".into());
        }
        self.equivalence.validate()
    }
}

struct Job<'s> {
    scene: &'s EvalScene,
    query: &'s Query,
    target: Target,
    client: Option<usize>,
}

fn run_job(job: &Job<'_>, cfg: &EvalConfig<'_>) -> PredictionRecord {
    let Job { scene, query, target, client } = job;
    let client = client.map(|i| cfg.clients[i]);
    let index = &scene.indices[&target.index];
    let outcome: Result<(Option<String>, crate::geometry::WorldPoint)> = match target.method {
        Method::Cartier => ground_query(
            &scene.vocabulary,
            &query.text,
            &cfg.template,
            client.expect("LLM methods have a client"),
            index,
            cfg.embedder,
        )
        .map(|g| (Some(g.label), g.point))
        .map_err(Into::into),
        Method::DirectIndex => match index {
            SpatialIndex::Grid(g) => {
                run_direct_index(&query.text, g, cfg.embedder.expect("checked"), cfg.tokenizer, cfg.token_limit)
                    .map(|e| (None, e.point))
            }
            SpatialIndex::Object(_) => unreachable!("checked by Target::new"),
        },
        Method::ProposalThreshold => match index {
            SpatialIndex::Grid(g) => run_proposal_threshold(
                &query.text,
                g,
                cfg.embedder.expect("checked"),
                cfg.proposer.expect("checked"),
                cfg.proposal_threshold,
                &cfg.template,
                client.expect("LLM methods have a client"),
            )
            .map(|o| (Some(o.label), o.entry.point)),
            SpatialIndex::Object(_) => unreachable!("checked by Target::new"),
        },
    };
    let mut rec = PredictionRecord {
        query_id: query.query_id.clone(),
        scene_id: scene.truth.scene_id.clone(),
        method: target.method,
        index: target.index,
        model: client.map_or(NO_MODEL.to_string(), |c| c.model().to_string()),
        query_type: query.query_type,
        label: None,
        point: None,
        object_match: None,
        distance: None,
        error: None,
    };
    match outcome.and_then(|(label, p)| Ok((label, p, distance_metric(&p, &scene.truth, &query.plausible_labels)?))) {
        Ok((label, p, d)) => {
            rec.object_match = label.as_deref().map(|l| object_match(l, &query.plausible_labels, &cfg.equivalence));
            rec.label = label;
            rec.point = Some(p);
            rec.distance = Some(d);
        }
        Err(e) => {
            log::debug!("query {} ({}, {}) failed: {e}", query.query_id, target.method, target.index);
            rec.error = Some(e.to_string());
        }
    }
    rec
}

/// Runs every target on every query of every scene, once per model for
/// methods that use a language model.
pub fn evaluate(scenes: &[EvalScene], cfg: &EvalConfig<'_>) -> Result<Report> {
    cfg.check(scenes)?;
    let mut jobs = Vec::new();
    for scene in scenes {
        for query in &scene.queries {
            for target in &cfg.targets {
                if target.method.uses_llm() {
                    for c in 0..cfg.clients.len() {
                        jobs.push(Job { scene, query, target: *target, client: Some(c) });
                    }
                } else {
                    jobs.push(Job { scene, query, target: *target, client: None });
                }
            }
        }
    }
    let records = par::map(&jobs, |job| run_job(job, cfg));
    Ok(Report { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in [Method::Cartier, Method::DirectIndex, Method::ProposalThreshold] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        for k in IndexKind::ALL {
            assert_eq!(k.as_str().parse::<IndexKind>().unwrap(), k);
        }
        assert!(Target::new(Method::DirectIndex, IndexKind::ObjectDepth).is_err());
        assert!(Target::new(Method::Cartier, IndexKind::ObjectViewpoint).is_ok());
    }
}

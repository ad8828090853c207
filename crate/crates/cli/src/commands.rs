//! Subcommand implementations.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cartier::dataset::{
    detector_vocabulary, generate_synthetic, load_dataset_dir, load_trajectory, SyntheticConfig,
    DEFAULT_CONFIDENCE_THRESHOLD, HOUSEHOLD_LABELS,
};
use cartier::evaluation::{
    default_proposal_threshold, EquivalenceConfig, EvalConfig, EvalScene, FixedProposer, IndexKind, IndexSettings,
    LlmProposer, Method, Proposer, Report, Target, DEFAULT_TOKEN_LIMIT,
};
use cartier::grounding::{ground_query, model_from_env, LlmClient};
use cartier::index::{accumulate_grid, build_object_depth, build_object_viewpoint, SpatialIndex, DEFAULT_CELL_SIZE};
use clap::Args;

use crate::backend;
use crate::{BackendKind, EmbedderKind, LlmArgs, MockKind};

/// A configuration problem detected by the CLI itself, with its exit code.
#[derive(Debug)]
pub struct UsageError(pub u8, pub String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(2, msg.into())
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for UsageError {}

#[derive(Args)]
pub struct GenSyntheticArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    objects: usize,
    #[arg(long, default_value_t = 24)]
    frames: usize,
    /// Standard deviation of depth noise in meters.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value = "synthetic")]
    scene_id: String,
}

pub fn gen_synthetic(a: GenSyntheticArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        seed: a.seed,
        scene_id: a.scene_id,
        object_count: a.objects,
        waypoint_count: a.frames,
        depth_noise_sigma: a.noise,
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic(&cfg)?;
    data.save(&a.out)?;
    println!(
        "wrote {}: {} frames, {} detections, {} objects, {} queries",
        a.out.display(),
        data.trajectory.frames().len(),
        data.trajectory.detections().count(),
        data.truth.objects.len(),
        data.queries.len()
    );
    Ok(())
}

#[derive(Args)]
pub struct IndexBuildArgs {
    /// Detections at or below this confidence are ignored.
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE_THRESHOLD)]
    threshold: f64,
    /// Use raw bbox area for ObjectViewpoint frame selection.
    #[arg(long)]
    no_compensation: bool,
    /// Embedding-grid cell edge in meters.
    #[arg(long, default_value_t = DEFAULT_CELL_SIZE)]
    cell_size: f64,
    #[arg(long, value_enum, default_value = "test")]
    embedder: EmbedderKind,
}

impl IndexBuildArgs {
    fn settings(&self) -> IndexSettings {
        IndexSettings {
            confidence_threshold: self.threshold,
            compensate: !self.no_compensation,
            cell_size: self.cell_size,
        }
    }
}

#[derive(Args)]
pub struct BuildIndexArgs {
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long = "type", value_parser = parse_index_kind)]
    kind: IndexKind,
    /// Output file (`index.json` or `grid.json`; the grid blob goes next to it).
    #[arg(long)]
    out: PathBuf,
    /// Embedding dimensions to zero before similarity (grid only).
    #[arg(long, value_delimiter = ',')]
    dropped_dims: Vec<usize>,
    #[command(flatten)]
    build: IndexBuildArgs,
}

fn parse_index_kind(s: &str) -> Result<IndexKind, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

pub fn build_index(a: BuildIndexArgs) -> Result<()> {
    let traj = load_trajectory(&a.trajectory)?;
    let s = a.build.settings();
    let index = match a.kind {
        IndexKind::ObjectDepth => SpatialIndex::Object(build_object_depth(&traj, s.confidence_threshold)?),
        IndexKind::ObjectViewpoint => {
            SpatialIndex::Object(build_object_viewpoint(&traj, s.confidence_threshold, s.compensate)?)
        }
        IndexKind::EmbeddingGrid => {
            let e = backend::embedder(a.build.embedder);
            let grid = accumulate_grid(&traj, backend::pixel_embedder(&e)?, s.cell_size)?;
            SpatialIndex::Grid(grid.with_dropped_dims(a.dropped_dims)?)
        }
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    index.save(&a.out)?;
    match &index {
        SpatialIndex::Object(idx) => {
            for e in idx.entries() {
                let p = e.point;
                println!("{}: 1 entry @ ({:.3}, {:.3}, {:.3})", e.label, p.x(), p.y(), p.z());
            }
            println!("{} labels written to {}", idx.len(), a.out.display());
        }
        SpatialIndex::Grid(g) => {
            let (rows, cols) = g.shape();
            println!(
                "{rows}x{cols} grid, {} occupied cells, embedder {}, written to {}",
                g.occupied_cells(),
                g.embedder_id(),
                a.out.display()
            );
        }
    }
    Ok(())
}

fn default_models(args: &LlmArgs, models: Vec<String>) -> Vec<String> {
    if !models.is_empty() {
        models
    } else if args.backend == BackendKind::Mock {
        vec!["mock".into()]
    } else {
        vec![model_from_env()]
    }
}

#[derive(Args)]
pub struct QueryArgs {
    /// Index file written by build-index.
    #[arg(long)]
    index: PathBuf,
    /// Trajectory whose detections form the object vocabulary.
    #[arg(long)]
    trajectory: PathBuf,
    /// The request. Omit with --interactive.
    #[arg(long, required_unless_present = "interactive")]
    text: Option<String>,
    /// Read requests from stdin, one per line, until EOF.
    #[arg(long)]
    interactive: bool,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "test")]
    embedder: EmbedderKind,
    #[command(flatten)]
    llm: LlmArgs,
}

pub fn query(a: QueryArgs) -> Result<()> {
    let index = SpatialIndex::load(&a.index)?;
    let traj = load_trajectory(&a.trajectory)?;
    let vocabulary = detector_vocabulary(&traj, a.threshold);
    let template = backend::template(&a.llm)?;
    let models = default_models(&a.llm, a.model.into_iter().collect());
    let client = backend::clients(&a.llm, &models, None, MockKind::Keyword)?.remove(0);
    let embedder = backend::embedder(a.embedder);
    let answer = |text: &str| -> Result<String> {
        let g = ground_query(&vocabulary, text, &template, &client, &index, embedder.as_deref())?;
        let p = g.point;
        Ok(format!("{} @ ({:.3}, {:.3}, {:.3})", g.label, p.x(), p.y(), p.z()))
    };
    if let Some(text) = &a.text {
        println!("{}", answer(text)?);
    }
    if a.interactive {
        let stdin = std::io::stdin();
        let mut out = std::io::stdout();
        loop {
            write!(out, "> ")?;
            out.flush()?;
            let mut line = String::new();
            if stdin.lock().read_line(&mut line)? == 0 {
                break;
            }
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            match answer(text) {
                Ok(s) => println!("{s}"),
                Err(e) => eprintln!("error: {e:#}"),
            }
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Dataset directory with trajectory/, scene.json and queries*.json. Repeatable.
    #[arg(long = "dataset", required = true)]
    datasets: Vec<PathBuf>,
    /// cartier, direct-index or proposal-threshold. Repeatable.
    #[arg(long = "method", value_parser = parse_method)]
    methods: Vec<Method>,
    /// object-depth, object-viewpoint or embedding-grid. Repeatable.
    #[arg(long = "index", value_parser = parse_index_kind)]
    indices: Vec<IndexKind>,
    /// Model names; each LLM method runs once per model. Repeatable.
    #[arg(long = "model")]
    models: Vec<String>,
    /// Output directory for report.csv and report.md.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Synonym groups and colocation verdicts used by the object-match metric.
    #[arg(long)]
    equivalence: Option<PathBuf>,
    /// JSON list of candidate object names for proposal-threshold.
    #[arg(long)]
    proposals: Option<PathBuf>,
    /// Ask the LLM for proposals instead of using a fixed list.
    #[arg(long)]
    llm_proposals: bool,
    /// Similarity a proposal needs to survive (default depends on the embedder).
    #[arg(long)]
    proposal_threshold: Option<f64>,
    /// Tokens kept from a request before the direct-index baseline embeds it.
    #[arg(long, default_value_t = DEFAULT_TOKEN_LIMIT)]
    token_limit: usize,
    #[command(flatten)]
    build: IndexBuildArgs,
    #[command(flatten)]
    llm: LlmArgs,
}

fn targets(methods: &[Method], indices: &[IndexKind]) -> Result<Vec<Target>> {
    let methods = if methods.is_empty() { vec![Method::Cartier] } else { methods.to_vec() };
    let indices = if indices.is_empty() { vec![IndexKind::ObjectDepth] } else { indices.to_vec() };
    let mut out = Vec::new();
    for m in &methods {
        let before = out.len();
        out.extend(indices.iter().filter_map(|i| Target::new(*m, *i).ok()));
        if out.len() == before {
            return Err(UsageError::new(format!("method {m} needs --index embedding-grid")).into());
        }
    }
    out.dedup();
    Ok(out)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(0) => Err(UsageError::new("--threads must be positive").into()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let targets = targets(&a.methods, &a.indices)?;
    let equivalence = match &a.equivalence {
        Some(p) => EquivalenceConfig::load(p)?,
        None => EquivalenceConfig::default(),
    };
    let embedder = backend::embedder(a.build.embedder);
    let kinds: Vec<IndexKind> = IndexKind::ALL.into_iter().filter(|k| targets.iter().any(|t| t.index == *k)).collect();
    if kinds.contains(&IndexKind::EmbeddingGrid) {
        backend::pixel_embedder(&embedder)?;
    }
    let settings = a.build.settings();
    let scenes = with_threads(a.threads, || -> Result<Vec<EvalScene>> {
        a.datasets
            .iter()
            .map(|d| {
                let data = load_dataset_dir(d).with_context(|| format!("loading dataset {}", d.display()))?;
                Ok(EvalScene::build(data, &kinds, &settings, embedder.as_deref())?)
            })
            .collect()
    })??;
    let mut oracle: HashMap<String, Vec<String>> = HashMap::new();
    for q in scenes.iter().flat_map(|s| &s.queries) {
        let e = oracle.entry(q.text.clone()).or_default();
        for l in &q.plausible_labels {
            if !e.contains(l) {
                e.push(l.clone());
            }
        }
    }
    let needs_llm = targets.iter().any(|t| t.method.uses_llm());
    let models = default_models(&a.llm, a.models.clone());
    let clients: Vec<LlmClient> =
        if needs_llm { backend::clients(&a.llm, &models, Some(oracle), MockKind::Oracle)? } else { Vec::new() };
    let clients: Vec<std::sync::Arc<LlmClient>> = clients.into_iter().map(std::sync::Arc::new).collect();

    let proposer: Option<Box<dyn Proposer>> = if !targets.iter().any(|t| t.method == Method::ProposalThreshold) {
        None
    } else if a.llm_proposals {
        Some(Box::new(LlmProposer::new(clients[0].clone())))
    } else if let Some(p) = &a.proposals {
        let text = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let list: Vec<String> =
            serde_json::from_slice(&text).map_err(|e| UsageError::new(format!("{}: {e}", p.display())))?;
        Some(Box::new(FixedProposer(list)))
    } else {
        Some(Box::new(FixedProposer(HOUSEHOLD_LABELS.iter().map(|s| s.to_string()).collect())))
    };

    let mut cfg = EvalConfig::new(targets, clients.iter().map(|c| c.as_ref()).collect());
    cfg.template = backend::template(&a.llm)?;
    cfg.embedder = embedder.as_deref();
    cfg.proposer = proposer.as_deref();
    cfg.proposal_threshold = match (a.proposal_threshold, cfg.embedder) {
        (Some(t), _) => t,
        (None, Some(e)) => default_proposal_threshold(e),
        (None, None) => cartier::evaluation::DEFAULT_PROPOSAL_THRESHOLD,
    };
    cfg.token_limit = a.token_limit;
    cfg.equivalence = equivalence;
    let report = with_threads(a.threads, || cartier::evaluation::evaluate(&scenes, &cfg))??;
    report.write(&a.out)?;
    let pending = report.pending().count();
    println!(
        "{} records ({} failed, {} pending adjudication) written to {}",
        report.records.len(),
        report.failed(),
        pending,
        a.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct AdjudicateArgs {
    /// report.csv written by evaluate.
    #[arg(long)]
    report: PathBuf,
    /// The dataset directories the report was computed from. Repeatable.
    #[arg(long = "dataset", required = true)]
    datasets: Vec<PathBuf>,
    /// Equivalence config; decisions are written back to it.
    #[arg(long)]
    equivalence: PathBuf,
    /// Where to re-emit the report (default: next to --report).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn queries_by_key(datasets: &[PathBuf]) -> Result<BTreeMap<(String, String), cartier::Query>> {
    let mut out = BTreeMap::new();
    for d in datasets {
        let truth = cartier::dataset::load_scene_truth(&d.join("scene.json"))?;
        for f in cartier::dataset::query_files(d)? {
            for q in cartier::dataset::load_queries(&f, &truth)? {
                out.insert((truth.scene_id.clone(), q.query_id.clone()), q);
            }
        }
    }
    Ok(out)
}

pub fn adjudicate(a: AdjudicateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let mut report = Report::from_csv(&text)?;
    let queries = queries_by_key(&a.datasets)?;
    let mut eq =
        if a.equivalence.exists() { EquivalenceConfig::load(&a.equivalence)? } else { EquivalenceConfig::default() };
    cartier::evaluation::rescore(&mut report, &queries, &eq)?;
    if report.pending().next().is_none() {
        println!("nothing to adjudicate");
        return Ok(());
    }
    let stdin = std::io::stdin();
    if !stdin.is_terminal() {
        return Err(UsageError::new(format!(
            "{} records need adjudication; run adjudicate from an interactive terminal",
            report.pending().count()
        ))
        .into());
    }
    let summary = cartier::evaluation::adjudicate(&mut report, &queries, &mut eq, stdin.lock(), std::io::stdout())?;
    eq.save(&a.equivalence)?;
    let out = a.out.unwrap_or_else(|| a.report.parent().map(Path::to_path_buf).unwrap_or_default());
    report.write(&out)?;
    println!(
        "\n{} decided, {} still pending; report written to {}",
        summary.decided,
        summary.still_pending,
        out.display()
    );
    Ok(())
}

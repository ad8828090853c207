//! Trajectories, detections, ground-truth scenes and query sets, plus the
//! synthetic scene generator.
//!
//! A trajectory directory holds:
//!
//! ```text
//! manifest.json      intrinsics, frame count, depth file pattern
//! poses.jsonl        {"frame_id", "timestamp", "position": [x,y,z], "quaternion": [w,x,y,z]}
//! detections.jsonl   {"frame_id", "label", "confidence", "bbox": [xmin,ymin,xmax,ymax]}
//! depth/NNNNNN.cdpt  one depth image per frame (see [`depth`])
//! ```

pub mod depth;
pub mod synthetic;
mod trajectory_io;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb3, GeometryError, Intrinsics, PixelBBox, Pose};
use crate::label;

pub use depth::DepthImage;
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset, HOUSEHOLD_LABELS};
pub use trajectory_io::{load_trajectory, save_trajectory, Manifest};

/// Default detector confidence threshold. Detections must score strictly above it.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("{}:{line}: {message}", file.display())]
    MalformedRecord { file: PathBuf, line: usize, message: String },
    #[error("{file}: {source}")]
    Json { file: PathBuf, source: serde_json::Error },
    #[error("query {query_id}: plausible label {label:?} names no object in scene {scene_id}")]
    UnknownPlausibleLabel { query_id: String, label: String, scene_id: String },
    #[error("query {query_id}: invalid query type {value:?} (expected explicit, implicit or conversational)")]
    InvalidQueryType { query_id: String, value: String },
    #[error("could not place {placed} of {requested} objects after {attempts} attempts")]
    PlacementFailure { placed: usize, requested: usize, attempts: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One detector hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_id: u64,
    pub label: String,
    pub confidence: f64,
    pub bbox: PixelBBox,
}

impl Detection {
    pub fn validate(&self, intr: &Intrinsics) -> Result<()> {
        if label::normalize(&self.label).is_empty() {
            return Err(DatasetError::Invalid("detection label is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(DatasetError::Invalid(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        self.bbox.check_within(intr)?;
        Ok(())
    }
}

/// One recorded frame: where the camera was, what it measured and what the
/// detector reported.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pose: Pose,
    /// Absent for viewpoint-only recordings (no depth sensor).
    pub depth: Option<DepthImage>,
    pub detections: Vec<Detection>,
}

impl Frame {
    pub fn frame_id(&self) -> u64 {
        self.pose.frame_id
    }
}

/// A validated exploration record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    intrinsics: Intrinsics,
    frames: Vec<Frame>,
}

impl Trajectory {
    /// Validates frame ordering, depth dimensions and detections.
    pub fn new(intrinsics: Intrinsics, frames: Vec<Frame>) -> Result<Self> {
        intrinsics.validate()?;
        for (i, f) in frames.iter().enumerate() {
            if i > 0 && f.frame_id() <= frames[i - 1].frame_id() {
                return Err(DatasetError::Invalid(format!(
                    "frame ids must be strictly increasing ({} follows {})",
                    f.frame_id(),
                    frames[i - 1].frame_id()
                )));
            }
            if let Some(d) = &f.depth {
                if d.width() != intrinsics.width || d.height() != intrinsics.height {
                    return Err(DatasetError::ManifestMismatch(format!(
                        "frame {}: depth is {}x{}, intrinsics say {}x{}",
                        f.frame_id(),
                        d.width(),
                        d.height(),
                        intrinsics.width,
                        intrinsics.height
                    )));
                }
            }
            for det in &f.detections {
                if det.frame_id != f.frame_id() {
                    return Err(DatasetError::Invalid(format!(
                        "detection for frame {} stored under frame {}",
                        det.frame_id,
                        f.frame_id()
                    )));
                }
                det.validate(&intrinsics)?;
            }
        }
        Ok(Self { intrinsics, frames })
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn has_depth(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.depth.is_some())
    }

    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.frames.iter().flat_map(|f| f.detections.iter())
    }

    pub fn frame(&self, frame_id: u64) -> Option<&Frame> {
        self.frames.binary_search_by_key(&frame_id, Frame::frame_id).ok().map(|i| &self.frames[i])
    }
}

/// Unique labels of detections scoring strictly above `threshold`, in
/// first-seen order. Within a frame, detections are visited by descending
/// confidence (then label) so the result does not depend on how a frame's
/// detection list happens to be ordered.
pub fn detector_vocabulary(traj: &Trajectory, threshold: f64) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for frame in traj.frames() {
        let mut dets: Vec<&Detection> = frame.detections.iter().filter(|d| d.confidence > threshold).collect();
        dets.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then_with(|| label::normalize(&a.label).cmp(&label::normalize(&b.label)))
                .then_with(|| a.label.cmp(&b.label))
        });
        for d in dets {
            if seen.insert(label::normalize(&d.label)) {
                out.push(d.label.clone());
            }
        }
    }
    out
}

/// A ground-truth object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub instance_id: String,
    pub label: String,
    pub aabb: Aabb3,
}

/// Ground-truth object boxes for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub scene_id: String,
    pub objects: Vec<SceneObject>,
}

impl SceneTruth {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for o in &self.objects {
            if !ids.insert(o.instance_id.as_str()) {
                return Err(DatasetError::Invalid(format!("duplicate instance id {}", o.instance_id)));
            }
            if label::normalize(&o.label).is_empty() {
                return Err(DatasetError::Invalid(format!("object {} has an empty label", o.instance_id)));
            }
        }
        Ok(())
    }

    pub fn has_label(&self, l: &str) -> bool {
        let key = label::normalize(l);
        self.objects.iter().any(|o| label::normalize(&o.label) == key)
    }

    /// Objects whose label matches any of `labels` (normalized).
    pub fn objects_labeled<'a>(&'a self, labels: &'a [String]) -> impl Iterator<Item = &'a SceneObject> + 'a {
        let keys: HashSet<String> = labels.iter().map(|l| label::normalize(l)).collect();
        self.objects.iter().filter(move |o| keys.contains(&label::normalize(&o.label)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryType {
    Explicit,
    Implicit,
    Conversational,
}

impl QueryType {
    pub const ALL: [QueryType; 3] = [QueryType::Explicit, QueryType::Implicit, QueryType::Conversational];

    pub fn as_str(&self) -> &'static str {
        match self {
            QueryType::Explicit => "explicit",
            QueryType::Implicit => "implicit",
            QueryType::Conversational => "conversational",
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "explicit" => Ok(QueryType::Explicit),
            "implicit" => Ok(QueryType::Implicit),
            "conversational" => Ok(QueryType::Conversational),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub query_type: QueryType,
    pub text: String,
    pub plausible_labels: Vec<String>,
}

#[derive(Deserialize)]
struct RawQuery {
    query_id: String,
    query_type: String,
    text: String,
    plausible_labels: Vec<String>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io { path: path.to_path_buf(), source: e }
        }
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })
}

pub fn load_scene_truth(path: &Path) -> Result<SceneTruth> {
    let bytes = read_file(path)?;
    let truth: SceneTruth =
        serde_json::from_slice(&bytes).map_err(|e| DatasetError::Json { file: path.to_path_buf(), source: e })?;
    truth.validate()?;
    Ok(truth)
}

pub fn save_scene_truth(truth: &SceneTruth, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(truth).expect("scene serializes");
    s.push('\n');
    write_file(path, s.as_bytes())
}

/// Parses a query list and checks every plausible label against `truth`.
pub fn parse_queries(bytes: &[u8], file: &Path, truth: &SceneTruth) -> Result<Vec<Query>> {
    let raw: Vec<RawQuery> =
        serde_json::from_slice(bytes).map_err(|e| DatasetError::Json { file: file.to_path_buf(), source: e })?;
    let mut ids = HashSet::new();
    raw.into_iter()
        .map(|r| {
            let query_type = r
                .query_type
                .parse()
                .map_err(|value| DatasetError::InvalidQueryType { query_id: r.query_id.clone(), value })?;
            if !ids.insert(r.query_id.clone()) {
                return Err(DatasetError::Invalid(format!("duplicate query id {}", r.query_id)));
            }
            if r.plausible_labels.is_empty() {
                return Err(DatasetError::Invalid(format!("query {} has no plausible labels", r.query_id)));
            }
            for l in &r.plausible_labels {
                if !truth.has_label(l) {
                    return Err(DatasetError::UnknownPlausibleLabel {
                        query_id: r.query_id.clone(),
                        label: l.clone(),
                        scene_id: truth.scene_id.clone(),
                    });
                }
            }
            Ok(Query { query_id: r.query_id, query_type, text: r.text, plausible_labels: r.plausible_labels })
        })
        .collect()
}

pub fn load_queries(path: &Path, truth: &SceneTruth) -> Result<Vec<Query>> {
    parse_queries(&read_file(path)?, path, truth)
}

pub fn save_queries(queries: &[Query], path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(queries).expect("queries serialize");
    s.push('\n');
    write_file(path, s.as_bytes())
}

/// A dataset directory: `trajectory/`, `scene.json`, and one or more query
/// files named `queries*.json` (read in file-name order).
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub trajectory: Trajectory,
    pub truth: SceneTruth,
    pub queries: Vec<Query>,
}

pub fn query_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| DatasetError::Io { path: dir.to_path_buf(), source: e })?;
    let mut files = Vec::new();
    for e in entries {
        let path = e.map_err(|e| DatasetError::Io { path: dir.to_path_buf(), source: e })?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("queries") && name.ends_with(".json") && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(DatasetError::MissingFile(dir.join("queries.json")));
    }
    Ok(files)
}

pub fn load_dataset_dir(dir: &Path) -> Result<DatasetDir> {
    let truth = load_scene_truth(&dir.join("scene.json"))?;
    let trajectory = load_trajectory(&dir.join("trajectory"))?;
    let mut queries: Vec<Query> = Vec::new();
    let mut ids = HashSet::new();
    for f in query_files(dir)? {
        for q in load_queries(&f, &truth)? {
            if !ids.insert(q.query_id.clone()) {
                return Err(DatasetError::Invalid(format!(
                    "query id {} appears in more than one query file",
                    q.query_id
                )));
            }
            queries.push(q);
        }
    }
    Ok(DatasetDir { trajectory, truth, queries })
}

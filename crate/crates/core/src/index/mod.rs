//! Spatial language indices: maps from an object name (or free text) to a
//! world-frame point.
//!
//! * [`ObjectIndex`] in its ObjectDepth and ObjectViewpoint variants, keyed by
//!   detector label.
//! * [`EmbeddingGrid`], a top-down grid of averaged pixel embeddings queried by
//!   cosine similarity against an embedded text string.

mod embedder;
mod grid;
mod object;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, WorldPoint};

pub use embedder::{Embedder, PixelEmbeddings, PrecomputedEmbedder, TextOnly, WordHashEmbedder};
#[cfg(test)]
pub(crate) use grid::tests::two_label_grid;
pub use grid::{accumulate_grid, load_grid, query_grid, save_grid, EmbeddingGrid, DEFAULT_CELL_SIZE};
pub use object::{build_object_depth, build_object_viewpoint, compensated_area, ObjectIndex, ObjectVariant};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("trajectory has no depth frames")]
    MissingDepth,
    #[error("no valid depth inside any detection box for {label:?}")]
    NoValidDepth { label: String },
    #[error("label {0:?} is not in the index")]
    LabelNotIndexed(String),
    #[error(
        "embedder {0:?} cannot produce pixel embeddings; supply precomputed embeddings or a pixel-capable embedder"
    )]
    EmbedderLacksPixelCapability(String),
    #[error("grid was built with embedder {grid:?} but queried with {query:?}")]
    EmbedderMismatch { grid: String, query: String },
    #[error("embedding grid has no cell with a valid similarity")]
    EmptyGrid,
    #[error("embedding-grid lookup requires an embedder")]
    MissingEmbedder,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, IndexError>;

/// One index answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub label: String,
    pub point: WorldPoint,
    /// Frame the entry was derived from; `None` for grid answers.
    pub source_frame: Option<u64>,
    /// Bbox area (px², compensated for ObjectViewpoint when enabled) for
    /// object indices; cosine similarity for the grid.
    pub score: f64,
}

/// Either kind of index, as loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialIndex {
    Object(ObjectIndex),
    Grid(EmbeddingGrid),
}

impl SpatialIndex {
    /// Resolves `label` to an entry. Object indices use an exact
    /// (case-insensitive) key lookup; the grid embeds the label and takes the
    /// most similar cell.
    pub fn lookup(&self, label: &str, embedder: Option<&dyn Embedder>) -> Result<IndexEntry> {
        match self {
            SpatialIndex::Object(idx) => idx.get(label).cloned(),
            SpatialIndex::Grid(g) => query_grid(g, label, embedder.ok_or(IndexError::MissingEmbedder)?),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SpatialIndex::Object(idx) => idx.variant.as_str(),
            SpatialIndex::Grid(_) => "embedding-grid",
        }
    }

    /// Number of entries (labels) or occupied cells.
    pub fn len(&self) -> usize {
        match self {
            SpatialIndex::Object(idx) => idx.len(),
            SpatialIndex::Grid(g) => g.occupied_cells(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            SpatialIndex::Object(idx) => idx.save(path),
            SpatialIndex::Grid(g) => save_grid(g, path),
        }
    }

    /// Loads either an `index.json` or a `grid.json`, dispatching on its `kind`.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        #[derive(Deserialize)]
        struct Kind {
            kind: String,
        }
        let kind: Kind = serde_json::from_slice(&bytes).map_err(|e| json_err(path, e))?;
        match kind.kind.as_str() {
            object::KIND => Ok(SpatialIndex::Object(ObjectIndex::from_json(&bytes, path)?)),
            grid::KIND => Ok(SpatialIndex::Grid(load_grid(path)?)),
            other => {
                Err(IndexError::Format { path: path.to_path_buf(), message: format!("unknown index kind {other:?}") })
            }
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| IndexError::Io { path: path.to_path_buf(), source: e })
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| IndexError::Io { path: path.to_path_buf(), source: e })
}

pub(crate) fn json_err(path: &Path, e: serde_json::Error) -> IndexError {
    IndexError::Json { path: path.to_path_buf(), source: e }
}

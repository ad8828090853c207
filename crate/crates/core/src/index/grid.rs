//! Top-down embedding grid.
//!
//! Every valid depth pixel that carries an embedding is back-projected,
//! moved to the world frame and dropped into the cell containing its `(x, y)`.
//! A cell stores the mean of its contributing embeddings (not renormalized),
//! their count, and their mean height. Queries renormalize after zeroing
//! the configured dropped dimensions.
//!
//! On disk a grid is a JSON manifest plus a raw blob of little-endian `f32`
//! cell means, row-major over cells, `dim` floats per cell. In memory the
//! means are kept in `f64`, so a freshly built grid does not depend on the
//! order frames were summed in; a loaded grid carries the `f32`-rounded
//! values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{json_err, read, write, Embedder, IndexEntry, IndexError, Result};
use crate::dataset::Trajectory;
use crate::geometry::{backproject, camera_to_world, WorldPoint};
use crate::par;

pub(crate) const KIND: &str = "embedding-grid";
pub const DEFAULT_CELL_SIZE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid {
    cell_size: f64,
    origin: [f64; 2],
    rows: usize,
    cols: usize,
    dim: usize,
    embedder_id: String,
    dropped_dims: Vec<usize>,
    means: Vec<f64>,
    counts: Vec<u64>,
    mean_heights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridManifest {
    kind: String,
    format_version: u32,
    embedder_id: String,
    dim: usize,
    cell_size: f64,
    origin: [f64; 2],
    rows: usize,
    cols: usize,
    dropped_dims: Vec<usize>,
    blob: String,
    counts: Vec<u64>,
    mean_heights: Vec<f64>,
}

impl EmbeddingGrid {
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    /// `(rows, cols)`; rows run along world y, columns along world x.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn dropped_dims(&self) -> &[usize] {
        &self.dropped_dims
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    /// Mean embedding of a cell, before renormalization.
    pub fn cell_mean(&self, row: usize, col: usize) -> &[f64] {
        let c = row * self.cols + col;
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn mean_height(&self, row: usize, col: usize) -> f64 {
        self.mean_heights[row * self.cols + col]
    }

    pub fn occupied_cells(&self) -> usize {
        self.counts.iter().filter(|c| **c > 0).count()
    }

    /// Cell containing world `(x, y)`, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin[0]) / self.cell_size).floor();
        let row = ((y - self.origin[1]) / self.cell_size).floor();
        (col >= 0.0 && row >= 0.0 && (col as usize) < self.cols && (row as usize) < self.rows)
            .then_some((row as usize, col as usize))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [self.origin[0] + (col as f64 + 0.5) * self.cell_size, self.origin[1] + (row as f64 + 0.5) * self.cell_size]
    }

    /// Sets the embedding dimensions zeroed before every similarity.
    pub fn with_dropped_dims(mut self, mut dims: Vec<usize>) -> Result<Self> {
        if let Some(d) = dims.iter().find(|d| **d >= self.dim) {
            return Err(IndexError::InvalidParameter(format!(
                "dropped dimension {d} >= embedding dimension {}",
                self.dim
            )));
        }
        dims.sort_unstable();
        dims.dedup();
        self.dropped_dims = dims;
        Ok(self)
    }

    fn masked_unit(&self, v: &[f64]) -> Option<Vec<f64>> {
        let mut out = v.to_vec();
        for d in &self.dropped_dims {
            out[*d] = 0.0;
        }
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        (norm > 0.0).then(|| out.iter().map(|x| x / norm).collect())
    }
}

struct FrameSamples {
    palette: Vec<Vec<f32>>,
    /// (world x, world y, world z, palette index)
    points: Vec<(f64, f64, f64, u32)>,
}

/// Accumulates per-pixel embeddings of every frame into a top-down grid.
pub fn accumulate_grid(traj: &Trajectory, embedder: &dyn Embedder, cell_size: f64) -> Result<EmbeddingGrid> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(IndexError::InvalidParameter(format!("cell size must be positive, got {cell_size}")));
    }
    if !embedder.supports_pixels() {
        return Err(IndexError::EmbedderLacksPixelCapability(embedder.id().to_string()));
    }
    if !traj.has_depth() {
        return Err(IndexError::MissingDepth);
    }
    let intr = traj.intrinsics();
    let dim = embedder.dim();
    let samples = par::map(traj.frames(), |frame| -> Result<FrameSamples> {
        let pix = embedder
            .embed_pixels(frame, intr)
            .ok_or_else(|| IndexError::EmbedderLacksPixelCapability(embedder.id().to_string()))?;
        if pix.palette.iter().any(|v| v.len() != dim) || pix.assignment.len() != intr.pixel_count() {
            return Err(IndexError::InvalidParameter(format!(
                "pixel embeddings for frame {} do not match dimension {dim} / image size",
                frame.frame_id()
            )));
        }
        let depth = frame.depth.as_ref().expect("checked has_depth");
        let mut points = Vec::new();
        for row in 0..intr.height {
            for col in 0..intr.width {
                let idx = row as usize * intr.width as usize + col as usize;
                let Some(p) = pix.assignment[idx] else { continue };
                let Some(z) = depth.valid(col, row) else { continue };
                let cp = backproject(f64::from(col) + 0.5, f64::from(row) + 0.5, f64::from(z), intr)?;
                let w = camera_to_world(&cp, &frame.pose)?;
                points.push((w.x(), w.y(), w.z(), p));
            }
        }
        Ok(FrameSamples { palette: pix.palette, points })
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for s in &samples {
        for (x, y, _, _) in &s.points {
            lo = [lo[0].min(*x), lo[1].min(*y)];
            hi = [hi[0].max(*x), hi[1].max(*y)];
        }
    }
    let (origin, rows, cols) = if lo[0].is_finite() {
        let origin = [(lo[0] / cell_size).floor() * cell_size, (lo[1] / cell_size).floor() * cell_size];
        let cols = ((hi[0] - origin[0]) / cell_size).floor() as usize + 1;
        let rows = ((hi[1] - origin[1]) / cell_size).floor() as usize + 1;
        (origin, rows, cols)
    } else {
        ([0.0, 0.0], 0, 0)
    };

    let n_cells = rows * cols;
    let mut sums = vec![0.0f64; n_cells * dim];
    let mut heights = vec![0.0f64; n_cells];
    let mut counts = vec![0u64; n_cells];
    // Combined in frame order so the result is independent of thread count.
    for s in &samples {
        for (x, y, z, p) in &s.points {
            let col = (((x - origin[0]) / cell_size).floor() as usize).min(cols - 1);
            let row = (((y - origin[1]) / cell_size).floor() as usize).min(rows - 1);
            let c = row * cols + col;
            counts[c] += 1;
            heights[c] += z;
            for (acc, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(&s.palette[*p as usize]) {
                *acc += f64::from(*v);
            }
        }
    }
    let means = sums
        .chunks(dim.max(1))
        .zip(&counts)
        .flat_map(|(chunk, n)| chunk.iter().map(move |s| if *n > 0 { s / *n as f64 } else { 0.0 }))
        .collect();
    let mean_heights = heights.iter().zip(&counts).map(|(h, n)| if *n > 0 { h / *n as f64 } else { 0.0 }).collect();
    Ok(EmbeddingGrid {
        cell_size,
        origin,
        rows,
        cols,
        dim,
        embedder_id: embedder.id().to_string(),
        dropped_dims: Vec::new(),
        means: if dim == 0 { Vec::new() } else { means },
        counts,
        mean_heights,
    })
}

/// Embeds `text` and returns the center of the most similar occupied cell.
/// Ties go to the lexicographically smallest `(row, col)`.
pub fn query_grid(grid: &EmbeddingGrid, text: &str, embedder: &dyn Embedder) -> Result<IndexEntry> {
    if embedder.id() != grid.embedder_id {
        return Err(IndexError::EmbedderMismatch { grid: grid.embedder_id.clone(), query: embedder.id().to_string() });
    }
    let q: Vec<f64> = embedder.embed_text(text).iter().map(|x| f64::from(*x)).collect();
    if q.len() != grid.dim {
        return Err(IndexError::InvalidParameter(format!(
            "query embedding has {} dimensions, grid has {}",
            q.len(),
            grid.dim
        )));
    }
    let q = grid.masked_unit(&q).ok_or(IndexError::EmptyGrid)?;
    let mut best: Option<(f64, usize, usize)> = None;
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            if grid.count(row, col) == 0 {
                continue;
            }
            let Some(e) = grid.masked_unit(grid.cell_mean(row, col)) else { continue };
            let sim: f64 = q.iter().zip(&e).map(|(a, b)| a * b).sum();
            if best.is_none_or(|(s, _, _)| sim > s) {
                best = Some((sim, row, col));
            }
        }
    }
    let (score, row, col) = best.ok_or(IndexError::EmptyGrid)?;
    let [x, y] = grid.cell_center(row, col);
    Ok(IndexEntry {
        label: text.to_string(),
        point: WorldPoint::new(x, y, grid.mean_height(row, col)),
        source_frame: None,
        score,
    })
}

fn blob_path(json_path: &Path) -> (PathBuf, String) {
    let stem = json_path.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
    let name = format!("{stem}.bin");
    (json_path.with_file_name(&name), name)
}

/// Writes the manifest to `path` and the embedding blob next to it
/// (`<stem>.bin`).
pub fn save_grid(grid: &EmbeddingGrid, path: &Path) -> Result<()> {
    let (blob, blob_name) = blob_path(path);
    let manifest = GridManifest {
        kind: KIND.into(),
        format_version: 1,
        embedder_id: grid.embedder_id.clone(),
        dim: grid.dim,
        cell_size: grid.cell_size,
        origin: grid.origin,
        rows: grid.rows,
        cols: grid.cols,
        dropped_dims: grid.dropped_dims.clone(),
        blob: blob_name,
        counts: grid.counts.clone(),
        mean_heights: grid.mean_heights.clone(),
    };
    let mut s = serde_json::to_string_pretty(&manifest).expect("grid manifest serializes");
    s.push('\n');
    write(path, s.as_bytes())?;
    let bytes: Vec<u8> = grid.means.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    write(&blob, &bytes)
}

pub fn load_grid(path: &Path) -> Result<EmbeddingGrid> {
    let m: GridManifest = serde_json::from_slice(&read(path)?).map_err(|e| json_err(path, e))?;
    let bad = |message: String| IndexError::Format { path: path.to_path_buf(), message };
    if m.kind != KIND || m.format_version != 1 {
        return Err(bad(format!("not a version-1 {KIND} manifest")));
    }
    let n = m.rows * m.cols;
    if m.counts.len() != n || m.mean_heights.len() != n {
        return Err(bad(format!("expected {n} cell counts and heights")));
    }
    let blob = path.with_file_name(&m.blob);
    let bytes = read(&blob)?;
    if bytes.len() != 4 * n * m.dim {
        return Err(bad(format!("blob {} has {} bytes, expected {}", blob.display(), bytes.len(), 4 * n * m.dim)));
    }
    let means = bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect();
    let grid = EmbeddingGrid {
        cell_size: m.cell_size,
        origin: m.origin,
        rows: m.rows,
        cols: m.cols,
        dim: m.dim,
        embedder_id: m.embedder_id,
        dropped_dims: Vec::new(),
        means,
        counts: m.counts,
        mean_heights: m.mean_heights,
    };
    grid.with_dropped_dims(m.dropped_dims)
}

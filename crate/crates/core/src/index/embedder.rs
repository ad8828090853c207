use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::dataset::Frame;
use crate::geometry::Intrinsics;
use crate::label;

/// Per-pixel embeddings for one frame, stored as a palette plus a per-pixel
/// palette index (`None` = pixel carries no embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelEmbeddings {
    pub palette: Vec<Vec<f32>>,
    /// Row-major, `width * height` entries.
    pub assignment: Vec<Option<u32>>,
}

impl PixelEmbeddings {
    pub fn at(&self, idx: usize) -> Option<&[f32]> {
        self.assignment[idx].map(|p| self.palette[p as usize].as_slice())
    }
}

/// A text (and optionally pixel) encoder into a shared embedding space.
///
/// Implementations must be deterministic.
pub trait Embedder: Send + Sync {
    /// Identity tag stored with built grids; queries must use the same tag.
    fn id(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed_text(&self, text: &str) -> Vec<f32>;

    fn supports_pixels(&self) -> bool {
        false
    }

    /// Per-pixel embeddings for `frame`, or `None` without pixel capability.
    fn embed_pixels(&self, _frame: &Frame, _intr: &Intrinsics) -> Option<PixelEmbeddings> {
        None
    }

    /// Largest similarity value the grid can report with this embedder.
    fn max_similarity(&self) -> f64 {
        1.0
    }
}

/// Deterministic bag-of-words embedder used as a self-contained stand-in for a
/// vision-language model.
///
/// Each word maps to a fixed pseudo-random Gaussian direction seeded from the
/// SHA-256 of the word; a text embeds to the normalized sum of its word
/// vectors. Pixels inside a detection box embed as that detection's label
/// (smallest box wins where boxes overlap), so a label query and the pixels of
/// the matching object embed identically.
#[derive(Debug, Clone)]
pub struct WordHashEmbedder {
    dim: usize,
    id: String,
}

impl WordHashEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, id: format!("word-hash-v1-d{dim}") }
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let digest = Sha256::digest(word.as_bytes());
        let seed: [u8; 32] = digest.into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl Default for WordHashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl Embedder for WordHashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        for w in label::words(text) {
            for (a, v) in acc.iter_mut().zip(self.word_vector(&w)) {
                *a += v;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; self.dim];
        }
        acc.iter().map(|v| (v / norm) as f32).collect()
    }

    fn supports_pixels(&self) -> bool {
        true
    }

    fn embed_pixels(&self, frame: &Frame, intr: &Intrinsics) -> Option<PixelEmbeddings> {
        let mut dets: Vec<_> = frame.detections.iter().collect();
        // Smallest box first so nested/foreground boxes claim their pixels.
        dets.sort_by(|a, b| {
            a.bbox
                .area()
                .cmp(&b.bbox.area())
                .then_with(|| b.confidence.total_cmp(&a.confidence))
                .then_with(|| label::normalize(&a.label).cmp(&label::normalize(&b.label)))
        });
        let mut palette: Vec<Vec<f32>> = Vec::new();
        let mut palette_of: HashMap<String, u32> = HashMap::new();
        let mut assignment = vec![None; intr.pixel_count()];
        let w = intr.width as usize;
        for d in dets {
            let key = label::normalize(&d.label);
            let p = *palette_of.entry(key).or_insert_with(|| {
                palette.push(self.embed_text(&d.label));
                (palette.len() - 1) as u32
            });
            for row in d.bbox.ymin..d.bbox.ymax {
                for col in d.bbox.xmin..d.bbox.xmax {
                    let slot = &mut assignment[row as usize * w + col as usize];
                    if slot.is_none() {
                        *slot = Some(p);
                    }
                }
            }
        }
        Some(PixelEmbeddings { palette, assignment })
    }
}

/// Wraps an embedder and hides its pixel capability.
#[derive(Debug, Clone)]
pub struct TextOnly<E>(pub E);

impl<E: Embedder> Embedder for TextOnly<E> {
    fn id(&self) -> &str {
        self.0.id()
    }

    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn embed_text(&self, text: &str) -> Vec<f32> {
        self.0.embed_text(text)
    }

    fn max_similarity(&self) -> f64 {
        self.0.max_similarity()
    }
}

/// Pixel embeddings recorded alongside a trajectory (e.g. exported from a
/// segmentation model), paired with a text encoder for queries.
pub struct PrecomputedEmbedder<E> {
    text: E,
    frames: HashMap<u64, PixelEmbeddings>,
}

impl<E: Embedder> PrecomputedEmbedder<E> {
    pub fn new(text: E, frames: HashMap<u64, PixelEmbeddings>) -> Self {
        Self { text, frames }
    }
}

impl<E: Embedder> Embedder for PrecomputedEmbedder<E> {
    fn id(&self) -> &str {
        self.text.id()
    }

    fn dim(&self) -> usize {
        self.text.dim()
    }

    fn embed_text(&self, text: &str) -> Vec<f32> {
        self.text.embed_text(text)
    }

    fn supports_pixels(&self) -> bool {
        true
    }

    fn embed_pixels(&self, frame: &Frame, _intr: &Intrinsics) -> Option<PixelEmbeddings> {
        self.frames.get(&frame.frame_id()).cloned()
    }

    fn max_similarity(&self) -> f64 {
        self.text.max_similarity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
    }

    #[test]
    fn text_embedding_is_deterministic_and_normalized() {
        let e = WordHashEmbedder::default();
        let a = e.embed_text("Coffee machine");
        assert_eq!(a, e.embed_text("coffee_machine"));
        assert!((dot(&a, &a) - 1.0).abs() < 1e-6);
        assert_eq!(e.embed_text("").iter().filter(|v| **v != 0.0).count(), 0);
    }

    #[test]
    fn related_texts_share_words() {
        let e = WordHashEmbedder::new(256);
        let bed = e.embed_text("bed");
        assert!(dot(&bed, &e.embed_text("go to the bed")) > 0.3);
        assert!(dot(&bed, &e.embed_text("sofa")).abs() < 0.3);
    }
}

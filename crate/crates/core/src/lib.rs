//! Grounding natural-language requests to physical locations in a mapped
//! environment.
//!
//! The pipeline has an offline half and an online half. Offline, a recorded
//! exploration [`Trajectory`](dataset::Trajectory) (poses, depth frames and
//! object detections) is turned into a spatial language index: a map from an
//! object name to a world-frame point. Online, the detector vocabulary and a
//! user request are combined into a prompt, a language model picks one object
//! from the vocabulary, and the index resolves that object to a location.
//!
//! Module map:
//!
//! * [`geometry`]: pinhole back-projection, rigid transforms, point/box distance.
//! * [`dataset`]: on-disk formats, loaders and the synthetic scene generator.
//! * [`index`]: the ObjectDepth, ObjectViewpoint and embedding-grid indices.
//! * [`grounding`]: prompt construction, LLM backends, response cache, parsing.
//! * [`evaluation`]: metrics, baselines, batch evaluation and reports.
//!
//! With the default `parallel` feature, per-frame and per-query work runs on
//! rayon; every reduction combines partial results in a fixed order so outputs
//! are bitwise identical regardless of thread count.

pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod grounding;
pub mod index;
pub mod label;
pub mod par;

pub use dataset::{Detection, Frame, Query, QueryType, SceneTruth, Trajectory};
pub use geometry::{Aabb3, CameraPoint, Intrinsics, PixelBBox, Pose, WorldPoint};

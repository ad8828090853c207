//! Deterministic synthetic household scenes.
//!
//! A scene is a box-shaped room holding non-overlapping axis-aligned objects
//! that rest on the floor. The camera walks an elliptical loop near the walls
//! at a fixed height, looking toward the room center with a downward tilt.
//! Each frame is ray-cast per pixel center, so depth is exact (before optional
//! noise) and the generated detections double as a ground-truth oracle.
//!
//! Rendering rules:
//!
//! * An object is detected when all 8 corners lie in front of the camera, its
//!   center projects into the image and the ray to its center is not blocked
//!   by another object.
//! * The detection box is the set of pixels whose centers fall within the
//!   projected extent of the 8 corners, clipped to the image.
//! * A pixel inside one or more detection boxes keeps its depth only if it
//!   belongs to the object of every box containing it; otherwise it is written
//!   as invalid depth (an instance mask). Every valid depth pixel inside a
//!   detection box therefore lies on the detected object's surface. A
//!   detection left with no valid pixels is dropped.
//! * Elsewhere, depth is the distance to the room shell.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::depth::DepthImage;
use super::{
    save_queries, save_scene_truth, save_trajectory, DatasetError, Detection, Frame, Query, QueryType, Result,
    SceneObject, SceneTruth, Trajectory,
};
use crate::geometry::{world_to_camera, Aabb3, CameraPoint, Intrinsics, PixelBBox, Pose, WorldPoint};
use crate::par;

/// Built-in household vocabulary. Labels are single words or spaced phrases
/// so prompts, parsing and word-level embeddings behave uniformly.
pub const HOUSEHOLD_LABELS: [&str; 40] = [
    "bed",
    "sofa",
    "armchair",
    "dining table",
    "desk",
    "bookshelf",
    "television",
    "refrigerator",
    "microwave",
    "oven",
    "sink",
    "toilet",
    "bathtub",
    "dresser",
    "nightstand",
    "lamp",
    "plant",
    "coffee machine",
    "toaster",
    "kettle",
    "washing machine",
    "trash can",
    "laptop",
    "piano",
    "fireplace",
    "wardrobe",
    "chair",
    "stool",
    "ottoman",
    "cabinet",
    "mirror",
    "shower",
    "dishwasher",
    "bench",
    "fan",
    "heater",
    "printer",
    "aquarium",
    "cat bed",
    "shoe rack",
];

const NEAR_PLANE: f64 = 0.05;
const PLACEMENT_TRIES: usize = 500;
const SCENE_ATTEMPTS: usize = 25;
const OBJECT_GAP: f64 = 0.15;
const WALL_INSET_OBJECTS: f64 = 1.0;
const WALL_INSET_CAMERA: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub scene_id: String,
    /// Room size along x, y, z in meters.
    pub room_extent: [f64; 3],
    pub object_count: usize,
    /// Per-axis object size range in meters.
    pub object_size_range: [f64; 2],
    pub waypoint_count: usize,
    pub camera_height: f64,
    /// Downward tilt of the optical axis in degrees.
    pub camera_pitch_deg: f64,
    /// Standard deviation of additive Gaussian depth noise, meters.
    pub depth_noise_sigma: f64,
    pub intrinsics: Intrinsics,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            scene_id: "synthetic".into(),
            room_extent: [6.0, 5.0, 2.6],
            object_count: 10,
            object_size_range: [0.3, 0.9],
            waypoint_count: 24,
            camera_height: 1.5,
            camera_pitch_deg: 25.0,
            depth_noise_sigma: 0.0,
            intrinsics: Intrinsics { fx: 80.0, fy: 80.0, cx: 64.0, cy: 48.0, width: 128, height: 96 },
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DatasetError::Invalid(format!("synthetic config: {m}")));
        if self.object_count == 0 || self.waypoint_count == 0 {
            return bad("object and waypoint counts must be positive");
        }
        if self.object_count > HOUSEHOLD_LABELS.len() {
            return bad("object count exceeds the 40-label vocabulary");
        }
        if self.room_extent.iter().any(|e| e.is_nan() || *e <= 0.0) {
            return bad("room extents must be positive");
        }
        let [lo, hi] = self.object_size_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("object size range must satisfy 0 < min <= max");
        }
        if !(self.camera_height > 0.0 && self.camera_height < self.room_extent[2]) {
            return bad("camera height must lie inside the room");
        }
        if self.depth_noise_sigma.is_nan() || self.depth_noise_sigma < 0.0 {
            return bad("depth noise must be non-negative");
        }
        let inner = [self.room_extent[0], self.room_extent[1]].map(|e| e - 2.0 * WALL_INSET_OBJECTS);
        if inner.iter().any(|e| *e < hi) {
            return bad("room too small for the object size range");
        }
        if hi >= self.room_extent[2] {
            return bad("objects taller than the room");
        }
        self.intrinsics.validate()?;
        Ok(())
    }
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub trajectory: Trajectory,
    pub truth: SceneTruth,
    pub queries: Vec<Query>,
}

impl SyntheticDataset {
    /// Writes `trajectory/`, `scene.json` and `queries.json` under `dir`.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        save_trajectory(&self.trajectory, &dir.join("trajectory"))?;
        save_scene_truth(&self.truth, &dir.join("scene.json"))?;
        save_queries(&self.queries, &dir.join("queries.json"))
    }
}

/// Camera-to-world rotation for a camera at `yaw` (radians, about world +z,
/// zero looking along +x) tilted down by `pitch` radians.
pub fn camera_rotation(yaw: f64, pitch: f64) -> UnitQuaternion<f64> {
    let forward = Vector3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), -pitch.sin());
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    let m = Matrix3::from_columns(&[right, down, forward]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Renders one frame. Returns the depth image and `(object index, bbox)` for
/// every emitted detection.
pub fn render_frame(
    room: &Aabb3,
    objects: &[Aabb3],
    pose: &Pose,
    intr: &Intrinsics,
) -> (DepthImage, Vec<(usize, PixelBBox)>) {
    let rot = pose.rotation().expect("synthetic poses are normalized");
    let origin = pose.position;
    let (w, h) = (intr.width, intr.height);
    let mut depth = vec![0.0f64; intr.pixel_count()];
    let mut owner: Vec<Option<usize>> = vec![None; intr.pixel_count()];

    for row in 0..h {
        for col in 0..w {
            let dir_cam = Vector3::new(
                (f64::from(col) + 0.5 - intr.cx) / intr.fx,
                (f64::from(row) + 0.5 - intr.cy) / intr.fy,
                1.0,
            );
            let dir = rot * dir_cam;
            let idx = (row * w + col) as usize;
            let mut best: Option<(f64, usize)> = None;
            for (k, b) in objects.iter().enumerate() {
                if let Some(t) = b.ray_entry(&origin, &dir) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, k));
                    }
                }
            }
            // With dir_cam.z == 1 the ray parameter is the z-depth.
            match best {
                Some((t, k)) => {
                    depth[idx] = t;
                    owner[idx] = Some(k);
                }
                None => depth[idx] = room_exit(room, &origin, &dir),
            }
        }
    }

    let candidates: Vec<(usize, PixelBBox)> = objects
        .iter()
        .enumerate()
        .filter_map(|(k, b)| detect(k, b, objects, pose, intr).map(|bbox| (k, bbox)))
        .collect();
    let mut own_valid = vec![0usize; candidates.len()];
    for row in 0..h {
        for col in 0..w {
            let idx = (row * w + col) as usize;
            let mut inside = candidates
                .iter()
                .enumerate()
                .filter(|(_, (_, b))| col >= b.xmin && col < b.xmax && row >= b.ymin && row < b.ymax);
            let first = inside.next();
            let Some((ci, (k, _))) = first else { continue };
            let valid = owner[idx] == Some(*k) && inside.all(|(_, (j, _))| owner[idx] == Some(*j));
            if valid {
                own_valid[ci] += 1;
            } else {
                depth[idx] = 0.0;
            }
        }
    }
    let emitted = candidates.into_iter().zip(own_valid).filter_map(|(c, n)| (n > 0).then_some(c)).collect();
    let img = DepthImage::new(w, h, depth.iter().map(|d| *d as f32).collect()).expect("sized to intrinsics");
    (img, emitted)
}

fn room_exit(room: &Aabb3, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
    let mut t = f64::INFINITY;
    for i in 0..3 {
        if dir[i] > 0.0 {
            t = t.min((room.max[i] - origin[i]) / dir[i]);
        } else if dir[i] < 0.0 {
            t = t.min((room.min[i] - origin[i]) / dir[i]);
        }
    }
    t
}

fn detect(k: usize, b: &Aabb3, objects: &[Aabb3], pose: &Pose, intr: &Intrinsics) -> Option<PixelBBox> {
    let mut umin = f64::INFINITY;
    let mut umax = f64::NEG_INFINITY;
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for c in b.corners() {
        let p = world_to_camera(&WorldPoint(c), pose).ok()?;
        if p.0.z <= NEAR_PLANE {
            return None;
        }
        let (u, v) = intr.project(&p)?;
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let center_cam = world_to_camera(&WorldPoint(b.center()), pose).ok()?;
    let (uc, vc) = intr.project(&center_cam)?;
    if !(uc >= 0.0 && uc < f64::from(intr.width) && vc >= 0.0 && vc < f64::from(intr.height)) {
        return None;
    }
    let to_center = b.center() - pose.position;
    let entry = b.ray_entry(&pose.position, &to_center)?;
    let blocked = objects
        .iter()
        .enumerate()
        .any(|(j, o)| j != k && o.ray_entry(&pose.position, &to_center).is_some_and(|t| t < entry));
    if blocked {
        return None;
    }

    let (xmin, xmax) = pixel_span(umin, umax, intr.width)?;
    let (ymin, ymax) = pixel_span(vmin, vmax, intr.height)?;
    PixelBBox::new(xmin, ymin, xmax, ymax).ok()
}

/// Half-open range of pixels whose centers lie in `[lo, hi]`, clipped to `[0, n)`.
fn pixel_span(lo: f64, hi: f64, n: u32) -> Option<(u32, u32)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(f64::from(n) - 1.0);
    (first <= last).then(|| (first as u32, last as u32 + 1))
}

fn frame_rng(seed: u64, attempt: usize, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((attempt as u64) << 32) | (frame as u64 + 1));
    rng
}

fn place_objects(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> std::result::Result<Vec<(String, Aabb3)>, usize> {
    let mut labels: Vec<&str> = HOUSEHOLD_LABELS.to_vec();
    labels.shuffle(rng);
    let [lo, hi] = cfg.object_size_range;
    let [rx, ry, _] = cfg.room_extent;
    let mut placed: Vec<(String, Aabb3)> = Vec::new();
    for label in labels.into_iter().take(cfg.object_count) {
        let size = [rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
        let mut ok = None;
        for _ in 0..PLACEMENT_TRIES {
            let x0 = rng.random_range(WALL_INSET_OBJECTS..=rx - WALL_INSET_OBJECTS - size[0]);
            let y0 = rng.random_range(WALL_INSET_OBJECTS..=ry - WALL_INSET_OBJECTS - size[1]);
            let cand = Aabb3::new([x0, y0, 0.0], [x0 + size[0], y0 + size[1], size[2]]).expect("positive size");
            let clear = placed.iter().all(|(_, o)| {
                let g = o.inflated(OBJECT_GAP);
                cand.max.x < g.min.x || cand.min.x > g.max.x || cand.max.y < g.min.y || cand.min.y > g.max.y
            });
            if clear {
                ok = Some(cand);
                break;
            }
        }
        match ok {
            Some(b) => placed.push((label.to_string(), b)),
            None => return Err(placed.len()),
        }
    }
    Ok(placed)
}

fn waypoint_poses(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let [rx, ry, _] = cfg.room_extent;
    let center = Vector3::new(rx / 2.0, ry / 2.0, cfg.camera_height);
    let (a, b) = (rx / 2.0 - WALL_INSET_CAMERA, ry / 2.0 - WALL_INSET_CAMERA);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let pitch = cfg.camera_pitch_deg.to_radians();
    (0..cfg.waypoint_count)
        .map(|k| {
            let phi = phase + std::f64::consts::TAU * k as f64 / cfg.waypoint_count as f64;
            let pos = Vector3::new(center.x + a * phi.cos(), center.y + b * phi.sin(), cfg.camera_height);
            let to_center = center - pos;
            let yaw = to_center.y.atan2(to_center.x) + rng.random_range(-0.35..0.35);
            Pose::from_rotation(k as u64, k as f64 * 0.5, pos, camera_rotation(yaw, pitch))
        })
        .collect()
}

fn instance_id(label: &str, i: usize) -> String {
    format!("{}_{i}", label.replace(' ', "_"))
}

/// Generates a scene, its exploration trajectory and one explicit query per
/// object. Pure function of `cfg`; retries placement until every object is
/// detected at least once.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let room = Aabb3::new([0.0; 3], cfg.room_extent)?;
    let intr = cfg.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_placed = 0;
    for attempt in 0..SCENE_ATTEMPTS {
        let placed = match place_objects(cfg, &mut rng) {
            Ok(p) => p,
            Err(n) => {
                best_placed = best_placed.max(n);
                continue;
            }
        };
        let boxes: Vec<Aabb3> = placed.iter().map(|(_, b)| *b).collect();
        let poses = waypoint_poses(cfg, &mut rng);
        let rendered = par::map_range(poses.len(), |k| {
            let (mut depth, dets) = render_frame(&room, &boxes, &poses[k], &intr);
            if cfg.depth_noise_sigma > 0.0 {
                let noise = Normal::new(0.0, cfg.depth_noise_sigma).expect("sigma validated");
                let mut r = frame_rng(cfg.seed, attempt, k);
                for d in depth.data_mut() {
                    if *d > 0.0 {
                        *d = (f64::from(*d) + noise.sample(&mut r)) as f32;
                    }
                }
            }
            (depth, dets)
        });
        let mut seen = vec![false; boxes.len()];
        for (_, dets) in &rendered {
            for (k, _) in dets {
                seen[*k] = true;
            }
        }
        if !seen.iter().all(|s| *s) {
            log::debug!("attempt {attempt}: {} objects never detected, retrying", seen.iter().filter(|s| !**s).count());
            best_placed = best_placed.max(seen.iter().filter(|s| **s).count());
            continue;
        }

        let frames = poses
            .iter()
            .zip(rendered)
            .map(|(pose, (depth, dets))| Frame {
                pose: *pose,
                depth: Some(depth),
                detections: dets
                    .into_iter()
                    .map(|(k, bbox)| Detection {
                        frame_id: pose.frame_id,
                        label: placed[k].0.clone(),
                        confidence: 1.0,
                        bbox,
                    })
                    .collect(),
            })
            .collect();
        let trajectory = Trajectory::new(intr, frames)?;
        let truth = SceneTruth {
            scene_id: cfg.scene_id.clone(),
            objects: placed
                .iter()
                .enumerate()
                .map(|(i, (label, aabb))| SceneObject {
                    instance_id: instance_id(label, i),
                    label: label.clone(),
                    aabb: *aabb,
                })
                .collect(),
        };
        let queries = placed
            .iter()
            .enumerate()
            .map(|(i, (label, _))| Query {
                query_id: format!("explicit-{i:02}"),
                query_type: QueryType::Explicit,
                text: format!("go to the {label}"),
                plausible_labels: vec![label.clone()],
            })
            .collect();
        return Ok(SyntheticDataset { trajectory, truth, queries });
    }
    Err(DatasetError::PlacementFailure { placed: best_placed, requested: cfg.object_count, attempts: SCENE_ATTEMPTS })
}

/// Camera-frame point for pixel `(col, row)` of a rendered frame.
pub fn pixel_point(col: u32, row: u32, depth: f32, intr: &Intrinsics) -> Option<CameraPoint> {
    crate::geometry::backproject(f64::from(col) + 0.5, f64::from(row) + 0.5, f64::from(depth), intr).ok()
}

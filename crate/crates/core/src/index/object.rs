//! Detector-driven indices: one entry per label, taken from the frame where
//! that label's bounding box was largest.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{json_err, read, write, IndexEntry, IndexError, Result};
use crate::dataset::{detector_vocabulary, Detection, Frame, Trajectory};
use crate::geometry::{backproject, bbox_view_angle, camera_to_world, Intrinsics, PixelBBox, WorldPoint};
use crate::label;
use crate::par;

pub(crate) const KIND: &str = "object-index";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectVariant {
    /// Mean of back-projected depth points inside the largest box.
    ObjectDepth,
    /// Camera position at the frame with the largest (compensated) box.
    ObjectViewpoint,
}

impl ObjectVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectVariant::ObjectDepth => "object-depth",
            ObjectVariant::ObjectViewpoint => "object-viewpoint",
        }
    }
}

/// Label-keyed index. Keys are normalized labels, so lookups ignore case and
/// `_`/`-`/space differences.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectIndex {
    pub variant: ObjectVariant,
    pub confidence_threshold: f64,
    pub compensate: bool,
    entries: BTreeMap<String, IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct ObjectIndexFile {
    kind: String,
    variant: ObjectVariant,
    confidence_threshold: f64,
    compensate: bool,
    entries: Vec<IndexEntry>,
}

impl ObjectIndex {
    pub fn new(variant: ObjectVariant, confidence_threshold: f64, compensate: bool, entries: Vec<IndexEntry>) -> Self {
        let entries = entries.into_iter().map(|e| (label::normalize(&e.label), e)).collect();
        Self { variant, confidence_threshold, compensate, entries }
    }

    pub fn get(&self, label: &str) -> Result<&IndexEntry> {
        self.entries.get(&label::normalize(label)).ok_or_else(|| IndexError::LabelNotIndexed(label.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        let file = ObjectIndexFile {
            kind: KIND.into(),
            variant: self.variant,
            confidence_threshold: self.confidence_threshold,
            compensate: self.compensate,
            entries: self.entries.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("index serializes");
        s.push('\n');
        s
    }

    pub fn from_json(bytes: &[u8], path: &Path) -> Result<Self> {
        let f: ObjectIndexFile = serde_json::from_slice(bytes).map_err(|e| json_err(path, e))?;
        if f.kind != KIND {
            return Err(IndexError::Format {
                path: path.to_path_buf(),
                message: format!("kind {:?} is not {KIND}", f.kind),
            });
        }
        if let Some(e) = f.entries.iter().find(|e| !e.point.is_finite()) {
            return Err(IndexError::Format {
                path: path.to_path_buf(),
                message: format!("non-finite point for {:?}", e.label),
            });
        }
        Ok(Self::new(f.variant, f.confidence_threshold, f.compensate, f.entries))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?, path)
    }
}

/// Area scaled by `cos³θ` to undo the apparent enlargement of off-axis
/// objects under a pinhole camera.
pub fn compensated_area(area: f64, view_angle: f64) -> f64 {
    area * view_angle.cos().powi(3)
}

/// Qualifying detections grouped by normalized label, in vocabulary order.
/// Each group lists `(frame index, detection)` in trajectory order.
fn candidates_by_label(traj: &Trajectory, threshold: f64) -> Vec<(String, Vec<(usize, &Detection)>)> {
    let vocab = detector_vocabulary(traj, threshold);
    let mut groups: BTreeMap<String, Vec<(usize, &Detection)>> = BTreeMap::new();
    for (fi, frame) in traj.frames().iter().enumerate() {
        for d in frame.detections.iter().filter(|d| d.confidence > threshold) {
            groups.entry(label::normalize(&d.label)).or_default().push((fi, d));
        }
    }
    vocab
        .into_iter()
        .map(|l| {
            let g = groups.remove(&label::normalize(&l)).unwrap_or_default();
            (l, g)
        })
        .collect()
}

/// Mean world position of the valid depth pixels inside `bbox`, or `None`
/// when every pixel is invalid.
pub(crate) fn bbox_centroid(frame: &Frame, bbox: &PixelBBox, intr: &Intrinsics) -> Result<Option<WorldPoint>> {
    let depth = frame.depth.as_ref().ok_or(IndexError::MissingDepth)?;
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for row in bbox.ymin..bbox.ymax {
        for col in bbox.xmin..bbox.xmax {
            let Some(z) = depth.valid(col, row) else { continue };
            let p = backproject(f64::from(col) + 0.5, f64::from(row) + 0.5, f64::from(z), intr)?;
            sum += camera_to_world(&p, &frame.pose)?.0;
            n += 1;
        }
    }
    Ok((n > 0).then(|| WorldPoint(sum / n as f64)))
}

/// Builds the ObjectDepth index: for each label, the largest qualifying box
/// (falling back to the next largest when a box has no valid depth) and the
/// mean of its back-projected depth points.
pub fn build_object_depth(traj: &Trajectory, threshold: f64) -> Result<ObjectIndex> {
    if !traj.has_depth() {
        return Err(IndexError::MissingDepth);
    }
    let groups = candidates_by_label(traj, threshold);
    let intr = traj.intrinsics();
    let entries = par::map(&groups, |(l, cands)| {
        let mut ordered = cands.clone();
        // Stable: equal areas keep trajectory order.
        ordered.sort_by_key(|d| std::cmp::Reverse(d.1.bbox.area()));
        for (fi, d) in ordered {
            let frame = &traj.frames()[fi];
            if let Some(point) = bbox_centroid(frame, &d.bbox, intr)? {
                return Ok(IndexEntry {
                    label: l.clone(),
                    point,
                    source_frame: Some(frame.frame_id()),
                    score: d.bbox.area() as f64,
                });
            }
        }
        Err(IndexError::NoValidDepth { label: l.clone() })
    });
    let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ObjectIndex::new(ObjectVariant::ObjectDepth, threshold, false, entries))
}

/// Builds the ObjectViewpoint index: for each label, the camera position of
/// the frame whose box maximizes area (or `cos³θ`-compensated area). Needs no
/// depth.
pub fn build_object_viewpoint(traj: &Trajectory, threshold: f64, compensate: bool) -> Result<ObjectIndex> {
    let groups = candidates_by_label(traj, threshold);
    let intr = traj.intrinsics();
    let entries = par::map(&groups, |(l, cands)| {
        let mut best: Option<(f64, usize)> = None;
        for (fi, d) in cands {
            let area = d.bbox.area() as f64;
            let score = if compensate { compensated_area(area, bbox_view_angle(&d.bbox, intr)) } else { area };
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, *fi));
            }
        }
        best.map(|(score, fi)| {
            let frame = &traj.frames()[fi];
            IndexEntry {
                label: l.clone(),
                point: WorldPoint(frame.pose.position),
                source_frame: Some(frame.frame_id()),
                score,
            }
        })
    });
    Ok(ObjectIndex::new(ObjectVariant::ObjectViewpoint, threshold, compensate, entries.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DepthImage;
    use crate::geometry::Pose;

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 64.0, 48.0, 128, 96).unwrap()
    }

    fn det(frame_id: u64, label: &str, bbox: [u32; 4]) -> Detection {
        Detection { frame_id, label: label.into(), confidence: 0.9, bbox: PixelBBox::try_from(bbox).unwrap() }
    }

    fn frame(id: u64, position: [f64; 3], depth: Option<DepthImage>, dets: Vec<Detection>) -> Frame {
        Frame { pose: Pose::new(id, id as f64, position, [1.0, 0.0, 0.0, 0.0]).unwrap(), depth, detections: dets }
    }

    #[test]
    fn object_depth_recovers_front_face_center() {
        // Face at constant depth 2.0 spanning pixel centers symmetric about
        // the principal point: columns 54..74, rows 38..58.
        let mut depth = DepthImage::filled(128, 96, 9.0);
        for r in 38..58 {
            for c in 54..74 {
                depth.set(c, r, 2.0);
            }
        }
        let t = Trajectory::new(
            intr(),
            vec![frame(0, [0.5, 0.0, 0.0], Some(depth), vec![det(0, "cube", [54, 38, 74, 58])])],
        )
        .unwrap();
        let idx = build_object_depth(&t, 0.8).unwrap();
        let p = idx.get("cube").unwrap().point;
        assert!((p.0 - Vector3::new(0.5, 0.0, 2.0)).norm() < 1e-6);
    }

    #[test]
    fn object_depth_uses_largest_box() {
        let depth = |z: f32| Some(DepthImage::filled(128, 96, z));
        let t = Trajectory::new(
            intr(),
            vec![
                frame(0, [0.0; 3], depth(1.0), vec![det(0, "mug", [0, 0, 20, 20])]),
                frame(1, [5.0, 0.0, 0.0], depth(1.0), vec![det(1, "mug", [0, 0, 30, 30])]),
            ],
        )
        .unwrap();
        let e = build_object_depth(&t, 0.8).unwrap().get("mug").unwrap().clone();
        assert_eq!(e.source_frame, Some(1));
        assert_eq!(e.score, 900.0);
    }

    #[test]
    fn object_depth_falls_back_when_largest_box_is_invalid() {
        let mut d0 = DepthImage::filled(128, 96, 1.0);
        for r in 0..30 {
            for c in 0..30 {
                d0.set(c, r, if (r + c) % 2 == 0 { 0.0 } else { f32::NAN });
            }
        }
        let t = Trajectory::new(
            intr(),
            vec![
                frame(0, [0.0; 3], Some(d0), vec![det(0, "mug", [0, 0, 30, 30])]),
                frame(1, [0.0; 3], Some(DepthImage::filled(128, 96, 1.0)), vec![det(1, "mug", [0, 0, 20, 20])]),
            ],
        )
        .unwrap();
        assert_eq!(build_object_depth(&t, 0.8).unwrap().get("mug").unwrap().source_frame, Some(1));

        let all_bad = Trajectory::new(
            intr(),
            vec![frame(0, [0.0; 3], Some(DepthImage::filled(128, 96, 0.0)), vec![det(0, "mug", [0, 0, 30, 30])])],
        )
        .unwrap();
        assert!(matches!(build_object_depth(&all_bad, 0.8), Err(IndexError::NoValidDepth { .. })));
    }

    #[test]
    fn object_depth_requires_depth() {
        let t = Trajectory::new(intr(), vec![frame(0, [0.0; 3], None, vec![])]).unwrap();
        assert!(matches!(build_object_depth(&t, 0.8), Err(IndexError::MissingDepth)));
        assert!(build_object_viewpoint(&t, 0.8, true).unwrap().is_empty());
    }

    #[test]
    fn viewpoint_compensation_prefers_on_axis_view() {
        assert_eq!(compensated_area(500.0, 0.0), 500.0);
        let c60 = compensated_area(1000.0, std::f64::consts::FRAC_PI_3);
        assert!((c60 - 125.0).abs() < 1e-9);
        assert!(c60 < compensated_area(300.0, 0.0));

        // Frame 0: 1000 px² box centered at tan(60°)·fx right of the
        // principal point. Frame 1: 300 px² on axis.
        let wide = Intrinsics::new(100.0, 100.0, 10.0, 48.0, 400, 96).unwrap();
        let uc = 10.0 + 3f64.sqrt() * 100.0; // 183.2
        let x0 = (uc - 25.0).round() as u32;
        let off = det(0, "lamp", [x0, 38, x0 + 50, 58]);
        let on = det(1, "lamp", [5, 33, 15, 63]);
        assert_eq!(bbox_view_angle(&on.bbox, &wide), 0.0);
        let frames = vec![frame(0, [1.0, 0.0, 0.0], None, vec![off]), frame(1, [2.0, 0.0, 0.0], None, vec![on])];
        let t = Trajectory::new(wide, frames).unwrap();
        let raw = build_object_viewpoint(&t, 0.8, false).unwrap();
        assert_eq!(raw.get("lamp").unwrap().source_frame, Some(0));
        let comp = build_object_viewpoint(&t, 0.8, true).unwrap();
        assert_eq!(comp.get("lamp").unwrap().source_frame, Some(1));
        assert_eq!(comp.get("lamp").unwrap().point, WorldPoint::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn lookup_is_case_insensitive() {
        let idx = ObjectIndex::new(
            ObjectVariant::ObjectDepth,
            0.8,
            false,
            vec![IndexEntry {
                label: "bed".into(),
                point: WorldPoint::new(1.0, 2.0, 0.5),
                source_frame: Some(3),
                score: 10.0,
            }],
        );
        assert_eq!(idx.get("Bed").unwrap().point, WorldPoint::new(1.0, 2.0, 0.5));
        assert!(matches!(idx.get("sofa"), Err(IndexError::LabelNotIndexed(_))));
        let back = ObjectIndex::from_json(idx.to_json().as_bytes(), Path::new("i.json")).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.get("BED").unwrap().label, "bed");
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::depth::DepthImage;
use super::{read_file, write_file, DatasetError, Detection, Frame, Result, Trajectory};
use crate::geometry::{Intrinsics, Pose};
use crate::par;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const POSES_FILE: &str = "poses.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const DEFAULT_DEPTH_PATTERN: &str = "depth/{frame_id:06}.cdpt";

/// `manifest.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub intrinsics: Intrinsics,
    pub frame_count: usize,
    /// Path of each frame's depth file relative to the trajectory directory,
    /// with `{frame_id}` or `{frame_id:0N}` substituted. `null` when the
    /// recording has no depth.
    pub depth_pattern: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    frame_id: u64,
    timestamp: f64,
    position: [f64; 3],
    quaternion: [f64; 4],
}

/// Expands `{frame_id}` / `{frame_id:0N}` in a depth file pattern.
pub fn depth_file_name(pattern: &str, frame_id: u64) -> std::result::Result<String, String> {
    let start = pattern.find("{frame_id").ok_or_else(|| format!("pattern {pattern:?} lacks {{frame_id}}"))?;
    let end = start + pattern[start..].find('}').ok_or_else(|| format!("unterminated placeholder in {pattern:?}"))?;
    let spec = &pattern[start + "{frame_id".len()..end];
    let formatted = match spec {
        "" => frame_id.to_string(),
        s if s.starts_with(":0") => {
            let width: usize = s[2..].parse().map_err(|_| format!("bad width in {pattern:?}"))?;
            format!("{frame_id:0width$}")
        }
        _ => return Err(format!("unsupported placeholder format in {pattern:?}")),
    };
    Ok(format!("{}{}{}", &pattern[..start], formatted, &pattern[end + 1..]))
}

fn jsonl_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| DatasetError::MalformedRecord {
        file: path.to_path_buf(),
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    Ok(text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l.to_string())).collect())
}

fn malformed(file: &Path, line: usize, message: impl ToString) -> DatasetError {
    DatasetError::MalformedRecord { file: file.to_path_buf(), line, message: message.to_string() }
}

/// Loads and validates a trajectory directory.
pub fn load_trajectory(dir: &Path) -> Result<Trajectory> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_slice(&read_file(&manifest_path)?)
        .map_err(|e| DatasetError::Json { file: manifest_path.clone(), source: e })?;
    if manifest.format_version != 1 {
        return Err(DatasetError::ManifestMismatch(format!("unsupported format_version {}", manifest.format_version)));
    }
    let intr = manifest.intrinsics;
    intr.validate()?;

    let poses_path = dir.join(POSES_FILE);
    let mut poses: Vec<Pose> = Vec::new();
    for (line, text) in jsonl_lines(&poses_path)? {
        let r: PoseRecord = serde_json::from_str(&text).map_err(|e| malformed(&poses_path, line, e))?;
        let pose = Pose::new(r.frame_id, r.timestamp, r.position, r.quaternion)
            .map_err(|e| malformed(&poses_path, line, e))?;
        if let Some(prev) = poses.last() {
            if pose.frame_id <= prev.frame_id {
                return Err(malformed(
                    &poses_path,
                    line,
                    format!("frame_id {} does not increase (previous {})", pose.frame_id, prev.frame_id),
                ));
            }
        }
        poses.push(pose);
    }
    if poses.len() != manifest.frame_count {
        return Err(DatasetError::ManifestMismatch(format!(
            "manifest declares {} frames, {} has {}",
            manifest.frame_count,
            POSES_FILE,
            poses.len()
        )));
    }

    let index: BTreeMap<u64, usize> = poses.iter().enumerate().map(|(i, p)| (p.frame_id, i)).collect();
    let mut detections: Vec<Vec<Detection>> = vec![Vec::new(); poses.len()];
    let det_path = dir.join(DETECTIONS_FILE);
    for (line, text) in jsonl_lines(&det_path)? {
        let d: Detection = serde_json::from_str(&text).map_err(|e| malformed(&det_path, line, e))?;
        let Some(&slot) = index.get(&d.frame_id) else {
            return Err(malformed(&det_path, line, format!("frame_id {} has no pose", d.frame_id)));
        };
        d.validate(&intr).map_err(|e| malformed(&det_path, line, e))?;
        detections[slot].push(d);
    }

    let depths: Vec<Option<DepthImage>> = match &manifest.depth_pattern {
        None => vec![None; poses.len()],
        Some(pattern) => par::map(&poses, |p| load_depth(dir, pattern, p.frame_id, &intr).map(Some))
            .into_iter()
            .collect::<Result<_>>()?,
    };

    let frames = poses
        .into_iter()
        .zip(depths)
        .zip(detections)
        .map(|((pose, depth), detections)| Frame { pose, depth, detections })
        .collect();
    Trajectory::new(intr, frames)
}

fn load_depth(dir: &Path, pattern: &str, frame_id: u64, intr: &Intrinsics) -> Result<DepthImage> {
    let rel = depth_file_name(pattern, frame_id).map_err(DatasetError::ManifestMismatch)?;
    let path = dir.join(rel);
    let img = DepthImage::decode(&read_file(&path)?)
        .map_err(|m| DatasetError::Invalid(format!("{}: {m}", path.display())))?;
    if img.width() != intr.width || img.height() != intr.height {
        return Err(DatasetError::ManifestMismatch(format!(
            "{} is {}x{}, manifest intrinsics say {}x{}",
            path.display(),
            img.width(),
            img.height(),
            intr.width,
            intr.height
        )));
    }
    Ok(img)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })
}

/// Writes `traj` in the directory layout read by [`load_trajectory`].
pub fn save_trajectory(traj: &Trajectory, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let has_depth = traj.has_depth();
    let manifest = Manifest {
        format_version: 1,
        intrinsics: *traj.intrinsics(),
        frame_count: traj.frames().len(),
        depth_pattern: has_depth.then(|| DEFAULT_DEPTH_PATTERN.to_string()),
    };
    let mut m = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    m.push('\n');
    write_file(&dir.join(MANIFEST_FILE), m.as_bytes())?;

    let mut poses = String::new();
    let mut dets = String::new();
    for f in traj.frames() {
        let p = &f.pose;
        let rec = PoseRecord {
            frame_id: p.frame_id,
            timestamp: p.timestamp,
            position: p.position.into(),
            quaternion: p.wxyz(),
        };
        poses.push_str(&serde_json::to_string(&rec).expect("pose serializes"));
        poses.push('\n');
        for d in &f.detections {
            dets.push_str(&serde_json::to_string(d).expect("detection serializes"));
            dets.push('\n');
        }
    }
    write_file(&dir.join(POSES_FILE), poses.as_bytes())?;
    write_file(&dir.join(DETECTIONS_FILE), dets.as_bytes())?;

    if has_depth {
        let mut dirs_made: Vec<PathBuf> = Vec::new();
        for f in traj.frames() {
            let rel = depth_file_name(DEFAULT_DEPTH_PATTERN, f.frame_id()).expect("default pattern is valid");
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                if !dirs_made.iter().any(|d| d == parent) {
                    create_dir(parent)?;
                    dirs_made.push(parent.to_path_buf());
                }
            }
            write_file(&path, &f.depth.as_ref().expect("checked has_depth").encode())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_expansion() {
        assert_eq!(depth_file_name("depth/{frame_id:06}.cdpt", 42).unwrap(), "depth/000042.cdpt");
        assert_eq!(depth_file_name("d_{frame_id}.cdpt", 7).unwrap(), "d_7.cdpt");
        assert!(depth_file_name("depth.cdpt", 1).is_err());
        assert!(depth_file_name("{frame_id:x}", 1).is_err());
    }
}

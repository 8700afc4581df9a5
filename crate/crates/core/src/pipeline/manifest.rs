//! The on-disk episode description and its loader.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::io::{read_depth_f32, read_depth_png_mm, read_detections, read_flow, read_rgb};
use super::{io_err, PipelineError};
use crate::model::{validate_episode, wrap_angle, ActionStep, AxisRange, CameraModel, Episode, Frame, WorkspaceBounds};

pub const SCHEMA_VERSION: u32 = 1;
/// Largest accepted deviation of a pose rotation from orthonormality.
pub const POSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthUnit {
    /// Raw `DPTH` float32 file in meters.
    MetersF32,
    /// 16-bit grayscale PNG in millimeters.
    MillimetersU16,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb_path: Option<String>,
    pub depth_path: String,
    pub depth_unit: DepthUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_path: Option<String>,
    pub intrinsics: Intrinsics,
    /// Row-major camera-to-world transform, 3×4 or 4×4.
    pub pose: Vec<f64>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifestBounds {
    pub action: [[f64; 2]; 3],
    pub location: [[f64; 2]; 3],
}

impl From<ManifestBounds> for WorkspaceBounds {
    fn from(b: ManifestBounds) -> Self {
        WorkspaceBounds {
            action: b.action.map(AxisRange::from),
            location: b.location.map(AxisRange::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeManifest {
    pub schema_version: u32,
    pub id: String,
    pub dataset: String,
    pub instruction: String,
    pub bounds: ManifestBounds,
    pub frames: Vec<FrameManifest>,
    /// `x, y, z, roll, pitch, yaw, gripper` per step; gripper in `[0, 1]`.
    pub actions: Vec<[f64; 7]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections_path: Option<String>,
}

/// Rotation and translation from a 12- or 16-number row-major pose. The
/// rotation is snapped to the nearest proper rotation once it has passed the
/// tolerance check.
pub fn parse_pose(pose: &[f64]) -> Result<(Matrix3<f64>, Vector3<f64>), String> {
    if pose.len() != 12 && pose.len() != 16 {
        return Err(format!("need 12 or 16 numbers, found {}", pose.len()));
    }
    if pose.iter().any(|v| !v.is_finite()) {
        return Err("non-finite entry".into());
    }
    if pose.len() == 16 {
        let last = &pose[12..];
        if last.iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > POSE_TOLERANCE) {
            return Err(format!("last row must be 0 0 0 1, found {last:?}"));
        }
    }
    let r = Matrix3::new(pose[0], pose[1], pose[2], pose[4], pose[5], pose[6], pose[8], pose[9], pose[10]);
    let t = Vector3::new(pose[3], pose[7], pose[11]);
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if err > POSE_TOLERANCE {
        return Err(format!("rotation not orthonormal (|RᵀR − I| = {err:.3e})"));
    }
    if r.determinant() <= 0.0 {
        return Err(format!("rotation determinant {:.6} is not +1", r.determinant()));
    }
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.expect("requested u"), svd.v_t.expect("requested v_t"));
    Ok((u * vt, t))
}

fn manifest_err(manifest: &Path, field: impl Into<String>, message: impl Into<String>) -> PipelineError {
    PipelineError::Manifest {
        manifest: manifest.to_path_buf(),
        field: field.into(),
        message: message.into(),
    }
}

/// Resolves `rel` against the manifest's directory and checks it exists.
fn resolve(manifest: &Path, base: &Path, field: String, rel: &str) -> Result<PathBuf, PipelineError> {
    let p = base.join(rel);
    if !p.is_file() {
        return Err(manifest_err(manifest, field, format!("file not found: {}", p.display())));
    }
    Ok(p)
}

/// Loads and validates one episode.
pub fn load_episode(manifest_path: &Path) -> Result<Episode, PipelineError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let m: EpisodeManifest = serde_json::from_str(&text)
        .map_err(|e| manifest_err(manifest_path, "$", format!("schema violation: {e}")))?;
    episode_from_manifest(&m, manifest_path)
}

pub fn episode_from_manifest(m: &EpisodeManifest, manifest_path: &Path) -> Result<Episode, PipelineError> {
    let mp = manifest_path;
    if m.schema_version != SCHEMA_VERSION {
        return Err(manifest_err(
            mp,
            "schema_version",
            format!("unsupported version {} (expected {SCHEMA_VERSION})", m.schema_version),
        ));
    }
    let base = mp.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(m.frames.len());
    for (i, f) in m.frames.iter().enumerate() {
        let field = |name: &str| format!("frames[{i}].{name}");
        let (rotation, translation) = parse_pose(&f.pose).map_err(|msg| manifest_err(mp, field("pose"), msg))?;
        let k = f.intrinsics;
        let camera = CameraModel::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height).with_pose(rotation, translation);
        let depth_path = resolve(mp, base, field("depth_path"), &f.depth_path)?;
        let depth = match f.depth_unit {
            DepthUnit::MetersF32 => read_depth_f32(&depth_path),
            DepthUnit::MillimetersU16 => read_depth_png_mm(&depth_path),
        }
        .map_err(|e| manifest_err(mp, field("depth_path"), e.to_string()))?;
        let rgb = match &f.rgb_path {
            Some(r) => {
                let p = resolve(mp, base, field("rgb_path"), r)?;
                Some(read_rgb(&p).map_err(|e| manifest_err(mp, field("rgb_path"), e.to_string()))?)
            }
            None => None,
        };
        let flow = match &f.flow_path {
            Some(r) => {
                let p = resolve(mp, base, field("flow_path"), r)?;
                Some(read_flow(&p).map_err(|e| manifest_err(mp, field("flow_path"), e.to_string()))?)
            }
            None => None,
        };
        frames.push(Frame {
            rgb,
            depth,
            flow,
            camera,
            timestamp: f.timestamp,
        });
    }
    let mut actions = Vec::with_capacity(m.actions.len());
    for (i, a) in m.actions.iter().enumerate() {
        if !(0.0..=1.0).contains(&a[6]) {
            return Err(manifest_err(mp, format!("actions[{i}][6]"), "gripper must be in [0, 1]"));
        }
        actions.push(ActionStep {
            position: [a[0], a[1], a[2]],
            rotation: [a[3], a[4], a[5]].map(wrap_angle),
            gripper: u8::from(a[6] >= 0.5),
        });
    }
    let detections = match &m.detections_path {
        Some(r) => {
            let p = resolve(mp, base, "detections_path".into(), r)?;
            read_detections(&p, frames.len()).map_err(|e| manifest_err(mp, "detections_path", e.to_string()))?
        }
        None => Vec::new(),
    };
    let episode = Episode {
        id: m.id.clone(),
        dataset: m.dataset.clone(),
        frames,
        actions,
        instruction: m.instruction.clone(),
        detections,
        bounds: m.bounds.into(),
    };
    let problems = validate_episode(&episode);
    if let Some(first) = problems.first() {
        let (field, message) = first.split_once(": ").unwrap_or(("episode", first.as_str()));
        let extra = if problems.len() > 1 {
            format!(" (+{} more)", problems.len() - 1)
        } else {
            String::new()
        };
        return Err(manifest_err(mp, field, format!("{message}{extra}")));
    }
    Ok(episode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_parsing() {
        let id12 = [1.0, 0.0, 0.0, 0.5, 0.0, 1.0, 0.0, -0.5, 0.0, 0.0, 1.0, 2.0];
        let (r, t) = parse_pose(&id12).unwrap();
        assert_eq!(r, Matrix3::identity());
        assert_eq!(t, Vector3::new(0.5, -0.5, 2.0));
        let mut id16 = id12.to_vec();
        id16.extend([0.0, 0.0, 0.0, 1.0]);
        assert_eq!(parse_pose(&id16).unwrap(), (r, t));

        let mut mirror = id12;
        mirror[10] = -1.0;
        assert!(parse_pose(&mirror).unwrap_err().contains("determinant"));
        let mut skew = id12;
        skew[1] = 1e-3;
        assert!(parse_pose(&skew).unwrap_err().contains("orthonormal"));
        let mut bad_row = id16.clone();
        bad_row[15] = 2.0;
        assert!(parse_pose(&bad_row).is_err());
        assert!(parse_pose(&id12[..11]).is_err());
    }

    #[test]
    fn near_rotation_is_snapped() {
        let mut p = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        p[1] = 2e-7;
        let (r, _) = parse_pose(&p).unwrap();
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
    }
}

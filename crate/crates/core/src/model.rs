//! Domain types shared across the pipeline.
//!
//! Everything here is a plain value object. Validation is done by the
//! `validate` methods and by [`validate_episode`], which are total and never
//! panic.

use std::f64::consts::PI;
use std::fmt;

use image::RgbImage;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Tolerance on `‖RᵀR − I‖∞` for a camera rotation to count as orthonormal.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Wraps an angle in radians to `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let wrapped = theta - two_pi * ((theta + PI) / two_pi).floor();
    // floor can land exactly on +π after rounding
    if wrapped >= PI {
        wrapped - two_pi
    } else if wrapped < -PI {
        -PI
    } else {
        wrapped
    }
}

/// Pinhole intrinsics plus a rigid camera-to-world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// Camera-to-world translation in meters.
    pub translation: Vector3<f64>,
}

impl CameraModel {
    /// Camera with an identity pose.
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn with_pose(mut self, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        self.rotation = rotation;
        self.translation = translation;
        self
    }

    /// Returns one message per violated invariant.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            out.push("fx: must be > 0".to_string());
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            out.push("fy: must be > 0".to_string());
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            out.push("cx: must lie in (0, width)".to_string());
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            out.push("cy: must lie in (0, height)".to_string());
        }
        if let Some(msg) = rotation_violation(&self.rotation, ROTATION_TOLERANCE) {
            out.push(format!("pose: {msg}"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            out.push("pose: translation not finite".to_string());
        }
        out
    }

    /// Back-projects the center of pixel `(u, v)` at depth `d` into the camera frame.
    #[inline]
    pub fn pixel_to_camera(&self, u: usize, v: usize, d: f64) -> Vector3<f64> {
        self.center_to_camera(u as f64 + 0.5, v as f64 + 0.5, d)
    }

    /// Back-projects a continuous image position (pixel centers sit at `u + 0.5`).
    #[inline]
    pub fn center_to_camera(&self, uc: f64, vc: f64, d: f64) -> Vector3<f64> {
        Vector3::new((uc - self.cx) * d / self.fx, (vc - self.cy) * d / self.fy, d)
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Projects a camera-frame point to `(u + 0.5, v + 0.5, depth)`.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<[f64; 3]> {
        if p.z <= 0.0 {
            return None;
        }
        Some([
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        ])
    }

    /// Projects a world-frame point to `(u + 0.5, v + 0.5, depth)`.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 3]> {
        self.project_camera(&self.world_to_camera(p))
    }

    /// True when both cameras share intrinsics and pose within `tol`.
    pub fn same_pose(&self, other: &CameraModel, tol: f64) -> bool {
        (self.rotation - other.rotation).amax() <= tol
            && (self.translation - other.translation).amax() <= tol
    }
}

/// Describes why `r` is not a proper rotation, if it is not.
pub fn rotation_violation(r: &Matrix3<f64>, tol: f64) -> Option<String> {
    if !r.iter().all(|v| v.is_finite()) {
        return Some("rotation not finite".to_string());
    }
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if err >= tol {
        return Some(format!("rotation not orthonormal (‖RᵀR − I‖∞ = {err:e})"));
    }
    if r.determinant() <= 0.0 {
        return Some("rotation determinant is not +1".to_string());
    }
    None
}

/// Per-pixel boolean image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        debug_assert_eq!(bits.len(), width * height);
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.bits[v * self.width + u] = value;
    }
}

/// Metric depth image. Invalid pixels carry an arbitrary value.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map from meters; a pixel is valid iff finite and positive.
    pub fn from_meters(width: usize, height: usize, values: Vec<f64>) -> Self {
        let valid = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Self {
            width,
            height,
            values,
            valid,
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.width + u;
        self.valid[i].then_some(self.values[i])
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|d| d * k).collect(),
            valid: self.valid.clone(),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.width * self.height;
        if self.values.len() != n || self.valid.len() != n {
            out.push(format!(
                "size {}x{} does not match {} values / {} flags",
                self.width,
                self.height,
                self.values.len(),
                self.valid.len()
            ));
            return out;
        }
        if let Some(i) = self
            .values
            .iter()
            .zip(&self.valid)
            .position(|(d, ok)| *ok && !(d.is_finite() && *d > 0.0))
        {
            out.push(format!("pixel {i} marked valid with depth {}", self.values[i]));
        }
        out
    }
}

/// Dense 2D displacement between two consecutive frames, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub vectors: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            vectors: vec![[0.0, 0.0]; width * height],
        }
    }

    #[inline]
    pub fn magnitude(&self, i: usize) -> f64 {
        let [dx, dy] = self.vectors[i];
        (dx as f64).hypot(dy as f64)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.vectors.len() != self.width * self.height {
            out.push(format!(
                "size {}x{} does not match {} vectors",
                self.width,
                self.height,
                self.vectors.len()
            ));
        } else if self.vectors.iter().flatten().any(|c| !c.is_finite()) {
            out.push("non-finite flow component".to_string());
        }
        out
    }
}

/// A 2D instance mask with its noun label.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDetection {
    pub label: String,
    pub mask: PixelMask,
    pub confidence: f64,
}

/// World-frame points with optional per-point colors in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    /// Either empty or the same length as `points`.
    pub colors: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_colors(&self) -> bool {
        !self.colors.is_empty()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.points.iter().flatten().any(|c| !c.is_finite()) {
            out.push("points: non-finite coordinate".to_string());
        }
        if !self.colors.is_empty() && self.colors.len() != self.points.len() {
            out.push(format!(
                "colors: {} entries for {} points",
                self.colors.len(),
                self.points.len()
            ));
        }
        out
    }
}

/// Axis-aligned box in world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb3 {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] <= self.max[i])
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        self.extent().iter().product()
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// One 7-DoF end-effector command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionStep {
    pub position: [f64; 3],
    /// Roll, pitch, yaw in radians, each in `[-π, π)`.
    pub rotation: [f64; 3],
    /// 1 = open, 0 = closed.
    pub gripper: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
}

impl AxisRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl From<[f64; 2]> for AxisRange {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

/// Quantization ranges: `action` for `<aloc>` tokens, `location` for `<loc>` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBounds {
    pub action: [AxisRange; 3],
    pub location: [AxisRange; 3],
}

impl WorkspaceBounds {
    /// Same per-axis ranges for both token families.
    pub fn uniform(ranges: [AxisRange; 3]) -> Self {
        Self {
            action: ranges,
            location: ranges,
        }
    }

    pub fn unit() -> Self {
        Self::uniform([AxisRange::new(0.0, 1.0); 3])
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, ranges) in [("action", &self.action), ("location", &self.location)] {
            for (axis, r) in ranges.iter().enumerate() {
                if !r.is_valid() {
                    out.push(format!("bounds.{name}[{axis}]: need lo < hi"));
                }
            }
        }
        out
    }
}

/// One recorded frame with its loaded data.
#[derive(Debug, Clone)]
pub struct Frame {
    pub rgb: Option<RgbImage>,
    pub depth: DepthMap,
    /// Flow from this frame to the next one.
    pub flow: Option<FlowField>,
    pub camera: CameraModel,
    pub timestamp: f64,
}

/// One manipulation trajectory.
#[derive(Debug, Clone)]
pub struct Episode {
    pub id: String,
    /// Source dataset tag used by the task matrix and by `stats`.
    pub dataset: String,
    pub frames: Vec<Frame>,
    /// `actions[t]` is issued at frame `t`; the last frame may have none.
    pub actions: Vec<ActionStep>,
    pub instruction: String,
    /// Either empty or one list per frame.
    pub detections: Vec<Vec<MaskDetection>>,
    pub bounds: WorkspaceBounds,
}

impl Episode {
    pub fn last_frame(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    pub fn detections_at(&self, t: usize) -> &[MaskDetection] {
        self.detections.get(t).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Episode ids double as directory names.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Checks every invariant of `e` and its parts. Empty iff the episode is well formed.
pub fn validate_episode(e: &Episode) -> Vec<String> {
    let mut out = Vec::new();
    if !is_valid_id(&e.id) {
        out.push(format!("id: {:?} must be non-empty [A-Za-z0-9_.-]", e.id));
    }
    if e.instruction.trim().is_empty() {
        out.push("instruction: empty".to_string());
    } else if crate::tokens::contains_vocab_token(&e.instruction) {
        out.push("instruction: contains a reserved interaction token".to_string());
    }
    out.extend(e.bounds.validate());

    let n = e.frames.len();
    if n < 2 {
        out.push("frames: need ≥ 2".to_string());
    }
    for (t, f) in e.frames.iter().enumerate() {
        for msg in f.camera.validate() {
            out.push(format!("frames[{t}].camera.{msg}"));
        }
        for msg in f.depth.validate() {
            out.push(format!("frames[{t}].depth: {msg}"));
        }
        if f.depth.width != f.camera.width || f.depth.height != f.camera.height {
            out.push(format!("frames[{t}].depth: dimensions differ from camera"));
        }
        if let Some(rgb) = &f.rgb {
            if rgb.width() as usize != f.depth.width || rgb.height() as usize != f.depth.height {
                out.push(format!("frames[{t}].rgb: dimensions differ from depth"));
            }
        }
        if let Some(flow) = &f.flow {
            for msg in flow.validate() {
                out.push(format!("frames[{t}].flow: {msg}"));
            }
            if flow.width != f.depth.width || flow.height != f.depth.height {
                out.push(format!("frames[{t}].flow: dimensions differ from depth"));
            }
        }
        if !f.timestamp.is_finite() {
            out.push(format!("frames[{t}].timestamp: not finite"));
        }
        if t > 0 && !(f.timestamp > e.frames[t - 1].timestamp) {
            out.push(format!("frames[{t}].timestamp: not strictly increasing"));
        }
    }

    if n > 0 && e.actions.len() != n && e.actions.len() + 1 != n {
        out.push(format!(
            "actions: length {} ∉ {{{}, {}}}",
            e.actions.len(),
            n,
            n.saturating_sub(1)
        ));
    }
    for (i, a) in e.actions.iter().enumerate() {
        if a.position.iter().any(|v| !v.is_finite()) {
            out.push(format!("actions[{i}].position: not finite"));
        }
        if a.rotation.iter().any(|r| !(r.is_finite() && (-PI..PI).contains(r))) {
            out.push(format!("actions[{i}].rotation ∉ [−π, π)"));
        }
        if a.gripper > 1 {
            out.push(format!("actions[{i}].gripper ∉ {{0,1}}"));
        }
    }

    if !e.detections.is_empty() && e.detections.len() != n {
        out.push(format!(
            "detections: {} frame lists for {} frames",
            e.detections.len(),
            n
        ));
    }
    for (t, dets) in e.detections.iter().enumerate() {
        let Some(frame) = e.frames.get(t) else { break };
        for (j, d) in dets.iter().enumerate() {
            if d.mask.width != frame.depth.width || d.mask.height != frame.depth.height {
                out.push(format!("detections[{t}][{j}].mask: dimensions differ from frame"));
            } else if d.mask.count() == 0 {
                out.push(format!("detections[{t}][{j}].mask: empty"));
            }
            if !(0.0..=1.0).contains(&d.confidence) {
                out.push(format!("detections[{t}][{j}].confidence ∉ [0,1]"));
            }
            if d.label.trim().is_empty() {
                out.push(format!("detections[{t}][{j}].label: empty"));
            }
        }
    }
    out
}

/// The eight sample kinds the builders emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    EmbodiedQa,
    TaskCaption,
    WhatifQa,
    DenseCaption,
    Localization,
    Verification,
    GoalGeneration,
    ActionPrediction,
}

impl TaskType {
    pub const ALL: [TaskType; 8] = [
        TaskType::EmbodiedQa,
        TaskType::TaskCaption,
        TaskType::WhatifQa,
        TaskType::DenseCaption,
        TaskType::Localization,
        TaskType::Verification,
        TaskType::GoalGeneration,
        TaskType::ActionPrediction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::EmbodiedQa => "embodied_qa",
            TaskType::TaskCaption => "task_caption",
            TaskType::WhatifQa => "whatif_qa",
            TaskType::DenseCaption => "dense_caption",
            TaskType::Localization => "localization",
            TaskType::Verification => "verification",
            TaskType::GoalGeneration => "goal_generation",
            TaskType::ActionPrediction => "action_prediction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reference from a sample to a file under the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub role: String,
    /// Relative to the dataset root, `/`-separated.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Template id, `"diversified"`, or `"untemplated"`.
    pub template: String,
    pub seed: u64,
}

/// One prompt/answer training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// `{episode_id}/{builder}`; unique within a dataset.
    pub sample_id: String,
    pub task_type: TaskType,
    pub dataset: String,
    /// Canonical token text; parses under [`crate::tokens::parse_str`].
    pub prompt: String,
    pub answer: String,
    pub assets: Vec<AssetRef>,
    pub episode_id: String,
    pub provenance: Provenance,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_frame_episode() -> Episode {
        let cam = CameraModel::new(10.0, 10.0, 2.0, 2.0, 4, 4);
        let frame = |ts: f64| Frame {
            rgb: None,
            depth: DepthMap::from_meters(4, 4, vec![1.0; 16]),
            flow: None,
            camera: cam.clone(),
            timestamp: ts,
        };
        Episode {
            id: "ep0".into(),
            dataset: "synthetic".into(),
            frames: vec![frame(0.0), frame(0.1)],
            actions: vec![ActionStep {
                position: [0.5; 3],
                rotation: [0.0; 3],
                gripper: 1,
            }],
            instruction: "pick up the cup".into(),
            detections: vec![],
            bounds: WorkspaceBounds::unit(),
        }
    }

    #[test]
    fn well_formed_episode_has_no_violations() {
        assert!(validate_episode(&two_frame_episode()).is_empty());
    }

    #[test]
    fn single_frame_is_reported() {
        let mut e = two_frame_episode();
        e.frames.truncate(1);
        assert_eq!(validate_episode(&e), vec!["frames: need ≥ 2".to_string()]);
    }

    #[test]
    fn bad_gripper_names_the_step() {
        let mut e = two_frame_episode();
        let step = e.actions[0];
        e.frames.extend(e.frames.clone());
        for (t, f) in e.frames.iter_mut().enumerate() {
            f.timestamp = t as f64;
        }
        e.actions = vec![step; 4];
        e.actions[3].gripper = 2;
        assert_eq!(validate_episode(&e), vec!["actions[3].gripper ∉ {0,1}".to_string()]);
    }

    #[test]
    fn non_increasing_timestamps_and_bad_pose() {
        let mut e = two_frame_episode();
        e.frames[1].timestamp = 0.0;
        e.frames[0].camera.rotation = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let v = validate_episode(&e);
        assert!(v.iter().any(|m| m.starts_with("frames[1].timestamp")));
        assert!(v.iter().any(|m| m.contains("determinant")));
    }

    #[test]
    fn reserved_tokens_in_instruction_are_rejected() {
        let mut e = two_frame_episode();
        e.instruction = "pick <obj> up".into();
        assert_eq!(validate_episode(&e).len(), 1);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
        for k in -20..20 {
            let w = wrap_angle(k as f64 * 0.77);
            assert!((-PI..PI).contains(&w));
        }
    }

    #[test]
    fn task_type_names_roundtrip() {
        for t in TaskType::ALL {
            assert_eq!(TaskType::parse(t.as_str()), Some(t));
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
        }
    }
}

//! Ray-cast renderer for box scenes and the generator of the bundled
//! synthetic fixture.
//!
//! A scene is a ground plane at `z = 0` with axis-aligned boxes resting on
//! it. The renderer produces exact depth, per-pixel object ids, colors and
//! ground-truth optical flow for a moving box, which is enough to exercise
//! every stage of the pipeline with known answers.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::model::{Aabb3, CameraModel, DepthMap, FlowField, MaskDetection, PixelMask};
use crate::pipeline::{
    io_err, write_depth_f32, write_depth_png_mm, write_detections, write_flow, write_rgb, DepthUnit,
    EpisodeManifest, FrameManifest, Intrinsics, ManifestBounds, PipelineError, SCHEMA_VERSION,
};

/// A box in the scene with its label and flat color.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBox {
    pub label: String,
    pub bbox: Aabb3,
    pub color: [u8; 3],
}

/// Result of rendering one view.
#[derive(Debug, Clone)]
pub struct Render {
    pub depth: DepthMap,
    /// Index of the box hit by each pixel; `None` for the ground or a miss.
    pub ids: Vec<Option<usize>>,
    pub rgb: RgbImage,
}

impl Render {
    pub fn mask(&self, id: usize) -> PixelMask {
        PixelMask::new(
            self.depth.width,
            self.depth.height,
            self.ids.iter().map(|&h| h == Some(id)).collect(),
        )
    }
}

pub const GROUND_COLOR: [u8; 3] = [128, 128, 128];

/// A camera at `height` meters above the ground looking straight down,
/// image `x` along world `x` and image `y` along world `−y`.
pub fn top_down_camera(f: f64, width: usize, height: usize, cam_height: f64) -> CameraModel {
    CameraModel::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height).with_pose(
        Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
        Vector3::new(0.0, 0.0, cam_height),
    )
}

/// Entry distance of the ray `o + s·d` into `b`, if it hits.
fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, b: &Aabb3) -> Option<f64> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < b.min[k] || o[k] > b.max[k] {
                return None;
            }
            continue;
        }
        let (a, c) = ((b.min[k] - o[k]) / d[k], (b.max[k] - o[k]) / d[k]);
        lo = lo.max(a.min(c));
        hi = hi.min(a.max(c));
    }
    (lo <= hi && lo > 0.0).then_some(lo)
}

/// Renders the ground plane and `boxes` as seen by `cam`. Depth is the
/// camera-frame `z` of the first surface hit; pixels that miss everything
/// are invalid.
pub fn render(cam: &CameraModel, boxes: &[SceneBox]) -> Render {
    let (w, h) = (cam.width, cam.height);
    let origin = cam.translation;
    let mut depth = vec![0.0; w * h];
    let mut ids = vec![None; w * h];
    let mut rgb = RgbImage::new(w as u32, h as u32);
    for v in 0..h {
        for u in 0..w {
            // Camera-frame direction with unit z, so the ray parameter is the depth.
            let dir = cam.rotation * cam.pixel_to_camera(u, v, 1.0);
            let mut best: Option<(f64, Option<usize>)> = None;
            if dir.z.abs() > 1e-15 {
                let s = -origin.z / dir.z;
                if s > 0.0 {
                    best = Some((s, None));
                }
            }
            for (k, b) in boxes.iter().enumerate() {
                if let Some(s) = ray_box(&origin, &dir, &b.bbox) {
                    if best.is_none_or(|(bs, _)| s < bs) {
                        best = Some((s, Some(k)));
                    }
                }
            }
            let i = v * w + u;
            if let Some((s, id)) = best {
                depth[i] = s;
                ids[i] = id;
                let c = id.map_or(GROUND_COLOR, |k| boxes[k].color);
                rgb.put_pixel(u as u32, v as u32, Rgb(c));
            }
        }
    }
    let valid: Vec<bool> = depth.iter().map(|&d| d > 0.0).collect();
    let mut depth = DepthMap::from_meters(w, h, depth);
    depth.valid = valid;
    Render { depth, ids, rgb }
}

/// Ground-truth flow from `before` to the next frame when box `moving` is
/// translated by `delta` and nothing else moves.
pub fn box_flow(cam: &CameraModel, before: &Render, moving: usize, delta: [f64; 3]) -> FlowField {
    let (w, h) = (cam.width, cam.height);
    let mut flow = FlowField::zeros(w, h);
    let delta = Vector3::from(delta);
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if before.ids[i] != Some(moving) {
                continue;
            }
            let p = cam.camera_to_world(&cam.pixel_to_camera(u, v, before.depth.values[i]));
            if let (Some(a), Some(b)) = (cam.project(&p), cam.project(&(p + delta))) {
                flow.vectors[i] = [(b[0] - a[0]) as f32, (b[1] - a[1]) as f32];
            }
        }
    }
    flow
}

/// Size and content knobs of the generated fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub episodes: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            episodes: 10,
            frames: 8,
            width: 80,
            height: 60,
            focal: 70.0,
            seed: 7,
        }
    }
}

const OBJECTS: [(&str, [u8; 3]); 6] = [
    ("red block", [200, 40, 40]),
    ("blue cup", [40, 60, 200]),
    ("green bowl", [40, 170, 60]),
    ("yellow box", [220, 200, 40]),
    ("orange", [240, 140, 20]),
    ("sponge", [230, 220, 120]),
];

const INSTRUCTIONS: [&str; 4] = [
    "move the {} to the left",
    "pick up the {} and put it down on the right",
    "push the {} forward",
    "slide the {} away from you",
];

const CAMERA_HEIGHT: f64 = 1.2;
const ACTION_BOUNDS: [[f64; 2]; 3] = [[-0.6, 0.6], [-0.6, 0.6], [-0.1, 0.7]];
const LOCATION_BOUNDS: [[f64; 2]; 3] = [[-0.6, 0.6], [-0.5, 0.5], [-0.1, 0.4]];

/// Episode `i` of the fixture before it is written: boxes per frame,
/// actions, and the per-frame depth scale drift.
struct EpisodePlan {
    id: String,
    dataset: &'static str,
    instruction: String,
    /// Boxes at frame 0; box 0 is the manipulated one.
    boxes: Vec<SceneBox>,
    /// Position of box 0 relative to frame 0, per frame.
    offsets: Vec<[f64; 3]>,
    actions: Vec<[f64; 7]>,
    scales: Vec<f64>,
    millimeters: bool,
    pose16: bool,
}

fn plan_episode(spec: &FixtureSpec, i: usize) -> EpisodePlan {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
    let n = spec.frames;
    let picks = {
        let a = rng.random_range(0..OBJECTS.len());
        let b = (a + rng.random_range(1..OBJECTS.len())) % OBJECTS.len();
        [a, b]
    };
    let mut boxes = Vec::new();
    for (k, &o) in picks.iter().enumerate() {
        let half = [rng.random_range(0.04..0.07), rng.random_range(0.04..0.07)];
        let height = rng.random_range(0.05..0.12);
        let cx = if k == 0 { rng.random_range(-0.15..0.0) } else { rng.random_range(0.18..0.3) };
        let cy = rng.random_range(-0.12..0.12);
        boxes.push(SceneBox {
            label: OBJECTS[o].0.to_string(),
            bbox: Aabb3::new([cx - half[0], cy - half[1], 0.0], [cx + half[0], cy + half[1], height]),
            color: OBJECTS[o].1,
        });
    }

    // Approach, grasp, carry, release.
    let grasp = n / 4;
    let release = n - 2;
    let step = [rng.random_range(-0.06..-0.04), rng.random_range(-0.02..0.02), 0.0];
    let mut offsets = Vec::with_capacity(n);
    let mut off = [0.0; 3];
    for t in 0..n {
        offsets.push(off);
        if t >= grasp && t < release {
            for k in 0..3 {
                off[k] += step[k];
            }
        }
    }
    let top = boxes[0].bbox.center();
    let grasp_at = [top[0], top[1], boxes[0].bbox.max[2]];
    let start = [grasp_at[0] + 0.1, grasp_at[1] - 0.1, grasp_at[2] + 0.25];
    let yaw0 = rng.random_range(-0.5..0.5);
    let actions = (0..n)
        .map(|t| {
            let p = if t < grasp {
                let a = t as f64 / grasp as f64;
                [0, 1, 2].map(|k| start[k] + (grasp_at[k] - start[k]) * a)
            } else {
                [0, 1, 2].map(|k| grasp_at[k] + offsets[t][k])
            };
            let gripper = if t >= grasp && t < release { 0.0 } else { 1.0 };
            [p[0], p[1], p[2], 0.0, 0.0, yaw0 + 0.02 * t as f64, gripper]
        })
        .collect();
    let scales = (0..n)
        .map(|t| if t == 0 { 1.0 } else { rng.random_range(0.9..1.1) })
        .collect();
    let instruction = INSTRUCTIONS[i % INSTRUCTIONS.len()].replace("{}", &boxes[0].label);
    EpisodePlan {
        id: format!("synth_{i:03}"),
        dataset: if i.is_multiple_of(2) { "synthetic_a" } else { "synthetic_b" },
        instruction,
        boxes,
        offsets,
        actions,
        scales,
        millimeters: i % 3 == 2,
        pose16: i % 2 == 1,
    }
}

fn moved(boxes: &[SceneBox], offset: [f64; 3]) -> Vec<SceneBox> {
    let mut out = boxes.to_vec();
    let b = &mut out[0].bbox;
    for k in 0..3 {
        b.min[k] += offset[k];
        b.max[k] += offset[k];
    }
    out
}

fn pose_numbers(cam: &CameraModel, sixteen: bool) -> Vec<f64> {
    let (r, t) = (cam.rotation, cam.translation);
    let mut out = Vec::new();
    for row in 0..3 {
        out.extend([r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]]);
    }
    if sixteen {
        out.extend([0.0, 0.0, 0.0, 1.0]);
    }
    out
}

/// Writes the fixture into `dir`: one manifest per episode, its data files
/// and a small external QA file. Returns the manifest paths in order.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cam = top_down_camera(spec.focal, spec.width, spec.height, CAMERA_HEIGHT);
    let intrinsics = Intrinsics {
        fx: cam.fx,
        fy: cam.fy,
        cx: cam.cx,
        cy: cam.cy,
        width: cam.width,
        height: cam.height,
    };
    let mut manifests = Vec::new();
    let mut qa_lines = Vec::new();
    for i in 0..spec.episodes {
        let plan = plan_episode(spec, i);
        let data = dir.join(&plan.id);
        fs::create_dir_all(&data).map_err(io_err(&data))?;
        let renders: Vec<Render> = plan.offsets.iter().map(|&o| render(&cam, &moved(&plan.boxes, o))).collect();
        let mut frames = Vec::new();
        let mut detections = Vec::new();
        for (t, r) in renders.iter().enumerate() {
            let rgb_rel = format!("{}/rgb_{t:04}.png", plan.id);
            write_rgb(&r.rgb, &dir.join(&rgb_rel))?;
            let scaled = r.depth.scaled(plan.scales[t]);
            let (depth_rel, unit) = if plan.millimeters {
                let rel = format!("{}/depth_{t:04}.png", plan.id);
                write_depth_png_mm(&scaled, &dir.join(&rel))?;
                (rel, DepthUnit::MillimetersU16)
            } else {
                let rel = format!("{}/depth_{t:04}.f32", plan.id);
                write_depth_f32(&scaled, &dir.join(&rel))?;
                (rel, DepthUnit::MetersF32)
            };
            let flow_path = if t + 1 < renders.len() {
                let delta = [0, 1, 2].map(|k| plan.offsets[t + 1][k] - plan.offsets[t][k]);
                let rel = format!("{}/flow_{t:04}.f32", plan.id);
                write_flow(&box_flow(&cam, r, 0, delta), &dir.join(&rel))?;
                Some(rel)
            } else {
                None
            };
            frames.push(FrameManifest {
                rgb_path: Some(rgb_rel),
                depth_path: depth_rel,
                depth_unit: unit,
                flow_path,
                intrinsics,
                pose: pose_numbers(&cam, plan.pose16),
                timestamp: t as f64 * 0.1,
            });
            detections.push(
                plan.boxes
                    .iter()
                    .enumerate()
                    .map(|(k, b)| MaskDetection {
                        label: b.label.clone(),
                        mask: r.mask(k),
                        confidence: if k == 0 { 0.8 } else { 0.9 },
                    })
                    .filter(|d| d.mask.count() > 0)
                    .collect(),
            );
        }
        let det_rel = format!("{}/detections.json", plan.id);
        write_detections(&detections, &dir.join(&det_rel))?;
        let m = EpisodeManifest {
            schema_version: SCHEMA_VERSION,
            id: plan.id.clone(),
            dataset: plan.dataset.to_string(),
            instruction: plan.instruction.clone(),
            bounds: ManifestBounds {
                action: ACTION_BOUNDS,
                location: LOCATION_BOUNDS,
            },
            frames,
            actions: plan.actions.clone(),
            detections_path: Some(det_rel),
        };
        let path = dir.join(format!("{}.json", plan.id));
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(io_err(&path))?;
        manifests.push(path);

        if i < 3 {
            let line = json!({
                "episode_id": format!("{}_qa", plan.id),
                "dataset": plan.dataset,
                "question": format!("How many objects are on the table besides the {}?", plan.boxes[0].label),
                "answer": "One.",
                "scene": format!("{}/rgb_0000.png", plan.id),
            });
            qa_lines.push(line.to_string());
        }
    }
    let qa = dir.join("qa.jsonl");
    fs::write(&qa, qa_lines.join("\n") + "\n").map_err(io_err(&qa))?;
    Ok(manifests)
}

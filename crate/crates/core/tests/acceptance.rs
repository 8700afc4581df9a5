//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use embforge_core::annotate::{
    build_action_prediction_sample, build_dense_caption_sample, build_goal_generation_sample,
    build_localization_sample, build_task_caption_sample, build_verification_sample, ActionMode, BuildContext,
    ManipulatedObject,
};
use embforge_core::config::Config;
use embforge_core::geom3d::{aabb_from_points, align_depth_scales, background_mask, iou3d, lift_mask, unproject};
use embforge_core::pipeline::{list_shards, run_dataset, validate_dataset, RunInputs};
use embforge_core::synth::{render, top_down_camera, SceneBox};
use embforge_core::tokens::{
    all_specials, decode_action_seq, decode_bbox, encode_action_seq, encode_bbox, parse, parse_str, render as
    render_tokens, render_string, vocab_json, Modality, RenderError, SeqNode, Special, StepBins, Token,
};
use embforge_core::{
    Aabb3, ActionStep, AxisRange, CameraModel, DepthMap, Episode, FlowField, Frame, MaskDetection, PixelMask,
    TaskType, WorkspaceBounds,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_bounds(rng: &mut ChaCha8Rng) -> WorkspaceBounds {
    let mut range = || {
        let lo = rng.random_range(-2.0..1.0);
        AxisRange::new(lo, lo + rng.random_range(0.05..3.0))
    };
    WorkspaceBounds {
        action: [range(), range(), range()],
        location: [range(), range(), range()],
    }
}

fn within(r: &AxisRange, rng: &mut ChaCha8Rng) -> f64 {
    // Closed range, so both edges are exercised now and then.
    match rng.random_range(0..50) {
        0 => r.lo,
        1 => r.hi,
        _ => rng.random_range(r.lo..r.hi),
    }
}

fn codec_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_pos = 0.0f64;
    let mut worst_rot = 0.0f64;
    let mut worst_box = 0.0f64;
    let mut failures = 0;
    for _ in 0..10_000 {
        let bounds = random_bounds(&mut rng);
        let step = ActionStep {
            position: [0, 1, 2].map(|k| within(&bounds.action[k], &mut rng)),
            rotation: [0, 1, 2].map(|_| rng.random_range(-PI..PI)),
            gripper: rng.random_range(0..=1),
        };
        let code = encode_action_seq(&[step], &bounds).expect("in-bounds step encodes");
        let back = decode_action_seq(&code.tokens(), &bounds).expect("own tokens decode")[0];
        for k in 0..3 {
            let half = bounds.action[k].width() / 512.0;
            let dev = (back.position[k] - step.position[k]).abs();
            worst_pos = worst_pos.max(dev / half);
            if dev > half * (1.0 + 1e-12) {
                failures += 1;
            }
            // Angles compare on the circle.
            let mut d = (back.rotation[k] - step.rotation[k]).rem_euclid(2.0 * PI);
            d = d.min(2.0 * PI - d);
            worst_rot = worst_rot.max(d / (PI / 256.0));
            if d > PI / 256.0 * (1.0 + 1e-12) {
                failures += 1;
            }
        }
        if back.gripper != step.gripper {
            failures += 1;
        }

        let (a, b) = ([0, 1, 2].map(|k| within(&bounds.location[k], &mut rng)), [0, 1, 2].map(|k| within(&bounds.location[k], &mut rng)));
        let bbox = Aabb3::new([0, 1, 2].map(|k| a[k].min(b[k])), [0, 1, 2].map(|k| a[k].max(b[k])));
        let code = encode_bbox(&bbox, &bounds).expect("in-bounds box encodes");
        let back = decode_bbox(&code.tokens(), &bounds).expect("own tokens decode").aabb;
        for k in 0..3 {
            let half = bounds.location[k].width() / 512.0;
            for dev in [(back.min[k] - bbox.min[k]).abs(), (back.max[k] - bbox.max[k]).abs()] {
                worst_box = worst_box.max(dev / half);
                if dev > half * (1.0 + 1e-12) {
                    failures += 1;
                }
            }
        }
    }
    outcome(
        failures == 0,
        format!(
            "worst deviation / half bin: position {worst_pos:.4}, rotation {worst_rot:.4}, box {worst_box:.4}; {failures} violations"
        ),
    )
}

fn random_text(rng: &mut ChaCha8Rng, min_len: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz      .,?<>/0123456789";
    let n = rng.random_range(min_len..12);
    (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char).collect()
}

fn random_obj_name(rng: &mut ChaCha8Rng) -> String {
    loop {
        let s = random_text(rng, 1);
        if !s.is_empty() && s.trim() == s {
            return s;
        }
    }
}

fn random_bins(rng: &mut ChaCha8Rng) -> [u8; 6] {
    [0; 6].map(|_| rng.random())
}

fn random_nodes(rng: &mut ChaCha8Rng, in_goal: bool) -> Vec<SeqNode> {
    let n = rng.random_range(0..if in_goal { 5 } else { 9 });
    let mut out: Vec<SeqNode> = Vec::new();
    while out.len() < n {
        let node = match rng.random_range(0..6) {
            0 => {
                if matches!(out.last(), Some(SeqNode::Text(_))) {
                    continue;
                }
                SeqNode::Text(random_text(rng, 1))
            }
            1 => SeqNode::Obj {
                name: random_obj_name(rng),
                bins: random_bins(rng),
            },
            2 => SeqNode::Location(random_bins(rng)),
            3 => SeqNode::Scene,
            4 if !in_goal => SeqNode::Goal {
                modality: if rng.random() { Modality::Image } else { Modality::Pcd },
                children: random_nodes(rng, true),
            },
            4 => continue,
            _ => SeqNode::Actions(
                (0..rng.random_range(1..4))
                    .map(|_| StepBins {
                        aloc: [0; 3].map(|_| rng.random()),
                        arot: [0; 3].map(|_| rng.random()),
                        gripper: rng.random_range(0..=1),
                    })
                    .collect(),
            ),
        };
        out.push(node);
    }
    out
}

fn random_stream(rng: &mut ChaCha8Rng) -> Vec<Token> {
    let specials: Vec<Special> = all_specials().collect();
    let structural: Vec<Special> = specials.iter().copied().filter(|s| s.id() < 9).collect();
    let n = rng.random_range(0..30);
    (0..n)
        .map(|_| match rng.random_range(0..4) {
            0 => Token::Text(random_text(rng, 0)),
            1 => Token::Special(structural[rng.random_range(0..structural.len())]),
            _ => Token::Special(specials[rng.random_range(0..specials.len())]),
        })
        .collect()
}

fn grammar_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut ast_failures = 0;
    let mut tried = 0;
    while tried < 10_000 {
        let ast = random_nodes(&mut rng, false);
        let tokens = match render_tokens(&ast) {
            Ok(t) => t,
            // The random text spelled a real token; draw again.
            Err(RenderError::ReservedText(_)) => continue,
            Err(_) => {
                ast_failures += 1;
                tried += 1;
                continue;
            }
        };
        tried += 1;
        let via_tokens = parse(&tokens).ok();
        let via_text = render_string(&ast).ok().and_then(|s| parse_str(&s).ok());
        if via_tokens.as_ref() != Some(&ast) || via_text.as_ref() != Some(&ast) {
            ast_failures += 1;
        }
    }

    let mut crashes = 0;
    let mut bad_index = 0;
    let mut rejected = 0;
    for _ in 0..10_000 {
        let stream = random_stream(&mut rng);
        match catch_unwind(AssertUnwindSafe(|| parse(&stream))) {
            Err(_) => crashes += 1,
            Ok(Err(e)) => {
                rejected += 1;
                if e.index > stream.len() {
                    bad_index += 1;
                }
            }
            Ok(Ok(_)) => {}
        }
    }
    outcome(
        ast_failures == 0 && crashes == 0 && bad_index == 0,
        format!(
            "{ast_failures}/10000 AST mismatches; fuzz: {rejected} rejected, {crashes} panics, {bad_index} errors without a valid index"
        ),
    )
}

/// Camera and cuboid shared by the geometry criteria.
fn cuboid_scene() -> (CameraModel, SceneBox) {
    let cam = top_down_camera(500.0, 640, 480, 1.2);
    let cuboid = SceneBox {
        label: "cuboid".into(),
        bbox: Aabb3::new([0.5, 0.3, 0.0], [0.7, 0.45, 0.25]),
        color: [200, 50, 50],
    };
    (cam, cuboid)
}

fn reprojection_identity() -> Outcome {
    let (cam, cuboid) = cuboid_scene();
    let r = render(&cam, &[cuboid]);
    let pc = unproject(&r.depth, None, &cam).expect("dimensions match");
    let valid: Vec<usize> = (0..r.depth.values.len()).filter(|&i| r.depth.valid[i]).collect();
    if valid.len() != pc.len() {
        return outcome(false, format!("{} valid pixels but {} points", valid.len(), pc.len()));
    }
    let mut worst = 0.0f64;
    let mut bad = 0;
    for (p, &i) in pc.points.iter().zip(&valid) {
        let (u, v) = ((i % cam.width) as f64 + 0.5, (i / cam.width) as f64 + 0.5);
        let d = r.depth.values[i];
        let Some([pu, pv, pd]) = cam.project(&(*p).into()) else {
            bad += 1;
            continue;
        };
        let rel = ((pu - u).abs() / u).max((pv - v).abs() / v).max((pd - d).abs() / d);
        worst = worst.max(rel);
        if rel > 1e-9 {
            bad += 1;
        }
    }
    outcome(
        bad == 0,
        format!("{} valid pixels, worst relative error {worst:.2e}, {bad} outside 1e-9", valid.len()),
    )
}

fn scale_recovery() -> Outcome {
    let (cam, cuboid) = cuboid_scene();
    let r = render(&cam, &[cuboid]);
    let scales = [1.0, 0.5, 0.8, 1.25, 2.0];
    let mut moving = FlowField::zeros(cam.width, cam.height);
    for (i, id) in r.ids.iter().enumerate() {
        if id.is_some() {
            moving.vectors[i] = [4.0, 1.0];
        }
    }
    let flows = vec![moving; scales.len() - 1];
    let bg = background_mask(&flows, 1.0).expect("flows agree");

    let clean: Vec<DepthMap> = scales.iter().map(|&s| r.depth.scaled(s)).collect();
    let c = align_depth_scales(&clean, &bg).expect("enough background");
    let clean_err = c
        .coefficients
        .iter()
        .zip(scales)
        .map(|(c, s)| (c * s - 1.0).abs())
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let noise = Normal::new(0.0, 0.01).expect("valid sigma");
    let noisy: Vec<DepthMap> = scales
        .iter()
        .map(|&s| {
            let mut d = r.depth.scaled(s);
            for v in d.values.iter_mut() {
                *v *= 1.0 + noise.sample(&mut rng);
            }
            d
        })
        .collect();
    let c = align_depth_scales(&noisy, &bg).expect("enough background");
    let noisy_err = c
        .coefficients
        .iter()
        .zip(scales)
        .map(|(c, s)| (c * s - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        bg.count() >= 10_000 && clean_err <= 1e-9 && noisy_err <= 0.01,
        format!(
            "{} background pixels; worst relative error {clean_err:.2e} noise-free, {noisy_err:.2e} with 1% noise",
            bg.count()
        ),
    )
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// IoU estimated with 10⁶ Halton points over the hull of both boxes.
fn iou_oracle(a: &Aabb3, b: &Aabb3) -> f64 {
    let lo = [0, 1, 2].map(|k| a.min[k].min(b.min[k]));
    let hi = [0, 1, 2].map(|k| a.max[k].max(b.max[k]));
    let (mut inter, mut union) = (0u64, 0u64);
    for i in 1..=1_000_000u64 {
        let p = [
            lo[0] + (hi[0] - lo[0]) * radical_inverse(i, 2),
            lo[1] + (hi[1] - lo[1]) * radical_inverse(i, 3),
            lo[2] + (hi[2] - lo[2]) * radical_inverse(i, 5),
        ];
        let (ia, ib) = (a.contains(&p), b.contains(&p));
        inter += (ia && ib) as u64;
        union += (ia || ib) as u64;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Bounding box of the cuboid faces that face the camera.
fn visible_surface_bound(cam: &CameraModel, b: &Aabb3) -> Aabb3 {
    let c = cam.translation;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for axis in 0..3 {
        for (side, plane) in [(-1.0, b.min[axis]), (1.0, b.max[axis])] {
            if side * (c[axis] - plane) <= 0.0 {
                continue;
            }
            for k in 0..3 {
                let (flo, fhi) = if k == axis { (plane, plane) } else { (b.min[k], b.max[k]) };
                lo[k] = lo[k].min(flo);
                hi[k] = hi[k].max(fhi);
            }
        }
    }
    Aabb3::new(lo, hi)
}

fn box_fidelity() -> Outcome {
    let (cam, cuboid) = cuboid_scene();
    let bounds = WorkspaceBounds::uniform([
        AxisRange::new(-1.0, 1.0),
        AxisRange::new(-1.0, 1.0),
        AxisRange::new(-0.5, 1.5),
    ]);
    let r = render(&cam, std::slice::from_ref(&cuboid));
    let points = lift_mask(&r.depth, &cam, &r.mask(0)).expect("mask matches depth");
    let lifted = aabb_from_points(&points, 0.0).expect("non-empty mask");
    let oracle = visible_surface_bound(&cam, &cuboid.bbox);
    let mut worst_bins = 0.0f64;
    for k in 0..3 {
        let w = bounds.location[k].width() / 256.0;
        for d in [(lifted.min[k] - oracle.min[k]).abs(), (lifted.max[k] - oracle.max[k]).abs()] {
            worst_bins = worst_bins.max(d / w);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_iou = 0.0f64;
    for _ in 0..100 {
        let c: [f64; 3] = [0; 3].map(|_| rng.random_range(0.0..1.0));
        let a = {
            let h: [f64; 3] = [0; 3].map(|_| rng.random_range(0.05..0.4));
            Aabb3::new([0, 1, 2].map(|k| c[k] - h[k]), [0, 1, 2].map(|k| c[k] + h[k]))
        };
        let b = {
            let h: [f64; 3] = [0; 3].map(|_| rng.random_range(0.05..0.4));
            let o: [f64; 3] = [0; 3].map(|_| rng.random_range(-0.4..0.4));
            Aabb3::new([0, 1, 2].map(|k| c[k] + o[k] - h[k]), [0, 1, 2].map(|k| c[k] + o[k] + h[k]))
        };
        worst_iou = worst_iou.max((iou3d(&a, &b) - iou_oracle(&a, &b)).abs());
    }
    outcome(
        worst_bins <= 1.0 && worst_iou <= 1e-3,
        format!("lifted box off the visible-surface bound by {worst_bins:.3} bins at worst; worst |IoU - oracle| {worst_iou:.2e} over 100 pairs"),
    )
}

fn template_episode() -> Episode {
    let cam = CameraModel::new(10.0, 10.0, 2.0, 2.0, 4, 4);
    let frames = (0..2)
        .map(|t| Frame {
            rgb: Some(RgbImage::new(4, 4)),
            depth: DepthMap::from_meters(4, 4, vec![1.0; 16]),
            flow: None,
            camera: cam.clone(),
            timestamp: t as f64,
        })
        .collect();
    Episode {
        id: "golden".into(),
        dataset: "golden".into(),
        frames,
        actions: vec![
            ActionStep {
                position: [0.0; 3],
                rotation: [0.0; 3],
                gripper: 1,
            };
            2
        ],
        instruction: "pick up the apple".into(),
        detections: vec![
            vec![MaskDetection {
                label: "apple".into(),
                mask: PixelMask::filled(4, 4, true),
                confidence: 1.0,
            }],
            Vec::new(),
        ],
        bounds: WorkspaceBounds::unit(),
    }
}

fn template_goldens() -> Outcome {
    let e = template_episode();
    let ctx = BuildContext {
        episode: &e,
        seed: 0,
        pointcloud_ext: "bin",
    };
    let full = Aabb3::new([0.0; 3], [1.0; 3]);
    let boxes = "<loc0><loc0><loc0><loc255><loc255><loc255>";
    let step = "<aloc0><aloc0><aloc0><arot128><arot128><arot128><gripper1>";
    let obj = ManipulatedObject {
        label: "apple",
        bbox: &full,
    };
    let cases = [
        (
            "verification",
            build_verification_sample(&ctx, 1, 1),
            "The initial scene is <scene></scene> and the current scene is <scene></scene>. Instruction: pick up the apple. Finished?".to_string(),
            "yes".to_string(),
        ),
        (
            "task caption",
            build_task_caption_sample(&ctx),
            "The initial scene is <scene></scene> and the final scene is <scene></scene>. Describe the task.".into(),
            "pick up the apple".into(),
        ),
        (
            "localization",
            build_localization_sample(&ctx, 0, Some(&full)),
            "The scene is <scene></scene>. Locate: apple.".into(),
            boxes.into(),
        ),
        (
            "dense caption",
            build_dense_caption_sample(&ctx, 0, Some(&full)),
            format!("The scene is <scene></scene>. What is located at {boxes}?"),
            "apple".into(),
        ),
        (
            "goal image",
            build_goal_generation_sample(&ctx, Modality::Image, Some(obj)),
            "The initial scene is <scene></scene>. Instruction: pick up the apple. Generate the goal image.".into(),
            format!("<image> pick up the <obj> apple </obj>{boxes} </image>"),
        ),
        (
            "goal point cloud",
            build_goal_generation_sample(&ctx, Modality::Pcd, Some(obj)),
            "The initial scene is <scene></scene>. Instruction: pick up the apple. Generate the goal point cloud.".into(),
            format!("<pcd> pick up the <obj> apple </obj>{boxes} </pcd>"),
        ),
        (
            "key actions",
            build_action_prediction_sample(&ctx, ActionMode::Key, 1e-3),
            "<scene></scene>. pick up the apple. Predict key actions.".into(),
            format!("{step}<ACT_SEP>{step}"),
        ),
        (
            "dense actions",
            build_action_prediction_sample(&ctx, ActionMode::Dense, 1e-3),
            "<scene></scene>. pick up the apple. Predict dense actions.".into(),
            format!("{step}<ACT_SEP>{step}"),
        ),
    ];
    let mut mismatches = Vec::new();
    for (name, got, prompt, answer) in &cases {
        match got {
            Ok(s) if &s.prompt == prompt && &s.answer == answer => {}
            Ok(s) => mismatches.push(format!("{name}: got {:?} / {:?}", s.prompt, s.answer)),
            Err(e) => mismatches.push(format!("{name}: {e}")),
        }
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{} golden prompt/answer pairs byte-identical", cases.len())
        } else {
            mismatches.join("; ")
        },
    )
}

fn vocabulary_arithmetic() -> Outcome {
    let entries: Vec<Value> = serde_json::from_str(&vocab_json()).expect("vocab.json parses");
    let count = |prefix: &str| {
        entries
            .iter()
            .filter(|e| e["token_string"].as_str().is_some_and(|s| s.starts_with(prefix)))
            .count()
    };
    let (loc, aloc, arot, grip) = (count("<loc"), count("<aloc"), count("<arot"), count("<gripper"));
    let structural = entries.len() - loc - aloc - arot - grip;
    let mut ids: Vec<u64> = entries.iter().filter_map(|e| e["id"].as_u64()).collect();
    ids.sort();
    ids.dedup();
    let unit = WorkspaceBounds::unit();
    let box_tokens = encode_bbox(&Aabb3::new([0.1; 3], [0.9; 3]), &unit).expect("encodes").tokens().len();
    let step = ActionStep {
        position: [0.5; 3],
        rotation: [0.0; 3],
        gripper: 0,
    };
    let step_tokens = encode_action_seq(&[step], &unit).expect("encodes").tokens().len();
    let pass = entries.len() == 779
        && ids.len() == 779
        && (loc, aloc, arot, grip, structural) == (256, 256, 256, 2, 9)
        && box_tokens == 6
        && step_tokens == 7;
    outcome(
        pass,
        format!(
            "{} entries: {loc} loc + {aloc} aloc + {arot} arot + {grip} gripper + {structural} structural; {box_tokens} tokens per box, {step_tokens} per step",
            entries.len()
        ),
    )
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic")
}

fn shard_bytes(dir: &Path) -> Vec<Vec<u8>> {
    list_shards(dir)
        .expect("output readable")
        .iter()
        .map(|p| fs::read(p).expect("shard readable"))
        .collect()
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let fixture = fixture_dir();
    let mut manifests: Vec<PathBuf> = fs::read_dir(&fixture)
        .expect("fixture present")
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    manifests.sort();
    let inputs = RunInputs {
        manifests,
        qa: Some(fixture.join("qa.jsonl")),
        qa_dataset: "external_qa".into(),
    };
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut outputs = Vec::new();
    for (name, workers) in [("w1", 1), ("w8", 8), ("w8-again", 8)] {
        let cfg = Config {
            workers,
            seed: 11,
            ..Config::default()
        };
        let out = tmp.path().join(name);
        if let Err(e) = run_dataset(&inputs, &cfg, &out) {
            return outcome(false, format!("run with {workers} workers failed: {e}"));
        }
        outputs.push(out);
    }
    let elapsed = start.elapsed();
    let report = validate_dataset(&outputs[0]).expect("dataset readable");
    let tasks = report.counts.per_task.values().filter(|&&n| n > 0).count();
    let reference = shard_bytes(&outputs[0]);
    let identical = outputs[1..].iter().all(|o| shard_bytes(o) == reference);
    let all_tasks = TaskType::ALL.len();
    outcome(
        tasks >= 8 && report.is_clean() && identical && !reference.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} samples over {tasks}/{all_tasks} task types, {} violations, shards identical across runs: {identical}, {:.2} s for three runs",
            report.counts.total,
            report.violations.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn unproject_throughput() -> Outcome {
    let (cam, cuboid) = cuboid_scene();
    let depth = render(&cam, &[cuboid]).depth;
    let mut times: Vec<Duration> = (0..21)
        .map(|_| {
            let t = Instant::now();
            let pc = unproject(&depth, None, &cam).expect("dimensions match");
            let dt = t.elapsed();
            assert_eq!(pc.len(), 640 * 480);
            dt
        })
        .collect();
    times.sort();
    let median = times[times.len() / 2];
    outcome(
        median < Duration::from_millis(10),
        format!("median {:.2} ms over 21 runs", median.as_secs_f64() * 1e3),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("token codec roundtrip", codec_roundtrip, Some(Duration::from_secs(5))),
        ("grammar roundtrip and fuzz", grammar_roundtrip, Some(Duration::from_secs(30))),
        ("reprojection identity", reprojection_identity, None),
        ("depth-scale recovery", scale_recovery, None),
        ("3D box fidelity", box_fidelity, None),
        ("template byte-exactness", template_goldens, None),
        ("vocabulary arithmetic", vocabulary_arithmetic, None),
        ("end-to-end determinism", end_to_end, None),
        ("unprojection throughput", unproject_throughput, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(run).unwrap_or_else(|_| outcome(false, "panicked"));
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = result.pass && in_time;
        if !pass {
            failed += 1;
        }
        let timing = match limit {
            Some(l) => format!(" [{:.2} s, limit {} s]", elapsed.as_secs_f64(), l.as_secs()),
            None => format!(" [{:.2} s]", elapsed.as_secs_f64()),
        };
        println!(
            "criterion {}: {} - {}: {}{timing}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            name,
            result.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

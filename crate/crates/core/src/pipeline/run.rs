//! Per-episode orchestration and the parallel dataset run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::export::{export_samples, DatasetReport, QaSummary};
use super::io::{write_depth_f32, write_pointcloud, write_rgb, CloudFormat};
use super::manifest::load_episode;
use super::{io_err, PipelineError};
use crate::annotate::{
    build_action_prediction_sample, build_dense_caption_sample, build_goal_generation_sample,
    build_localization_sample, build_task_caption_sample, build_verification_sample, build_whatif_sample, derive_seed,
    diversify, ingest_external_qa, object_phrase, verification_frames, whatif_segment, ActionMode, AnnotateError,
    AssetKind, BuildContext, DiversifierClient, EpisodeFacts, ManipulatedObject, ObjectFact,
};
use crate::config::{Config, DiversifierMode};
use crate::geom3d::{aabb_from_points, align_depth_scales, background_mask, lift_mask, peak_flow, select_manipulated, unproject};
use crate::model::{validate_episode, Aabb3, DepthMap, Episode, FlowField, PointCloud, SampleRecord, TaskType};
use crate::tokens::{encode_bbox, join_specials, Modality};

/// Data behind one asset path, produced in memory and written by the runner.
#[derive(Debug, Clone)]
pub enum AssetData {
    PointCloud(PointCloud),
    Rgb(RgbImage),
    Depth(DepthMap),
    Copy(PathBuf),
}

#[derive(Debug, Clone)]
pub struct PendingAsset {
    pub path: String,
    pub data: AssetData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Produced,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode_id: String,
    /// Manifest the episode came from, when loaded from disk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub dataset: String,
    pub status: EpisodeStatus,
    pub samples: usize,
    /// Per-stage skip reasons and other notes.
    pub notes: Vec<String>,
    /// Per-frame depth scale, or `None` when alignment was skipped.
    pub alignment: Option<Vec<f64>>,
    pub manipulated: Option<String>,
}

impl EpisodeReport {
    pub fn failed(episode_id: String, source: Option<String>, reason: String) -> Self {
        EpisodeReport {
            episode_id,
            source,
            dataset: String::new(),
            status: EpisodeStatus::Skipped,
            samples: 0,
            notes: vec![reason],
            alignment: None,
            manipulated: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub samples: Vec<SampleRecord>,
    pub assets: Vec<PendingAsset>,
    pub report: EpisodeReport,
}

/// All frame flows, or `None` when any non-final frame lacks one.
fn segment_flows(e: &Episode) -> Option<Vec<&FlowField>> {
    let n = e.frames.len();
    let flows: Vec<&FlowField> = e.frames[..n.saturating_sub(1)]
        .iter()
        .filter_map(|f| f.flow.as_ref())
        .collect();
    (!flows.is_empty() && flows.len() == n - 1).then_some(flows)
}

/// Per-frame depth with the scale alignment applied when it is reliable.
fn aligned_depths(e: &Episode, cfg: &Config, notes: &mut Vec<String>) -> (Vec<DepthMap>, Option<Vec<f64>>) {
    let mut depths: Vec<DepthMap> = e.frames.iter().map(|f| f.depth.clone()).collect();
    let cam0 = &e.frames[0].camera;
    if !e.frames.iter().all(|f| f.camera.same_pose(cam0, 1e-9)) {
        notes.push("alignment skipped: camera moves during the episode".into());
        return (depths, None);
    }
    let Some(flows) = segment_flows(e) else {
        notes.push("alignment skipped: optical flow missing".into());
        return (depths, None);
    };
    let coefficients = background_mask(&flows, cfg.tau_flow).and_then(|bg| align_depth_scales(&depths, &bg));
    match coefficients {
        Ok(c) => {
            c.apply(&mut depths);
            (depths, Some(c.coefficients))
        }
        Err(err) => {
            notes.push(format!("alignment skipped: {err}"));
            (depths, None)
        }
    }
}

fn add_flag(s: &mut SampleRecord, flag: &str) {
    if !s.flags.iter().any(|f| f == flag) {
        s.flags.push(flag.to_string());
    }
}

/// Runs geometry and every enabled builder on one episode.
///
/// Nothing here is fatal: a failing stage becomes a note in the report and
/// the samples depending on it are left out.
pub fn annotate_episode(e: &Episode, cfg: &Config, client: Option<&dyn DiversifierClient>) -> EpisodeOutput {
    let mut report = EpisodeReport {
        episode_id: e.id.clone(),
        source: None,
        dataset: e.dataset.clone(),
        status: EpisodeStatus::Skipped,
        samples: 0,
        notes: Vec::new(),
        alignment: None,
        manipulated: None,
    };
    let done = |samples: Vec<SampleRecord>, assets: Vec<PendingAsset>, mut report: EpisodeReport| {
        report.samples = samples.len();
        report.status = if samples.is_empty() {
            EpisodeStatus::Skipped
        } else {
            EpisodeStatus::Produced
        };
        EpisodeOutput {
            samples,
            assets,
            report,
        }
    };

    let enabled: BTreeSet<TaskType> = cfg
        .tasks
        .enabled(&e.dataset)
        .iter()
        .copied()
        .filter(|t| *t != TaskType::EmbodiedQa)
        .collect();
    if enabled.is_empty() {
        report.notes.push("no tasks enabled".into());
        return done(Vec::new(), Vec::new(), report);
    }
    let problems = validate_episode(e);
    if !problems.is_empty() {
        report.notes.extend(problems.into_iter().map(|p| format!("invalid episode: {p}")));
        return done(Vec::new(), Vec::new(), report);
    }

    let (depths, alignment) = aligned_depths(e, cfg, &mut report.notes);
    let unaligned = alignment.is_none();
    report.alignment = alignment;

    let cam0 = &e.frames[0].camera;
    let dets = e.detections_at(0);
    let boxes: Vec<Option<Aabb3>> = dets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            match lift_mask(&depths[0], cam0, &d.mask).and_then(|pc| aabb_from_points(&pc, cfg.trim_q)) {
                Ok(b) => Some(b),
                Err(err) => {
                    report.notes.push(format!("detection {i} ({}): no box: {err}", d.label));
                    None
                }
            }
        })
        .collect();

    let manipulated = match segment_flows(e) {
        None => {
            report.notes.push("manipulated object: no optical flow".into());
            None
        }
        Some(flows) => peak_flow(&flows)
            .ok()
            .and_then(|peak| select_manipulated(dets, &peak, cfg.tau_flow)),
    };
    let manipulated = manipulated.and_then(|i| match &boxes[i] {
        Some(b) => Some((i, *b)),
        None => {
            report.notes.push(format!("manipulated object {i} has no box"));
            None
        }
    });
    report.manipulated = manipulated.map(|(i, _)| dets[i].label.clone());

    let ext = cfg.pointcloud_format.extension();
    let ctx = BuildContext {
        episode: e,
        seed: cfg.seed,
        pointcloud_ext: ext,
    };
    let mut samples = Vec::new();
    let mut keep = |name: &str, r: Result<SampleRecord, AnnotateError>, notes: &mut Vec<String>| match r {
        Ok(s) => samples.push(s),
        Err(err) => notes.push(format!("{name}: {err}")),
    };
    let notes = &mut report.notes;

    for task in &enabled {
        match task {
            TaskType::Localization => {
                for i in 0..dets.len() {
                    keep("localization", build_localization_sample(&ctx, i, boxes[i].as_ref()), notes);
                }
            }
            TaskType::DenseCaption => {
                for i in 0..dets.len() {
                    keep("dense_caption", build_dense_caption_sample(&ctx, i, boxes[i].as_ref()), notes);
                }
            }
            TaskType::TaskCaption => keep("task_caption", build_task_caption_sample(&ctx), notes),
            TaskType::Verification => {
                let seed = derive_seed(cfg.seed, &[&e.id, "verification-frames"]);
                for t in verification_frames(e.frames.len(), cfg.verification_k, cfg.verification_negatives, seed) {
                    keep("verification", build_verification_sample(&ctx, t, cfg.verification_k), notes);
                }
            }
            TaskType::GoalGeneration => {
                let obj = manipulated.as_ref().map(|(i, b)| ManipulatedObject {
                    label: &dets[*i].label,
                    bbox: b,
                });
                for m in [Modality::Image, Modality::Pcd] {
                    keep("goal_generation", build_goal_generation_sample(&ctx, m, obj), notes);
                }
            }
            TaskType::ActionPrediction => {
                for mode in [ActionMode::Key, ActionMode::Dense] {
                    keep("action_prediction", build_action_prediction_sample(&ctx, mode, cfg.speed_eps), notes);
                }
            }
            TaskType::WhatifQa => {
                let seed = derive_seed(cfg.seed, &[&e.id, "whatif-segment"]);
                match whatif_segment(&e.actions, cfg.speed_eps, seed) {
                    None => notes.push("whatif_qa: episode has no actions".into()),
                    Some(seg) => {
                        let object = manipulated.map(|(i, _)| object_phrase(&e.instruction, &dets[i].label));
                        let facts = episode_facts(e, &boxes, manipulated.map(|(i, _)| i));
                        let whatif_client = match cfg.diversifier.mode {
                            DiversifierMode::Replay | DiversifierMode::Endpoint => client,
                            _ => None,
                        };
                        keep(
                            "whatif_qa",
                            build_whatif_sample(&ctx, seg, object.as_deref(), Some(facts), whatif_client),
                            notes,
                        );
                    }
                }
            }
            TaskType::EmbodiedQa => {}
        }
    }

    if let Some(c) = client {
        for s in samples.iter_mut() {
            let seed = s.provenance.seed;
            *s = diversify(s, c, seed);
        }
    }
    if unaligned {
        for s in samples.iter_mut() {
            add_flag(s, "unaligned");
        }
    }

    let assets = materialize_assets(e, &depths, &mut samples, cfg, &mut report.notes);
    done(samples, assets, report)
}

fn episode_facts(e: &Episode, boxes: &[Option<Aabb3>], manipulated: Option<usize>) -> EpisodeFacts {
    let objects = e
        .detections_at(0)
        .iter()
        .zip(boxes)
        .enumerate()
        .filter_map(|(i, (d, b))| {
            let code = encode_bbox(b.as_ref()?, &e.bounds).ok()?;
            Some(ObjectFact {
                label: d.label.clone(),
                location: join_specials(&code.tokens()),
                manipulated: manipulated == Some(i),
            })
        })
        .collect();
    let first = e.frames.first().map_or(0.0, |f| f.timestamp);
    let last = e.frames.last().map_or(0.0, |f| f.timestamp);
    EpisodeFacts {
        instruction: e.instruction.clone(),
        objects,
        num_frames: e.frames.len(),
        duration_s: last - first,
    }
}

/// Builds the data for every asset the samples reference. Samples whose
/// assets cannot be produced are dropped with a note.
fn materialize_assets(
    e: &Episode,
    depths: &[DepthMap],
    samples: &mut Vec<SampleRecord>,
    cfg: &Config,
    notes: &mut Vec<String>,
) -> Vec<PendingAsset> {
    let paths: BTreeSet<String> = samples.iter().flat_map(|s| s.assets.iter().map(|a| a.path.clone())).collect();
    let mut assets = Vec::new();
    let mut failed = BTreeMap::new();
    for path in paths {
        let data = match AssetKind::parse(&path) {
            Some((id, kind)) if id == e.id => match kind {
                AssetKind::Scene(t) => {
                    let f = &e.frames[t];
                    match unproject(&depths[t], f.rgb.as_ref(), &f.camera) {
                        Ok(pc) if !pc.is_empty() => Ok(AssetData::PointCloud(pc)),
                        Ok(_) => Err("frame has no valid depth".to_string()),
                        Err(err) => Err(err.to_string()),
                    }
                }
                AssetKind::Rgb(t) => e.frames[t]
                    .rgb
                    .clone()
                    .map(AssetData::Rgb)
                    .ok_or_else(|| "frame has no rgb".to_string()),
                AssetKind::Depth(t) => Ok(AssetData::Depth(depths[t].clone())),
            },
            _ => Err("unrecognized asset path".to_string()),
        };
        match data {
            Ok(data) => assets.push(PendingAsset { path, data }),
            Err(reason) => {
                failed.insert(path, reason);
            }
        }
    }
    if !failed.is_empty() {
        samples.retain(|s| match s.assets.iter().find(|a| failed.contains_key(&a.path)) {
            Some(a) => {
                notes.push(format!("{}: asset {}: {}", s.sample_id, a.path, failed[&a.path]));
                false
            }
            None => true,
        });
    }
    let _ = cfg;
    assets
}

/// Writes assets under `out_dir`, creating directories as needed.
pub fn write_assets(assets: &[PendingAsset], out_dir: &Path, format: CloudFormat) -> Result<(), PipelineError> {
    for a in assets {
        let path = out_dir.join(&a.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        match &a.data {
            AssetData::PointCloud(pc) => write_pointcloud(pc, &path, format)?,
            AssetData::Rgb(img) => write_rgb(img, &path)?,
            AssetData::Depth(d) => write_depth_f32(d, &path)?,
            AssetData::Copy(src) => {
                fs::copy(src, &path).map_err(io_err(src))?;
            }
        }
    }
    Ok(())
}

/// Inputs of one dataset build.
#[derive(Debug, Clone, Default)]
pub struct RunInputs {
    pub manifests: Vec<PathBuf>,
    /// Optional JSONL file of existing question/answer pairs.
    pub qa: Option<PathBuf>,
    /// Dataset tag for QA records that do not name one.
    pub qa_dataset: String,
}

/// Peeks at a manifest's episode id without loading any frame data.
fn manifest_id(path: &Path) -> Option<String> {
    #[derive(Deserialize)]
    struct IdOnly {
        id: String,
    }
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str::<IdOnly>(&text).ok().map(|m| m.id)
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        b = b.num_threads(workers);
    }
    b.build().map_err(|e| PipelineError::ThreadPool(e.to_string()))
}

/// Loads, annotates and exports a whole dataset into `out_dir`.
pub fn run_dataset(inputs: &RunInputs, cfg: &Config, out_dir: &Path) -> Result<DatasetReport, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let client = cfg.diversifier.client();
    let client = client.as_deref();
    let format = CloudFormat::from(cfg.pointcloud_format);

    // Two manifests with one id would write the same asset files.
    let mut seen = BTreeSet::new();
    let duplicate: Vec<bool> = inputs
        .manifests
        .iter()
        .map(|p| manifest_id(p).is_some_and(|id| !seen.insert(id)))
        .collect();

    let pool = build_pool(cfg.workers)?;
    let results: Vec<Result<(Vec<SampleRecord>, EpisodeReport), PipelineError>> = pool.install(|| {
        inputs
            .manifests
            .par_iter()
            .zip(duplicate.par_iter())
            .map(|(path, dup)| {
                let source = Some(path.display().to_string());
                let fallback_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                if *dup {
                    let id = manifest_id(path).unwrap_or(fallback_id);
                    let reason = "duplicate episode id; manifest ignored".to_string();
                    return Ok((Vec::new(), EpisodeReport::failed(id, source, reason)));
                }
                let e = match load_episode(path) {
                    Ok(e) => e,
                    Err(err) => {
                        let id = manifest_id(path).unwrap_or(fallback_id);
                        return Ok((Vec::new(), EpisodeReport::failed(id, source, format!("load failed: {err}"))));
                    }
                };
                let out = annotate_episode(&e, cfg, client);
                write_assets(&out.assets, out_dir, format)?;
                let mut report = out.report;
                report.source = source;
                Ok((out.samples, report))
            })
            .collect()
    });

    let mut samples = Vec::new();
    let mut episodes = Vec::new();
    for r in results {
        let (s, rep) = r?;
        samples.extend(s);
        episodes.push(rep);
    }

    let qa = match &inputs.qa {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let base = path.parent().unwrap_or(Path::new("."));
            let ingest = ingest_external_qa(&text, base, &inputs.qa_dataset);
            let mut skipped = ingest.skipped;
            let mut copied = BTreeSet::new();
            let mut accepted = 0;
            for s in ingest.samples {
                if !cfg.tasks.is_enabled(&s.dataset, TaskType::EmbodiedQa) {
                    skipped.push(format!("{}: embodied_qa not enabled for {}", s.sample_id, s.dataset));
                    continue;
                }
                let copies: Vec<_> = ingest.copies.iter().filter(|c| s.assets.iter().any(|a| a.path == c.dest)).collect();
                let pending: Vec<PendingAsset> = copies
                    .iter()
                    .map(|c| PendingAsset {
                        path: c.dest.clone(),
                        data: AssetData::Copy(c.source.clone()),
                    })
                    .collect();
                match write_assets(&pending, out_dir, format) {
                    Ok(()) => {
                        copied.extend(copies.iter().map(|c| c.dest.clone()));
                        accepted += 1;
                        samples.push(s);
                    }
                    Err(err) => skipped.push(format!("{}: {err}", s.sample_id)),
                }
            }
            Some(QaSummary { accepted, skipped })
        }
    };

    let shards = export_samples(&mut samples, out_dir, cfg.shard_size)?;
    let report = DatasetReport::build(cfg, &samples, episodes, shards, qa);
    report.write(out_dir)?;
    Ok(report)
}

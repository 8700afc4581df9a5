use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nouns::{chunk_for_label, strip_determiner};
use super::templates::{fill, instruction_clause, Slots, TemplateId};
use super::{derive_seed, keyframe_select, AnnotateError, AssetKind};
use crate::model::{Aabb3, AssetRef, Episode, Provenance, SampleRecord, TaskType};
use crate::tokens::{encode_action_seq, encode_bbox, join_specials, parse_str, render_string, Modality, SeqNode};

/// Shared inputs of every builder.
#[derive(Debug, Clone, Copy)]
pub struct BuildContext<'a> {
    pub episode: &'a Episode,
    pub seed: u64,
    /// Extension of point-cloud assets, `bin` or `ply`.
    pub pointcloud_ext: &'a str,
}

impl BuildContext<'_> {
    pub fn asset(&self, role: &str, kind: AssetKind) -> AssetRef {
        AssetRef {
            role: role.to_string(),
            path: kind.path(&self.episode.id, self.pointcloud_ext),
        }
    }

    pub(crate) fn record(
        &self,
        builder: &str,
        task_type: TaskType,
        template: &str,
        prompt: String,
        answer: String,
        assets: Vec<AssetRef>,
        flags: Vec<String>,
    ) -> Result<SampleRecord, AnnotateError> {
        parse_str(&prompt)?;
        parse_str(&answer)?;
        let e = self.episode;
        Ok(SampleRecord {
            sample_id: format!("{}/{builder}", e.id),
            task_type,
            dataset: e.dataset.clone(),
            prompt,
            answer,
            assets,
            episode_id: e.id.clone(),
            provenance: Provenance {
                template: template.to_string(),
                seed: derive_seed(self.seed, &[&e.id, builder]),
            },
            flags,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionMode {
    Key,
    Dense,
}

impl ActionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionMode::Key => "key",
            ActionMode::Dense => "dense",
        }
    }
}

/// How an object is named in text: the instruction's noun chunk for the label
/// without its determiner, or the label itself.
pub fn object_phrase(instruction: &str, label: &str) -> String {
    match chunk_for_label(instruction, label) {
        Some(c) => strip_determiner(&c.text).to_string(),
        None => label.trim().to_string(),
    }
}

fn detection_label(e: &Episode, det_index: usize) -> Result<&str, AnnotateError> {
    e.detections_at(0)
        .get(det_index)
        .map(|d| d.label.as_str())
        .ok_or(AnnotateError::MissingDetection(det_index))
}

fn box_tokens(ctx: &BuildContext<'_>, b: &Aabb3) -> Result<(String, [u8; 6], Vec<String>), AnnotateError> {
    let code = encode_bbox(b, &ctx.episode.bounds)?;
    let flags = if code.clamped { vec!["clamped".to_string()] } else { Vec::new() };
    Ok((join_specials(&code.tokens()), code.bins, flags))
}

/// "Locate: OBJECT." with the object's six loc tokens as answer.
pub fn build_localization_sample(
    ctx: &BuildContext<'_>,
    det_index: usize,
    bbox: Option<&Aabb3>,
) -> Result<SampleRecord, AnnotateError> {
    let e = ctx.episode;
    let label = detection_label(e, det_index)?;
    let bbox = bbox.ok_or(AnnotateError::MissingBox(det_index))?;
    let object = object_phrase(&e.instruction, label);
    let (location, _, flags) = box_tokens(ctx, bbox)?;
    let t = TemplateId::Localization.template();
    let prompt = fill(
        t.prompt_pattern,
        &Slots {
            object: Some(&object),
            ..Default::default()
        },
    )?;
    let answer = fill(
        t.answer_pattern,
        &Slots {
            location: Some(&location),
            ..Default::default()
        },
    )?;
    ctx.record(
        &format!("localization/d{det_index:03}"),
        TaskType::Localization,
        t.id.as_str(),
        prompt,
        answer,
        vec![ctx.asset("scene", AssetKind::Scene(0))],
        flags,
    )
}

/// "What is located at LOCATION?" answered with the object phrase.
pub fn build_dense_caption_sample(
    ctx: &BuildContext<'_>,
    det_index: usize,
    bbox: Option<&Aabb3>,
) -> Result<SampleRecord, AnnotateError> {
    let e = ctx.episode;
    let label = detection_label(e, det_index)?;
    let bbox = bbox.ok_or(AnnotateError::MissingBox(det_index))?;
    let object = object_phrase(&e.instruction, label);
    let (location, _, flags) = box_tokens(ctx, bbox)?;
    let t = TemplateId::DenseCaption.template();
    let slots = Slots {
        object: Some(&object),
        location: Some(&location),
        ..Default::default()
    };
    ctx.record(
        &format!("dense_caption/d{det_index:03}"),
        TaskType::DenseCaption,
        t.id.as_str(),
        fill(t.prompt_pattern, &slots)?,
        fill(t.answer_pattern, &slots)?,
        vec![ctx.asset("scene", AssetKind::Scene(0))],
        flags,
    )
}

/// Initial and final scene; the answer is the instruction verbatim.
pub fn build_task_caption_sample(ctx: &BuildContext<'_>) -> Result<SampleRecord, AnnotateError> {
    let e = ctx.episode;
    if e.frames.len() < 2 {
        return Err(AnnotateError::TooFewFrames(2));
    }
    let t = TemplateId::TaskCaption.template();
    ctx.record(
        "task_caption",
        TaskType::TaskCaption,
        t.id.as_str(),
        fill(t.prompt_pattern, &Slots::default())?,
        e.instruction.clone(),
        vec![
            ctx.asset("initial_scene", AssetKind::Scene(0)),
            ctx.asset("final_scene", AssetKind::Scene(e.last_frame())),
        ],
        Vec::new(),
    )
}

/// "Finished?" at frame `t`; "yes" iff `t` is among the last `k` frames.
pub fn build_verification_sample(ctx: &BuildContext<'_>, t: usize, k: usize) -> Result<SampleRecord, AnnotateError> {
    let e = ctx.episode;
    let n = e.frames.len();
    if t >= n {
        return Err(AnnotateError::FrameOutOfRange { t, n });
    }
    let label = if t + k >= n { "yes" } else { "no" };
    let tpl = TemplateId::Verification.template();
    let prompt = fill(
        tpl.prompt_pattern,
        &Slots {
            instruction: Some(instruction_clause(&e.instruction)),
            ..Default::default()
        },
    )?;
    ctx.record(
        &format!("verification/t{t:04}"),
        TaskType::Verification,
        tpl.id.as_str(),
        prompt,
        tpl.answer_pattern.replace("[yes/no]", label),
        vec![
            ctx.asset("initial_scene", AssetKind::Scene(0)),
            ctx.asset("current_scene", AssetKind::Scene(t)),
        ],
        Vec::new(),
    )
}

/// Frames to ask "Finished?" about: the last `k` as positives plus
/// `negatives` distinct seeded picks from the first half.
pub fn verification_frames(n_frames: usize, k: usize, negatives: usize, seed: u64) -> Vec<usize> {
    let k = k.min(n_frames);
    let mut frames: Vec<usize> = (n_frames - k..n_frames).collect();
    let half = n_frames / 2;
    let pool = half.min(n_frames - k);
    if pool > 0 && negatives > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        frames.extend(sample_indices(&mut rng, pool, negatives.min(pool)));
    }
    frames.sort_unstable();
    frames.dedup();
    frames
}

/// The manipulated object as seen by the goal builder.
#[derive(Debug, Clone, Copy)]
pub struct ManipulatedObject<'a> {
    pub label: &'a str,
    pub bbox: &'a Aabb3,
}

/// Goal image or point cloud of the final frame, with the manipulated object
/// grounded inside the goal span.
pub fn build_goal_generation_sample(
    ctx: &BuildContext<'_>,
    modality: Modality,
    manipulated: Option<ManipulatedObject<'_>>,
) -> Result<SampleRecord, AnnotateError> {
    let e = ctx.episode;
    let last = e.last_frame();
    let mut assets = vec![ctx.asset("initial_scene", AssetKind::Scene(0))];
    match modality {
        Modality::Image => {
            if e.frames.get(last).and_then(|f| f.rgb.as_ref()).is_none() {
                return Err(AnnotateError::MissingAsset(format!("rgb of frame {last}")));
            }
            assets.push(ctx.asset("goal_image", AssetKind::Rgb(last)));
            assets.push(ctx.asset("goal_depth", AssetKind::Depth(last)));
        }
        Modality::Pcd => assets.push(ctx.asset("goal_pcd", AssetKind::Scene(last))),
    }

    let instruction = e.instruction.trim();
    let mut flags = Vec::new();
    let children = match manipulated {
        None => {
            flags.push("no-object".to_string());
            vec![SeqNode::text(format!(" {instruction} "))]
        }
        Some(obj) => {
            let code = encode_bbox(obj.bbox, &e.bounds)?;
            if code.clamped {
                flags.push("clamped".to_string());
            }
            match chunk_for_label(instruction, obj.label) {
                Some(chunk) => {
                    let (start, end) = byte_span(instruction, chunk.span);
                    let name = strip_determiner(&chunk.text);
                    let name_start = end - name.len();
                    debug_assert!(name_start >= start);
                    vec![
                        SeqNode::text(format!(" {}", &instruction[..name_start])),
                        SeqNode::Obj {
                            name: name.to_string(),
                            bins: code.bins,
                        },
                        SeqNode::text(format!("{} ", &instruction[end..])),
                    ]
                }
                None => {
                    flags.push("object-not-in-instruction".to_string());
                    vec![
                        SeqNode::text(format!(" {instruction} ")),
                        SeqNode::Obj {
                            name: obj.label.trim().to_string(),
                            bins: code.bins,
                        },
                        SeqNode::text(" "),
                    ]
                }
            }
        }
    };
    let answer = render_string(&[SeqNode::Goal { modality, children }])?;

    let t = TemplateId::GoalGeneration.template();
    let variant = match modality {
        Modality::Image => "image",
        Modality::Pcd => "point cloud",
    };
    let prompt = fill(
        &t.prompt_variant(variant),
        &Slots {
            instruction: Some(instruction_clause(&e.instruction)),
            ..Default::default()
        },
    )?;
    ctx.record(
        &format!("goal_generation/{}", modality.as_str()),
        TaskType::GoalGeneration,
        t.id.as_str(),
        prompt,
        answer,
        assets,
        flags,
    )
}

fn byte_span(s: &str, (a, b): (usize, usize)) -> (usize, usize) {
    let byte_at = |c: usize| s.char_indices().nth(c).map(|(i, _)| i).unwrap_or(s.len());
    (byte_at(a), byte_at(b))
}

/// Every step (dense) or the keyframe steps (key) as one action chunk.
pub fn build_action_prediction_sample(
    ctx: &BuildContext<'_>,
    mode: ActionMode,
    speed_eps: f64,
) -> Result<SampleRecord, AnnotateError> {
    let e = ctx.episode;
    if e.actions.is_empty() {
        return Err(AnnotateError::NoActions);
    }
    let steps = match mode {
        ActionMode::Dense => e.actions.clone(),
        ActionMode::Key => keyframe_select(&e.actions, speed_eps)
            .into_iter()
            .map(|i| e.actions[i])
            .collect(),
    };
    let code = encode_action_seq(&steps, &e.bounds)?;
    let flags = if code.clamped { vec!["clamped".to_string()] } else { Vec::new() };
    let t = TemplateId::ActionPrediction.template();
    let prompt = fill(
        &t.prompt_variant(mode.as_str()),
        &Slots {
            instruction: Some(instruction_clause(&e.instruction)),
            ..Default::default()
        },
    )?;
    ctx.record(
        &format!("action_prediction/{}", mode.as_str()),
        TaskType::ActionPrediction,
        t.id.as_str(),
        prompt,
        join_specials(&code.tokens()),
        vec![ctx.asset("scene", AssetKind::Scene(0))],
        flags,
    )
}

//! What-if questions: "what happens if the robot executes these actions?"

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::builders::BuildContext;
use super::client::DiversifierClient;
use super::diversify::{select_demonstrations, system_prompt, DiversifierRequest, EpisodeFacts, PromptAnswer, RequestKind};
use super::{derive_seed, keyframe_select, AnnotateError, AssetKind};
use crate::model::{ActionStep, SampleRecord, TaskType};
use crate::tokens::{encode_action_seq, join_specials, lex, parse_str, Token};

const BUILDER: &str = "whatif_qa";

/// Inclusive step range between two consecutive keyframes, chosen by `seed`.
pub fn whatif_segment(actions: &[ActionStep], speed_eps: f64, seed: u64) -> Option<(usize, usize)> {
    let keys = keyframe_select(actions, speed_eps);
    match keys.len() {
        0 => None,
        1 => Some((keys[0], keys[0])),
        n => {
            let i = ChaCha8Rng::seed_from_u64(seed).random_range(0..n - 1);
            Some((keys[i], keys[i + 1]))
        }
    }
}

/// Plain-language state after executing `actions[a..=b]`.
pub fn whatif_caption(actions: &[ActionStep], (a, b): (usize, usize), object: &str) -> String {
    let (start, end) = (&actions[a], &actions[b]);
    if start.gripper == 1 && end.gripper == 0 {
        return format!("The gripper will close and grasp the {object}.");
    }
    if start.gripper == 0 && end.gripper == 1 {
        return format!("The gripper will open and release the {object}.");
    }
    let d = [0, 1, 2].map(|i| end.position[i] - start.position[i]);
    let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let holding = if end.gripper == 0 {
        format!(" while holding the {object}")
    } else {
        String::new()
    };
    if dist < 0.005 {
        return format!("The gripper will stay in place{holding}.");
    }
    let axis = (0..3)
        .max_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()).then(j.cmp(&i)))
        .expect("three axes");
    let sign = if d[axis] >= 0.0 { '+' } else { '-' };
    let name = ['x', 'y', 'z'][axis];
    format!(
        "The gripper will move about {:.0} cm, mostly along {sign}{name}{holding}.",
        dist * 100.0
    )
}

fn offline_prompt(action_tokens: &str) -> String {
    format!("The scene is <scene></scene>. What will happen if the robot executes {action_tokens}?")
}

fn specials(s: &str) -> Vec<String> {
    lex(s).iter().filter_map(Token::special).map(|t| t.text()).collect()
}

/// Request asking a client to write a what-if question about `segment`.
pub fn build_whatif_request(
    ctx: &BuildContext<'_>,
    segment: (usize, usize),
    facts: Option<EpisodeFacts>,
    demonstrations: usize,
) -> Result<DiversifierRequest, AnnotateError> {
    let e = ctx.episode;
    let (a, b) = segment;
    let steps = e.actions.get(a..=b).ok_or(AnnotateError::NoActions)?;
    let code = encode_action_seq(steps, &e.bounds)?;
    let seed = derive_seed(ctx.seed, &[&e.id, BUILDER]);
    Ok(DiversifierRequest {
        kind: RequestKind::WhatIf,
        system_prompt: system_prompt(RequestKind::WhatIf).to_string(),
        demonstrations: select_demonstrations(RequestKind::WhatIf, demonstrations, seed)?,
        facts,
        task: TaskType::WhatifQa,
        seed,
        original: None,
        action_tokens: Some(join_specials(&code.tokens())),
    })
}

/// Builds the what-if sample. With a client the question comes from the
/// client; without one, or when the client fails, the fixed offline form is
/// used (flagged `offline-fallback` in the failure case).
pub fn build_whatif_sample(
    ctx: &BuildContext<'_>,
    segment: (usize, usize),
    object: Option<&str>,
    facts: Option<EpisodeFacts>,
    client: Option<&dyn DiversifierClient>,
) -> Result<SampleRecord, AnnotateError> {
    let e = ctx.episode;
    let demos = client.map_or(super::DEFAULT_DEMONSTRATIONS, |c| c.demonstrations());
    let req = build_whatif_request(ctx, segment, facts, demos)?;
    let tokens = req.action_tokens.clone().expect("what-if requests carry actions");
    let clamped = encode_action_seq(&e.actions[segment.0..=segment.1], &e.bounds)?.clamped;
    let offline = PromptAnswer {
        prompt: offline_prompt(&tokens),
        answer: whatif_caption(&e.actions, segment, object.unwrap_or("object")),
    };
    let mut flags = Vec::new();
    if clamped {
        flags.push("clamped".to_string());
    }
    let (reply, template) = match client {
        None => (offline, "untemplated"),
        Some(c) => match c.complete(&req) {
            Ok(r)
                if parse_str(&r.prompt).is_ok()
                    && specials(&r.prompt) == specials(&offline.prompt)
                    && !r.answer.trim().is_empty()
                    && specials(&r.answer).is_empty() =>
            {
                (r, "diversified")
            }
            _ => {
                flags.push("offline-fallback".to_string());
                (offline, "untemplated")
            }
        },
    };
    ctx.record(
        BUILDER,
        TaskType::WhatifQa,
        template,
        reply.prompt,
        reply.answer,
        vec![ctx.asset("scene", AssetKind::Scene(segment.0.min(e.last_frame())))],
        flags,
    )
}

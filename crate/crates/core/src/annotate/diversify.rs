//! Rewriting template prompts into varied phrasings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::{ClientError, DiversifierClient};
use super::templates::TemplateId;
use super::{hex, AnnotateError};
use crate::model::{Provenance, SampleRecord, TaskType};
use crate::tokens::{lex, parse_str, Token};

pub const DEFAULT_DEMONSTRATIONS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptAnswer {
    pub prompt: String,
    pub answer: String,
}

/// One hand-written example shown to the model before the real request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: PromptAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectFact {
    pub label: String,
    /// Six loc tokens of the object's box.
    pub location: String,
    pub manipulated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFacts {
    pub instruction: String,
    pub objects: Vec<ObjectFact>,
    pub num_frames: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    /// Rephrase an existing template sample.
    Rewrite,
    /// Write a what-if question and answer from scratch.
    WhatIf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversifierRequest {
    pub kind: RequestKind,
    pub system_prompt: String,
    pub demonstrations: Vec<Demonstration>,
    pub facts: Option<EpisodeFacts>,
    pub task: TaskType,
    pub seed: u64,
    /// The sample to rewrite, for [`RequestKind::Rewrite`].
    pub original: Option<PromptAnswer>,
    /// Action chunk the what-if question must embed verbatim.
    pub action_tokens: Option<String>,
}

impl DiversifierRequest {
    /// Stable hash of the whole request, used as the replay key.
    pub fn key(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex(&Sha256::digest(&bytes))
    }

    /// The user message: everything the model needs besides the demonstrations.
    pub fn user_message(&self) -> String {
        let body = serde_json::json!({
            "task": self.task,
            "facts": self.facts,
            "original": self.original,
            "action_tokens": self.action_tokens,
        });
        serde_json::to_string(&body).expect("json value serializes")
    }
}

const REWRITE_SYSTEM: &str = "You rewrite prompts for a robot-manipulation instruction dataset. \
Rephrase the given prompt so it reads naturally and differs from the original wording. \
Copy every token written in angle brackets, such as <scene></scene> or <loc17>, exactly and in the same order. \
Keep the answer's meaning; only change its wording when it contains no angle-bracket tokens. \
Reply with one JSON object with the string fields \"prompt\" and \"answer\".";

const WHATIF_SYSTEM: &str = "You write counterfactual questions about a robot episode. \
Given the episode facts and an action chunk, ask what will happen if the robot executes the chunk, \
and answer by describing the resulting state of the gripper and objects. \
The question must contain <scene></scene> and the action tokens exactly as given; the answer must contain no angle-bracket tokens. \
Reply with one JSON object with the string fields \"prompt\" and \"answer\".";

fn rewrite_demonstrations() -> [Demonstration; 3] {
    let demo = |input: &str, prompt: &str, answer: &str| Demonstration {
        input: input.to_string(),
        output: PromptAnswer {
            prompt: prompt.to_string(),
            answer: answer.to_string(),
        },
    };
    [
        demo(
            r#"{"task":"localization","original":{"prompt":"The scene is <scene></scene>. Locate: blue mug.","answer":"<loc40><loc88><loc12><loc61><loc109><loc50>"}}"#,
            "Here is the scene <scene></scene>. Where exactly is the blue mug?",
            "<loc40><loc88><loc12><loc61><loc109><loc50>",
        ),
        demo(
            r#"{"task":"task_caption","original":{"prompt":"The initial scene is <scene></scene> and the final scene is <scene></scene>. Describe the task.","answer":"put the sponge in the sink"}}"#,
            "You see the scene before <scene></scene> and after <scene></scene>. What did the robot just do?",
            "It put the sponge in the sink.",
        ),
        demo(
            r#"{"task":"verification","original":{"prompt":"The initial scene is <scene></scene> and the current scene is <scene></scene>. Instruction: close the top drawer. Finished?","answer":"no"}}"#,
            "Starting from <scene></scene>, the robot now sees <scene></scene>. It was told to close the top drawer. Is it done yet?",
            "no",
        ),
    ]
}

fn whatif_demonstrations() -> [Demonstration; 3] {
    let demo = |input: &str, prompt: &str, answer: &str| Demonstration {
        input: input.to_string(),
        output: PromptAnswer {
            prompt: prompt.to_string(),
            answer: answer.to_string(),
        },
    };
    [
        demo(
            r#"{"task":"whatif_qa","facts":{"instruction":"pick up the banana","objects":[{"label":"banana","manipulated":true}]},"action_tokens":"<aloc120><aloc80><aloc30><arot128><arot128><arot64><gripper0>"}"#,
            "Look at <scene></scene>. Suppose the robot runs <aloc120><aloc80><aloc30><arot128><arot128><arot64><gripper0>. What happens next?",
            "The gripper closes around the banana and holds it.",
        ),
        demo(
            r#"{"task":"whatif_qa","facts":{"instruction":"open the cabinet door","objects":[{"label":"door","manipulated":true}]},"action_tokens":"<aloc200><aloc128><aloc90><arot128><arot128><arot128><gripper0><ACT_SEP><aloc170><aloc128><aloc90><arot128><arot128><arot100><gripper0>"}"#,
            "In <scene></scene>, what would change if the robot executed <aloc200><aloc128><aloc90><arot128><arot128><arot128><gripper0><ACT_SEP><aloc170><aloc128><aloc90><arot128><arot128><arot100><gripper0>?",
            "The gripper pulls back while holding the handle, so the cabinet door swings partly open.",
        ),
        demo(
            r#"{"task":"whatif_qa","facts":{"instruction":"place the cup on the plate","objects":[{"label":"cup","manipulated":true}]},"action_tokens":"<aloc90><aloc150><aloc40><arot128><arot128><arot128><gripper1>"}"#,
            "Given <scene></scene>, what is the outcome of <aloc90><aloc150><aloc40><arot128><arot128><arot128><gripper1>?",
            "The gripper opens and lets go of the cup, which stays on the plate.",
        ),
    ]
}

/// `count` of the three built-in demonstrations, starting at a seeded offset.
pub fn select_demonstrations(kind: RequestKind, count: usize, seed: u64) -> Result<Vec<Demonstration>, AnnotateError> {
    if !(2..=3).contains(&count) {
        return Err(AnnotateError::DemonstrationCount(count));
    }
    let pool = match kind {
        RequestKind::Rewrite => rewrite_demonstrations(),
        RequestKind::WhatIf => whatif_demonstrations(),
    };
    let start = (seed % 3) as usize;
    Ok((0..count).map(|i| pool[(start + i) % 3].clone()).collect())
}

pub fn system_prompt(kind: RequestKind) -> &'static str {
    match kind {
        RequestKind::Rewrite => REWRITE_SYSTEM,
        RequestKind::WhatIf => WHATIF_SYSTEM,
    }
}

/// The request asking a client to rephrase `sample`.
pub fn rewrite_request(sample: &SampleRecord, seed: u64, demonstrations: usize) -> Result<DiversifierRequest, AnnotateError> {
    Ok(DiversifierRequest {
        kind: RequestKind::Rewrite,
        system_prompt: REWRITE_SYSTEM.to_string(),
        demonstrations: select_demonstrations(RequestKind::Rewrite, demonstrations, seed)?,
        facts: None,
        task: sample.task_type,
        seed,
        original: Some(PromptAnswer {
            prompt: sample.prompt.clone(),
            answer: sample.answer.clone(),
        }),
        action_tokens: None,
    })
}

/// Vocabulary tokens of `s` in order, as text.
fn special_sequence(s: &str) -> Vec<String> {
    lex(s)
        .iter()
        .filter_map(Token::special)
        .map(|sp| sp.text())
        .collect()
}

/// A reply is usable when both halves parse, are non-empty, and carry the
/// same vocabulary tokens in the same order as the original.
pub fn reply_conforms(original: &PromptAnswer, reply: &PromptAnswer) -> bool {
    let same = |a: &str, b: &str| special_sequence(a) == special_sequence(b);
    !reply.prompt.trim().is_empty()
        && !reply.answer.trim().is_empty()
        && parse_str(&reply.prompt).is_ok()
        && parse_str(&reply.answer).is_ok()
        && same(&original.prompt, &reply.prompt)
        && same(&original.answer, &reply.answer)
}

/// Rewrites a template sample through `client`. On any failure the original
/// is returned with the flag `undiversified`. Samples that did not come from a
/// template are returned unchanged.
pub fn diversify(sample: &SampleRecord, client: &dyn DiversifierClient, seed: u64) -> SampleRecord {
    if TemplateId::parse(&sample.provenance.template).is_none() {
        return sample.clone();
    }
    let fail = || {
        let mut s = sample.clone();
        if !s.flags.iter().any(|f| f == "undiversified") {
            s.flags.push("undiversified".to_string());
        }
        s
    };
    let Ok(req) = rewrite_request(sample, seed, client.demonstrations()) else {
        return fail();
    };
    let original = req.original.clone().expect("rewrite requests carry the original");
    match client.complete(&req) {
        Ok(reply) if reply_conforms(&original, &reply) => SampleRecord {
            prompt: reply.prompt,
            answer: reply.answer,
            provenance: Provenance {
                template: "diversified".to_string(),
                seed,
            },
            ..sample.clone()
        },
        _ => fail(),
    }
}

/// Phrase substitutions of the offline paraphraser. Longer phrases come first
/// so that they win over their own substrings.
const PHRASES: &[(&str, &[&str])] = &[
    ("What will happen if the robot executes", &["What happens if the robot performs", "Predict the outcome if the robot runs", "What would result if the robot carried out"]),
    ("and the current scene is", &["and the scene now is", "and the present scene is", "while the current view is"]),
    ("and the final scene is", &["and the end scene is", "and the resulting scene is", "and afterwards the scene is"]),
    ("Generate the goal point cloud.", &["Predict the goal point cloud.", "Show the final point cloud.", "Imagine the point cloud after the task."]),
    ("Generate the goal image.", &["Predict the goal image.", "Show the final image.", "Imagine the image after the task."]),
    ("The initial scene is", &["The starting scene is", "Initially, the scene is", "At the start, the scene is"]),
    ("What is located at", &["What object is at", "Which object is at", "Which object occupies"]),
    ("Predict dense actions.", &["Output every action step.", "List the dense actions.", "Give all action steps."]),
    ("Predict key actions.", &["Output the key actions.", "List the key actions.", "Give only the key action steps."]),
    ("Describe the task.", &["What task was performed?", "Summarize what the robot did.", "What did the robot do?"]),
    ("The scene is", &["Here is the scene", "Consider the scene", "Given the scene"]),
    ("Instruction:", &["Task:", "Command:", "Goal:"]),
    ("Finished?", &["Is the task complete?", "Has the robot finished?", "Is it done?"]),
    ("Locate:", &["Find:", "Give the box of:", "Where is this object:"]),
];

/// Seeded synonym substitution over the text between vocabulary tokens.
pub fn paraphrase_text(s: &str, seed: u64) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut changed = false;
    let mut out = String::with_capacity(s.len() + 16);
    for tok in lex(s) {
        let text = match tok {
            Token::Special(sp) => {
                out.push_str(&sp.text());
                continue;
            }
            Token::Text(t) => t,
        };
        let mut rest = text.as_str();
        while !rest.is_empty() {
            match PHRASES.iter().find(|(p, _)| rest.starts_with(p)) {
                Some((phrase, alternatives)) => {
                    let pick = alternatives[rng.random_range(0..alternatives.len())];
                    out.push_str(pick);
                    rest = &rest[phrase.len()..];
                    changed = true;
                }
                None => {
                    let ch = rest.chars().next().expect("non-empty");
                    out.push(ch);
                    rest = &rest[ch.len_utf8()..];
                }
            }
        }
    }
    changed.then_some(out)
}

/// Offline stand-in for an external rewriting model: phrase-level synonyms on
/// the prompt, answer kept as is.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineParaphraser;

impl DiversifierClient for OfflineParaphraser {
    fn complete(&self, req: &DiversifierRequest) -> Result<PromptAnswer, ClientError> {
        let original = match (&req.kind, &req.original) {
            (RequestKind::Rewrite, Some(o)) => o,
            _ => return Err(ClientError::Unsupported("offline paraphraser only rewrites".into())),
        };
        let prompt = paraphrase_text(&original.prompt, req.seed)
            .ok_or_else(|| ClientError::NonConforming("no phrase to paraphrase".into()))?;
        Ok(PromptAnswer {
            prompt,
            answer: original.answer.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::builders::tests::{ctx, episode};
    use crate::annotate::*;
    use crate::model::Aabb3;
    use crate::tokens::{Modality, Special};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn all_template_samples() -> Vec<SampleRecord> {
        let e = episode(6, "pick up the red cup", &["cup", "bowl"]);
        let c = ctx(&e);
        let b = Aabb3::new([0.1, 0.2, 0.0], [0.3, 0.4, 0.2]);
        vec![
            build_localization_sample(&c, 0, Some(&b)).unwrap(),
            build_dense_caption_sample(&c, 1, Some(&b)).unwrap(),
            build_task_caption_sample(&c).unwrap(),
            build_verification_sample(&c, 2, 1).unwrap(),
            build_goal_generation_sample(&c, Modality::Image, Some(ManipulatedObject { label: "cup", bbox: &b })).unwrap(),
            build_goal_generation_sample(&c, Modality::Pcd, None).unwrap(),
            build_action_prediction_sample(&c, ActionMode::Dense, 1e-3).unwrap(),
            build_action_prediction_sample(&c, ActionMode::Key, 1e-3).unwrap(),
        ]
    }

    fn multiset(s: &str) -> HashMap<Special, usize> {
        let mut m = HashMap::new();
        for t in lex(s).iter().filter_map(Token::special) {
            *m.entry(t).or_default() += 1;
        }
        m
    }

    #[test]
    fn offline_localization_paraphrase() {
        let e = episode(3, "pick up the red cup", &["cup"]);
        let b = Aabb3::new([0.1; 3], [0.3; 3]);
        let s = build_localization_sample(&ctx(&e), 0, Some(&b)).unwrap();
        let d = diversify(&s, &OfflineParaphraser, 11);
        assert_ne!(d.prompt, s.prompt);
        assert!(d.prompt.contains("red cup"), "{}", d.prompt);
        assert!(d.prompt.contains("<scene></scene>"));
        assert_eq!(d.answer, s.answer);
        assert_eq!(d.provenance.template, "diversified");
        assert_eq!(d, diversify(&s, &OfflineParaphraser, 11));
        assert!(d.flags.is_empty());
    }

    #[test]
    fn every_template_paraphrases() {
        for s in all_template_samples() {
            let d = diversify(&s, &OfflineParaphraser, 3);
            assert_eq!(d.provenance.template, "diversified", "{}", s.prompt);
            assert_ne!(d.prompt, s.prompt);
        }
    }

    #[test]
    fn untemplated_samples_pass_through() {
        let mut s = all_template_samples().remove(0);
        s.provenance.template = "untemplated".into();
        assert_eq!(diversify(&s, &OfflineParaphraser, 1), s);
    }

    struct Fixed(PromptAnswer);
    impl DiversifierClient for Fixed {
        fn complete(&self, _: &DiversifierRequest) -> Result<PromptAnswer, ClientError> {
            Ok(self.0.clone())
        }
    }

    struct Failing;
    impl DiversifierClient for Failing {
        fn complete(&self, _: &DiversifierRequest) -> Result<PromptAnswer, ClientError> {
            Err(ClientError::Timeout)
        }
    }

    #[test]
    fn non_conforming_replies_are_rejected() {
        let s = all_template_samples().remove(0);
        let dropped_token = Fixed(PromptAnswer {
            prompt: "Where is the red cup?".into(),
            answer: s.answer.clone(),
        });
        let d = diversify(&s, &dropped_token, 1);
        assert_eq!(d.prompt, s.prompt);
        assert_eq!(d.flags, vec!["undiversified"]);
        let d = diversify(&s, &Failing, 1);
        assert_eq!(d.flags, vec!["undiversified"]);
        assert_eq!(d.provenance, s.provenance);

        let good = Fixed(PromptAnswer {
            prompt: "Look at <scene></scene> and find the red cup.".into(),
            answer: s.answer.clone(),
        });
        let d = diversify(&s, &good, 1);
        assert_eq!(d.prompt, "Look at <scene></scene> and find the red cup.");
        assert!(d.flags.is_empty());
    }

    #[test]
    fn demonstration_counts() {
        for n in [2, 3] {
            let s = all_template_samples().remove(0);
            let req = rewrite_request(&s, 4, n).unwrap();
            assert_eq!(req.demonstrations.len(), n);
            for d in &req.demonstrations {
                assert!(parse_str(&d.output.prompt).is_ok());
            }
        }
        assert_eq!(
            select_demonstrations(RequestKind::Rewrite, 1, 0).unwrap_err(),
            AnnotateError::DemonstrationCount(1)
        );
        assert!(select_demonstrations(RequestKind::WhatIf, 4, 0).is_err());
    }

    #[test]
    fn request_key_is_stable() {
        let s = all_template_samples().remove(0);
        let a = rewrite_request(&s, 4, 2).unwrap();
        assert_eq!(a.key(), rewrite_request(&s, 4, 2).unwrap().key());
        assert_ne!(a.key(), rewrite_request(&s, 5, 2).unwrap().key());
        assert_eq!(a.key().len(), 64);
    }

    proptest! {
        #[test]
        fn vocabulary_tokens_preserved(idx in 0usize..8, seed in any::<u64>()) {
            let s = &all_template_samples()[idx];
            let d = diversify(s, &OfflineParaphraser, seed);
            prop_assert_eq!(multiset(&d.prompt), multiset(&s.prompt));
            prop_assert_eq!(multiset(&d.answer), multiset(&s.answer));
            prop_assert_eq!(special_sequence(&d.prompt), special_sequence(&s.prompt));
        }

        #[test]
        fn paraphrase_never_touches_tokens(text in "[a-zA-Z :.?]{0,30}", bin in 0u8..=255, seed in any::<u64>()) {
            let s = format!("The scene is <scene></scene>. {text}<loc{bin}> Locate: x.");
            let p = paraphrase_text(&s, seed).unwrap();
            prop_assert_eq!(special_sequence(&p), special_sequence(&s));
        }
    }
}

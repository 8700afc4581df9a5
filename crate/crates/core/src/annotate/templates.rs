//! The six question templates and slot filling.

use serde::{Deserialize, Serialize};

use super::AnnotateError;
use crate::tokens::contains_vocab_token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Verification,
    TaskCaption,
    Localization,
    DenseCaption,
    GoalGeneration,
    ActionPrediction,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::Verification,
        TemplateId::TaskCaption,
        TemplateId::Localization,
        TemplateId::DenseCaption,
        TemplateId::GoalGeneration,
        TemplateId::ActionPrediction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Verification => "verification",
            TemplateId::TaskCaption => "task_caption",
            TemplateId::Localization => "localization",
            TemplateId::DenseCaption => "dense_caption",
            TemplateId::GoalGeneration => "goal_generation",
            TemplateId::ActionPrediction => "action_prediction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn template(self) -> &'static Template {
        TEMPLATES.iter().find(|t| t.id == self).expect("every id has a template")
    }
}

/// A question template. Patterns contain the slots `INSTRUCTION`, `OBJECT`,
/// `LOCATION` and `ACTION`, plus the variant markers `[yes/no]`,
/// `{key/dense}` and `image (or point cloud)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: TemplateId,
    pub prompt_pattern: &'static str,
    pub answer_pattern: &'static str,
}

pub const TEMPLATES: [Template; 6] = [
    Template {
        id: TemplateId::Verification,
        prompt_pattern: "The initial scene is <scene></scene> and the current scene is <scene></scene>. Instruction: INSTRUCTION. Finished?",
        answer_pattern: "[yes/no]",
    },
    Template {
        id: TemplateId::TaskCaption,
        prompt_pattern: "The initial scene is <scene></scene> and the final scene is <scene></scene>. Describe the task.",
        answer_pattern: "INSTRUCTION.",
    },
    Template {
        id: TemplateId::Localization,
        prompt_pattern: "The scene is <scene></scene>. Locate: OBJECT.",
        answer_pattern: "LOCATION",
    },
    Template {
        id: TemplateId::DenseCaption,
        prompt_pattern: "The scene is <scene></scene>. What is located at LOCATION?",
        answer_pattern: "OBJECT",
    },
    Template {
        id: TemplateId::GoalGeneration,
        prompt_pattern: "The initial scene is <scene></scene>. Instruction: INSTRUCTION. Generate the goal image (or point cloud).",
        answer_pattern: "<image> (<pcd>) INSTRUCTION </image> (</pcd>)",
    },
    Template {
        id: TemplateId::ActionPrediction,
        prompt_pattern: "<scene></scene>. INSTRUCTION. Predict {key/dense} actions.",
        answer_pattern: "ACTION.",
    },
];

/// Values for the template slots. Unset slots may not appear in the pattern.
#[derive(Debug, Clone, Default)]
pub struct Slots<'a> {
    pub instruction: Option<&'a str>,
    pub object: Option<&'a str>,
    /// Rendered six-token box.
    pub location: Option<&'a str>,
    /// Rendered action chunk.
    pub action: Option<&'a str>,
}

const SLOT_NAMES: [&str; 4] = ["INSTRUCTION", "OBJECT", "LOCATION", "ACTION"];

/// Substitutes slots in one left-to-right pass, so filled text is never
/// re-scanned. Free-text fills (instruction, object) must not contain
/// vocabulary tokens.
pub fn fill(pattern: &str, slots: &Slots<'_>) -> Result<String, AnnotateError> {
    for text in [slots.instruction, slots.object].into_iter().flatten() {
        if contains_vocab_token(text) {
            return Err(AnnotateError::ReservedText(text.to_string()));
        }
    }
    let mut out = String::with_capacity(pattern.len() + 64);
    let mut rest = pattern;
    while !rest.is_empty() {
        let hit = SLOT_NAMES.iter().find(|name| rest.starts_with(**name));
        match hit {
            Some(&name) => {
                let value = match name {
                    "INSTRUCTION" => slots.instruction,
                    "OBJECT" => slots.object,
                    "LOCATION" => slots.location,
                    _ => slots.action,
                };
                out.push_str(value.ok_or(AnnotateError::UnfilledSlot(name))?);
                rest = &rest[name.len()..];
            }
            None => {
                let ch = rest.chars().next().expect("non-empty");
                out.push(ch);
                rest = &rest[ch.len_utf8()..];
            }
        }
    }
    Ok(out)
}

/// Instruction text as it appears inside a prompt sentence: trimmed, with one
/// trailing period dropped so the template's own period is not doubled.
pub fn instruction_clause(instruction: &str) -> &str {
    let t = instruction.trim();
    t.strip_suffix('.').unwrap_or(t)
}

impl Template {
    /// The template as one line: prompt, then `Answer:`, then the answer.
    pub fn display_line(&self) -> String {
        format!("{} Answer: {}", self.prompt_pattern, self.answer_pattern)
    }

    /// Prompt pattern with the template's variant marker resolved.
    pub fn prompt_variant(&self, variant: &str) -> String {
        match self.id {
            TemplateId::GoalGeneration => self.prompt_pattern.replace("image (or point cloud)", variant),
            TemplateId::ActionPrediction => self.prompt_pattern.replace("{key/dense}", variant),
            _ => self.prompt_pattern.to_string(),
        }
    }
}

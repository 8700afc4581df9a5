//! Pass-through of existing question/answer pairs as embodied-QA samples.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::model::{is_valid_id, AssetRef, Provenance, SampleRecord, TaskType};
use crate::tokens::parse_str;

/// A file to copy into the dataset for an ingested sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetCopy {
    /// Destination relative to the dataset root.
    pub dest: String,
    pub source: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QaIngest {
    pub samples: Vec<SampleRecord>,
    pub copies: Vec<AssetCopy>,
    /// One reason per rejected record.
    pub skipped: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
struct QaRecord {
    episode_id: Option<String>,
    dataset: Option<String>,
    question: Option<String>,
    answer: Option<String>,
    scene: Option<OneOrMany>,
}

/// Reads JSONL records `{episode_id?, dataset?, question, answer, scene}`
/// where `scene` is one path or a list, relative to `base_dir`.
pub fn ingest_external_qa(jsonl: &str, base_dir: &Path, default_dataset: &str) -> QaIngest {
    let mut out = QaIngest::default();
    for (i, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match ingest_one(i, line, base_dir, default_dataset) {
            Ok((sample, copies)) => {
                out.samples.push(sample);
                out.copies.extend(copies);
            }
            Err(reason) => out.skipped.push(format!("qa record {i}: {reason}")),
        }
    }
    out
}

fn ingest_one(
    index: usize,
    line: &str,
    base_dir: &Path,
    default_dataset: &str,
) -> Result<(SampleRecord, Vec<AssetCopy>), String> {
    let rec: QaRecord = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let nonempty = |v: Option<String>, field: &str| match v {
        Some(s) if !s.trim().is_empty() => Ok(s),
        _ => Err(format!("missing {field}")),
    };
    let question = nonempty(rec.question, "question")?;
    let answer = nonempty(rec.answer, "answer")?;
    let scenes = match rec.scene {
        Some(OneOrMany::One(s)) => vec![s],
        Some(OneOrMany::Many(v)) => v,
        None => Vec::new(),
    };
    if scenes.is_empty() || scenes.iter().any(|s| s.trim().is_empty()) {
        return Err("missing scene".into());
    }
    let episode_id = match rec.episode_id {
        Some(id) if is_valid_id(&id) => id,
        Some(id) => return Err(format!("invalid episode_id {id:?}")),
        None => format!("qa{index:05}"),
    };
    let prompt = if question.contains("<scene>") {
        question
    } else {
        format!("{} {question}", "<scene></scene>".repeat(scenes.len()))
    };
    parse_str(&prompt).map_err(|e| format!("question: {e}"))?;
    parse_str(&answer).map_err(|e| format!("answer: {e}"))?;

    let mut assets = Vec::new();
    let mut copies = Vec::new();
    for (j, s) in scenes.iter().enumerate() {
        let source = base_dir.join(s);
        let ext = source
            .extension()
            .and_then(|e| e.to_str())
            .filter(|e| e.bytes().all(|b| b.is_ascii_alphanumeric()))
            .unwrap_or("bin");
        let dest = format!("assets/{episode_id}/qa_{index:05}_{j}.{ext}");
        assets.push(AssetRef {
            role: "scene".into(),
            path: dest.clone(),
        });
        copies.push(AssetCopy { dest, source });
    }
    let sample = SampleRecord {
        sample_id: format!("{episode_id}/embodied_qa/{index:05}"),
        task_type: TaskType::EmbodiedQa,
        dataset: rec.dataset.unwrap_or_else(|| default_dataset.to_string()),
        prompt,
        answer,
        assets,
        episode_id,
        provenance: Provenance {
            template: "untemplated".into(),
            seed: 0,
        },
        flags: Vec::new(),
    };
    Ok((sample, copies))
}

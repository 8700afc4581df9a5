//! JSONL shards, the dataset report, and the read-side checks on an export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::run::{EpisodeReport, EpisodeStatus};
use super::{format_err, io_err, PipelineError};
use crate::config::Config;
use crate::model::{SampleRecord, TaskType};
use crate::tokens::{parse_str, vocab_json, SeqNode};

pub const REPORT_FILE: &str = "report.json";
pub const VOCAB_FILE: &str = "vocab.json";

pub fn shard_name(k: usize) -> String {
    format!("samples-{k}.jsonl")
}

fn shard_index(name: &str) -> Option<usize> {
    let k = name.strip_prefix("samples-")?.strip_suffix(".jsonl")?;
    if k.is_empty() || !k.bytes().all(|b| b.is_ascii_digit()) || (k.len() > 1 && k.starts_with('0')) {
        return None;
    }
    k.parse().ok()
}

/// Shard files in `dir`, in shard order.
pub fn list_shards(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut shards = Vec::new();
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if let Some(k) = entry.file_name().to_str().and_then(shard_index) {
            shards.push((k, entry.path()));
        }
    }
    shards.sort();
    Ok(shards.into_iter().map(|(_, p)| p).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub lines: usize,
}

/// Sorts `records` by (episode id, sample id) and writes them as shards of at
/// most `shard_size` lines, replacing any shards already in `out_dir`.
/// Also writes the vocabulary file.
pub fn export_samples(
    records: &mut [SampleRecord],
    out_dir: &Path,
    shard_size: usize,
) -> Result<Vec<ShardInfo>, PipelineError> {
    if shard_size == 0 {
        return Err(format_err(out_dir, "shard_size must be positive"));
    }
    records.sort_by(|a, b| (&a.episode_id, &a.sample_id).cmp(&(&b.episode_id, &b.sample_id)));
    let mut ids = BTreeSet::new();
    for r in records.iter() {
        if !ids.insert(r.sample_id.as_str()) {
            return Err(PipelineError::DuplicateSample(r.sample_id.clone()));
        }
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for old in list_shards(out_dir)? {
        fs::remove_file(&old).map_err(io_err(&old))?;
    }
    let mut shards = Vec::new();
    for (k, chunk) in records.chunks(shard_size).enumerate() {
        let mut text = String::new();
        for r in chunk {
            text.push_str(&serde_json::to_string(r).expect("sample records serialize"));
            text.push('\n');
        }
        let name = shard_name(k);
        let path = out_dir.join(&name);
        fs::write(&path, text).map_err(io_err(&path))?;
        shards.push(ShardInfo {
            file: name,
            lines: chunk.len(),
        });
    }
    let vocab = out_dir.join(VOCAB_FILE);
    fs::write(&vocab, vocab_json()).map_err(io_err(&vocab))?;
    Ok(shards)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSummary {
    pub accepted: usize,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub aligned_episodes: usize,
    pub unaligned_episodes: usize,
    pub min_coefficient: Option<f64>,
    pub max_coefficient: Option<f64>,
}

/// Sample counts grouped by task and by source dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    /// Always lists all eight tasks.
    pub per_task: BTreeMap<String, usize>,
    pub per_dataset: BTreeMap<String, usize>,
}

impl Stats {
    pub fn empty() -> Self {
        Stats {
            total: 0,
            per_task: TaskType::ALL.iter().map(|t| (t.as_str().to_string(), 0)).collect(),
            per_dataset: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, task: &str, dataset: &str) {
        self.total += 1;
        *self.per_task.entry(task.to_string()).or_default() += 1;
        *self.per_dataset.entry(dataset.to_string()).or_default() += 1;
    }

    pub fn from_samples(samples: &[SampleRecord]) -> Self {
        let mut s = Stats::empty();
        for r in samples {
            s.add(r.task_type.as_str(), &r.dataset);
        }
        s
    }

    /// Plain-text table, one `name<TAB>count` row per line.
    pub fn table(&self) -> String {
        let mut out = String::from("task\tcount\n");
        for (t, n) in &self.per_task {
            out.push_str(&format!("{t}\t{n}\n"));
        }
        out.push_str("\ndataset\tcount\n");
        for (d, n) in &self.per_dataset {
            out.push_str(&format!("{d}\t{n}\n"));
        }
        out.push_str(&format!("\ntotal\t{}\n", self.total));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    /// The only field that varies between identical runs.
    pub generated_at_unix: u64,
    pub config: Value,
    pub counts: Stats,
    pub flags: BTreeMap<String, usize>,
    pub episodes_produced: usize,
    pub episodes_skipped: usize,
    pub alignment: AlignmentSummary,
    pub shards: Vec<ShardInfo>,
    pub episodes: Vec<EpisodeReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa: Option<QaSummary>,
}

impl DatasetReport {
    pub fn build(
        cfg: &Config,
        samples: &[SampleRecord],
        mut episodes: Vec<EpisodeReport>,
        shards: Vec<ShardInfo>,
        qa: Option<QaSummary>,
    ) -> Self {
        episodes.sort_by(|a, b| (&a.episode_id, &a.source).cmp(&(&b.episode_id, &b.source)));
        let mut flags = BTreeMap::new();
        for s in samples {
            for f in &s.flags {
                *flags.entry(f.clone()).or_default() += 1;
            }
        }
        let mut alignment = AlignmentSummary::default();
        for e in episodes.iter().filter(|e| e.status == EpisodeStatus::Produced) {
            match &e.alignment {
                Some(c) => {
                    alignment.aligned_episodes += 1;
                    for &v in c {
                        alignment.min_coefficient = Some(alignment.min_coefficient.map_or(v, |m| m.min(v)));
                        alignment.max_coefficient = Some(alignment.max_coefficient.map_or(v, |m| m.max(v)));
                    }
                }
                None => alignment.unaligned_episodes += 1,
            }
        }
        let produced = episodes.iter().filter(|e| e.status == EpisodeStatus::Produced).count();
        DatasetReport {
            generated_at_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            config: cfg.to_json(),
            counts: Stats::from_samples(samples),
            flags,
            episodes_produced: produced,
            episodes_skipped: episodes.len() - produced,
            alignment,
            shards,
            episodes,
            qa,
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), PipelineError> {
        let path = out_dir.join(REPORT_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn read(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| format_err(&path, e.to_string()))
    }
}

/// One record read back from a shard, with its location.
#[derive(Debug, Clone)]
pub struct ShardLine {
    pub shard: String,
    /// 1-based.
    pub line: usize,
    pub record: Result<SampleRecord, String>,
}

pub fn read_shards(dir: &Path) -> Result<Vec<ShardLine>, PipelineError> {
    let mut out = Vec::new();
    for path in list_shards(dir)? {
        let shard = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        for (i, line) in text.lines().enumerate() {
            out.push(ShardLine {
                shard: shard.clone(),
                line: i + 1,
                record: serde_json::from_str(line).map_err(|e| e.to_string()),
            });
        }
    }
    Ok(out)
}

/// Outcome of checking an exported dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub counts: Stats,
    pub shards: usize,
    /// `shard:line: problem`, or a dataset-level problem.
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn is_safe_relative(path: &str) -> bool {
    let p = Path::new(path);
    !path.is_empty() && p.is_relative() && p.components().all(|c| matches!(c, std::path::Component::Normal(_)))
}

/// Shape a task's parsed prompt/answer must have.
fn shape_problem(task: TaskType, prompt: &[SeqNode], answer: &[SeqNode]) -> Option<String> {
    let scenes = prompt.iter().filter(|n| matches!(n, SeqNode::Scene)).count();
    let ok = match task {
        TaskType::Localization => scenes == 1 && matches!(answer, [SeqNode::Location(_)]),
        TaskType::DenseCaption => scenes == 1 && prompt.iter().any(|n| matches!(n, SeqNode::Location(_))),
        TaskType::Verification => {
            scenes == 2 && matches!(answer, [SeqNode::Text(t)] if t == "yes" || t == "no")
        }
        TaskType::TaskCaption => scenes == 2 && matches!(answer, [SeqNode::Text(_)]),
        TaskType::GoalGeneration => scenes == 1 && matches!(answer, [SeqNode::Goal { .. }]),
        TaskType::ActionPrediction => scenes == 1 && matches!(answer, [SeqNode::Actions(_)]),
        TaskType::WhatifQa => scenes == 1 && prompt.iter().any(|n| matches!(n, SeqNode::Actions(_))),
        TaskType::EmbodiedQa => scenes >= 1,
    };
    (!ok).then(|| format!("{} sample has the wrong structure", task.as_str()))
}

/// Re-parses every sample, checks that assets exist and that the counts
/// match `report.json`. Never fails on dataset content; problems are listed
/// as violations.
pub fn validate_dataset(dir: &Path) -> Result<ValidationReport, PipelineError> {
    let lines = read_shards(dir)?;
    let shards = list_shards(dir)?;
    let mut violations = Vec::new();
    let mut counts = Stats::empty();
    let mut ids = BTreeSet::new();
    let mut checked_assets = BTreeMap::new();
    for l in &lines {
        let at = format!("{}:{}", l.shard, l.line);
        let r = match &l.record {
            Ok(r) => r,
            Err(e) => {
                violations.push(format!("{at}: invalid record: {e}"));
                continue;
            }
        };
        counts.add(r.task_type.as_str(), &r.dataset);
        if !ids.insert(r.sample_id.clone()) {
            violations.push(format!("{at}: duplicate sample id {}", r.sample_id));
        }
        let prompt = parse_str(&r.prompt).map_err(|e| violations.push(format!("{at}: prompt grammar: {e}")));
        let answer = parse_str(&r.answer).map_err(|e| violations.push(format!("{at}: answer grammar: {e}")));
        if let (Ok(p), Ok(a)) = (prompt, answer) {
            if let Some(problem) = shape_problem(r.task_type, &p, &a) {
                violations.push(format!("{at}: {problem}"));
            }
        }
        for a in &r.assets {
            let exists = *checked_assets
                .entry(a.path.clone())
                .or_insert_with(|| is_safe_relative(&a.path) && dir.join(&a.path).is_file());
            if !exists {
                violations.push(format!("{at}: missing asset {}", a.path));
            }
        }
    }

    match DatasetReport::read(dir) {
        Ok(report) => {
            if report.counts != counts {
                violations.push(format!(
                    "{REPORT_FILE}: counts disagree with shards (report total {}, shards {})",
                    report.counts.total, counts.total
                ));
            }
            for e in &report.episodes {
                if e.status == EpisodeStatus::Skipped && e.notes.is_empty() {
                    violations.push(format!("{REPORT_FILE}: skipped episode {} has no reason", e.episode_id));
                }
            }
        }
        Err(err) => violations.push(format!("{REPORT_FILE}: {err}")),
    }
    Ok(ValidationReport {
        counts,
        shards: shards.len(),
        violations,
    })
}

/// Counts the samples in an exported dataset. Unreadable lines are skipped;
/// a directory without shards gives an all-zero table.
pub fn stats(dir: &Path) -> Result<Stats, PipelineError> {
    let mut s = Stats::empty();
    for l in read_shards(dir)? {
        if let Ok(r) = l.record {
            s.add(r.task_type.as_str(), &r.dataset);
        }
    }
    Ok(s)
}

/// Re-shards an exported dataset into `out_dir` with `cfg.shard_size`,
/// copying the referenced assets when the directories differ.
pub fn reexport_dataset(in_dir: &Path, out_dir: &Path, cfg: &Config) -> Result<DatasetReport, PipelineError> {
    let mut samples = Vec::new();
    for l in read_shards(in_dir)? {
        let r = l.record.map_err(|e| format_err(&in_dir.join(&l.shard), format!("line {}: {e}", l.line)))?;
        samples.push(r);
    }
    let old = DatasetReport::read(in_dir).ok();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let same = match (in_dir.canonicalize(), out_dir.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if !same {
        let paths: BTreeSet<&str> = samples.iter().flat_map(|s| s.assets.iter().map(|a| a.path.as_str())).collect();
        for p in paths {
            if !is_safe_relative(p) {
                return Err(format_err(in_dir, format!("asset path {p} escapes the dataset")));
            }
            let (src, dst) = (in_dir.join(p), out_dir.join(p));
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::copy(&src, &dst).map_err(io_err(&src))?;
        }
    }
    let shards = export_samples(&mut samples, out_dir, cfg.shard_size)?;
    let (episodes, qa) = old.map_or((Vec::new(), None), |r| (r.episodes, r.qa));
    let report = DatasetReport::build(cfg, &samples, episodes, shards, qa);
    report.write(out_dir)?;
    Ok(report)
}

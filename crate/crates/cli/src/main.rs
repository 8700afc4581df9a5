//! `embforge`: build, check and inspect 3D instruction-tuning datasets.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use embforge_core::config::Config;
use embforge_core::pipeline::{
    load_episode, reexport_dataset, run_dataset, stats, validate_dataset, EpisodeStatus, RunInputs,
};
use embforge_core::tokens::{
    decode_action_seq, decode_bbox, encode_action_seq, encode_bbox, join_specials, lex, parse_str, vocab_json,
    Special, Token,
};
use embforge_core::{Aabb3, ActionStep, AxisRange, WorkspaceBounds};

const OK: u8 = 0;
const ITEM_FAILURES: u8 = 1;
const USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "embforge", version, about = "Build 3D embodied instruction-tuning datasets from robot episodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate episode manifests without annotating them.
    Ingest {
        /// Manifest files, or directories whose top-level `*.json` files are manifests.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Annotate episodes and write a dataset.
    Annotate {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Output dataset directory.
        #[arg(long, short)]
        out: PathBuf,
        /// JSONL file of existing question/answer pairs to include.
        #[arg(long)]
        qa: Option<PathBuf>,
        /// Dataset tag for QA records that do not carry one.
        #[arg(long, default_value = "external_qa")]
        qa_dataset: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Re-shard an annotated dataset into another directory (or in place).
    Export {
        /// Dataset produced by `annotate`.
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Check every sample of a dataset; exits 1 when violations are found.
    Validate { dir: PathBuf },
    /// Sample counts per task and per source dataset.
    Stats {
        dir: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Encode or decode interaction tokens, for debugging.
    Tokens {
        #[command(subcommand)]
        op: TokenOp,
        #[command(flatten)]
        bounds: BoundsArgs,
    },
    /// Print the interaction-token vocabulary as JSON.
    Vocab {
        /// Write to this file instead of standard output.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum TokenOp {
    /// "x y z roll pitch yaw gripper" per line → action tokens.
    EncodeAction,
    /// Action tokens → one "x y z roll pitch yaw gripper" line per step.
    DecodeAction,
    /// "xmin ymin zmin xmax ymax zmax" → six location tokens.
    EncodeBox,
    /// Six location tokens → "xmin ymin zmin xmax ymax zmax".
    DecodeBox,
    /// Token text → parsed structure as JSON.
    Parse,
}

#[derive(Args, Debug, Clone)]
struct BoundsArgs {
    /// Action ranges as "lo,hi;lo,hi;lo,hi" (default 0,1 on every axis).
    #[arg(long, global = true)]
    action_bounds: Option<String>,
    /// Location ranges as "lo,hi;lo,hi;lo,hi" (default 0,1 on every axis).
    #[arg(long, global = true)]
    location_bounds: Option<String>,
    /// Input text; one item per line is read from standard input when omitted.
    #[arg(global = true, allow_hyphen_values = true)]
    input: Option<String>,
}

/// Every configuration key as a flag; flags override the `--config` file.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// JSON config file with flat dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// `workers` (0 uses every core)
    #[arg(long)]
    workers: Option<usize>,
    /// `tau_flow`, flow magnitude in pixels above which a pixel moves
    #[arg(long)]
    tau_flow: Option<f64>,
    /// `trim_q`, quantile trimmed from each side of a box
    #[arg(long)]
    trim_q: Option<f64>,
    /// `verification.k`
    #[arg(long)]
    verification_k: Option<usize>,
    /// `verification.negatives`
    #[arg(long)]
    verification_negatives: Option<usize>,
    /// `keyframe.speed_eps`
    #[arg(long)]
    keyframe_speed_eps: Option<f64>,
    /// `shard_size`
    #[arg(long)]
    shard_size: Option<usize>,
    /// `pointcloud.format`: bin_xyzrgb or ply
    #[arg(long)]
    pointcloud_format: Option<String>,
    /// `tasks.default`: "all", "none" or a comma-separated task list
    #[arg(long)]
    tasks: Option<String>,
    /// `tasks.<dataset>` as DATASET=TASKS; repeatable
    #[arg(long = "dataset-tasks", value_name = "DATASET=TASKS")]
    dataset_tasks: Vec<String>,
    /// `diversifier.mode`: off, offline, replay or endpoint
    #[arg(long)]
    diversifier_mode: Option<String>,
    /// `diversifier.endpoint`, chat-completions URL
    #[arg(long)]
    diversifier_endpoint: Option<String>,
    /// `diversifier.model`
    #[arg(long)]
    diversifier_model: Option<String>,
    /// `diversifier.replay_dir`
    #[arg(long)]
    diversifier_replay_dir: Option<PathBuf>,
    /// `diversifier.timeout_ms`
    #[arg(long)]
    diversifier_timeout_ms: Option<u64>,
    /// `diversifier.max_in_flight`
    #[arg(long)]
    diversifier_max_in_flight: Option<usize>,
    /// `diversifier.demonstrations` (2 or 3)
    #[arg(long)]
    diversifier_demonstrations: Option<usize>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Vec<(String, Value)>, String> {
        let mut out: Vec<(String, Value)> = Vec::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(Value::from));
        put("workers", self.workers.map(Value::from));
        put("tau_flow", self.tau_flow.map(Value::from));
        put("trim_q", self.trim_q.map(Value::from));
        put("verification.k", self.verification_k.map(Value::from));
        put("verification.negatives", self.verification_negatives.map(Value::from));
        put("keyframe.speed_eps", self.keyframe_speed_eps.map(Value::from));
        put("shard_size", self.shard_size.map(Value::from));
        put("pointcloud.format", self.pointcloud_format.clone().map(Value::from));
        put("tasks.default", self.tasks.clone().map(Value::from));
        put("diversifier.mode", self.diversifier_mode.clone().map(Value::from));
        put("diversifier.endpoint", self.diversifier_endpoint.clone().map(Value::from));
        put("diversifier.model", self.diversifier_model.clone().map(Value::from));
        put(
            "diversifier.replay_dir",
            self.diversifier_replay_dir.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())),
        );
        put("diversifier.timeout_ms", self.diversifier_timeout_ms.map(Value::from));
        put("diversifier.max_in_flight", self.diversifier_max_in_flight.map(Value::from));
        put("diversifier.demonstrations", self.diversifier_demonstrations.map(Value::from));
        for spec in &self.dataset_tasks {
            let (dataset, tasks) = spec
                .split_once('=')
                .filter(|(d, _)| !d.is_empty())
                .ok_or_else(|| format!("--dataset-tasks expects DATASET=TASKS, got {spec:?}"))?;
            out.push((format!("tasks.{dataset}"), Value::from(tasks)));
        }
        Ok(out)
    }

    fn load(&self) -> Result<Config, String> {
        let mut cfg = match &self.config {
            Some(p) => Config::from_file(p).map_err(|e| e.to_string())?,
            None => Config::default(),
        };
        for (k, v) in self.overrides()? {
            cfg.set(&k, &v).map_err(|e| e.to_string())?;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

/// Expands directories to their top-level `*.json` files, sorted.
fn expand_manifests(paths: &[PathBuf]) -> Result<Vec<PathBuf>, String> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = fs::read_dir(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn parse_ranges(text: &str) -> Result<[AxisRange; 3], String> {
    let parts: Vec<&str> = text.split(';').collect();
    if parts.len() != 3 {
        return Err(format!("expected three lo,hi ranges separated by ';', got {text:?}"));
    }
    let mut out = [AxisRange::new(0.0, 1.0); 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        let nums = parse_numbers(&part.replace(',', " "))?;
        let [lo, hi] = nums[..] else {
            return Err(format!("range {part:?} needs lo,hi"));
        };
        *slot = AxisRange::new(lo, hi);
        if !slot.is_valid() {
            return Err(format!("range {part:?} needs lo < hi"));
        }
    }
    Ok(out)
}

fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

fn parse_specials(text: &str) -> Result<Vec<Special>, String> {
    lex(text)
        .into_iter()
        .filter_map(|t| match t {
            Token::Special(s) => Some(Ok(s)),
            Token::Text(s) if s.trim().is_empty() => None,
            Token::Text(s) => Some(Err(format!("unexpected text {s:?}"))),
        })
        .collect()
}

fn fmt_numbers(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn token_op(op: TokenOp, line: &str, bounds: &WorkspaceBounds) -> Result<String, String> {
    match op {
        TokenOp::EncodeAction => {
            let nums = parse_numbers(line)?;
            if nums.is_empty() || nums.len() % 7 != 0 {
                return Err(format!("expected 7 numbers per step, got {}", nums.len()));
            }
            let steps = nums
                .chunks(7)
                .map(|c| {
                    if c[6] != 0.0 && c[6] != 1.0 {
                        return Err(format!("gripper must be 0 or 1, got {}", c[6]));
                    }
                    Ok(ActionStep {
                        position: [c[0], c[1], c[2]],
                        rotation: [c[3], c[4], c[5]],
                        gripper: c[6] as u8,
                    })
                })
                .collect::<Result<Vec<_>, String>>()?;
            let code = encode_action_seq(&steps, bounds).map_err(|e| e.to_string())?;
            if code.clamped {
                eprintln!("warning: values outside the bounds were clamped");
            }
            Ok(join_specials(&code.tokens()))
        }
        TokenOp::DecodeAction => {
            let steps = decode_action_seq(&parse_specials(line)?, bounds).map_err(|e| e.to_string())?;
            Ok(steps
                .iter()
                .map(|s| {
                    let mut v: Vec<f64> = s.position.into_iter().chain(s.rotation).collect();
                    v.push(s.gripper as f64);
                    fmt_numbers(&v)
                })
                .collect::<Vec<_>>()
                .join("\n"))
        }
        TokenOp::EncodeBox => {
            let nums = parse_numbers(line)?;
            let [a, b, c, d, e, f] = nums[..] else {
                return Err(format!("expected 6 numbers, got {}", nums.len()));
            };
            let code = encode_bbox(&Aabb3::new([a, b, c], [d, e, f]), bounds).map_err(|e| e.to_string())?;
            if code.clamped {
                eprintln!("warning: values outside the bounds were clamped");
            }
            Ok(join_specials(&code.tokens()))
        }
        TokenOp::DecodeBox => {
            let b = decode_bbox(&parse_specials(line)?, bounds).map_err(|e| e.to_string())?;
            Ok(fmt_numbers(&[b.aabb.min, b.aabb.max].concat()))
        }
        TokenOp::Parse => {
            let ast = parse_str(line).map_err(|e| e.to_string())?;
            Ok(serde_json::to_string(&ast).expect("ast serializes"))
        }
    }
}

fn run_tokens(op: TokenOp, args: &BoundsArgs) -> u8 {
    let mut bounds = WorkspaceBounds::unit();
    for (text, slot) in [
        (&args.action_bounds, &mut bounds.action),
        (&args.location_bounds, &mut bounds.location),
    ] {
        if let Some(t) = text {
            match parse_ranges(t) {
                Ok(r) => *slot = r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return USAGE;
                }
            }
        }
    }
    let lines: Vec<String> = match &args.input {
        Some(s) => vec![s.clone()],
        None => io::stdin().lock().lines().map_while(Result::ok).filter(|l| !l.trim().is_empty()).collect(),
    };
    let mut status = OK;
    let mut stdout = io::stdout().lock();
    for (i, line) in lines.iter().enumerate() {
        match token_op(op, line, &bounds) {
            Ok(out) => {
                let _ = writeln!(stdout, "{out}");
            }
            Err(e) => {
                eprintln!("line {}: {e}", i + 1);
                status = ITEM_FAILURES;
            }
        }
    }
    status
}

fn run(cli: Cli) -> u8 {
    match cli.command {
        Command::Ingest { manifests } => {
            let paths = match expand_manifests(&manifests) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return USAGE;
                }
            };
            let mut status = OK;
            for p in paths {
                match load_episode(&p) {
                    Ok(e) => println!(
                        "{}",
                        serde_json::json!({
                            "manifest": p.display().to_string(),
                            "episode_id": e.id,
                            "dataset": e.dataset,
                            "frames": e.frames.len(),
                            "detections": e.detections.iter().map(Vec::len).sum::<usize>(),
                        })
                    ),
                    Err(err) => {
                        eprintln!("{err}");
                        status = ITEM_FAILURES;
                    }
                }
            }
            status
        }
        Command::Annotate {
            manifests,
            out,
            qa,
            qa_dataset,
            config,
        } => {
            let cfg = match config.load() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return USAGE;
                }
            };
            let paths = match expand_manifests(&manifests) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return USAGE;
                }
            };
            let inputs = RunInputs {
                manifests: paths,
                qa,
                qa_dataset,
            };
            match run_dataset(&inputs, &cfg, &out) {
                Ok(report) => {
                    let mut status = OK;
                    for e in report.episodes.iter().filter(|e| e.status == EpisodeStatus::Skipped) {
                        eprintln!("skipped {}: {}", e.episode_id, e.notes.join("; "));
                        status = ITEM_FAILURES;
                    }
                    if let Some(qa) = &report.qa {
                        for s in &qa.skipped {
                            eprintln!("skipped {s}");
                            status = ITEM_FAILURES;
                        }
                    }
                    eprintln!(
                        "{} samples from {} episodes written to {}",
                        report.counts.total,
                        report.episodes_produced,
                        out.display()
                    );
                    status
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ITEM_FAILURES
                }
            }
        }
        Command::Export { input, out, config } => {
            let cfg = match config.load() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return USAGE;
                }
            };
            match reexport_dataset(&input, &out, &cfg) {
                Ok(r) => {
                    eprintln!("{} samples in {} shards written to {}", r.counts.total, r.shards.len(), out.display());
                    OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ITEM_FAILURES
                }
            }
        }
        Command::Validate { dir } => match validate_dataset(&dir) {
            Ok(v) => {
                for violation in &v.violations {
                    eprintln!("{violation}");
                }
                println!(
                    "{}",
                    serde_json::json!({
                        "samples": v.counts.total,
                        "shards": v.shards,
                        "violations": v.violations.len(),
                    })
                );
                if v.is_clean() {
                    OK
                } else {
                    ITEM_FAILURES
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ITEM_FAILURES
            }
        },
        Command::Stats { dir, json } => match stats(&dir) {
            Ok(s) => {
                if json {
                    println!("{}", serde_json::to_string_pretty(&s).expect("stats serialize"));
                } else {
                    print!("{}", s.table());
                }
                OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                ITEM_FAILURES
            }
        },
        Command::Tokens { op, bounds } => run_tokens(op, &bounds),
        Command::Vocab { out } => {
            let text = vocab_json();
            match out {
                Some(p) => write_file(&p, &text),
                None => {
                    print!("{text}");
                    OK
                }
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> u8 {
    match fs::write(path, text) {
        Ok(()) => OK,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            ITEM_FAILURES
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}

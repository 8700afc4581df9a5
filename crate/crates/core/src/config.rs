//! Run configuration: a JSON object with flat dotted keys.
//!
//! ```json
//! { "seed": 7, "tau_flow": 1.0, "tasks.default": ["localization", "task_caption"],
//!   "tasks.rlbench": "all", "diversifier.mode": "offline" }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::annotate::{
    DiversifierClient, HttpClient, HttpClientConfig, OfflineParaphraser, ReplayClient, DEFAULT_DEMONSTRATIONS,
    DEFAULT_SPEED_EPS,
};
use crate::geom3d::{DEFAULT_TAU_FLOW, DEFAULT_TRIM_Q};
use crate::model::TaskType;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("config must be a JSON object of dotted keys")]
    NotAnObject,
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointCloudFormat {
    BinXyzRgb,
    Ply,
}

impl PointCloudFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            PointCloudFormat::BinXyzRgb => "bin_xyzrgb",
            PointCloudFormat::Ply => "ply",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            PointCloudFormat::BinXyzRgb => "bin",
            PointCloudFormat::Ply => "ply",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bin_xyzrgb" | "bin" => Some(PointCloudFormat::BinXyzRgb),
            "ply" => Some(PointCloudFormat::Ply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiversifierMode {
    Off,
    /// Built-in seeded paraphraser.
    Offline,
    /// Recorded replies from `replay_dir`.
    Replay,
    /// Live chat-completion endpoint.
    Endpoint,
}

impl DiversifierMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiversifierMode::Off => "off",
            DiversifierMode::Offline => "offline",
            DiversifierMode::Replay => "replay",
            DiversifierMode::Endpoint => "endpoint",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Off, Self::Offline, Self::Replay, Self::Endpoint]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversifierConfig {
    pub mode: DiversifierMode,
    pub endpoint: Option<String>,
    pub model: String,
    pub replay_dir: Option<PathBuf>,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub demonstrations: usize,
}

impl Default for DiversifierConfig {
    fn default() -> Self {
        Self {
            mode: DiversifierMode::Off,
            endpoint: None,
            model: "gpt-3.5-turbo".into(),
            replay_dir: None,
            timeout_ms: 30_000,
            max_in_flight: 4,
            demonstrations: DEFAULT_DEMONSTRATIONS,
        }
    }
}

impl DiversifierConfig {
    /// The client for this mode, or `None` when diversification is off.
    pub fn client(&self) -> Option<Box<dyn DiversifierClient>> {
        match self.mode {
            DiversifierMode::Off => None,
            DiversifierMode::Offline => Some(Box::new(OfflineParaphraser)),
            DiversifierMode::Replay => Some(Box::new(ReplayClient::new(
                self.replay_dir.clone().unwrap_or_default(),
                self.demonstrations,
            ))),
            DiversifierMode::Endpoint => Some(Box::new(HttpClient::new(HttpClientConfig {
                endpoint: self.endpoint.clone().unwrap_or_default(),
                model: self.model.clone(),
                timeout: Duration::from_millis(self.timeout_ms),
                max_in_flight: self.max_in_flight,
                demonstrations: self.demonstrations,
            }))),
        }
    }
}

/// Which tasks run for which source dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskMatrix {
    pub default: BTreeSet<TaskType>,
    pub per_dataset: BTreeMap<String, BTreeSet<TaskType>>,
}

impl Default for TaskMatrix {
    fn default() -> Self {
        Self {
            default: TaskType::ALL.into_iter().collect(),
            per_dataset: BTreeMap::new(),
        }
    }
}

impl TaskMatrix {
    pub fn enabled(&self, dataset: &str) -> &BTreeSet<TaskType> {
        self.per_dataset.get(dataset).unwrap_or(&self.default)
    }

    pub fn is_enabled(&self, dataset: &str, task: TaskType) -> bool {
        self.enabled(dataset).contains(&task)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    /// 0 uses every available core.
    pub workers: usize,
    pub tau_flow: f64,
    pub trim_q: f64,
    pub verification_k: usize,
    pub verification_negatives: usize,
    pub speed_eps: f64,
    pub shard_size: usize,
    pub pointcloud_format: PointCloudFormat,
    pub tasks: TaskMatrix,
    pub diversifier: DiversifierConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            tau_flow: DEFAULT_TAU_FLOW,
            trim_q: DEFAULT_TRIM_Q,
            verification_k: 1,
            verification_negatives: 1,
            speed_eps: DEFAULT_SPEED_EPS,
            shard_size: 10_000,
            pointcloud_format: PointCloudFormat::BinXyzRgb,
            tasks: TaskMatrix::default(),
            diversifier: DiversifierConfig::default(),
        }
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| invalid(key, "not a number")),
        Value::String(s) => s.trim().parse().map_err(|_| invalid(key, format!("not a number: {s:?}"))),
        _ => Err(invalid(key, "expected a number")),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    match v {
        Value::Number(n) => n.as_u64().ok_or_else(|| invalid(key, "expected a non-negative integer")),
        Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| invalid(key, format!("expected a non-negative integer, got {s:?}"))),
        _ => Err(invalid(key, "expected a non-negative integer")),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, ConfigError> {
    usize::try_from(as_u64(key, v)?).map_err(|_| invalid(key, "too large"))
}

fn as_string(key: &str, v: &Value) -> Result<String, ConfigError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        _ => Err(invalid(key, "expected a string")),
    }
}

/// `"all"`, `"none"`, a comma-separated string, or an array of task names.
fn as_tasks(key: &str, v: &Value) -> Result<BTreeSet<TaskType>, ConfigError> {
    let names: Vec<String> = match v {
        Value::String(s) if s.trim() == "all" => return Ok(TaskType::ALL.into_iter().collect()),
        Value::String(s) if s.trim() == "none" || s.trim().is_empty() => return Ok(BTreeSet::new()),
        Value::String(s) => s.split(',').map(|p| p.trim().to_string()).collect(),
        Value::Array(items) => items
            .iter()
            .map(|i| as_string(key, i))
            .collect::<Result<_, _>>()?,
        _ => return Err(invalid(key, "expected a task list")),
    };
    names
        .iter()
        .map(|n| TaskType::parse(n).ok_or_else(|| invalid(key, format!("unknown task {n:?}"))))
        .collect()
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&value)
    }

    pub fn from_json(value: &Value) -> Result<Self, ConfigError> {
        let obj = value.as_object().ok_or(ConfigError::NotAnObject)?;
        let mut cfg = Config::default();
        for (k, v) in obj {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one dotted key. Strings are accepted for numeric keys so that
    /// command-line overrides can pass raw text.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = as_u64(key, v)?,
            "workers" => self.workers = as_usize(key, v)?,
            "tau_flow" => self.tau_flow = as_f64(key, v)?,
            "trim_q" => self.trim_q = as_f64(key, v)?,
            "verification.k" => self.verification_k = as_usize(key, v)?,
            "verification.negatives" => self.verification_negatives = as_usize(key, v)?,
            "keyframe.speed_eps" => self.speed_eps = as_f64(key, v)?,
            "shard_size" => self.shard_size = as_usize(key, v)?,
            "pointcloud.format" => {
                let s = as_string(key, v)?;
                self.pointcloud_format =
                    PointCloudFormat::parse(&s).ok_or_else(|| invalid(key, format!("unknown format {s:?}")))?;
            }
            "tasks.default" => self.tasks.default = as_tasks(key, v)?,
            "diversifier.mode" => {
                let s = as_string(key, v)?;
                self.diversifier.mode =
                    DiversifierMode::parse(&s).ok_or_else(|| invalid(key, format!("unknown mode {s:?}")))?;
            }
            "diversifier.endpoint" => self.diversifier.endpoint = Some(as_string(key, v)?),
            "diversifier.model" => self.diversifier.model = as_string(key, v)?,
            "diversifier.replay_dir" => self.diversifier.replay_dir = Some(PathBuf::from(as_string(key, v)?)),
            "diversifier.timeout_ms" => self.diversifier.timeout_ms = as_u64(key, v)?,
            "diversifier.max_in_flight" => self.diversifier.max_in_flight = as_usize(key, v)?,
            "diversifier.demonstrations" => self.diversifier.demonstrations = as_usize(key, v)?,
            _ => match key.strip_prefix("tasks.") {
                Some(dataset) if !dataset.is_empty() => {
                    self.tasks.per_dataset.insert(dataset.to_string(), as_tasks(key, v)?);
                }
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tau_flow > 0.0 && self.tau_flow.is_finite()) {
            return Err(invalid("tau_flow", "must be positive"));
        }
        if !(0.0..0.5).contains(&self.trim_q) {
            return Err(invalid("trim_q", "must be in [0, 0.5)"));
        }
        if self.verification_k == 0 {
            return Err(invalid("verification.k", "must be positive"));
        }
        if !(self.speed_eps > 0.0 && self.speed_eps.is_finite()) {
            return Err(invalid("keyframe.speed_eps", "must be positive"));
        }
        if self.shard_size == 0 {
            return Err(invalid("shard_size", "must be positive"));
        }
        let d = &self.diversifier;
        if !(2..=3).contains(&d.demonstrations) {
            return Err(invalid("diversifier.demonstrations", "must be 2 or 3"));
        }
        if d.timeout_ms == 0 {
            return Err(invalid("diversifier.timeout_ms", "must be positive"));
        }
        if d.max_in_flight == 0 {
            return Err(invalid("diversifier.max_in_flight", "must be positive"));
        }
        match d.mode {
            DiversifierMode::Endpoint if d.endpoint.as_deref().is_none_or(str::is_empty) => {
                Err(invalid("diversifier.endpoint", "required when diversifier.mode is endpoint"))
            }
            DiversifierMode::Replay if d.replay_dir.is_none() => {
                Err(invalid("diversifier.replay_dir", "required when diversifier.mode is replay"))
            }
            _ => Ok(()),
        }
    }

    /// The effective configuration as flat dotted keys.
    pub fn to_json(&self) -> Value {
        let tasks = |s: &BTreeSet<TaskType>| Value::from(s.iter().map(|t| t.as_str()).collect::<Vec<_>>());
        let mut m = Map::new();
        m.insert("seed".into(), self.seed.into());
        m.insert("workers".into(), self.workers.into());
        m.insert("tau_flow".into(), self.tau_flow.into());
        m.insert("trim_q".into(), self.trim_q.into());
        m.insert("verification.k".into(), self.verification_k.into());
        m.insert("verification.negatives".into(), self.verification_negatives.into());
        m.insert("keyframe.speed_eps".into(), self.speed_eps.into());
        m.insert("shard_size".into(), self.shard_size.into());
        m.insert("pointcloud.format".into(), self.pointcloud_format.as_str().into());
        m.insert("tasks.default".into(), tasks(&self.tasks.default));
        for (k, v) in &self.tasks.per_dataset {
            m.insert(format!("tasks.{k}"), tasks(v));
        }
        let d = &self.diversifier;
        m.insert("diversifier.mode".into(), d.mode.as_str().into());
        if let Some(e) = &d.endpoint {
            m.insert("diversifier.endpoint".into(), e.clone().into());
        }
        m.insert("diversifier.model".into(), d.model.clone().into());
        if let Some(r) = &d.replay_dir {
            m.insert("diversifier.replay_dir".into(), r.to_string_lossy().into_owned().into());
        }
        m.insert("diversifier.timeout_ms".into(), d.timeout_ms.into());
        m.insert("diversifier.max_in_flight".into(), d.max_in_flight.into());
        m.insert("diversifier.demonstrations".into(), d.demonstrations.into());
        Value::Object(m)
    }
}

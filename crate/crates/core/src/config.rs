//! Flat `key = value` run configuration.
//!
//! Recognized keys: `task`, `side`, `d`, `t`, `alpha`, `beta`, `c`,
//! `epochs`, `batch`, `lr`, `seed`, `labeled_fraction`, `train_data`,
//! `val_data`, `backend`. Lines starting with `#` are comments. Unknown keys
//! are an error (listed all at once), so typos cannot silently fall back to
//! defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::knowledge::{GraphTask, SudokuBackend};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config keys: {0:?}")]
    UnknownKeys(Vec<String>),
    #[error("missing required key {0:?}")]
    Missing(&'static str),
    #[error("bad value for {key:?}: {value:?} ({why})")]
    BadValue { key: String, value: String, why: String },
    #[error("malformed line {line}: {text:?}")]
    MalformedLine { line: usize, text: String },
}

/// Which benchmark a run targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskSpec {
    Sudoku,
    Clique,
    Mis,
}

impl TaskSpec {
    pub fn graph_task(self) -> Option<GraphTask> {
        match self {
            TaskSpec::Sudoku => None,
            TaskSpec::Clique => Some(GraphTask::Clique),
            TaskSpec::Mis => Some(GraphTask::Mis),
        }
    }
}

/// A parsed run configuration; the CLI builds everything from this.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub side: usize,
    pub dim: usize,
    pub rounds: usize,
    pub backend: SudokuBackend,
    pub train: TrainConfig,
    pub train_data: PathBuf,
    pub val_data: Option<PathBuf>,
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        match self.task {
            TaskSpec::Sudoku => ModelConfig::sudoku(self.side, self.dim, self.rounds),
            TaskSpec::Clique => ModelConfig::graph(GraphTask::Clique, self.dim, self.rounds),
            TaskSpec::Mis => ModelConfig::graph(GraphTask::Mis, self.dim, self.rounds),
        }
    }

    /// `REFLX_SEED` (or any explicit seed) wins over the config file.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.train.seed = s;
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    const KNOWN: &[&str] = &[
        "task", "side", "d", "t", "alpha", "beta", "c", "epochs", "batch", "lr", "seed",
        "labeled_fraction", "train_data", "val_data", "backend",
    ];
    let mut values: BTreeMap<String, String> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::MalformedLine { line: i + 1, text: raw.to_string() });
        };
        values.insert(k.trim().to_string(), v.trim().to_string());
    }
    let unknown: Vec<String> = values
        .keys()
        .filter(|k| !KNOWN.contains(&k.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }

    let bad = |key: &str, value: &str, why: &str| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        why: why.to_string(),
    };
    let task = match values.get("task").map(String::as_str) {
        Some("sudoku") => TaskSpec::Sudoku,
        Some("clique") => TaskSpec::Clique,
        Some("mis") => TaskSpec::Mis,
        Some(other) => return Err(bad("task", other, "expected sudoku | clique | mis")),
        None => return Err(ConfigError::Missing("task")),
    };
    let parse_num = |key: &'static str, default: f64| -> Result<f64, ConfigError> {
        match values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| bad(key, v, "not a number")),
        }
    };
    let parse_usize = |key: &'static str, default: usize| -> Result<usize, ConfigError> {
        match values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| bad(key, v, "not an integer")),
        }
    };
    let side = parse_usize("side", 9)?;
    if task == TaskSpec::Sudoku && side != 4 && side != 9 {
        return Err(bad("side", &side.to_string(), "expected 4 or 9"));
    }
    // Message-passing defaults: 96-wide for Sudoku, 64 for graph tasks.
    let default_dim = if task == TaskSpec::Sudoku { 96 } else { 64 };
    let dim = parse_usize("d", default_dim)?;
    let rounds = parse_usize("t", 8)?;
    let backend = match values.get("backend") {
        None => SudokuBackend::Sat,
        Some(v) => SudokuBackend::parse(v).map_err(|why| bad("backend", v, &why))?,
    };
    let train = TrainConfig {
        alpha: parse_num("alpha", 1.0)?,
        beta: parse_num("beta", 1.0)?,
        c: parse_num("c", 0.8)?,
        epochs: parse_usize("epochs", 20)?,
        batch: parse_usize("batch", 16)?,
        lr: parse_num("lr", 1e-3)?,
        seed: parse_usize("seed", 0)? as u64,
        labeled_fraction: parse_num("labeled_fraction", 1.0)?,
    };
    train
        .validate()
        .map_err(|why| bad("(train block)", "", &why))?;
    let train_data = values
        .get("train_data")
        .map(PathBuf::from)
        .ok_or(ConfigError::Missing("train_data"))?;
    let val_data = values.get("val_data").map(PathBuf::from);
    Ok(RunConfig { task, side, dim, rounds, backend, train, train_data, val_data })
}

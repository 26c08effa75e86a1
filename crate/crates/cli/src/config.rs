//! Run configuration files.
//!
//! The format is line based: `key = value`, `# comments`, and `[section]`
//! headers that prefix the following keys (`[schedule]` then `batch_size`
//! gives `schedule.batch_size`). Relative paths resolve against the
//! directory holding the config file.
//!
//! ```text
//! model = d4
//! channels = 2, 4, 8
//! da_method = sidda
//! seeds = 1, 2, 3
//! output = runs/d4-sidda
//!
//! [data]
//! source_train = data/source_train.sdds
//! source_test = data/source_test.sdds
//! target_train = data/target_train.sdds
//! target_test = data/target_test.sdds
//!
//! [schedule]
//! total_epochs = 50
//! warmup_epochs = 10
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sidda_core::equivariant::ModelSpec;
use sidda_core::train::{DaMethod, TrainSchedule};

use crate::error::{CliError, Result};

/// One `key = value` entry with its section-qualified key.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses the raw key/value structure; rejects malformed lines and
/// duplicate keys.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut section = String::new();
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| CliError::at_line(line, format!("unterminated section header {content:?}")))?
                .trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(CliError::at_line(line, format!("invalid section name {name:?}")));
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| CliError::at_line(line, format!("expected `key = value`, found {content:?}")))?;
        let k = k.trim();
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(CliError::at_line(line, format!("invalid key {k:?}")));
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(CliError::at_line(line, format!("duplicate key {key} (first set on line {})", prev.line)));
        }
        out.push(Entry { key, value: v.trim().to_string(), line });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    D1,
    D2,
    D4,
    D8,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Some(Self::Cnn),
            "d1" => Some(Self::D1),
            "d2" => Some(Self::D2),
            "d4" => Some(Self::D4),
            "d8" => Some(Self::D8),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Cnn => "cnn",
            Self::D1 => "d1",
            Self::D2 => "d2",
            Self::D4 => "d4",
            Self::D8 => "d8",
        }
    }

    pub fn group_order(&self) -> Option<usize> {
        match self {
            Self::Cnn => None,
            Self::D1 => Some(1),
            Self::D2 => Some(2),
            Self::D4 => Some(4),
            Self::D8 => Some(8),
        }
    }

    /// Widths of the reference architectures: 8/16/32 channels for the CNN
    /// and 8/16/32 regular fields for `D_N`.
    pub const FULL_WIDTHS: [usize; 3] = [8, 16, 32];
    /// Quarter of [`Self::FULL_WIDTHS`], the desk-scale default.
    pub const DESK_WIDTHS: [usize; 3] = [2, 4, 8];

    /// Default warm-up: 30% of the epochs for the CNN, 20% for `D_N`.
    pub fn default_warmup(&self, total_epochs: usize) -> usize {
        let pct = if *self == Self::Cnn { 30 } else { 20 };
        total_epochs * pct / 100
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub source_train: PathBuf,
    pub source_test: PathBuf,
    pub target_train: PathBuf,
    pub target_test: PathBuf,
}

impl DataPaths {
    pub fn named(&self) -> [(&'static str, &Path); 4] {
        [
            ("source_train", &self.source_train),
            ("source_test", &self.source_test),
            ("target_train", &self.target_train),
            ("target_test", &self.target_test),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub channels: [usize; 3],
    pub latent_dim: usize,
    pub dropout: f32,
    pub data: DataPaths,
    pub schedule: TrainSchedule,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
}

const KEYS: &[&str] = &[
    "model",
    "channels",
    "latent_dim",
    "dropout",
    "full_widths",
    "da_method",
    "seeds",
    "output",
    "data.source_train",
    "data.source_test",
    "data.target_train",
    "data.target_test",
    "schedule.total_epochs",
    "schedule.warmup_epochs",
    "schedule.batch_size",
    "schedule.learning_rate",
    "schedule.weight_decay",
    "schedule.grad_clip",
    "schedule.val_fraction",
    "schedule.augment",
];

struct Fields {
    map: BTreeMap<String, Entry>,
}

impl Fields {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.map.get(key)
    }

    fn required(&self, key: &str) -> Result<&Entry> {
        self.get(key).ok_or_else(|| CliError::config(format!("missing required field `{key}`")))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(e) => parse_value(e),
        }
    }
}

fn parse_value<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| CliError::at_line(e.line, format!("`{}`: cannot parse {:?}", e.key, e.value)))
}

fn parse_list<T: std::str::FromStr>(e: &Entry) -> Result<Vec<T>> {
    e.value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::at_line(e.line, format!("`{}`: cannot parse {s:?}", e.key)))
        })
        .collect()
}

fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::at_line(e.line, format!("`{}`: expected true or false, found {:?}", e.key, e.value))),
    }
}

impl RunConfig {
    /// Parses and validates a config; `base` anchors relative paths.
    /// Dataset files must exist.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let entries = parse_entries(text)?;
        for e in &entries {
            if !KEYS.contains(&e.key.as_str()) {
                return Err(CliError::at_line(e.line, format!("unknown key `{}`", e.key)));
            }
        }
        let f = Fields { map: entries.into_iter().map(|e| (e.key.clone(), e)).collect() };

        let m = f.required("model")?;
        let model = ModelKind::parse(&m.value)
            .ok_or_else(|| CliError::at_line(m.line, format!("`model`: expected cnn, d1, d2, d4 or d8, found {:?}", m.value)))?;

        let full = match f.get("full_widths") {
            Some(e) => parse_bool(e)?,
            None => false,
        };
        let channels = match f.get("channels") {
            Some(e) => {
                let v: Vec<usize> = parse_list(e)?;
                if v.len() != 3 || v.contains(&0) {
                    return Err(CliError::at_line(e.line, "`channels`: expected three positive integers"));
                }
                [v[0], v[1], v[2]]
            }
            None if full => ModelKind::FULL_WIDTHS,
            None => ModelKind::DESK_WIDTHS,
        };
        let latent_dim: usize = f.parsed("latent_dim", 256)?;
        let dropout: f32 = f.parsed("dropout", 0.2)?;
        if latent_dim == 0 || !(0.0..1.0).contains(&dropout) {
            return Err(CliError::config("`latent_dim` must be positive and `dropout` in [0, 1)"));
        }

        let da_method = match f.get("da_method") {
            Some(e) => DaMethod::parse(&e.value).map_err(|err| CliError::at_line(e.line, err.to_string()))?,
            None => DaMethod::Sidda,
        };

        let s = f.required("seeds")?;
        let seeds: Vec<u64> = parse_list(s)?;
        if seeds.is_empty() {
            return Err(CliError::at_line(s.line, "`seeds` must list at least one seed"));
        }

        let output = base.join(&f.required("output")?.value);

        let path = |key: &str| -> Result<PathBuf> {
            let e = f.required(key)?;
            let p = base.join(&e.value);
            if !p.is_file() {
                return Err(CliError::at_line(e.line, format!("`{key}`: file {} does not exist", p.display())));
            }
            Ok(p)
        };
        let data = DataPaths {
            source_train: path("data.source_train")?,
            source_test: path("data.source_test")?,
            target_train: path("data.target_train")?,
            target_test: path("data.target_test")?,
        };

        let d = TrainSchedule::default();
        let total_epochs: usize = f.parsed("schedule.total_epochs", d.total_epochs)?;
        let augment = match f.get("schedule.augment") {
            Some(e) => parse_bool(e)?,
            None => d.augment,
        };
        let schedule = TrainSchedule {
            total_epochs,
            warmup_epochs: f.parsed("schedule.warmup_epochs", model.default_warmup(total_epochs))?,
            batch_size: f.parsed("schedule.batch_size", d.batch_size)?,
            base_lr: f.parsed("schedule.learning_rate", d.base_lr)?,
            weight_decay: f.parsed("schedule.weight_decay", d.weight_decay)?,
            grad_clip: f.parsed("schedule.grad_clip", d.grad_clip)?,
            da_method,
            val_fraction: f.parsed("schedule.val_fraction", d.val_fraction)?,
            augment,
        };
        schedule.validate().map_err(|e| CliError::config(e.to_string()))?;

        Ok(Self { model, channels, latent_dim, dropout, data, schedule, seeds, output })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Network description for input images of shape `(C, H, W)` and
    /// `num_classes` classes.
    pub fn model_spec(&self, input: [usize; 3], num_classes: usize) -> ModelSpec {
        let mut spec = match self.model.group_order() {
            None => ModelSpec::cnn(self.channels, num_classes, input),
            Some(n) => ModelSpec::dihedral(n, self.channels, num_classes, input),
        };
        spec.latent_dim = self.latent_dim;
        spec.dropout = self.dropout;
        spec
    }

    /// Same run with another alignment method.
    pub fn with_method(&self, method: DaMethod) -> Self {
        let mut c = self.clone();
        c.schedule.da_method = method;
        c
    }
}

//! Run configuration: model, optimisation and data settings in one flat
//! `key = value` file.
//!
//! ```text
//! # comment
//! base_width = 16
//! loss = bce+dice
//! protocol = kfold
//! ```
//!
//! Later sources override earlier ones: defaults, then the file, then
//! command-line overrides. Unknown keys are rejected all at once.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Layout, DEFAULT_FOLDS, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{LossKind, TrainConfig};

/// Evaluation protocol.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Protocol {
    /// Single 80:10:10 train/val/test split.
    #[default]
    Holdout,
    /// Rotating k-fold cross-validation.
    Kfold,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Holdout => "holdout",
            Protocol::Kfold => "kfold",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "holdout" => Ok(Protocol::Holdout),
            "kfold" => Ok(Protocol::Kfold),
            _ => Err(Error::Config(format!(
                "unknown protocol '{s}' (expected holdout or kfold)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset_root: Option<PathBuf>,
    pub layout: Layout,
    pub manifest: Option<PathBuf>,
    pub protocol: Protocol,
    pub folds: usize,
    pub image_size: usize,
    pub augment: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset_root: None,
            layout: Layout::Generic,
            manifest: None,
            protocol: Protocol::Holdout,
            folds: DEFAULT_FOLDS,
            image_size: IMAGE_SIZE,
            augment: true,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Every accepted key, in serialization order.
pub const KEYS: &[&str] = &[
    "base_width",
    "dropout_rate",
    "decoder_widths",
    "initial_lr",
    "max_epochs",
    "plateau_patience",
    "lr_factor",
    "early_stop_patience",
    "batch_size",
    "loss",
    "seed",
    "target_dice",
    "keep_epoch_checkpoints",
    "dataset_root",
    "layout",
    "manifest",
    "protocol",
    "folds",
    "image_size",
    "augment",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Sets one key. Unknown keys return [`Error::UnknownKeys`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "base_width" => {
                let w: usize = parse(key, v)?;
                let dropout = self.model.dropout_rate;
                self.model = ModelConfig::with_base_width(w);
                self.model.dropout_rate = dropout;
            }
            "dropout_rate" => self.model.dropout_rate = parse(key, v)?,
            "decoder_widths" => {
                let parts: Vec<usize> = v.split(',').map(|p| parse(key, p.trim())).collect::<Result<_>>()?;
                self.model.decoder_widths = parts
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected four comma-separated widths")))?;
            }
            "initial_lr" => self.train.initial_lr = parse(key, v)?,
            "max_epochs" => self.train.max_epochs = parse(key, v)?,
            "plateau_patience" => self.train.plateau_patience = parse(key, v)?,
            "lr_factor" => self.train.lr_factor = parse(key, v)?,
            "early_stop_patience" => self.train.early_stop_patience = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "loss" => self.train.loss = v.parse::<LossKind>()?,
            "seed" => self.train.seed = parse(key, v)?,
            "target_dice" => self.train.target_dice = if v == "none" { None } else { Some(parse(key, v)?) },
            "keep_epoch_checkpoints" => self.train.keep_epoch_checkpoints = parse_bool(key, v)?,
            "dataset_root" => self.dataset_root = opt_path(v),
            "layout" => self.layout = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "manifest" => self.manifest = opt_path(v),
            "protocol" => self.protocol = v.parse()?,
            "folds" => self.folds = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::UnknownKeys(vec![key.to_string()])),
        }
        Ok(())
    }

    /// Value of `key` in the serialized form.
    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let d = self.model.decoder_widths;
        Some(match key {
            "base_width" => self.model.base_width.to_string(),
            "dropout_rate" => self.model.dropout_rate.to_string(),
            "decoder_widths" => format!("{},{},{},{}", d[0], d[1], d[2], d[3]),
            "initial_lr" => self.train.initial_lr.to_string(),
            "max_epochs" => self.train.max_epochs.to_string(),
            "plateau_patience" => self.train.plateau_patience.to_string(),
            "lr_factor" => self.train.lr_factor.to_string(),
            "early_stop_patience" => self.train.early_stop_patience.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "loss" => self.train.loss.to_string(),
            "seed" => self.train.seed.to_string(),
            "target_dice" => self.train.target_dice.map_or("none".to_string(), |t| t.to_string()),
            "keep_epoch_checkpoints" => self.train.keep_epoch_checkpoints.to_string(),
            "dataset_root" => path(&self.dataset_root),
            "layout" => self.layout.to_string(),
            "manifest" => path(&self.manifest),
            "protocol" => self.protocol.to_string(),
            "folds" => self.folds.to_string(),
            "image_size" => self.image_size.to_string(),
            "augment" => self.augment.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. All unknown keys are reported together.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut unknown = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", no + 1)))?;
            match self.set(k.trim(), v) {
                Err(Error::UnknownKeys(mut ks)) => unknown.append(&mut ks),
                other => other?,
            }
        }
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::UnknownKeys(unknown))
        }
    }

    /// Applies `key=value` overrides, e.g. from repeated `--set` flags.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, pairs: &[S]) -> Result<()> {
        let text: Vec<&str> = pairs.iter().map(|s| s.as_ref()).collect();
        for p in &text {
            if !p.contains('=') {
                return Err(Error::Config(format!("override '{p}' is not key=value")));
            }
        }
        self.apply_text(&text.join("\n"))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_file(path)?;
        Ok(c)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.image_size < 32 || !self.image_size.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "image_size must be a multiple of 16 and at least 32, got {}",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Full `key = value` listing; reading it back reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }
}

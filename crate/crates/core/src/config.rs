//! JSON run configuration shared by the command line and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::mswinsr::MswinConfig;
use crate::train::{Regime, TrainConfig};
use crate::ugswinsr::UgswinConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Mswinsr,
    /// U-Net generator trained with the pixel loss only.
    Uswinsr,
    Ugswinsr,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mswinsr => "mswinsr",
            ModelKind::Uswinsr => "uswinsr",
            ModelKind::Ugswinsr => "ugswinsr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    /// Resume from this checkpoint when it exists.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
        }
    }
}

/// Everything a `train`, `sr` or `analyze` invocation needs. Every field
/// has a default, so `{}` is a complete configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub mswinsr: MswinConfig,
    pub ugswinsr: UgswinConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub paths: PathsConfig,
}

fn key_error(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn ensure(cond: bool, path: &str, message: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(key_error(path, message()))
    }
}

impl RunConfig {
    /// Parses and validates. Syntax errors carry line and column,
    /// type errors and constraint violations the offending key path.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            key_error(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn scale(&self) -> usize {
        match self.model {
            ModelKind::Mswinsr => self.mswinsr.scale,
            _ => self.ugswinsr.scale,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self.model {
            ModelKind::Mswinsr => self.mswinsr.in_channels,
            _ => self.ugswinsr.in_channels,
        }
    }

    /// Checks the input size against the selected architecture.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        match self.model {
            ModelKind::Mswinsr => self.mswinsr.check_input(h, w),
            _ => self.ugswinsr.check_input(h, w),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_mswinsr(&self.mswinsr)?;
        validate_ugswinsr(&self.ugswinsr)?;
        validate_train(&self.train)?;
        ensure(
            self.train.regime == Regime::L1 || self.model == ModelKind::Ugswinsr,
            "train.regime",
            || format!("regime `gan` requires model `ugswinsr`, not `{}`", self.model.name()),
        )?;
        let d = &self.dataset;
        ensure(d.hr_size > 0, "dataset.hr_size", || "must be positive".into())?;
        let s = self.scale();
        ensure(d.hr_size % s == 0, "dataset.hr_size", || {
            format!("{} is not a multiple of the scale {s}", d.hr_size)
        })?;
        let lr = d.hr_size / s;
        self.check_input(lr, lr)
            .map_err(|e| key_error("dataset.hr_size", format!("low-resolution size {lr}: {e}")))?;
        if self.model != ModelKind::Mswinsr && self.train.regime == Regime::Gan {
            self.ugswinsr
                .disc_config(d.hr_size)
                .levels()
                .map_err(|e| key_error("dataset.hr_size", e.to_string()))?;
        }
        ensure(d.dir.is_some() || d.synthetic > 0, "dataset.synthetic", || {
            "must be positive when no dataset.dir is given".into()
        })?;
        ensure(d.manifest.is_none() || d.dir.is_some(), "dataset.manifest", || {
            "requires dataset.dir".into()
        })?;
        if d.dir.is_none() {
            ensure(d.val_count < d.synthetic, "dataset.val_count", || {
                format!("{} leaves no training samples out of {}", d.val_count, d.synthetic)
            })?;
        }
        Ok(())
    }
}

fn validate_mswinsr(c: &MswinConfig) -> Result<()> {
    ensure(c.channels > 0, "mswinsr.channels", || "must be positive".into())?;
    ensure(c.heads > 0, "mswinsr.heads", || "must be positive".into())?;
    ensure(c.channels % c.heads == 0, "mswinsr.heads", || {
        format!("{} channels are not divisible by {} heads", c.channels, c.heads)
    })?;
    ensure(!c.depth.is_empty(), "mswinsr.depth", || "needs at least one stage".into())?;
    for (i, &l) in c.depth.iter().enumerate() {
        ensure(l > 0, &format!("mswinsr.depth[{i}]"), || "every stage needs at least one block".into())?;
    }
    ensure(c.window >= 2 && c.window % 2 == 0, "mswinsr.window", || {
        format!("must be even and at least 2, got {}", c.window)
    })?;
    ensure((2..=4).contains(&c.scale), "mswinsr.scale", || {
        format!("must be 2, 3 or 4, got {}", c.scale)
    })?;
    ensure(c.in_channels > 0, "mswinsr.in_channels", || "must be positive".into())?;
    c.validate().map_err(|e| key_error("mswinsr", e.to_string()))
}

fn validate_ugswinsr(c: &UgswinConfig) -> Result<()> {
    ensure(c.channels > 0, "ugswinsr.channels", || "must be positive".into())?;
    ensure(c.heads > 0 && c.channels % c.heads == 0, "ugswinsr.heads", || {
        format!("{} channels are not divisible by {} heads", c.channels, c.heads)
    })?;
    ensure(c.depth > 0, "ugswinsr.depth", || "must be at least 1".into())?;
    ensure(c.depth <= 16, "ugswinsr.depth", || format!("{} downsamplings is too many", c.depth))?;
    ensure(c.window > 0, "ugswinsr.window", || "must be positive".into())?;
    ensure((2..=4).contains(&c.scale), "ugswinsr.scale", || {
        format!("must be 2, 3 or 4, got {}", c.scale)
    })?;
    ensure(c.blocks_per_level > 0, "ugswinsr.blocks_per_level", || "must be positive".into())?;
    ensure(c.mlp_ratio > 0, "ugswinsr.mlp_ratio", || "must be positive".into())?;
    ensure(c.in_channels > 0, "ugswinsr.in_channels", || "must be positive".into())?;
    ensure(c.disc_channels > 0, "ugswinsr.disc_channels", || "must be positive".into())?;
    ensure(c.disc_heads > 0 && c.disc_channels % c.disc_heads == 0, "ugswinsr.disc_heads", || {
        format!("{} channels are not divisible by {} heads", c.disc_channels, c.disc_heads)
    })?;
    c.validate().map_err(|e| key_error("ugswinsr", e.to_string()))
}

fn validate_train(t: &TrainConfig) -> Result<()> {
    ensure(t.batch_size > 0, "train.batch_size", || "must be at least 1".into())?;
    ensure(t.epochs > 0 || t.max_steps.is_some(), "train.epochs", || "must be at least 1".into())?;
    ensure(t.lr.is_finite() && t.lr >= 0.0, "train.lr", || format!("must be finite and >= 0, got {}", t.lr))?;
    for (v, k) in [(t.beta1, "train.beta1"), (t.beta2, "train.beta2")] {
        ensure((0.0..1.0).contains(&v), k, || format!("must lie in [0, 1), got {v}"))?;
    }
    ensure(t.eps.is_finite() && t.eps > 0.0, "train.eps", || format!("must be positive, got {}", t.eps))?;
    for (v, k) in [(t.lambda_pixel, "train.lambda_pixel"), (t.lambda_adv, "train.lambda_adv")] {
        ensure(v.is_finite() && v >= 0.0, k, || format!("must be finite and >= 0, got {v}"))?;
    }
    ensure(t.lambda_pixel > 0.0 || t.lambda_adv > 0.0, "train.lambda_pixel", || {
        "lambda_pixel and lambda_adv cannot both be zero".into()
    })?;
    t.validate().map_err(|e| key_error("train", e.to_string()))
}

use std::path::Path;

use super::TrainError;
use crate::network::ModelConfig;

/// Training hyperparameters plus the model they train. Parsed from flat
/// `key=value` text; model keys are accepted alongside training keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr_initial: f64,
    pub lr_after: f64,
    /// First epoch trained at `lr_after`.
    pub lr_switch_epoch: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    pub lambda_warm: f64,
    /// Epochs `0..lambda_warm_epochs` carry the mixture-mean L2 term.
    pub lambda_warm_epochs: usize,
    pub seed: u64,
    /// Save weights every this many steps; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            patch_size: 32,
            lr_initial: 1e-4,
            lr_after: 1e-5,
            lr_switch_epoch: 13,
            epochs: 50,
            max_steps: 0,
            lambda_warm: 0.6,
            lambda_warm_epochs: 3,
            seed: 0,
            checkpoint_every: 0,
            model: ModelConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
    value
        .trim()
        .parse()
        .map_err(|_| TrainError::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let fail = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be >= 1".into());
        }
        if !(self.lr_initial > 0.0 && self.lr_after > 0.0) {
            return fail("learning rates must be > 0".into());
        }
        if self.lambda_warm.is_nan() || self.lambda_warm < 0.0 {
            return fail("lambda_warm must be >= 0".into());
        }
        let m = self.model.pad_multiple();
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(m) {
            return fail(format!(
                "patch_size {} must be a positive multiple of {m}",
                self.patch_size
            ));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "lr_initial" => self.lr_initial = parse(key, value)?,
            "lr_after" => self.lr_after = parse(key, value)?,
            "lr_switch_epoch" => self.lr_switch_epoch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "lambda_warm" => self.lambda_warm = parse(key, value)?,
            "lambda_warm_epochs" => self.lambda_warm_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => {
                if !self.model.set(key, value)? {
                    return Err(TrainError::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Parses `key=value` lines (`#` comments) over the defaults.
    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| TrainError::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.lr_switch_epoch {
            self.lr_initial
        } else {
            self.lr_after
        }
    }

    /// Weight of the mixture-mean L2 term; exactly zero after the warm-up.
    pub fn lambda(&self, epoch: usize) -> f64 {
        if epoch < self.lambda_warm_epochs {
            self.lambda_warm
        } else {
            0.0
        }
    }
}

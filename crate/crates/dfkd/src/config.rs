//! Run configuration: a flat TOML file, with CLI flags layered on top.

use crate::error::{Error, Result};
use crate::types::{DiscrepancyKind, GenLossWeights, KdResponseKind};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Optimizer selection for one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Adam => write!(f, "adam"),
            OptimizerKind::Sgd => write!(f, "sgd"),
        }
    }
}

fn default_epochs() -> u64 {
    200
}
fn default_k() -> u64 {
    5
}
fn default_batch() -> usize {
    256
}
fn default_latent() -> usize {
    100
}
fn default_capacity() -> usize {
    10
}
fn default_period() -> u64 {
    1
}
fn default_alpha() -> f32 {
    0.1
}
fn default_beta() -> f32 {
    5.0
}
fn default_seed() -> u64 {
    0
}
fn default_ngf() -> usize {
    64
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_student_lr() -> f32 {
    2e-3
}
fn default_generator_lr() -> f32 {
    0.2
}
fn default_decay_factor() -> f32 {
    0.1
}
fn default_probe_every() -> u64 {
    1
}
fn default_true() -> bool {
    true
}

/// Everything a distillation run needs, beyond the teacher checkpoint.
///
/// The synthetic image shape and class count come from the teacher
/// checkpoint, not from here; the run itself needs no dataset.
/// `probe_dataset` only controls optional held-out accuracy probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    /// Student updates per epoch; the generator gets one update per epoch.
    #[serde(default = "default_k")]
    pub k_student_steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    /// Replay buffer size in batches; 0 disables the buffer entirely.
    #[serde(default = "default_capacity")]
    pub bank_capacity_batches: usize,
    /// Store a fresh synthetic batch every this many epochs.
    #[serde(default = "default_period")]
    pub bank_update_period_epochs: u64,
    #[serde(default)]
    pub discrepancy_kind: DiscrepancyKind,
    /// Weight of the activation term in the generator objective.
    #[serde(default = "default_alpha")]
    pub alpha: f32,
    /// Weight of the class-balance term in the generator objective.
    #[serde(default = "default_beta")]
    pub beta: f32,
    #[serde(default)]
    pub kd_response_kind: KdResponseKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub student_arch: String,
    pub generator_arch: String,
    #[serde(default = "default_ngf")]
    pub generator_feature_maps: usize,
    #[serde(default = "default_optimizer")]
    pub student_optimizer: OptimizerKind,
    #[serde(default = "default_student_lr")]
    pub student_lr: f32,
    #[serde(default = "default_optimizer")]
    pub generator_optimizer: OptimizerKind,
    #[serde(default = "default_generator_lr")]
    pub generator_lr: f32,
    /// Epochs at which both learning rates are multiplied by
    /// `lr_decay_factor`. Empty means constant learning rates.
    #[serde(default)]
    pub lr_decay_epochs: Vec<u64>,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f32,
    /// Dataset used only to probe student accuracy during training.
    #[serde(default)]
    pub probe_dataset: Option<String>,
    #[serde(default = "default_probe_every")]
    pub probe_every_epochs: u64,
    /// Ablation: include the teacher-matching terms (confidence, activation,
    /// class balance) in the generator objective.
    #[serde(default = "default_true")]
    pub match_enabled: bool,
    /// Ablation: include the student-disagreement term in the generator
    /// objective.
    #[serde(default = "default_true")]
    pub discrepancy_enabled: bool,
}

impl TrainConfig {
    /// Parse a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and parse a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: u64) -> Result<()> {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
            Ok(())
        }
        positive("epochs", self.epochs)?;
        positive("k_student_steps", self.k_student_steps)?;
        positive("batch_size", self.batch_size as u64)?;
        positive("latent_dim", self.latent_dim as u64)?;
        positive("bank_update_period_epochs", self.bank_update_period_epochs)?;
        positive("probe_every_epochs", self.probe_every_epochs)?;
        GenLossWeights::new(self.alpha, self.beta)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.student_arch.is_empty() || self.generator_arch.is_empty() {
            return Err(Error::Config(
                "student_arch and generator_arch must be set".into(),
            ));
        }
        if self.generator_feature_maps < 2 {
            return Err(Error::Config("generator_feature_maps must be >= 2".into()));
        }
        for (name, lr) in [("student_lr", self.student_lr), ("generator_lr", self.generator_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.lr_decay_factor.is_finite()
            && self.lr_decay_factor > 0.0
            && self.lr_decay_factor <= 1.0)
        {
            return Err(Error::Config(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_epochs.iter().any(|&e| e == 0) {
            return Err(Error::Config("lr_decay_epochs entries must be >= 1".into()));
        }
        if !self.match_enabled && !self.discrepancy_enabled {
            return Err(Error::Config(
                "match and discrepancy terms are both disabled; the generator objective would be empty"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn gen_loss_weights(&self) -> GenLossWeights {
        GenLossWeights::new(self.alpha, self.beta).expect("validated at construction")
    }

    /// Learning-rate multiplier accumulated up to (and including) `epoch`.
    pub fn lr_multiplier_at(&self, epoch: u64) -> f32 {
        let hits = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr_decay_factor.powi(hits as i32)
    }
}

/// CLI flag overrides layered onto a config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub no_bank: bool,
    pub discrepancy: Option<DiscrepancyKind>,
    pub no_match: bool,
    pub no_discrepancy: bool,
}

impl Overrides {
    pub fn apply(self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        if self.no_bank {
            cfg.bank_capacity_batches = 0;
        }
        if let Some(kind) = self.discrepancy {
            cfg.discrepancy_kind = kind;
        }
        if self.no_match {
            cfg.match_enabled = false;
        }
        if self.no_discrepancy {
            cfg.discrepancy_enabled = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

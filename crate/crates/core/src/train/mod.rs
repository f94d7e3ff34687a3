//! Optimizer, learning-rate schedule, masked-language-model pre-training
//! and supervised fine-tuning.

mod loops;
mod mlm;
mod optim;

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Task;
use crate::evalfuse::EvalError;
use crate::model::ModelError;

pub use loops::{finetune, predict_dataset, pretrain_mlm};
pub use mlm::{mlm_corrupt, Corruption, MaskRule, MlmBatch};
pub use optim::{adamw_step, adamw_update, lr_schedule, AdamHyper, AdamState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("sequence has no maskable (non-special) tokens")]
    NothingMaskable,
    #[error("post {id:?} has no {task} label")]
    MissingLabel { id: String, task: Task },
    #[error("{task} needs a {expected}-class head, model has {found}")]
    ClassCountMismatch { task: Task, expected: usize, found: String },
    #[error("corpus {0:?} is empty or has nothing to train on")]
    EmptyCorpus(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    MlmPretrain,
    FinetuneFull,
    FinetuneHeadOnly,
}

/// How several pre-training corpora are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusMix {
    /// All epochs on the first corpus, then all epochs on the next.
    Sequential,
    /// One pool, shuffled together.
    Union,
}

impl FromStr for CorpusMix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(CorpusMix::Sequential),
            "union" => Ok(CorpusMix::Union),
            o => Err(format!("unknown mix {o:?} (expected sequential or union)")),
        }
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "mlm_pretrain" => Ok(TrainMode::MlmPretrain),
            "finetune_full" | "full" => Ok(TrainMode::FinetuneFull),
            "finetune_head_only" | "head_only" => Ok(TrainMode::FinetuneHeadOnly),
            _ => Err(format!(
                "unknown mode {s:?} (expected mlm_pretrain, finetune_full or finetune_head_only)"
            )),
        }
    }
}

/// Optimization hyperparameters. Every field has a default, so partial
/// config files are accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub max_len: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub mlm_mask_prob: f64,
    pub mlm_replace_mask: f64,
    pub mlm_replace_random: f64,
    /// Gradient-norm clipping threshold; off when absent.
    pub max_grad_norm: Option<f64>,
    pub mix: CorpusMix,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 5e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 0,
            max_len: 128,
            seed: 0,
            mode: TrainMode::FinetuneFull,
            mlm_mask_prob: 0.15,
            mlm_replace_mask: 0.8,
            mlm_replace_random: 0.1,
            max_grad_norm: None,
            mix: CorpusMix::Sequential,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |s: String| Err(TrainError::Config(s));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_len < 3 {
            return bad(format!("max_len {} is below 3", self.max_len));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad(format!("adam_epsilon must be positive, got {}", self.adam_epsilon));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.mlm_mask_prob > 0.0 && self.mlm_mask_prob < 1.0) {
            return bad(format!("mlm_mask_prob must lie in (0, 1), got {}", self.mlm_mask_prob));
        }
        let (m, r) = (self.mlm_replace_mask, self.mlm_replace_random);
        if !(m >= 0.0 && r >= 0.0 && m + r <= 1.0) {
            return bad(format!(
                "mlm_replace_mask ({m}) and mlm_replace_random ({r}) must be non-negative with sum at most 1"
            ));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return bad(format!("max_grad_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn mask_rule(&self) -> MaskRule {
        MaskRule {
            mask_prob: self.mlm_mask_prob,
            replace_mask: self.mlm_replace_mask,
            replace_random: self.mlm_replace_random,
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper::from(self)
    }
}

/// Named hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    XlmrPretrain,
    XlmrFinetune,
    MbertFinetune,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::XlmrPretrain, Preset::XlmrFinetune, Preset::MbertFinetune];

    pub fn name(self) -> &'static str {
        match self {
            Preset::XlmrPretrain => "xlmr-pretrain",
            Preset::XlmrFinetune => "xlmr-finetune",
            Preset::MbertFinetune => "mbert-finetune",
        }
    }

    pub fn config(self) -> TrainingConfig {
        let base = TrainingConfig {
            max_len: 384,
            adam_epsilon: 1e-8,
            ..TrainingConfig::default()
        };
        match self {
            Preset::XlmrPretrain => TrainingConfig {
                epochs: 25,
                batch_size: 16,
                learning_rate: 5e-5,
                mode: TrainMode::MlmPretrain,
                ..base
            },
            Preset::XlmrFinetune => TrainingConfig {
                epochs: 3,
                batch_size: 8,
                learning_rate: 1e-5,
                warmup_steps: 500,
                weight_decay: 0.01,
                ..base
            },
            // plain Adam: no weight decay
            Preset::MbertFinetune => TrainingConfig {
                epochs: 6,
                batch_size: 8,
                learning_rate: 1e-5,
                weight_decay: 0.0,
                ..base
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            format!(
                "unknown preset {s:?} (expected one of {})",
                Preset::ALL.map(Preset::name).join(", ")
            )
        })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub corpus: String,
    /// 1-based, counted per corpus.
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Optimizer updates applied in this epoch.
    pub steps: usize,
    /// Learning rate of the last update.
    pub learning_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_macro_f1: Option<f64>,
}

pub fn history_to_jsonl(history: &[EpochRecord]) -> String {
    let mut s = String::new();
    for r in history {
        s.push_str(&serde_json::to_string(r).expect("serializable"));
        s.push('\n');
    }
    s
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(history_to_jsonl(history).as_bytes()).map_err(io)
}

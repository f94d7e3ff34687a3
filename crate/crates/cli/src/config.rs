//! Experiment config file and its resolution against presets and flags.
//!
//! ```toml
//! seed = 7
//! task = "task2"
//! pipeline = "p4"
//!
//! [paths]
//! train = "data/train.tsv"
//! test = "data/test.tsv"
//! external = ["data/hateval.tsv"]
//! vocab = "out/vocab.txt"
//! checkpoint = "out/pretrained.ckpt"
//! dict = "fixtures/mock_dict.tsv"
//!
//! [tokenizer]
//! max_vocab = 8000
//! min_freq = 2
//! uncased = true
//!
//! [model]        # any encoder field; vocab_size comes from the vocabulary
//! d_model = 128
//!
//! [training]     # a preset plus any field overrides
//! preset = "mbert-finetune"
//! epochs = 4
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use exist_core::corpus::Task;
use exist_core::model::EncoderConfig;
use exist_core::preprocess::PipelineId;
use exist_core::tokenizer::DEFAULT_MAX_VOCAB;
use exist_core::train::{Preset, TrainingConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub external: Vec<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub dict: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerParams {
    pub max_vocab: usize,
    pub min_freq: usize,
    pub uncased: bool,
}

impl Default for TokenizerParams {
    fn default() -> Self {
        TokenizerParams {
            max_vocab: DEFAULT_MAX_VOCAB,
            min_freq: 2,
            uncased: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub task: Option<Task>,
    pub pipeline: Option<PipelineId>,
    pub paths: Paths,
    pub tokenizer: TokenizerParams,
    pub model: toml::Table,
    pub training: toml::Table,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Encoder shape: defaults overlaid with the `[model]` table.
    pub fn encoder(&self) -> Result<EncoderConfig> {
        overlay(EncoderConfig::default(), &self.model).context("invalid [model] section")
    }

    /// Training hyperparameters: the named preset (flag first, then the
    /// `preset` key) or the defaults, overlaid with the `[training]` table.
    pub fn training(&self, preset_flag: Option<&str>) -> Result<(Option<Preset>, TrainingConfig)> {
        let mut table = self.training.clone();
        let from_file = match table.remove("preset") {
            Some(toml::Value::String(s)) => Some(s),
            Some(other) => bail!("training.preset must be a string, got {other}"),
            None => None,
        };
        let preset = preset_flag
            .map(str::to_string)
            .or(from_file)
            .map(|p| p.parse::<Preset>().map_err(anyhow::Error::msg))
            .transpose()?;
        let base = preset.map(Preset::config).unwrap_or_default();
        let cfg = overlay(base, &table).context("invalid [training] section")?;
        Ok((preset, cfg))
    }
}

fn overlay<T: Serialize + DeserializeOwned>(base: T, over: &toml::Table) -> Result<T> {
    let mut value = toml::Value::try_from(&base)?;
    let table = value.as_table_mut().expect("struct serializes to a table");
    for (k, v) in over {
        table.insert(k.clone(), v.clone());
    }
    Ok(value.try_into()?)
}

/// Everything a command actually ran with, echoed next to its artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub tokenizer: TokenizerParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<EncoderConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
}

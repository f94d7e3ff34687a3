//! Post-layer-norm transformer encoder with an MLM or classification head.
//!
//! Everything runs in `f64` on the CPU, one sequence at a time. Gradients are
//! derived by hand in [`backward`] and checked against finite differences in
//! the test suite.

mod backward;
mod checkpoint;
mod forward;

use std::fmt;

use ndarray::{Array, Array1, Array2, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use forward::{ForwardTrace, LayerCache};

use crate::tokenizer::Encoding;

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} at position {position} is out of range for vocab size {vocab_size}")]
    IdOutOfRange {
        id: u32,
        position: usize,
        vocab_size: usize,
    },
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("sequence has no attended positions")]
    NothingAttended,
    #[error("no masked positions")]
    NoMaskedPositions,
    #[error("targets do not fit the model: {0}")]
    TargetMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub dropout_prob: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 8000,
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ffn: 512,
            max_len: 128,
            dropout_prob: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Shape of the multilingual BERT base model (12 layers, 768 hidden, 12 heads).
    pub fn bert_base(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 768,
            n_layers: 12,
            n_heads: 12,
            d_ffn: 3072,
            max_len: 384,
            dropout_prob: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |s: String| Err(ModelError::InvalidConfig(s));
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_len < 3 {
            return bad(format!("max_len {} is below 3", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout_prob {} is outside [0, 1)", self.dropout_prob));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form parameter count.
    pub fn param_count(&self, head: HeadKind) -> usize {
        let (v, d, f, l) = (self.vocab_size, self.d_model, self.d_ffn, self.max_len);
        // q/k/v/o with biases, two ffn layers with biases, two layer norms
        let per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * (2 * d);
        let head = match head {
            HeadKind::Mlm => v,
            HeadKind::Classifier { n_classes } => d * n_classes + n_classes,
        };
        v * d + l * d + self.n_layers * per_layer + head
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadKind {
    /// Output projection tied to the token embeddings, plus a vocab bias.
    Mlm,
    Classifier { n_classes: usize },
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadKind::Mlm => f.write_str("mlm"),
            HeadKind::Classifier { n_classes } => write!(f, "classifier({n_classes})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Mlm { bias: Array1<f64> },
    Classifier { weight: Array2<f64>, bias: Array1<f64> },
}

impl HeadParams {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadParams::Mlm { .. } => HeadKind::Mlm,
            HeadParams::Classifier { bias, .. } => HeadKind::Classifier { n_classes: bias.len() },
        }
    }
}

/// All trainable tensors. Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub head: HeadParams,
}

/// Name, shape and optimizer treatment of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Matrices take weight decay; biases and layer-norm parameters do not.
    pub decay: bool,
    /// Part of the task head rather than the encoder.
    pub head: bool,
}

fn entry<D: Dimension>(name: String, a: &Array<f64, D>, decay: bool, head: bool) -> (TensorInfo, &[f64]) {
    let info = TensorInfo {
        name,
        shape: a.shape().to_vec(),
        decay,
        head,
    };
    (info, a.as_slice().expect("standard layout"))
}

fn entry_mut<D: Dimension>(name: String, a: &mut Array<f64, D>, decay: bool, head: bool) -> (TensorInfo, &mut [f64]) {
    let info = TensorInfo {
        name,
        shape: a.shape().to_vec(),
        decay,
        head,
    };
    (info, a.as_slice_mut().expect("standard layout"))
}

// Lists every tensor once so that `tensors` and `tensors_mut` agree on order.
macro_rules! tensor_list {
    ($p:expr, $ent:ident, $iter:ident, $($r:tt)+) => {{
        let mut out = Vec::with_capacity(4 + 16 * $p.layers.len());
        out.push($ent("tok_emb".into(), $($r)+ $p.tok_emb, true, false));
        out.push($ent("pos_emb".into(), $($r)+ $p.pos_emb, true, false));
        for (i, l) in $p.layers.$iter().enumerate() {
            out.push($ent(format!("layer{i}.wq"), $($r)+ l.wq, true, false));
            out.push($ent(format!("layer{i}.bq"), $($r)+ l.bq, false, false));
            out.push($ent(format!("layer{i}.wk"), $($r)+ l.wk, true, false));
            out.push($ent(format!("layer{i}.bk"), $($r)+ l.bk, false, false));
            out.push($ent(format!("layer{i}.wv"), $($r)+ l.wv, true, false));
            out.push($ent(format!("layer{i}.bv"), $($r)+ l.bv, false, false));
            out.push($ent(format!("layer{i}.wo"), $($r)+ l.wo, true, false));
            out.push($ent(format!("layer{i}.bo"), $($r)+ l.bo, false, false));
            out.push($ent(format!("layer{i}.ln1_gain"), $($r)+ l.ln1_gain, false, false));
            out.push($ent(format!("layer{i}.ln1_bias"), $($r)+ l.ln1_bias, false, false));
            out.push($ent(format!("layer{i}.w1"), $($r)+ l.w1, true, false));
            out.push($ent(format!("layer{i}.b1"), $($r)+ l.b1, false, false));
            out.push($ent(format!("layer{i}.w2"), $($r)+ l.w2, true, false));
            out.push($ent(format!("layer{i}.b2"), $($r)+ l.b2, false, false));
            out.push($ent(format!("layer{i}.ln2_gain"), $($r)+ l.ln2_gain, false, false));
            out.push($ent(format!("layer{i}.ln2_bias"), $($r)+ l.ln2_bias, false, false));
        }
        match $($r)+ $p.head {
            HeadParams::Mlm { bias } => out.push($ent("mlm.bias".into(), bias, false, true)),
            HeadParams::Classifier { weight, bias } => {
                out.push($ent("cls.weight".into(), weight, true, true));
                out.push($ent("cls.bias".into(), bias, false, true));
            }
        }
        out
    }};
}

impl Params {
    /// Tensors in a fixed order shared by checkpoints and the optimizer.
    pub fn tensors(&self) -> Vec<(TensorInfo, &[f64])> {
        tensor_list!(self, entry, iter, &)
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorInfo, &mut [f64])> {
        tensor_list!(self, entry_mut, iter_mut, &mut)
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Params {
        let mut p = self.clone();
        for (_, t) in p.tensors_mut() {
            t.fill(0.0);
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

fn trunc_normal<R: Rng>(rng: &mut R, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            break z * INIT_STD;
        }
    })
}

fn init_layer<R: Rng>(rng: &mut R, d: usize, f: usize) -> LayerParams {
    LayerParams {
        wq: trunc_normal(rng, (d, d)),
        bq: Array1::zeros(d),
        wk: trunc_normal(rng, (d, d)),
        bk: Array1::zeros(d),
        wv: trunc_normal(rng, (d, d)),
        bv: Array1::zeros(d),
        wo: trunc_normal(rng, (d, d)),
        bo: Array1::zeros(d),
        ln1_gain: Array1::ones(d),
        ln1_bias: Array1::zeros(d),
        w1: trunc_normal(rng, (d, f)),
        b1: Array1::zeros(f),
        w2: trunc_normal(rng, (f, d)),
        b2: Array1::zeros(d),
        ln2_gain: Array1::ones(d),
        ln2_bias: Array1::zeros(d),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: EncoderConfig,
    params: Params,
}

impl EncoderModel {
    /// Weights drawn from a normal with std 0.02 truncated at two standard
    /// deviations; biases zero, layer-norm gains one. Deterministic per seed.
    pub fn init(config: EncoderConfig, head: HeadKind) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, f) = (config.d_model, config.d_ffn);
        let tok_emb = trunc_normal(&mut rng, (config.vocab_size, d));
        let pos_emb = trunc_normal(&mut rng, (config.max_len, d));
        let layers = (0..config.n_layers).map(|_| init_layer(&mut rng, d, f)).collect();
        let head = Self::init_head(&config, head, &mut rng)?;
        Ok(EncoderModel {
            config,
            params: Params {
                tok_emb,
                pos_emb,
                layers,
                head,
            },
        })
    }

    fn init_head<R: Rng>(config: &EncoderConfig, head: HeadKind, rng: &mut R) -> Result<HeadParams, ModelError> {
        Ok(match head {
            HeadKind::Mlm => HeadParams::Mlm {
                bias: Array1::zeros(config.vocab_size),
            },
            HeadKind::Classifier { n_classes } => {
                if n_classes < 2 {
                    return Err(ModelError::InvalidConfig(format!(
                        "classifier needs at least 2 classes, got {n_classes}"
                    )));
                }
                HeadParams::Classifier {
                    weight: trunc_normal(rng, (config.d_model, n_classes)),
                    bias: Array1::zeros(n_classes),
                }
            }
        })
    }

    /// Swap the task head, keeping the encoder. The new head is initialized
    /// from `seed`.
    pub fn with_head(mut self, head: HeadKind, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params.head = Self::init_head(&self.config, head, &mut rng)?;
        Ok(self)
    }

    pub fn from_parts(config: EncoderConfig, params: Params) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = config.param_count(params.head.kind());
        let reference = EncoderModel::init(
            EncoderConfig {
                seed: 0,
                ..config.clone()
            },
            params.head.kind(),
        )?;
        let want: Vec<_> = reference.params.tensors().into_iter().map(|(i, _)| i).collect();
        let got: Vec<_> = params.tensors().into_iter().map(|(i, _)| i).collect();
        if want != got || params.num_params() != expected {
            return Err(ModelError::Checkpoint("parameter shapes do not match the config".into()));
        }
        if !params.all_finite() {
            return Err(ModelError::Checkpoint("non-finite parameter".into()));
        }
        Ok(EncoderModel { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn head_kind(&self) -> HeadKind {
        self.params.head.kind()
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self.head_kind() {
            HeadKind::Classifier { n_classes } => Some(n_classes),
            HeadKind::Mlm => None,
        }
    }

    /// Softmax class probabilities for one encoding, dropout off.
    pub fn predict_probs(&self, enc: &Encoding) -> Result<Vec<f64>, ModelError> {
        let trace = self.forward(&enc.trimmed(), None)?;
        let logits = trace
            .class_logits()
            .ok_or_else(|| ModelError::TargetMismatch("model has no classification head".into()))?;
        Ok(softmax(logits.as_slice().unwrap()))
    }
}

/// Targets for one batch, aligned with the batch encodings.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// Per sequence, per position: the original id at corrupted positions,
    /// `None` where the position is ignored.
    Mlm(&'a [Vec<Option<u32>>]),
    Classes(&'a [usize]),
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[target]` and its gradient with respect to the logits.
pub(crate) fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|x| (x - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[target];
    let mut grad: Vec<f64> = logits.iter().map(|x| (x - log_z).exp()).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

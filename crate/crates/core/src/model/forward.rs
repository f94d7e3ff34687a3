use ndarray::{s, Array1, Array2, ArrayView1};
use rand::{Rng, RngCore};

use super::{EncoderModel, HeadParams, ModelError, LAYER_NORM_EPS};
use crate::tokenizer::Encoding;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(super) fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh())
}

pub(super) fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
}

/// Normalized input and inverse standard deviation per row.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, inv_std })
}

/// Inverted-dropout multiplier: 0 with probability `p`, else `1/(1-p)`.
fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut (dyn RngCore + '_)) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < p { 0.0 } else { keep })
}

/// Intermediates of one encoder layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Attention probabilities, one `len × len` matrix per head.
    pub probs: Vec<Array2<f64>>,
    pub context: Array2<f64>,
    pub attn_drop: Option<Array2<f64>>,
    pub ln1: LnCache,
    pub h1: Array2<f64>,
    pub z: Array2<f64>,
    pub act: Array2<f64>,
    pub ffn_drop: Option<Array2<f64>>,
    pub ln2: LnCache,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub ids: Vec<u32>,
    pub emb_drop: Option<Array2<f64>>,
    pub layers: Vec<LayerCache>,
    /// Final hidden states, `len × d_model`.
    pub hidden: Array2<f64>,
    /// Classifier logits; `None` for the MLM head.
    pub logits: Option<Array1<f64>>,
}

impl ForwardTrace {
    pub fn cls_vector(&self) -> ArrayView1<'_, f64> {
        self.hidden.row(0)
    }

    pub fn class_logits(&self) -> Option<&Array1<f64>> {
        self.logits.as_ref()
    }

    /// Attention probabilities of `layer`, `head`.
    pub fn attention(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer].probs[head]
    }
}

impl EncoderModel {
    /// Run the encoder over one sequence. Dropout is applied only when an
    /// `rng` is supplied (training mode). Padding positions are excluded as
    /// attention keys.
    pub fn forward<'r>(&self, enc: &Encoding, mut rng: Option<&mut (dyn RngCore + 'r)>) -> Result<ForwardTrace, ModelError> {
        let cfg = &self.config;
        let p = &self.params;
        let n = enc.ids.len();
        if n > cfg.max_len {
            return Err(ModelError::TooLong {
                len: n,
                max_len: cfg.max_len,
            });
        }
        if let Some((position, &id)) = enc.ids.iter().enumerate().find(|(_, &id)| id as usize >= cfg.vocab_size) {
            return Err(ModelError::IdOutOfRange {
                id,
                position,
                vocab_size: cfg.vocab_size,
            });
        }
        if !enc.attention_mask.contains(&1) || enc.attention_mask.len() != n {
            return Err(ModelError::NothingAttended);
        }
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let drop_p = cfg.dropout_prob;
        let mut mask_for = |shape: (usize, usize)| match rng.as_deref_mut() {
            Some(r) if drop_p > 0.0 => Some(dropout_mask(shape, drop_p, r)),
            _ => None,
        };
        let key_bias: Vec<f64> = enc
            .attention_mask
            .iter()
            .map(|&m| if m == 1 { 0.0 } else { f64::NEG_INFINITY })
            .collect();

        let mut x = Array2::zeros((n, d));
        for (i, &id) in enc.ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &p.tok_emb.row(id as usize);
            row += &p.pos_emb.row(i);
        }
        let emb_drop = mask_for((n, d));
        if let Some(m) = &emb_drop {
            x *= m;
        }

        let mut layers = Vec::with_capacity(p.layers.len());
        for lp in &p.layers {
            let q = x.dot(&lp.wq) + &lp.bq;
            let k = x.dot(&lp.wk) + &lp.bk;
            let v = x.dot(&lp.wv) + &lp.bv;
            let mut context = Array2::zeros((n, d));
            let mut probs = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                for mut row in scores.rows_mut() {
                    for (sv, b) in row.iter_mut().zip(&key_bias) {
                        *sv += b;
                    }
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|sv| (sv - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
                context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                probs.push(scores);
            }
            let mut attn = context.dot(&lp.wo) + &lp.bo;
            let attn_drop = mask_for((n, d));
            if let Some(m) = &attn_drop {
                attn *= m;
            }
            let (h1, ln1) = layer_norm(&(&x + &attn), &lp.ln1_gain, &lp.ln1_bias);
            let z = h1.dot(&lp.w1) + &lp.b1;
            let act = z.mapv(gelu);
            let mut ffn = act.dot(&lp.w2) + &lp.b2;
            let ffn_drop = mask_for((n, d));
            if let Some(m) = &ffn_drop {
                ffn *= m;
            }
            let (out, ln2) = layer_norm(&(&h1 + &ffn), &lp.ln2_gain, &lp.ln2_bias);
            layers.push(LayerCache {
                input: std::mem::replace(&mut x, out),
                q,
                k,
                v,
                probs,
                context,
                attn_drop,
                ln1,
                h1,
                z,
                act,
                ffn_drop,
                ln2,
            });
        }

        let logits = match &p.head {
            HeadParams::Classifier { weight, bias } => Some(x.row(0).dot(weight) + bias),
            HeadParams::Mlm { .. } => None,
        };
        Ok(ForwardTrace {
            ids: enc.ids.clone(),
            emb_drop,
            layers,
            hidden: x,
            logits,
        })
    }

    /// Vocabulary logits at `position`, through the tied output projection.
    pub fn mlm_logits(&self, trace: &ForwardTrace, position: usize) -> Option<Array1<f64>> {
        match &self.params.head {
            HeadParams::Mlm { bias } => Some(self.params.tok_emb.dot(&trace.hidden.row(position)) + bias),
            HeadParams::Classifier { .. } => None,
        }
    }
}

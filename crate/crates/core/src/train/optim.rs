use serde::{Deserialize, Serialize};

use super::{TrainError, TrainingConfig};
use crate::model::Params;

/// Learning rate at optimizer step `step` (1-based): a linear ramp from 0 to
/// `base_lr` over `warmup_steps`, then linear decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> Result<f64, TrainError> {
    if warmup_steps >= total_steps {
        return Err(TrainError::Config(format!(
            "warmup_steps ({warmup_steps}) must be below the total number of optimizer steps ({total_steps}); \
             lower warmup_steps or train for more epochs"
        )));
    }
    if step == 0 || step > total_steps {
        return Err(TrainError::Config(format!("step {step} outside 1..={total_steps}")));
    }
    Ok(if step <= warmup_steps {
        base_lr * step as f64 / warmup_steps as f64
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl From<&TrainingConfig> for AdamHyper {
    fn from(cfg: &TrainingConfig) -> Self {
        AdamHyper {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
            weight_decay: cfg.weight_decay,
        }
    }
}

/// One AdamW update of a flat tensor at step `t` (1-based).
///
/// Decay is decoupled: `p ← p − lr·wd·p` first, then the bias-corrected
/// Adam step `p ← p − lr·m̂/(√v̂ + ε)`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, hp: &AdamHyper, decay: bool) {
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    let shrink = if decay { 1.0 - lr * hp.weight_decay } else { 1.0 };
    for i in 0..p.len() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] = p[i] * shrink - lr * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
}

/// First and second moments for every tensor, plus the update count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// Apply one AdamW step to every tensor (or, with `head_only`, to the
/// classification head only) at learning rate `lr`.
///
/// Weight decay skips biases and layer-norm parameters. With
/// `max_grad_norm` set, gradients of the updated tensors are rescaled so
/// their joint L2 norm does not exceed it. A non-finite gradient aborts the
/// step before anything is modified.
pub fn adamw_step(
    params: &mut Params,
    grads: &Params,
    state: &mut AdamState,
    hp: &AdamHyper,
    lr: f64,
    head_only: bool,
    max_grad_norm: Option<f64>,
) -> Result<(), TrainError> {
    let g_list = grads.tensors();
    let selected = |head: bool| !head_only || head;
    let mut sq = 0.0;
    for (info, g) in &g_list {
        if !selected(info.head) {
            continue;
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient(info.name.clone()));
        }
        sq += g.iter().map(|x| x * x).sum::<f64>();
    }
    let scale = match max_grad_norm {
        Some(max) if sq.sqrt() > max => max / sq.sqrt(),
        _ => 1.0,
    };
    state.t += 1;
    let mut buf = Vec::new();
    let p_list = params.tensors_mut();
    let m_list = state.m.tensors_mut();
    let v_list = state.v.tensors_mut();
    for ((((info, p), (_, g)), (_, m)), (_, v)) in p_list.into_iter().zip(&g_list).zip(m_list).zip(v_list) {
        if !selected(info.head) {
            continue;
        }
        if scale != 1.0 {
            buf.clear();
            buf.extend(g.iter().map(|x| x * scale));
            adamw_update(p, &buf, m, v, state.t, lr, hp, info.decay);
        } else {
            adamw_update(p, g, m, v, state.t, lr, hp, info.decay);
        }
    }
    Ok(())
}

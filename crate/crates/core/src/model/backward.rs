use ndarray::{s, Array1, Array2, Axis};
use rand::RngCore;

use super::forward::{gelu_grad, ForwardTrace, LnCache};
use super::{cross_entropy, EncoderModel, HeadParams, ModelError, Params, Targets};
use crate::tokenizer::Encoding;

/// Gradient of a layer norm with respect to its input; accumulates the gain
/// and bias gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let inv = cache.inv_std[i];
        dx.row_mut(i)
            .assign(&((&g - mean_g - &(&xh * mean_gx)) * inv));
    }
    dx
}

impl EncoderModel {
    /// Backpropagate `d_hidden` (gradient of the loss with respect to the
    /// final hidden states) through the encoder into `grads`.
    pub(crate) fn backward_encoder(&self, trace: &ForwardTrace, d_hidden: Array2<f64>, grads: &mut Params) {
        let cfg = &self.config;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dx = d_hidden;

        for (l, cache) in trace.layers.iter().enumerate().rev() {
            let lp = &self.params.layers[l];
            let g = &mut grads.layers[l];

            // out = LN2(h1 + ffn)
            let d_r2 = layer_norm_backward(&dx, &cache.ln2, &lp.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
            let mut d_ffn = d_r2.clone();
            if let Some(m) = &cache.ffn_drop {
                d_ffn *= m;
            }
            g.w2 += &cache.act.t().dot(&d_ffn);
            g.b2 += &d_ffn.sum_axis(Axis(0));
            let d_act = d_ffn.dot(&lp.w2.t());
            let d_z = d_act * &cache.z.mapv(gelu_grad);
            g.w1 += &cache.h1.t().dot(&d_z);
            g.b1 += &d_z.sum_axis(Axis(0));
            let d_h1 = d_r2 + d_z.dot(&lp.w1.t());

            // h1 = LN1(x + attn)
            let d_r1 = layer_norm_backward(&d_h1, &cache.ln1, &lp.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
            let mut d_attn = d_r1.clone();
            if let Some(m) = &cache.attn_drop {
                d_attn *= m;
            }
            g.wo += &cache.context.t().dot(&d_attn);
            g.bo += &d_attn.sum_axis(Axis(0));
            let d_context = d_attn.dot(&lp.wo.t());

            let mut dq = Array2::zeros(cache.q.raw_dim());
            let mut dk = Array2::zeros(cache.k.raw_dim());
            let mut dv = Array2::zeros(cache.v.raw_dim());
            for (h, probs) in cache.probs.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let dc = d_context.slice(cols);
                let d_probs = dc.dot(&cache.v.slice(cols).t());
                dv.slice_mut(cols).assign(&probs.t().dot(&dc));
                // softmax backward, row-wise
                let mut d_scores = probs * &d_probs;
                let row_dot = d_scores.sum_axis(Axis(1));
                for (mut row, (p_row, rd)) in d_scores.rows_mut().into_iter().zip(probs.rows().into_iter().zip(&row_dot)) {
                    row.scaled_add(-rd, &p_row);
                }
                d_scores *= scale;
                dq.slice_mut(cols).assign(&d_scores.dot(&cache.k.slice(cols)));
                dk.slice_mut(cols).assign(&d_scores.t().dot(&cache.q.slice(cols)));
            }
            g.wq += &cache.input.t().dot(&dq);
            g.bq += &dq.sum_axis(Axis(0));
            g.wk += &cache.input.t().dot(&dk);
            g.bk += &dk.sum_axis(Axis(0));
            g.wv += &cache.input.t().dot(&dv);
            g.bv += &dv.sum_axis(Axis(0));

            dx = d_r1 + dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
        }

        if let Some(m) = &trace.emb_drop {
            dx *= m;
        }
        for (i, &id) in trace.ids.iter().enumerate() {
            let row = dx.row(i);
            let mut te = grads.tok_emb.row_mut(id as usize);
            te += &row;
            let mut pe = grads.pos_emb.row_mut(i);
            pe += &row;
        }
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    ///
    /// For the MLM head the mean runs over all targeted positions in the
    /// batch; for a classifier, over instances. Dropout is active when `rng`
    /// is supplied.
    pub fn loss_and_grads(
        &self,
        batch: &[Encoding],
        targets: Targets<'_>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, Params), ModelError> {
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_loss_and_grads(batch, targets, rng, &mut grads)?;
        Ok((loss, grads))
    }

    /// As [`loss_and_grads`](Self::loss_and_grads), adding into `grads`.
    pub fn accumulate_loss_and_grads(
        &self,
        batch: &[Encoding],
        targets: Targets<'_>,
        mut rng: Option<&mut dyn RngCore>,
        grads: &mut Params,
    ) -> Result<f64, ModelError> {
        match (targets, &self.params.head) {
            (Targets::Classes(labels), HeadParams::Classifier { weight, .. }) => {
                if labels.len() != batch.len() {
                    return Err(ModelError::TargetMismatch(format!(
                        "{} labels for {} sequences",
                        labels.len(),
                        batch.len()
                    )));
                }
                if batch.is_empty() {
                    return Err(ModelError::TargetMismatch("empty batch".into()));
                }
                let n_classes = weight.ncols();
                if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
                    return Err(ModelError::TargetMismatch(format!(
                        "label {bad} for a {n_classes}-class head"
                    )));
                }
                let inv_n = 1.0 / batch.len() as f64;
                let mut total = 0.0;
                for (enc, &y) in batch.iter().zip(labels) {
                    let enc = enc.trimmed();
                    let trace = self.forward(&enc, rng.as_deref_mut())?;
                    let logits = trace.logits.as_ref().expect("classifier head");
                    let (loss, dlogits) = cross_entropy(logits.as_slice().unwrap(), y);
                    total += loss;
                    let dlogits = Array1::from(dlogits) * inv_n;
                    let cls = trace.hidden.row(0);
                    let HeadParams::Classifier { weight: gw, bias: gb } = &mut grads.head else {
                        unreachable!("grads mirror params")
                    };
                    for (mut grow, &h) in gw.rows_mut().into_iter().zip(cls.iter()) {
                        grow.scaled_add(h, &dlogits);
                    }
                    *gb += &dlogits;
                    let mut d_hidden = Array2::zeros(trace.hidden.raw_dim());
                    d_hidden.row_mut(0).assign(&weight.dot(&dlogits));
                    self.backward_encoder(&trace, d_hidden, grads);
                }
                Ok(total * inv_n)
            }
            (Targets::Mlm(per_seq), HeadParams::Mlm { .. }) => {
                if per_seq.len() != batch.len() {
                    return Err(ModelError::TargetMismatch(format!(
                        "{} target rows for {} sequences",
                        per_seq.len(),
                        batch.len()
                    )));
                }
                let mut n_targets = 0usize;
                for (enc, t) in batch.iter().zip(per_seq) {
                    if t.len() != enc.ids.len() {
                        return Err(ModelError::TargetMismatch("target row length differs from sequence".into()));
                    }
                    for (pos, target) in t.iter().enumerate() {
                        if let Some(id) = target {
                            if *id as usize >= self.config.vocab_size {
                                return Err(ModelError::IdOutOfRange {
                                    id: *id,
                                    position: pos,
                                    vocab_size: self.config.vocab_size,
                                });
                            }
                            if enc.attention_mask[pos] == 0 {
                                return Err(ModelError::TargetMismatch(format!("target at padding position {pos}")));
                            }
                            n_targets += 1;
                        }
                    }
                }
                if n_targets == 0 {
                    return Err(ModelError::NoMaskedPositions);
                }
                let inv_n = 1.0 / n_targets as f64;
                let mut total = 0.0;
                for (enc, t) in batch.iter().zip(per_seq) {
                    let enc = enc.trimmed();
                    let trace = self.forward(&enc, rng.as_deref_mut())?;
                    let mut d_hidden = Array2::zeros(trace.hidden.raw_dim());
                    for (pos, target) in t.iter().enumerate().take(enc.ids.len()) {
                        let Some(target) = target else { continue };
                        let logits = self.mlm_logits(&trace, pos).expect("mlm head");
                        let (loss, dlogits) = cross_entropy(logits.as_slice().unwrap(), *target as usize);
                        total += loss;
                        let dlogits = Array1::from(dlogits) * inv_n;
                        let h = trace.hidden.row(pos);
                        // tied projection: logits = E h + b
                        for (mut erow, &dl) in grads.tok_emb.rows_mut().into_iter().zip(dlogits.iter()) {
                            erow.scaled_add(dl, &h);
                        }
                        let HeadParams::Mlm { bias: gb } = &mut grads.head else {
                            unreachable!("grads mirror params")
                        };
                        *gb += &dlogits;
                        d_hidden.row_mut(pos).assign(&self.params.tok_emb.t().dot(&dlogits));
                    }
                    self.backward_encoder(&trace, d_hidden, grads);
                }
                Ok(total * inv_n)
            }
            (Targets::Classes(_), HeadParams::Mlm { .. }) => Err(ModelError::TargetMismatch(
                "class labels given to an MLM head".into(),
            )),
            (Targets::Mlm(_), HeadParams::Classifier { .. }) => Err(ModelError::TargetMismatch(
                "MLM targets given to a classification head".into(),
            )),
        }
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tokenizer::{is_special, Encoding, TokenizerModel, MASK_ID, N_SPECIAL};

/// Masked-language-model corruption rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRule {
    /// Chance that a non-special position is selected.
    pub mask_prob: f64,
    /// Of the selected positions: fraction replaced by `[MASK]`.
    pub replace_mask: f64,
    /// Of the selected positions: fraction replaced by a random token. The
    /// rest keep their original id.
    pub replace_random: f64,
}

impl Default for MaskRule {
    fn default() -> Self {
        MaskRule {
            mask_prob: 0.15,
            replace_mask: 0.8,
            replace_random: 0.1,
        }
    }
}

/// One corrupted sequence with its prediction targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmBatch {
    pub input: Encoding,
    /// Original id at selected positions, `None` where the loss ignores
    /// the position.
    pub targets: Vec<Option<u32>>,
}

impl MlmBatch {
    pub fn n_targets(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    pub fn ignore_mask(&self) -> Vec<bool> {
        self.targets.iter().map(Option::is_none).collect()
    }
}

/// Which replacement a selected position received.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    Mask,
    Random,
    Keep,
}

pub(crate) fn draw_corruption<R: Rng + ?Sized>(rule: &MaskRule, rng: &mut R) -> Corruption {
    let u: f64 = rng.gen();
    if u < rule.replace_mask {
        Corruption::Mask
    } else if u < rule.replace_mask + rule.replace_random {
        Corruption::Random
    } else {
        Corruption::Keep
    }
}

/// Select and corrupt positions of `enc` for masked-token prediction.
///
/// Special tokens (padding, `[UNK]`, `[CLS]`, `[SEP]`, `[MASK]`) are never
/// selected. Random replacements are drawn uniformly from the non-special
/// vocabulary.
pub fn mlm_corrupt<R: Rng + ?Sized>(
    enc: &Encoding,
    tm: &TokenizerModel,
    rule: &MaskRule,
    rng: &mut R,
) -> Result<MlmBatch, TrainError> {
    if !enc.ids.iter().any(|&id| !is_special(id)) {
        return Err(TrainError::NothingMaskable);
    }
    let vocab = tm.vocab_size() as u32;
    let mut input = enc.clone();
    let mut targets = vec![None; enc.ids.len()];
    for (pos, id) in input.ids.iter_mut().enumerate() {
        if is_special(*id) || !rng.gen_bool(rule.mask_prob) {
            continue;
        }
        targets[pos] = Some(*id);
        match draw_corruption(rule, rng) {
            Corruption::Mask => *id = MASK_ID,
            Corruption::Random => *id = rng.gen_range(N_SPECIAL..vocab),
            Corruption::Keep => {}
        }
    }
    Ok(MlmBatch { input, targets })
}

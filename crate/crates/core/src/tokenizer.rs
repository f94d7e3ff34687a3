//! Greedy longest-match subword tokenizer.
//!
//! Words are whitespace-separated. Each word is split left to right into the
//! longest vocabulary piece available; pieces after the first carry the `##`
//! continuation prefix. A word with any uncoverable remainder becomes a
//! single `[UNK]`.
//!
//! Vocabularies are learned by frequency-ranked pair merging over the word
//! counts of a corpus, starting from the character alphabet.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabeledDataset;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const N_SPECIAL: u32 = 5;

pub const CONTINUATION: &str = "##";
pub const DEFAULT_MAX_VOCAB: usize = 8000;
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("max_vocab {max_vocab} is smaller than the {needed} specials and alphabet tokens")]
    VocabTooSmall { max_vocab: usize, needed: usize },
    #[error("corpus has no characters occurring at least {min_freq} times")]
    EmptyAlphabet { min_freq: usize },
    #[error("token id {id} is out of range for a vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub fn is_special(id: u32) -> bool {
    id < N_SPECIAL
}

/// Token ids plus attention mask, always exactly `max_len` long.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|m| **m == 1).count()
    }

    /// Copy without the trailing padding. Attention treats padding as absent,
    /// so a model sees the same thing either way.
    pub fn trimmed(&self) -> Encoding {
        let end = self
            .attention_mask
            .iter()
            .rposition(|m| *m == 1)
            .map_or(0, |i| i + 1);
        Encoding {
            ids: self.ids[..end].to_vec(),
            attention_mask: self.attention_mask[..end].to_vec(),
        }
    }

    /// Build from raw ids; `PAD_ID` positions are masked out.
    pub fn from_ids(ids: Vec<u32>) -> Encoding {
        let attention_mask = ids.iter().map(|&id| u8::from(id != PAD_ID)).collect();
        Encoding { ids, attention_mask }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerModel {
    tokens: Vec<String>,
    vocab: HashMap<String, u32>,
    uncased: bool,
}

impl TokenizerModel {
    /// Build from an id-ordered token list whose first five entries are the
    /// specials in `SPECIAL_TOKENS` order.
    pub fn from_tokens(tokens: Vec<String>, uncased: bool) -> Result<Self, TokenizerError> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(TokenizerError::InvalidVocab(format!(
                "first {} tokens must be {:?}",
                SPECIAL_TOKENS.len(),
                SPECIAL_TOKENS
            )));
        }
        let mut vocab = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(TokenizerError::InvalidVocab(format!("token {i} ({t:?}) is empty or has whitespace")));
            }
            if i >= SPECIAL_TOKENS.len() && (t == CONTINUATION || SPECIAL_TOKENS.contains(&t.as_str())) {
                return Err(TokenizerError::InvalidVocab(format!("token {i} ({t:?}) is reserved")));
            }
            if vocab.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizerError::InvalidVocab(format!("token {t:?} appears twice")));
            }
        }
        Ok(TokenizerModel { tokens, vocab, uncased })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn uncased(&self) -> bool {
        self.uncased
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    fn normalize(&self, text: &str) -> String {
        if self.uncased {
            text.to_lowercase()
        } else {
            text.to_string()
        }
    }

    /// Subword ids for one word, or `[UNK]` when it cannot be covered.
    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        if let Some(&id) = self.vocab.get(word) {
            out.push(id);
            return;
        }
        let chars: Vec<char> = word.chars().collect();
        let start_len = out.len();
        let mut start = 0;
        let mut piece = String::new();
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                piece.clear();
                if start > 0 {
                    piece.push_str(CONTINUATION);
                }
                piece.extend(&chars[start..end]);
                if let Some(&id) = self.vocab.get(&piece) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(start_len);
                    out.push(UNK_ID);
                    return;
                }
            }
        }
    }

    /// Subword ids without specials or padding.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let text = self.normalize(text);
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            self.word_pieces(word, &mut ids);
        }
        ids
    }

    /// `[CLS] pieces [SEP]`, truncated and padded to `max_len` (at least 3).
    pub fn encode(&self, text: &str, max_len: usize) -> Encoding {
        assert!(max_len >= 3, "max_len must be at least 3");
        let mut pieces = self.tokenize(text);
        pieces.truncate(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS_ID);
        ids.extend(pieces);
        ids.push(SEP_ID);
        let mut attention_mask = vec![1u8; ids.len()];
        ids.resize(max_len, PAD_ID);
        attention_mask.resize(max_len, 0);
        Encoding { ids, attention_mask }
    }

    /// Inverse of `encode` on covered text: specials are dropped and `##`
    /// pieces glued to their predecessor.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut words: Vec<String> = Vec::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::IdOutOfRange {
                id,
                size: self.vocab_size(),
            })?;
            if is_special(id) {
                continue;
            }
            match (tok.strip_prefix(CONTINUATION), words.last_mut()) {
                (Some(rest), Some(last)) => last.push_str(rest),
                (Some(rest), None) => words.push(rest.to_string()),
                (None, _) => words.push(tok.to_string()),
            }
        }
        Ok(words.join(" "))
    }

    /// One token per line; the line number is the id.
    pub fn to_vocab_file(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_vocab_file(content: &str, uncased: bool) -> Result<Self, TokenizerError> {
        Self::from_tokens(content.lines().map(str::to_string).collect(), uncased)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_vocab_file()).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>, uncased: bool) -> Result<Self, TokenizerError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_vocab_file(&content, uncased)
    }
}

/// Learn a vocabulary from the texts of `corpus`.
///
/// The alphabet holds every character seen at least `min_freq` times, both
/// word-initially and as a `##` continuation where it occurs in that role.
/// Adjacent piece pairs are then merged, most frequent first (ties broken by
/// the lexicographically smallest pair), until `max_vocab` is reached or no
/// pair occurs `min_freq` times. Words containing a character outside the
/// alphabet do not take part in merging.
pub fn train_vocab(
    corpus: &LabeledDataset,
    max_vocab: usize,
    min_freq: usize,
    uncased: bool,
) -> Result<TokenizerModel, TokenizerError> {
    train_vocab_from_texts(corpus.iter().map(|p| p.text.as_str()), max_vocab, min_freq, uncased)
}

pub fn train_vocab_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    max_vocab: usize,
    min_freq: usize,
    uncased: bool,
) -> Result<TokenizerModel, TokenizerError> {
    let min_freq = min_freq.max(1);
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for text in texts {
        let text = if uncased { text.to_lowercase() } else { text.to_string() };
        for w in text.split_whitespace() {
            *word_counts.entry(w.to_string()).or_default() += 1;
        }
    }

    let mut char_counts: BTreeMap<char, u64> = BTreeMap::new();
    for (w, &c) in &word_counts {
        for ch in w.chars() {
            *char_counts.entry(ch).or_default() += c;
        }
    }
    let kept: HashSet<char> = char_counts
        .iter()
        .filter(|(_, &c)| c >= min_freq as u64)
        .map(|(&ch, _)| ch)
        .collect();
    if kept.is_empty() {
        return Err(TokenizerError::EmptyAlphabet { min_freq });
    }

    // alphabet in both roles, sorted for determinism
    let mut alphabet: BTreeSet<String> = BTreeSet::new();
    for w in word_counts.keys() {
        for (i, ch) in w.chars().enumerate() {
            if kept.contains(&ch) {
                alphabet.insert(if i == 0 { ch.to_string() } else { format!("{CONTINUATION}{ch}") });
            }
        }
    }
    let needed = SPECIAL_TOKENS.len() + alphabet.len();
    if max_vocab < needed {
        return Err(TokenizerError::VocabTooSmall { max_vocab, needed });
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut present: HashSet<String> = tokens.iter().cloned().collect();
    for a in alphabet {
        present.insert(a.clone());
        tokens.push(a);
    }

    // merge state: each trainable word as a piece sequence
    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .iter()
        .filter(|(w, _)| w.chars().all(|c| kept.contains(&c)))
        .map(|(w, &c)| {
            let pieces = w
                .chars()
                .enumerate()
                .map(|(i, ch)| if i == 0 { ch.to_string() } else { format!("{CONTINUATION}{ch}") })
                .collect();
            (pieces, c)
        })
        .collect();

    type Pair = (String, String);
    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut pair_words: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    let mut ranking: BTreeSet<(Reverse<u64>, Pair)> = BTreeSet::new();

    fn pairs_of(pieces: &[String]) -> impl Iterator<Item = (String, String)> + '_ {
        pieces.windows(2).map(|w| (w[0].clone(), w[1].clone()))
    }

    for (wi, (pieces, c)) in words.iter().enumerate() {
        for p in pairs_of(pieces) {
            *pair_counts.entry(p.clone()).or_default() += c;
            pair_words.entry(p).or_default().insert(wi);
        }
    }
    for (p, &c) in &pair_counts {
        ranking.insert((Reverse(c), p.clone()));
    }

    let adjust = |pair_counts: &mut HashMap<Pair, u64>,
                  ranking: &mut BTreeSet<(Reverse<u64>, Pair)>,
                  p: Pair,
                  delta: i64| {
        let entry = pair_counts.entry(p.clone()).or_default();
        if *entry > 0 {
            ranking.remove(&(Reverse(*entry), p.clone()));
        }
        *entry = (*entry as i64 + delta) as u64;
        if *entry > 0 {
            ranking.insert((Reverse(*entry), p));
        }
    };

    while tokens.len() < max_vocab {
        let Some((Reverse(count), best)) = ranking.iter().next().cloned() else {
            break;
        };
        if count < min_freq as u64 {
            break;
        }
        let merged = format!("{}{}", best.0, best.1.strip_prefix(CONTINUATION).unwrap_or(&best.1));
        if present.insert(merged.clone()) {
            tokens.push(merged.clone());
        }

        let affected: Vec<usize> = pair_words.remove(&best).map(|s| s.into_iter().collect()).unwrap_or_default();
        for wi in affected {
            let (pieces, c) = &mut words[wi];
            let c = *c as i64;
            for p in pairs_of(pieces) {
                adjust(&mut pair_counts, &mut ranking, p, -c);
            }
            let mut next = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && pieces[i] == best.0 && pieces[i + 1] == best.1 {
                    next.push(merged.clone());
                    i += 2;
                } else {
                    next.push(std::mem::take(&mut pieces[i]));
                    i += 1;
                }
            }
            *pieces = next;
            for p in pairs_of(pieces) {
                adjust(&mut pair_counts, &mut ranking, p.clone(), c);
                pair_words.entry(p).or_default().insert(wi);
            }
        }
        pair_counts.remove(&best);
    }

    TokenizerModel::from_tokens(tokens, uncased)
}

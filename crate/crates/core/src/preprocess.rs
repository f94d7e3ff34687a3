//! Text normalization pipelines.
//!
//! | pipeline | removes |
//! |----------|---------|
//! | `P1` | hashtag tokens (`#` + word characters) |
//! | `P2` | ASCII punctuation |
//! | `P3` | mentions, hashtags and links |
//! | `P4` | everything `P3` removes, then digits, ASCII punctuation and non-ASCII |
//!
//! `P4` runs the `P3` removal, then folds diacritics (canonical
//! decomposition, combining marks dropped) before the character filter, so
//! that `niña` becomes `nina` rather than `nia`. Every pipeline
//! ends by collapsing whitespace runs to one space and trimming.
//!
//! A word character is an alphabetic or numeric code point or `_`. Token
//! removal is repeated until nothing matches, since deleting a token can join
//! its neighbours into a new one (`www#x.y` → `www.y`).

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{LabeledDataset, Post};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PipelineId {
    /// Hashtags only.
    #[serde(rename = "p1")]
    P1HashtagsOnly,
    /// Punctuation only.
    #[serde(rename = "p2")]
    P2PunctOnly,
    /// Mentions, hashtags and links.
    #[serde(rename = "p3")]
    P3MentionsHashtagsLinks,
    /// Mentions, hashtags, links, digits, punctuation and non-ASCII.
    #[serde(rename = "p4")]
    P4Full,
}

impl PipelineId {
    pub const ALL: [PipelineId; 4] = [
        PipelineId::P1HashtagsOnly,
        PipelineId::P2PunctOnly,
        PipelineId::P3MentionsHashtagsLinks,
        PipelineId::P4Full,
    ];
}

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineId::P1HashtagsOnly => "p1",
            PipelineId::P2PunctOnly => "p2",
            PipelineId::P3MentionsHashtagsLinks => "p3",
            PipelineId::P4Full => "p4",
        })
    }
}

impl FromStr for PipelineId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(PipelineId::P1HashtagsOnly),
            "p2" => Ok(PipelineId::P2PunctOnly),
            "p3" => Ok(PipelineId::P3MentionsHashtagsLinks),
            "p4" => Ok(PipelineId::P4Full),
            other => Err(format!("unknown pipeline {other:?} (expected p1, p2, p3 or p4)")),
        }
    }
}

const WORD: &str = r"[\p{Alphabetic}\p{N}_]";

fn hashtag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!("#{WORD}+")).unwrap())
}

fn social_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!(r"(?-u:(?i:https?://|www\.))\S*|@{WORD}+|#{WORD}+")).unwrap())
}

/// Remove every match of `re`, repeating until the text no longer matches.
fn strip_fixpoint(re: &Regex, text: &str) -> String {
    let mut cur = text.to_string();
    while re.is_match(&cur) {
        cur = re.replace_all(&cur, "").into_owned();
    }
    cur
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical decomposition with all combining marks removed.
pub fn fold_diacritics(text: &str) -> String {
    text.nfd().filter(|c| !is_combining_mark(*c)).collect()
}

/// Run one pipeline over a text.
pub fn apply(pipeline: PipelineId, text: &str) -> String {
    let stripped = match pipeline {
        PipelineId::P1HashtagsOnly => strip_fixpoint(hashtag_re(), text),
        PipelineId::P2PunctOnly => text.chars().filter(|c| !c.is_ascii_punctuation()).collect(),
        PipelineId::P3MentionsHashtagsLinks => strip_fixpoint(social_token_re(), text),
        PipelineId::P4Full => fold_diacritics(&strip_fixpoint(social_token_re(), text))
            .chars()
            .filter(|c| c.is_whitespace() || (c.is_ascii() && !c.is_ascii_digit() && !c.is_ascii_punctuation()))
            .collect(),
    };
    collapse_whitespace(&stripped)
}

/// Apply a pipeline to every post. Posts left with no text are dropped; the
/// second element is how many.
pub fn apply_dataset(pipeline: PipelineId, ds: &LabeledDataset) -> (LabeledDataset, usize) {
    let mut dropped = 0;
    let posts: Vec<Post> = ds
        .iter()
        .filter_map(|p| {
            let text = apply(pipeline, &p.text);
            if text.is_empty() {
                dropped += 1;
                None
            } else {
                Some(Post { text, ..p.clone() })
            }
        })
        .collect();
    let out = LabeledDataset::new(ds.name(), posts).expect("filtering preserves dataset invariants");
    (out, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Language, Provenance, Source};
    use PipelineId::*;

    #[test]
    fn documented_examples() {
        assert_eq!(apply(P1HashtagsOnly, "stop #sexism now"), "stop now");
        assert_eq!(apply(P4Full, "plain ascii words"), "plain ascii words");
        assert_eq!(apply(P3MentionsHashtagsLinks, "@user see https://x.co #tag ok"), "see ok");
        assert_eq!(apply(P4Full, "niñas 100%!"), "ninas");
    }

    #[test]
    fn punctuation_only() {
        assert_eq!(apply(P2PunctOnly, "¡Hola, mundo! #tag @u"), "¡Hola mundo tag u");
        assert_eq!(apply(P2PunctOnly, "a , b"), "a b");
    }

    #[test]
    fn token_removal_rejoins_to_fixpoint() {
        // removing "#x" exposes "www.y"
        assert_eq!(apply(P3MentionsHashtagsLinks, "www#x.y z"), "z");
        assert_eq!(apply(P3MentionsHashtagsLinks, "WWW.Example.com HTTP://a b"), "b");
        assert_eq!(apply(P1HashtagsOnly, "##ab"), "#");
    }

    #[test]
    fn p4_folds_before_matching() {
        assert_eq!(apply(P4Full, "#niña qué @josé 😀 año2021"), "que ano");
        // decomposed input matches precomposed
        assert_eq!(apply(P4Full, "n\u{0303}"), "n");
    }

    #[test]
    fn empty_and_whitespace() {
        for p in PipelineId::ALL {
            assert_eq!(apply(p, ""), "");
            assert_eq!(apply(p, " \t\n "), "");
        }
    }

    #[test]
    fn pipeline_names_round_trip() {
        for p in PipelineId::ALL {
            assert_eq!(p.to_string().parse::<PipelineId>().unwrap(), p);
        }
        assert!("p5".parse::<PipelineId>().is_err());
    }

    fn post(id: &str, text: &str) -> Post {
        Post::new(id, Source::Twitter, Language::En, text, None, None, Provenance::Original).unwrap()
    }

    #[test]
    fn dataset_drops_emptied_posts() {
        let ds = LabeledDataset::new("d", vec![post("1", "keep me"), post("2", "#tag"), post("3", "also kept")]).unwrap();
        let (out, dropped) = apply_dataset(P1HashtagsOnly, &ds);
        assert_eq!(dropped, 1);
        let ids: Vec<&str> = out.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["1", "3"]);

        let (again, dropped_again) = apply_dataset(P1HashtagsOnly, &out);
        assert_eq!(again, out);
        assert_eq!(dropped_again, 0);
    }

    #[test]
    fn unaffected_dataset_is_unchanged() {
        let ds = LabeledDataset::new("d", vec![post("1", "plain words"), post("2", "more words")]).unwrap();
        for p in PipelineId::ALL {
            assert_eq!(apply_dataset(p, &ds), (ds.clone(), 0));
        }
    }
}

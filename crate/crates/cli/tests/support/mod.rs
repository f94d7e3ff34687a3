//! Reference implementations used as oracles by the acceptance suite.
//! Written without the library's regexes or metric code.

#![allow(dead_code)]

use std::path::PathBuf;

use unicode_normalization::char::{decompose_canonical, is_combining_mark};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn is_word(c: char) -> bool {
    c.is_alphabetic() || c.is_numeric() || c == '_'
}

fn starts_with_ascii_ci(chars: &[char], at: usize, prefix: &str) -> bool {
    let p: Vec<char> = prefix.chars().collect();
    chars.len() >= at + p.len() && chars[at..at + p.len()].iter().zip(&p).all(|(a, b)| a.is_ascii() && a.eq_ignore_ascii_case(b))
}

#[derive(Clone, Copy)]
struct Rules {
    links: bool,
    mentions: bool,
    hashtags: bool,
}

/// One left-to-right pass deleting links, then mentions, then hashtags at
/// each position, whichever starts there first.
fn scan_once(text: &str, r: Rules) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        if r.links && ["http://", "https://", "www."].iter().any(|p| starts_with_ascii_ci(&chars, i, p)) {
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            continue;
        }
        let sigil = chars[i];
        if ((r.mentions && sigil == '@') || (r.hashtags && sigil == '#')) && i + 1 < chars.len() && is_word(chars[i + 1]) {
            i += 1;
            while i < chars.len() && is_word(chars[i]) {
                i += 1;
            }
            continue;
        }
        out.push(sigil);
        i += 1;
    }
    out
}

fn scan(text: &str, r: Rules) -> String {
    let mut cur = text.to_string();
    loop {
        let next = scan_once(&cur, r);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn squeeze(text: &str) -> String {
    let mut out = String::new();
    let mut pending = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending = !out.is_empty();
        } else {
            if pending {
                out.push(' ');
                pending = false;
            }
            out.push(c);
        }
    }
    out
}

fn fold(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        decompose_canonical(c, |d| {
            if !is_combining_mark(d) {
                out.push(d)
            }
        });
    }
    out
}

const PUNCT: &str = r##"!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~"##;

/// Reference output of pipeline `p1`..`p4`.
pub fn reference_preprocess(pipeline: u8, text: &str) -> String {
    let all = Rules {
        links: true,
        mentions: true,
        hashtags: true,
    };
    let stripped = match pipeline {
        1 => scan(
            text,
            Rules {
                links: false,
                mentions: false,
                hashtags: true,
            },
        ),
        2 => text.chars().filter(|c| !PUNCT.contains(*c)).collect(),
        3 => scan(text, all),
        4 => fold(&scan(text, all))
            .chars()
            .filter(|&c| c.is_whitespace() || ((c as u32) < 128 && !c.is_ascii_digit() && !PUNCT.contains(c)))
            .collect(),
        _ => panic!("no pipeline p{pipeline}"),
    };
    squeeze(&stripped)
}

/// Per-class (precision, recall, f1) by counting, then accuracy and macro F1.
pub struct BruteMetrics {
    pub per_class: Vec<(f64, f64, f64)>,
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub fn brute_metrics(truth: &[usize], pred: &[usize], k: usize) -> BruteMetrics {
    let mut per_class = Vec::new();
    for c in 0..k {
        let (mut tp, mut fp, mut fneg) = (0u32, 0u32, 0u32);
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        let ratio = |a: u32, b: u32| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        per_class.push((ratio(tp, tp + fp), ratio(tp, tp + fneg), ratio(2 * tp, 2 * tp + fp + fneg)));
    }
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    BruteMetrics {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: per_class.iter().map(|c| c.2).sum::<f64>() / k as f64,
        per_class,
    }
}

//! Edit-distance evaluation: Levenshtein distance, CER, WER and OOV rate.
//!
//! Error rates are corpus-level ratios of sums: the total edit distance
//! over all pairs divided by the total reference length, not an average of
//! per-line rates. Characters are Unicode scalar values; words are runs of
//! non-whitespace.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of insertions, deletions and substitutions turning `a`
/// into `b`.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character-level distance between two strings.
pub fn char_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

pub fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Corpus error summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub cer: f64,
    pub wer: f64,
    pub total_edit_ops: usize,
    pub total_ref_chars: usize,
    pub total_word_edit_ops: usize,
    pub total_ref_words: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oov_rate: Option<f64>,
}

fn char_totals<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)]) -> (usize, usize) {
    pairs.iter().fold((0, 0), |(ops, len), (h, r)| {
        (ops + char_distance(h.as_ref(), r.as_ref()), len + r.as_ref().chars().count())
    })
}

fn word_totals<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)]) -> (usize, usize) {
    pairs.iter().fold((0, 0), |(ops, len), (h, r)| {
        let (hw, rw) = (words(h.as_ref()), words(r.as_ref()));
        (ops + levenshtein(&hw, &rw), len + rw.len())
    })
}

/// `Σ d(ŷ, y) / Σ |y|` over `(hypothesis, reference)` pairs, in characters.
pub fn cer<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)]) -> Result<f64> {
    let (ops, len) = char_totals(pairs);
    if len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(ops as f64 / len as f64)
}

/// Same ratio as [`cer`] over whitespace-separated words.
pub fn wer<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)]) -> Result<f64> {
    let (ops, len) = word_totals(pairs);
    if len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(ops as f64 / len as f64)
}

pub fn evaluate<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)]) -> Result<EvalSummary> {
    let (total_edit_ops, total_ref_chars) = char_totals(pairs);
    let (total_word_edit_ops, total_ref_words) = word_totals(pairs);
    if total_ref_chars == 0 || total_ref_words == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(EvalSummary {
        cer: total_edit_ops as f64 / total_ref_chars as f64,
        wer: total_word_edit_ops as f64 / total_ref_words as f64,
        total_edit_ops,
        total_ref_chars,
        total_word_edit_ops,
        total_ref_words,
        oov_rate: None,
    })
}

/// Removes ASCII punctuation characters from a word.
pub fn strip_punctuation(word: &str) -> String {
    word.chars().filter(|c| !c.is_ascii_punctuation()).collect()
}

/// Fraction of distinct hypothesis words (punctuation stripped) that occur
/// in `external_vocab` but not in `dataset_vocab`. Zero when the hypotheses
/// contain no words.
pub fn oov_rate<S: AsRef<str>>(
    hypotheses: &[S],
    dataset_vocab: &HashSet<String>,
    external_vocab: &HashSet<String>,
) -> f64 {
    let distinct: BTreeSet<String> = hypotheses
        .iter()
        .flat_map(|h| words(h.as_ref()).into_iter().map(strip_punctuation).collect::<Vec<_>>())
        .filter(|w| !w.is_empty())
        .collect();
    if distinct.is_empty() {
        return 0.0;
    }
    let oov = distinct
        .iter()
        .filter(|w| external_vocab.contains(*w) && !dataset_vocab.contains(*w))
        .count();
    oov as f64 / distinct.len() as f64
}

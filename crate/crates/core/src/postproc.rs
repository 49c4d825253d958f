//! Nearest-neighbour word replacement against a vocabulary.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::levenshtein;

/// Replacement threshold used when none is given: distances of 0 and 1.
pub const DEFAULT_THRESHOLD: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabSource {
    TrainingSet,
    External,
}

/// A set of words, each tagged with where it came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    words: BTreeMap<String, VocabSource>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a word unless it is empty or already present; the first source
    /// recorded for a word wins.
    pub fn insert(&mut self, word: &str, source: VocabSource) -> bool {
        if word.is_empty() || self.words.contains_key(word) {
            return false;
        }
        self.words.insert(word.to_string(), source);
        true
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    pub fn source(&self, word: &str) -> Option<VocabSource> {
        self.words.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, VocabSource)> {
        self.words.iter().map(|(w, s)| (w.as_str(), *s))
    }

    /// Closest word strictly below `threshold`, ties going to the
    /// lexicographically smallest.
    pub fn nearest(&self, word: &str, threshold: usize) -> Option<(&str, usize)> {
        let chars: Vec<char> = word.chars().collect();
        let mut best: Option<(&str, usize)> = None;
        for candidate in self.words.keys() {
            let bound = best.map_or(threshold, |(_, d)| d);
            let len = candidate.chars().count();
            // length difference is a lower bound on the distance
            if len.abs_diff(chars.len()) >= bound {
                continue;
            }
            let cand: Vec<char> = candidate.chars().collect();
            let d = levenshtein(&chars, &cand);
            if d < bound {
                best = Some((candidate.as_str(), d));
                if d == 0 {
                    break;
                }
            }
        }
        best
    }
}

/// Reads a word list: UTF-8, one word per line, trimmed, blank lines skipped.
pub fn read_wordlist(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::FileUnreadable { path: path.to_path_buf(), source })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Union of the whitespace-separated words of the training transcripts and
/// an optional external word list. Training-set provenance takes precedence.
pub fn build_vocab<S: AsRef<str>>(training: &[S], external_wordlist: Option<&Path>) -> Result<Vocabulary> {
    let mut vocab = Vocabulary::new();
    for line in training {
        for w in line.as_ref().split_whitespace() {
            vocab.insert(w, VocabSource::TrainingSet);
        }
    }
    if let Some(path) = external_wordlist {
        for w in read_wordlist(path)? {
            vocab.insert(&w, VocabSource::External);
        }
    }
    if vocab.is_empty() {
        return Err(Error::InvalidInput("both vocabulary sources are empty".into()));
    }
    Ok(vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrectOptions {
    pub threshold: usize,
    /// Correct only the word core, keeping leading/trailing ASCII
    /// punctuation in place.
    pub strip_punct: bool,
}

impl Default for CorrectOptions {
    fn default() -> Self {
        CorrectOptions { threshold: DEFAULT_THRESHOLD, strip_punct: false }
    }
}

fn correct_word(word: &str, vocab: &Vocabulary, threshold: usize) -> Option<String> {
    if vocab.contains(word) {
        return None;
    }
    vocab.nearest(word, threshold).map(|(w, _)| w.to_string())
}

/// Replaces each out-of-vocabulary word by its nearest vocabulary word when
/// that distance is below the threshold. Whitespace is preserved verbatim.
pub fn correct(hypothesis: &str, vocab: &Vocabulary, opts: CorrectOptions) -> String {
    let mut out = String::with_capacity(hypothesis.len());
    let mut rest = hypothesis;
    while !rest.is_empty() {
        let ws = rest.len() - rest.trim_start().len();
        out.push_str(&rest[..ws]);
        rest = &rest[ws..];
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let word = &rest[..end];
        rest = &rest[end..];
        if word.is_empty() {
            continue;
        }
        if opts.strip_punct {
            let core_start = word.len() - word.trim_start_matches(|c: char| c.is_ascii_punctuation()).len();
            let core_end = word.trim_end_matches(|c: char| c.is_ascii_punctuation()).len().max(core_start);
            let core = &word[core_start..core_end];
            out.push_str(&word[..core_start]);
            match (core.is_empty(), correct_word(core, vocab, opts.threshold)) {
                (false, Some(fixed)) => out.push_str(&fixed),
                _ => out.push_str(core),
            }
            out.push_str(&word[core_end..]);
        } else {
            match correct_word(word, vocab, opts.threshold) {
                Some(fixed) => out.push_str(&fixed),
                None => out.push_str(word),
            }
        }
    }
    out
}

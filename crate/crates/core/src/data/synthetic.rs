//! Synthetic corpora with an injected pairwise regularity.
//!
//! Transcripts are random walks over the non-blank labels that never take a
//! forbidden step. Each character occupies `frames_per_char` frames: the
//! character itself on all but the last, then one blank separator. Leftover
//! frames become blank margins split randomly between both ends.
//!
//! A clean character frame puts a weight `w ~ U[clean_weight_min, 1)` on the
//! true label (one `w` per character) and spreads the rest evenly. Noise mixes
//! in a one-hot decoy row, `p = (1-ε)·p_clean + ε·e_decoy`, where the decoy is
//! chosen so that it would break the rule against a neighbouring character.
//! Whenever `(1-ε)·w < ε` the decoy wins the frame and only context can
//! recover the truth.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusManifest, PaddingPolicy, SequenceSample, FORMAT_VERSION};
use crate::ctc::Transcript;
use crate::error::{Error, Result};
use crate::prior::FeatureSequence;
use crate::relax::{LabelSet, LabelingAssignment};

/// Ordered label pairs `(a, b)` meaning "b never directly follows a".
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContextualRule {
    pub forbidden: BTreeSet<(usize, usize)>,
}

impl ContextualRule {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        ContextualRule { forbidden: pairs.into_iter().collect() }
    }

    /// Each label in `labels` forbids the `span` labels after it, cyclically.
    pub fn cyclic(labels: &[usize], span: usize) -> Self {
        let k = labels.len();
        Self::new((0..k).flat_map(|i| (1..=span).map(move |d| (labels[i], labels[(i + d) % k]))))
    }

    pub fn allows(&self, prev: usize, next: usize) -> bool {
        !self.forbidden.contains(&(prev, next))
    }

    pub fn describe(&self, labels: &LabelSet) -> String {
        let name = |i: usize| labels.name(i).unwrap_or("?").to_string();
        self.forbidden
            .iter()
            .map(|&(a, b)| format!("{} never follows {}", name(b), name(a)))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub alphabet: LabelSet,
    #[serde(default)]
    pub blank: usize,
    pub n_frames: usize,
    pub frames_per_char: usize,
    pub confusion_noise: f64,
    /// Fraction of the frames kept free for blank margins; it bounds the
    /// transcript length.
    pub blank_margin: f64,
    pub seed: u64,
    pub samples: usize,
    pub contextual_rule: ContextualRule,
    pub clean_weight_min: f64,
    /// Features of frame `t` are the log-priors of frames `t-w ..= t+w`.
    pub feature_window: usize,
}

impl SyntheticSpec {
    /// Six labels (blank `_` plus `a`..`e`), 24 frames, 0.4 confusion noise,
    /// and a rule forbidding the two cyclic successors of every letter.
    pub fn desk_scale(seed: u64, samples: usize) -> Self {
        SyntheticSpec {
            alphabet: LabelSet::new(["_", "a", "b", "c", "d", "e"]).expect("valid labels"),
            blank: 0,
            n_frames: 24,
            frames_per_char: 3,
            confusion_noise: 0.4,
            blank_margin: 0.25,
            seed,
            samples,
            contextual_rule: ContextualRule::cyclic(&[1, 2, 3, 4, 5], 2),
            clean_weight_min: 0.5,
            feature_window: 3,
        }
    }

    pub fn m(&self) -> usize {
        self.alphabet.size()
    }

    pub fn feature_dim(&self) -> usize {
        self.m() * (2 * self.feature_window + 1)
    }

    /// Longest transcript that fits once the margin is reserved.
    pub fn max_transcript_len(&self) -> usize {
        let margin = (self.blank_margin * self.n_frames as f64).ceil() as usize;
        self.n_frames.saturating_sub(margin) / self.frames_per_char.max(1)
    }

    fn letters(&self) -> Vec<usize> {
        (0..self.m()).filter(|&k| k != self.blank).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::SpecInvalid(msg));
        if self.blank >= self.m() {
            return bad(format!("blank index {} out of range", self.blank));
        }
        if self.frames_per_char < 2 {
            return bad("frames_per_char must be at least 2 (character plus separator)".into());
        }
        if !(0.0..1.0).contains(&self.confusion_noise) {
            return bad(format!("confusion_noise {} outside [0, 1)", self.confusion_noise));
        }
        if !(0.0..1.0).contains(&self.blank_margin) {
            return bad(format!("blank_margin {} outside [0, 1)", self.blank_margin));
        }
        if !(0.0..1.0).contains(&self.clean_weight_min) {
            return bad(format!("clean_weight_min {} outside [0, 1)", self.clean_weight_min));
        }
        if self.max_transcript_len() == 0 {
            return bad(format!(
                "{} frames leave no room for a {}-frame character after margins",
                self.n_frames, self.frames_per_char
            ));
        }
        let letters = self.letters();
        for &(a, b) in &self.contextual_rule.forbidden {
            if !letters.contains(&a) || !letters.contains(&b) {
                return bad(format!("rule pair ({a}, {b}) must use non-blank labels"));
            }
        }
        if let Some(a) = letters.iter().find(|&&a| letters.iter().all(|&b| !self.contextual_rule.allows(a, b))) {
            return bad(format!("label {a} has no permitted successor"));
        }
        Ok(())
    }

    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            format_version: FORMAT_VERSION,
            labels: self.alphabet.clone(),
            blank: self.blank,
            n_frames: self.n_frames,
            feature_dim: Some(self.feature_dim()),
            padding: PaddingPolicy::Strict,
            synthetic: Some(self.clone()),
        }
    }
}

fn draw_transcript(spec: &SyntheticSpec, letters: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let len = rng.random_range(1..=spec.max_transcript_len());
    let mut out: Vec<usize> = Vec::with_capacity(len);
    for _ in 0..len {
        let next = match out.last() {
            None => *letters.choose(rng).expect("non-empty alphabet"),
            Some(&prev) => {
                let allowed: Vec<usize> =
                    letters.iter().copied().filter(|&b| spec.contextual_rule.allows(prev, b)).collect();
                *allowed.choose(rng).expect("validated rule")
            }
        };
        out.push(next);
    }
    out
}

fn pick_decoy(spec: &SyntheticSpec, letters: &[usize], labels: &[usize], k: usize, rng: &mut ChaCha8Rng) -> usize {
    let truth = labels[k];
    let prev = k.checked_sub(1).map(|i| labels[i]);
    let next = labels.get(k + 1).copied();
    let rule = &spec.contextual_rule;
    let violating: Vec<usize> = letters
        .iter()
        .copied()
        .filter(|&d| d != truth)
        .filter(|&d| prev.is_some_and(|a| !rule.allows(a, d)) || next.is_some_and(|b| !rule.allows(d, b)))
        .collect();
    match violating.choose(rng) {
        Some(&d) => d,
        None => {
            let others: Vec<usize> = letters.iter().copied().filter(|&d| d != truth).collect();
            *others.choose(rng).unwrap_or(&truth)
        }
    }
}

fn frame(m: usize, label: usize, weight: f64) -> Vec<f64> {
    let rest = (1.0 - weight) / (m - 1) as f64;
    (0..m).map(|k| if k == label { weight } else { rest }).collect()
}

/// Stacks the log-priors of each frame's window, zero beyond the edges.
pub fn window_features(priors: &LabelingAssignment, window: usize) -> FeatureSequence {
    let (n, m) = (priors.n(), priors.m());
    let width = 2 * window + 1;
    let mut x = Array2::zeros((n, m * width));
    for t in 0..n {
        for o in 0..width {
            let Some(src) = (t + o).checked_sub(window).filter(|&s| s < n) else {
                continue;
            };
            for k in 0..m {
                x[[t, o * m + k]] = priors.get(src, k).ln();
            }
        }
    }
    FeatureSequence::new(x).expect("log of positive priors is finite")
}

fn render(
    spec: &SyntheticSpec,
    labels: &[usize],
    letters: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<LabelingAssignment> {
    let (m, eps, fpc) = (spec.m(), spec.confusion_noise, spec.frames_per_char);
    let spare = spec.n_frames - labels.len() * fpc;
    let lead = rng.random_range(0..=spare);
    let blank_frame = |rng: &mut ChaCha8Rng| frame(m, spec.blank, rng.random_range(spec.clean_weight_min..1.0));

    let mut rows: Vec<Vec<f64>> = (0..lead).map(|_| blank_frame(rng)).collect();
    for k in 0..labels.len() {
        let w = rng.random_range(spec.clean_weight_min..1.0);
        let decoy = pick_decoy(spec, letters, labels, k, rng);
        let mut row = frame(m, labels[k], w);
        row.iter_mut().for_each(|v| *v *= 1.0 - eps);
        row[decoy] += eps;
        rows.extend(std::iter::repeat_n(row, fpc - 1));
        rows.push(blank_frame(rng));
    }
    while rows.len() < spec.n_frames {
        rows.push(blank_frame(rng));
    }
    debug_assert_eq!(rows.len(), spec.n_frames);
    LabelingAssignment::from_rows(&rows)
}

/// Draws `spec.samples` sequences with both priors and windowed features.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SequenceSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let letters = spec.letters();
    (0..spec.samples)
        .map(|i| {
            let labels = draw_transcript(spec, &letters, &mut rng);
            let priors = render(spec, &labels, &letters, &mut rng)?;
            let features = window_features(&priors, spec.feature_window);
            Ok(SequenceSample {
                id: format!("syn-{}-{i:05}", spec.seed),
                features: Some(features),
                priors: Some(priors),
                transcript: Transcript::from_labels(labels, &spec.alphabet, spec.blank)?,
            })
        })
        .collect()
}

/// Generates `train + val` samples and splits them in order.
pub fn synthetic_corpus(spec: &SyntheticSpec, train: usize, val: usize) -> Result<Corpus> {
    let spec = SyntheticSpec { samples: train + val, ..spec.clone() };
    let mut samples = generate_synthetic(&spec)?;
    let val_samples = samples.split_off(train);
    Ok(Corpus { manifest: spec.manifest(), train: samples, val: val_samples })
}

//! Connectionist Temporal Classification over per-frame probabilities.
//!
//! The loss marginalises over every frame-level path that collapses to the
//! target once repeats are merged and blanks dropped. Inputs are
//! probabilities (rows of a [`LabelingAssignment`]), floored at
//! [`PROB_FLOOR`] before taking logs.

use ndarray::Array2;

use crate::bptt::AssignmentLoss;
use crate::error::{Error, Result};
use crate::relax::{LabelSet, LabelingAssignment};

/// Probabilities are clamped to at least this before `ln`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Largest number of paths [`ctc_brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// A target label sequence (blank-free) and its rendered text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    labels: Vec<usize>,
    text: String,
}

impl Transcript {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_labels(labels: Vec<usize>, alphabet: &LabelSet, blank: usize) -> Result<Self> {
        let mut text = String::new();
        for &l in &labels {
            if l == blank {
                return Err(Error::InvalidInput("transcript contains the blank label".into()));
            }
            let name = alphabet
                .name(l)
                .ok_or_else(|| Error::InvalidInput(format!("label index {l} out of range")))?;
            text.push_str(name);
        }
        Ok(Transcript { labels, text })
    }

    /// Tokenises `text` by greedy longest match against the label names.
    pub fn parse(text: &str, alphabet: &LabelSet, blank: usize) -> Result<Self> {
        let mut by_len: Vec<(usize, &str)> = alphabet
            .names()
            .iter()
            .enumerate()
            .filter(|(i, name)| *i != blank && !name.is_empty())
            .map(|(i, name)| (i, name.as_str()))
            .collect();
        by_len.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

        let mut labels = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let (idx, name) = by_len
                .iter()
                .find(|(_, name)| rest.starts_with(name))
                .ok_or_else(|| {
                    let c = rest.chars().next().unwrap_or_default();
                    Error::InvalidInput(format!("character {c:?} is not in the alphabet"))
                })?;
            labels.push(*idx);
            rest = &rest[name.len()..];
        }
        Ok(Transcript { labels, text: text.to_string() })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fewest frames that can carry this target: one per label plus a
    /// separating blank between each pair of equal neighbours.
    pub fn min_frames(&self) -> usize {
        self.labels.len() + self.labels.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

/// Negative log-likelihood of the target and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcResult {
    pub loss: f64,
    /// `∂loss/∂p_t(k)` with respect to the (unclamped) input probabilities.
    pub grad: Array2<f64>,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_labels(p: &LabelingAssignment, target: &Transcript, blank: usize) -> Result<()> {
    let m = p.m();
    if blank >= m {
        return Err(Error::InvalidInput(format!("blank index {blank} out of range for {m} labels")));
    }
    if let Some(&l) = target.labels.iter().find(|&&l| l >= m || l == blank) {
        return Err(Error::InvalidInput(format!("target label {l} invalid for {m} labels with blank {blank}")));
    }
    let required = target.min_frames();
    if p.n() < required {
        return Err(Error::TargetTooLong { target_len: target.len(), required, frames: p.n() });
    }
    Ok(())
}

/// Forward-backward CTC in log space.
pub fn ctc_loss(p: &LabelingAssignment, target: &Transcript, blank: usize) -> Result<CtcResult> {
    check_labels(p, target, blank)?;
    let (n, m) = (p.n(), p.m());
    let log_p = p.probs().mapv(|v| v.max(PROB_FLOOR).ln());

    // blank-augmented target
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &l in &target.labels {
        ext.push(l);
        ext.push(blank);
    }
    let s_len = ext.len();
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = Array2::from_elem((n, s_len), neg);
    alpha[[0, 0]] = log_p[[0, ext[0]]];
    if s_len > 1 {
        alpha[[0, 1]] = log_p[[0, ext[1]]];
    }
    for t in 1..n {
        for s in 0..s_len {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if can_skip(s) {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            if acc != neg {
                alpha[[t, s]] = acc + log_p[[t, ext[s]]];
            }
        }
    }

    let mut beta = Array2::from_elem((n, s_len), neg);
    beta[[n - 1, s_len - 1]] = log_p[[n - 1, ext[s_len - 1]]];
    if s_len > 1 {
        beta[[n - 1, s_len - 2]] = log_p[[n - 1, ext[s_len - 2]]];
    }
    for t in (0..n - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[[t + 1, s]];
            if s + 1 < s_len {
                acc = log_add(acc, beta[[t + 1, s + 1]]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, beta[[t + 1, s + 2]]);
            }
            if acc != neg {
                beta[[t, s]] = acc + log_p[[t, ext[s]]];
            }
        }
    }

    let mut log_total = alpha[[n - 1, s_len - 1]];
    if s_len > 1 {
        log_total = log_add(log_total, alpha[[n - 1, s_len - 2]]);
    }
    if !log_total.is_finite() {
        return Err(Error::TargetTooLong {
            target_len: target.len(),
            required: target.min_frames(),
            frames: n,
        });
    }

    // α_t(s) β_t(s) counts the emission at t twice, hence the 2·ln p.
    let mut grad = Array2::zeros((n, m));
    let mut occupancy = vec![neg; m];
    for t in 0..n {
        occupancy.iter_mut().for_each(|o| *o = neg);
        for s in 0..s_len {
            let ab = alpha[[t, s]] + beta[[t, s]];
            occupancy[ext[s]] = log_add(occupancy[ext[s]], ab);
        }
        for k in 0..m {
            if occupancy[k] != neg && p.get(t, k) > PROB_FLOOR {
                grad[[t, k]] = -(occupancy[k] - 2.0 * log_p[[t, k]] - log_total).exp();
            }
        }
    }

    Ok(CtcResult { loss: -log_total, grad })
}

/// Merges repeats, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in path {
        if Some(l) != prev && l != blank {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

/// Exhaustive-enumeration oracle for [`ctc_loss`], with the same floor.
pub fn ctc_brute_force(p: &LabelingAssignment, target: &Transcript, blank: usize) -> Result<f64> {
    let (n, m) = (p.n(), p.m());
    let paths = (m as f64).powi(n as i32);
    if paths > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge { paths, limit: BRUTE_FORCE_LIMIT });
    }
    if blank >= m {
        return Err(Error::InvalidInput(format!("blank index {blank} out of range for {m} labels")));
    }
    let probs = p.probs().mapv(|v| v.max(PROB_FLOOR));
    let mut path = vec![0usize; n];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == target.labels {
            total += path.iter().enumerate().map(|(t, &k)| probs[[t, k]]).product::<f64>();
        }
        // odometer increment
        let mut t = n;
        loop {
            if t == 0 {
                return if total > 0.0 {
                    Ok(-total.ln())
                } else {
                    Err(Error::TargetTooLong {
                        target_len: target.len(),
                        required: target.min_frames(),
                        frames: n,
                    })
                };
            }
            t -= 1;
            path[t] += 1;
            if path[t] < m {
                break;
            }
            path[t] = 0;
        }
    }
}

/// Per-frame argmax, ties resolved to the lowest label index.
pub fn best_path(p: &LabelingAssignment) -> Vec<usize> {
    p.probs()
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Best-path decoding: argmax per frame, merge repeats, drop blanks.
pub fn greedy_decode(p: &LabelingAssignment, alphabet: &LabelSet, blank: usize) -> Result<Transcript> {
    Transcript::from_labels(collapse(&best_path(p), blank), alphabet, blank)
}

/// CTC against a fixed target, usable wherever an [`AssignmentLoss`] is.
#[derive(Debug, Clone)]
pub struct CtcLoss<'a> {
    pub target: &'a Transcript,
    pub blank: usize,
}

impl AssignmentLoss for CtcLoss<'_> {
    fn evaluate(&self, p: &LabelingAssignment) -> Result<(f64, Array2<f64>)> {
        let r = ctc_loss(p, self.target, self.blank)?;
        Ok((r.loss, r.grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ab() -> LabelSet {
        LabelSet::new(["a", "_"]).unwrap()
    }

    fn random_probs(rng: &mut impl Rng, n: usize, m: usize) -> LabelingAssignment {
        let mut a = Array2::from_shape_fn((n, m), |_| rng.random_range(0.05..1.0));
        for mut row in a.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        LabelingAssignment::new(a).unwrap()
    }

    #[test]
    fn three_path_example() {
        let p = LabelingAssignment::from_rows(&[vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        let target = Transcript::parse("a", &ab(), 1).unwrap();
        let r = ctc_loss(&p, &target, 1).unwrap();
        assert!((r.loss + 0.8f64.ln()).abs() < 1e-12);
        let brute = ctc_brute_force(&p, &target, 1).unwrap();
        assert!((brute + 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_target_is_all_blank_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_probs(&mut rng, 5, 3);
        let r = ctc_loss(&p, &Transcript::empty(), 2).unwrap();
        let expected: f64 = (0..5).map(|t| -p.get(t, 2).ln()).sum();
        assert!((r.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let labels = LabelSet::numbered(3).unwrap();
        let p = random_probs(&mut rng, 4, 3);
        let target = Transcript::from_labels(vec![1, 2], &labels, 0).unwrap();
        let r = ctc_loss(&p, &target, 0).unwrap();
        let brute = ctc_brute_force(&p, &target, 0).unwrap();
        assert!((r.loss - brute).abs() < 1e-10);

        let h = 1e-6;
        for t in 0..4 {
            for k in 0..3 {
                // tangent direction keeps the row on the simplex
                let mut plus = p.probs().clone();
                let mut minus = p.probs().clone();
                for j in 0..3 {
                    let d = if j == k { 1.0 - 1.0 / 3.0 } else { -1.0 / 3.0 };
                    plus[[t, j]] += h * d;
                    minus[[t, j]] -= h * d;
                }
                let lp = ctc_loss(&LabelingAssignment::new(plus).unwrap(), &target, 0).unwrap().loss;
                let lm = ctc_loss(&LabelingAssignment::new(minus).unwrap(), &target, 0).unwrap().loss;
                let numeric = (lp - lm) / (2.0 * h);
                let row = r.grad.row(t);
                let analytic = row[k] - row.sum() / 3.0;
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-6, "t={t} k={k} rel={rel}");
            }
        }
    }

    #[test]
    fn target_too_long_is_an_error() {
        let labels = LabelSet::numbered(3).unwrap();
        let p = LabelingAssignment::uniform(2, 3);
        let aa = Transcript::from_labels(vec![1, 1], &labels, 0).unwrap();
        assert_eq!(aa.min_frames(), 3);
        assert!(matches!(ctc_loss(&p, &aa, 0), Err(Error::TargetTooLong { required: 3, .. })));
        assert!(matches!(ctc_brute_force(&p, &aa, 0), Err(Error::TargetTooLong { .. })));
    }

    #[test]
    fn certain_path_has_zero_loss() {
        let labels = LabelSet::numbered(3).unwrap();
        let p = LabelingAssignment::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let target = Transcript::from_labels(vec![1, 2], &labels, 0).unwrap();
        assert!(ctc_brute_force(&p, &target, 0).unwrap().abs() < 1e-9);
        assert!(ctc_loss(&p, &target, 0).unwrap().loss.abs() < 1e-9);

        // same path, different target: only floored probability remains
        let other = Transcript::from_labels(vec![2, 1], &labels, 0).unwrap();
        assert!(ctc_loss(&p, &other, 0).unwrap().loss > 20.0);
    }

    #[test]
    fn brute_force_guard() {
        let p = LabelingAssignment::uniform(16, 4);
        assert!(matches!(
            ctc_brute_force(&p, &Transcript::empty(), 0),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn greedy_decode_collapses() {
        let labels = LabelSet::new(["_", "a", "b"]).unwrap();
        let one_hot = |path: &[usize]| {
            let rows: Vec<Vec<f64>> = path
                .iter()
                .map(|&k| (0..3).map(|j| if j == k { 0.8 } else { 0.1 }).collect())
                .collect();
            LabelingAssignment::from_rows(&rows).unwrap()
        };
        assert_eq!(greedy_decode(&one_hot(&[1, 1, 0, 2]), &labels, 0).unwrap().text(), "ab");
        assert_eq!(greedy_decode(&one_hot(&[0, 0]), &labels, 0).unwrap().text(), "");
        assert_eq!(greedy_decode(&one_hot(&[1, 0, 1]), &labels, 0).unwrap().text(), "aa");
    }

    #[test]
    fn greedy_ties_pick_lowest_index() {
        let p = LabelingAssignment::from_rows(&[vec![0.1, 0.45, 0.45]]).unwrap();
        assert_eq!(best_path(&p), vec![1]);
    }

    #[test]
    fn parse_round_trips_and_rejects_unknown() {
        let labels = LabelSet::new(["_", "a", "b", "ch"]).unwrap();
        let t = Transcript::parse("achb", &labels, 0).unwrap();
        assert_eq!(t.labels(), &[1, 3, 2]);
        assert!(Transcript::parse("ax", &labels, 0).is_err());
        assert!(Transcript::from_labels(vec![0], &labels, 0).is_err());
    }

    #[test]
    fn long_sequences_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (n, m) = (256, 80);
        let mut a = Array2::from_shape_fn((n, m), |_| rng.random_range(1e-12..1.0f64).powi(4).max(1e-12));
        for mut row in a.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let p = LabelingAssignment::floor_and_normalize(a, 1e-12).unwrap();
        let labels = LabelSet::numbered(m).unwrap();
        let target = Transcript::from_labels((0..100).map(|i| 1 + (i * 7) % 79).collect(), &labels, 0).unwrap();
        let r = ctc_loss(&p, &target, 0).unwrap();
        assert!(r.loss.is_finite() && r.loss > 0.0);
        assert!(r.grad.iter().all(|g| g.is_finite()));
    }
}

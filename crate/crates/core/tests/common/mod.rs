//! Seeded random instances shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relab::relax::{CompatibilityMatrix, LabelingAssignment};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rows drawn from `U[lo, 1)` and normalised, so every entry is positive.
pub fn positive_assignment(rng: &mut impl Rng, n: usize, m: usize, lo: f64) -> LabelingAssignment {
    let mut a = Array2::from_shape_fn((n, m), |_| rng.random_range(lo..1.0));
    for mut row in a.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    LabelingAssignment::new(a).unwrap()
}

/// Like [`positive_assignment`] but each entry is zeroed with probability
/// `zero_prob`, keeping at least one positive entry per row.
pub fn sparse_assignment(rng: &mut impl Rng, n: usize, m: usize, zero_prob: f64) -> LabelingAssignment {
    let mut a = Array2::from_shape_fn((n, m), |_| rng.random_range(0.0f64..1.0));
    for mut row in a.rows_mut() {
        let keep = rng.random_range(0..m);
        for (k, v) in row.iter_mut().enumerate() {
            if k != keep && rng.random_bool(zero_prob) {
                *v = 0.0;
            }
        }
        row[keep] = row[keep].max(1e-3);
        let s = row.sum();
        row /= s;
    }
    LabelingAssignment::new(a).unwrap()
}

/// Coefficients from `U[lo, 1)`, optionally symmetrised.
pub fn random_compat(rng: &mut impl Rng, n: usize, m: usize, lo: f64, symmetric: bool) -> CompatibilityMatrix {
    let dim = n * m;
    let mut c = Array2::from_shape_fn((dim, dim), |_| rng.random_range(lo..1.0));
    if symmetric {
        c = (&c + &c.t()) / 2.0;
    }
    CompatibilityMatrix::new(n, m, c).unwrap()
}

/// Like [`random_compat`] with a fraction of exact zeros.
pub fn sparse_compat(rng: &mut impl Rng, n: usize, m: usize, zero_prob: f64, symmetric: bool) -> CompatibilityMatrix {
    let dim = n * m;
    let mut c = Array2::from_shape_fn((dim, dim), |_| {
        if rng.random_bool(zero_prob) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    if symmetric {
        c = (&c + &c.t()) / 2.0;
    }
    CompatibilityMatrix::new(n, m, c).unwrap()
}

/// `L(p) = Σ c ⊙ p` with fixed random weights, returned as a closure usable
/// as an assignment loss.
pub fn linear_loss(rng: &mut impl Rng, n: usize, m: usize) -> impl Fn(&LabelingAssignment) -> relab::Result<(f64, Array2<f64>)> {
    let c = Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
    move |p: &LabelingAssignment| Ok(((p.probs() * &c).sum(), c.clone()))
}

//! Checks backpropagation through the unrolled relaxation against finite
//! differences on random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relab::bptt::{finite_diff_check, EntryLoss};
use relab::relax::{CompatibilityMatrix, LabelingAssignment};

fn main() -> relab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let (n, m, t) = (rng.random_range(2..=5), rng.random_range(2..=4), rng.random_range(1..=4));
        let p0 = LabelingAssignment::floor_and_normalize(ndarray::Array2::from_shape_fn((n, m), |_| rng.random::<f64>()), 0.05)?;
        let compat = CompatibilityMatrix::from_fn(n, m, |_, _, _, _| 0.1 + rng.random::<f64>())?;
        let loss = EntryLoss { object: rng.random_range(0..n), label: rng.random_range(0..m) };
        let err = finite_diff_check(&p0, &compat, t, &loss, 1e-4)?;
        println!("case {case}: n={n} m={m} T={t} max relative error {err:.2e}");
        worst = worst.max(err);
    }
    println!("worst {worst:.2e}");
    Ok(())
}

//! Trains with increasing ℓ1 weight and reports how many compatibility
//! coefficients end up pruned.
//!
//! Usage: `cargo run --release --example sparsity_sweep [EPOCHS]`

use relab::data::{synthetic_corpus, SyntheticSpec};
use relab::train::{sparsity_report, train, TrainConfig};

fn main() -> relab::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let corpus = synthetic_corpus(&SyntheticSpec::desk_scale(1, 0), 500, 100)?;
    println!("{:>8} {:>10} {:>10} {:>10}", "gamma", "sparsity", "|R|_1", "val CER %");
    for gamma in [0.0, 1e-3, 1e-2, 1e-1] {
        let cfg = TrainConfig { gamma, epochs, seed: 1, ..TrainConfig::default() };
        let out = train(&corpus, &cfg)?;
        let report = sparsity_report(&out.model.compat, cfg.sparsity_threshold);
        let cer = out.report.last().and_then(|r| r.validation.as_ref()).map_or(f64::NAN, |v| v.cer_baseline);
        println!("{gamma:>8.0e} {:>10.4} {:>10.2} {:>10.2}", report.fraction, report.l1_norm, 100.0 * cer);
    }
    Ok(())
}

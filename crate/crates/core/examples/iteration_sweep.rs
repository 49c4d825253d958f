//! Trains at relaxation depths T = 1..=5 and prints one row per depth.
//!
//! Usage: `cargo run --release --example iteration_sweep [EPOCHS]`

use relab::data::{synthetic_corpus, SyntheticSpec};
use relab::train::{iteration_sweep, TrainConfig};

fn main() -> relab::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let corpus = synthetic_corpus(&SyntheticSpec::desk_scale(0, 0), 500, 100)?;
    let base = TrainConfig { epochs, ..TrainConfig::default() };
    let report = iteration_sweep(&corpus, &base, &[1, 2, 3, 4, 5]);
    print!("{report}");
    println!("all converged: {}", report.all_converged());
    Ok(())
}

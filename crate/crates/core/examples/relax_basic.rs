//! Relaxing a small two-object problem by hand.
//!
//! Two objects share the labels `x`/`y`; the compatibilities reward agreeing
//! labels. Starting from ambiguous priors, the iteration pulls both objects
//! towards the label favoured by the more confident one.

use relab::relax::{average_local_consistency, is_consistent, run, CompatibilityMatrix, LabelSet, LabelingAssignment, RelaxationConfig};

fn main() -> relab::Result<()> {
    let labels = LabelSet::new(["x", "y"])?;
    let p0 = LabelingAssignment::from_rows(&[vec![0.55, 0.45], vec![0.8, 0.2]])?;
    // r(i, λ, j, μ) = 1 when the labels agree and the objects differ
    let compat = CompatibilityMatrix::from_fn(2, 2, |i, l, j, mu| if i != j && l == mu { 1.0 } else { 0.1 })?;

    let out = run(&p0, &compat, &RelaxationConfig::new(50, 1e-10, true)?)?;
    let tape = out.tape()?;
    println!("iterations: {}", tape.iterations());
    for (t, (p, a)) in tape.trajectory().iter().zip(tape.consistency_trace()?).enumerate() {
        let rows: Vec<String> = p.to_rows().iter().map(|r| format!("[{:.4} {:.4}]", r[0], r[1])).collect();
        println!("t={t:<2} {}  A={a:.6}", rows.join(" "));
    }
    let last = tape.last();
    for i in 0..last.n() {
        let best = if last.get(i, 0) >= last.get(i, 1) { 0 } else { 1 };
        println!("object {i} -> {}", labels.name(best).unwrap_or("?"));
    }
    println!("final consistency {:.6}, consistent: {}", average_local_consistency(last, &compat)?, is_consistent(last, &compat, 1e-6)?);
    Ok(())
}

//! Compares forward-backward CTC with an exhaustive sum over alignments and
//! shows the greedy decode of the same frames.

use relab::ctc::{best_path, ctc_brute_force, ctc_loss, greedy_decode, Transcript};
use relab::relax::{LabelSet, LabelingAssignment};

fn main() -> relab::Result<()> {
    let labels = LabelSet::new(["_", "a", "b"])?;
    let blank = 0;
    let p = LabelingAssignment::from_rows(&[
        vec![0.2, 0.7, 0.1],
        vec![0.5, 0.3, 0.2],
        vec![0.1, 0.2, 0.7],
        vec![0.6, 0.1, 0.3],
        vec![0.3, 0.1, 0.6],
    ])?;
    for text in ["a", "ab", "abb", "ba", ""] {
        let target = Transcript::parse(text, &labels, blank)?;
        let fast = ctc_loss(&p, &target, blank)?;
        let slow = ctc_brute_force(&p, &target, blank)?;
        println!("target {text:>4?}: forward-backward {:.12}  enumeration {:.12}  diff {:.1e}", fast.loss, slow, (fast.loss - slow).abs());
    }
    println!("best path {:?} decodes to {:?}", best_path(&p), greedy_decode(&p, &labels, blank)?.text());
    Ok(())
}

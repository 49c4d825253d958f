//! Character and word error rates, including the out-of-vocabulary rate
//! against an external word list.

use std::collections::HashSet;

use relab::metrics::{evaluate, levenshtein, oov_rate};

fn main() -> relab::Result<()> {
    let pairs = [("abd", "abc"), ("the hat sat", "the cat sat"), ("kitten", "sitting")];
    let summary = evaluate(&pairs)?;
    println!(
        "CER {:.4} ({} edits / {} chars), WER {:.4} ({} / {} words)",
        summary.cer, summary.total_edit_ops, summary.total_ref_chars, summary.wer, summary.total_word_edit_ops, summary.total_ref_words
    );
    let (a, b): (Vec<char>, Vec<char>) = ("kitten".chars().collect(), "sitting".chars().collect());
    println!("levenshtein(kitten, sitting) = {}", levenshtein(&a, &b));

    let dataset: HashSet<String> = ["the", "cat", "sat"].map(String::from).into();
    let external: HashSet<String> = ["the", "cat", "sat", "hat", "mat"].map(String::from).into();
    let hyps: Vec<&str> = pairs.iter().map(|(h, _)| *h).collect();
    println!("OOV rate {:.4}", oov_rate(&hyps, &dataset, &external));
    Ok(())
}

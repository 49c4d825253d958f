//! Dictionary correction of recognised text, with and without punctuation
//! handling.

use relab::metrics::evaluate;
use relab::postproc::{build_vocab, correct, CorrectOptions};

fn main() -> relab::Result<()> {
    let training = ["the quick brown fox", "jumps over the lazy dog", "a quick brown dog"];
    let vocab = build_vocab(&training, None)?;
    let refs = ["the quick brown fox jumps", "over the lazy dog.", "a brown fox"];
    let hyps = ["te quick brwn fox jumps", "ovr the lazy dg.", "a brown fax"];

    for strip_punct in [false, true] {
        let opts = CorrectOptions { strip_punct, ..CorrectOptions::default() };
        let fixed: Vec<String> = hyps.iter().map(|h| correct(h, &vocab, opts)).collect();
        println!("strip_punct={strip_punct}");
        for (h, f) in hyps.iter().zip(&fixed) {
            println!("  {h:<28} -> {f}");
        }
        let before = evaluate(&hyps.iter().zip(refs).map(|(h, r)| (*h, r)).collect::<Vec<_>>())?;
        let after = evaluate(&fixed.iter().zip(refs).map(|(h, r)| (h.as_str(), r)).collect::<Vec<_>>())?;
        println!("  CER {:.2}% -> {:.2}%, WER {:.2}% -> {:.2}%", 100.0 * before.cer, 100.0 * after.cer, 100.0 * before.wer, 100.0 * after.wer);
    }
    Ok(())
}

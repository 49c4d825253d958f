//! Generates a desk-scale synthetic corpus, writes it to a directory and
//! reads it back.
//!
//! Usage: `cargo run --example synthetic_corpus [OUT_DIR]`

use relab::data::{load_corpus, save_corpus, synthetic_corpus, SyntheticSpec};
use relab::ctc::greedy_decode;
use relab::metrics::cer;

fn main() -> relab::Result<()> {
    let spec = SyntheticSpec::desk_scale(42, 0);
    println!("labels {:?}, blank {:?}", spec.alphabet.names(), spec.alphabet.name(spec.blank));
    println!("rule: {}", spec.contextual_rule.describe(&spec.alphabet));
    let corpus = synthetic_corpus(&spec, 200, 50)?;

    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("relab-synthetic"));
    save_corpus(&out, &corpus)?;
    let reloaded = load_corpus(&out)?;
    assert_eq!(reloaded, corpus);
    println!("wrote {} train / {} val samples to {}", corpus.train.len(), corpus.val.len(), out.display());

    for s in corpus.train.iter().take(3) {
        let decoded = greedy_decode(s.priors.as_ref().expect("synthetic samples carry priors"), &spec.alphabet, spec.blank)?;
        println!("{}: transcript {:?}, greedy prior decode {:?}", s.id, s.transcript.text(), decoded.text());
    }
    let pairs = corpus
        .val
        .iter()
        .map(|s| Ok((greedy_decode(s.priors.as_ref().expect("synthetic samples carry priors"), &spec.alphabet, spec.blank)?.text().to_string(), s.transcript.text().to_string())))
        .collect::<relab::Result<Vec<_>>>()?;
    println!("greedy CER of the noisy priors on val: {:.2}%", 100.0 * cer(&pairs)?);
    Ok(())
}

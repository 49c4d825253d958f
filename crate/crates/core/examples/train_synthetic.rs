//! Trains the prior model and compatibility matrix jointly on a synthetic
//! corpus, checkpoints the result and reloads it.
//!
//! Usage: `cargo run --release --example train_synthetic [EPOCHS]`

use relab::data::{synthetic_corpus, SyntheticSpec};
use relab::train::{load_checkpoint, save_checkpoint, validate_model, TrainConfig, Trainer};

fn main() -> relab::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let corpus = synthetic_corpus(&SyntheticSpec::desk_scale(0, 0), 500, 100)?;
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };

    let mut trainer = Trainer::new(&corpus, cfg.clone())?;
    while !trainer.is_finished() {
        let r = trainer.run_epoch()?;
        let v = r.validation.as_ref().expect("corpus has a validation split");
        println!(
            "epoch {:>3}  loss {:.4} (ctc {:.4}, relax {:.4}, l1 {:.4})  val CER {:.2}% -> {}  sparsity {:.3}",
            r.epoch,
            r.loss.total,
            r.loss.orig,
            r.loss.relax.unwrap_or(f64::NAN),
            r.loss.l1,
            100.0 * v.cer_baseline,
            v.cer_rl.map_or("n/a".into(), |c| format!("{:.2}%", 100.0 * c)),
            r.sparsity
        );
    }

    let path = std::env::temp_dir().join("relab-example-checkpoint.json");
    save_checkpoint(&path, &trainer.checkpoint())?;
    let restored = load_checkpoint(&path)?.model()?;
    assert_eq!(&restored, trainer.model());
    let check = validate_model(&restored, &corpus.val, &corpus.manifest, cfg.iterations)?;
    println!("checkpoint {} reloads with val CER {:.2}%", path.display(), 100.0 * check.cer_baseline);
    Ok(())
}

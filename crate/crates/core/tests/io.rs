use std::fs;

use proptest::prelude::*;
use relab::data::{
    generate_synthetic, load_corpus, load_samples, save_corpus, synthetic_corpus, SyntheticSpec, TRAIN_FILE,
};
use relab::train::{load_checkpoint, save_checkpoint, TrainConfig, Trainer};
use relab::Error;

fn spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec { n_frames: 12, ..SyntheticSpec::desk_scale(seed, 0) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn corpus_directory_round_trips(seed in any::<u64>(), train in 1usize..12, val in 0usize..5, window in 0usize..3) {
        let spec = SyntheticSpec { feature_window: window, ..spec(seed) };
        let corpus = synthetic_corpus(&spec, train, val).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(dir.path(), &corpus).unwrap();
        prop_assert_eq!(load_corpus(dir.path()).unwrap(), corpus);
    }
}

#[test]
fn generation_is_deterministic_down_to_the_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        save_corpus(dir.path(), &synthetic_corpus(&spec(5), 6, 2).unwrap()).unwrap();
    }
    for file in ["manifest.json", "train.jsonl", "val.jsonl"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap());
    }
    let other = generate_synthetic(&SyntheticSpec { samples: 8, ..spec(6) }).unwrap();
    assert_ne!(other, generate_synthetic(&SyntheticSpec { samples: 8, ..spec(5) }).unwrap());
}

#[test]
fn a_corrupted_sample_is_named() {
    let corpus = synthetic_corpus(&spec(7), 3, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(dir.path(), &corpus).unwrap();
    let path = dir.path().join(TRAIN_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut record: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    record["transcript"] = serde_json::Value::String("zz".into());
    lines[1] = record.to_string();
    fs::write(&path, lines.join("\n")).unwrap();
    match load_samples(&path, &corpus.manifest) {
        Err(Error::InvariantViolation { id, .. }) => assert_eq!(id, corpus.train[1].id),
        other => panic!("expected an invariant violation, got {other:?}"),
    }
}

#[test]
fn checkpoint_file_restores_every_bit() {
    let corpus = synthetic_corpus(&spec(8), 8, 2).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 4, lr: 1e-2, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&corpus, cfg).unwrap();
    trainer.run_epoch().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    save_checkpoint(&path, &trainer.checkpoint()).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(&loaded.model().unwrap(), trainer.model());
    assert_eq!(loaded.report, *trainer.report());

    // a second save of the loaded checkpoint is byte-identical
    let again = dir.path().join("again.json");
    save_checkpoint(&again, &loaded).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn unreadable_and_malformed_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("missing.json")), Err(Error::FileUnreadable { .. })));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"format_version\": 1,\n  oops\n}").unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(Error::ParseError { line: 3, .. })));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relab::cli::{RelaxRecord, CHECKPOINT_FILE, CURVE_FILE, REPORT_FILE, RUN_MANIFEST_FILE};
use relab::data::load_corpus;
use relab::metrics;
use relab::train::{load_checkpoint, save_checkpoint, sparsity_report, Checkpoint};

fn relab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = relab(args);
    assert!(
        out.status.success(),
        "relab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small corpus plus a short training run on it.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
    root: PathBuf,
}

fn fixture(beta: &str, gamma: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("data");
    let run = root.join("run");
    ok(&["generate", "--out", s(&data), "--seed", "2", "--train", "16", "--val", "6", "--n_frames", "12"]);
    ok(&[
        "train", "--data", s(&data), "--out", s(&run), "--seed", "7", "--beta", beta, "--gamma", gamma, "--T", "3",
        "--epochs", "3", "--batch_size", "4", "--lr", "0.01", "--quiet",
    ]);
    Fixture { _dir: dir, data, run, root }
}

#[test]
fn train_writes_all_artifacts() {
    let f = fixture("0.1", "1e-2");
    for file in [CHECKPOINT_FILE, REPORT_FILE, CURVE_FILE, RUN_MANIFEST_FILE] {
        assert!(f.run.join(file).exists(), "{file} missing");
    }
    let report = fs::read_to_string(f.run.join(REPORT_FILE)).unwrap();
    assert_eq!(report.lines().count(), 3);
    assert!(report.lines().all(|l| l.contains("\"rl_path\":\"trained\"")));
    let curve = fs::read_to_string(f.run.join(CURVE_FILE)).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "epoch\tval_cer_baseline\tval_cer_rl");
    assert_eq!(curve.lines().count(), 4);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.run.join(RUN_MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["T"], 3);
    assert_eq!(manifest["config"]["lr_decay_epoch"], 80);
}

#[test]
fn control_run_marks_the_untrained_relaxation_path() {
    let f = fixture("0", "0");
    let report = fs::read_to_string(f.run.join(REPORT_FILE)).unwrap();
    assert!(report.lines().all(|l| l.contains("\"rl_path\":\"untrained\"")));
    let curve = fs::read_to_string(f.run.join(CURVE_FILE)).unwrap();
    assert!(curve.starts_with("epoch\tval_cer_baseline\tval_cer_rl_untrained\n"));
}

#[test]
fn rerun_from_manifest_reproduces_report_bytes() {
    let f = fixture("0.1", "1e-2");
    let again = f.root.join("again");
    ok(&["train", "--rerun", s(&f.run.join(RUN_MANIFEST_FILE)), "--out", s(&again), "--quiet"]);
    for file in [REPORT_FILE, CURVE_FILE, CHECKPOINT_FILE] {
        assert_eq!(fs::read(f.run.join(file)).unwrap(), fs::read(again.join(file)).unwrap(), "{file} differs");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let f = fixture("0.1", "1e-2");
    let cfg = f.root.join("cfg.json");
    fs::write(&cfg, r#"{"epochs": 1, "gamma": 0.5, "batch_size": 8}"#).unwrap();
    let out = f.root.join("cfgrun");
    ok(&["train", "--data", s(&f.data), "--out", s(&out), "--seed", "1", "--config", s(&cfg), "--gamma", "0.25", "--quiet"]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(RUN_MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["config"]["epochs"], 1);
    assert_eq!(manifest["config"]["gamma"], 0.25);
    assert_eq!(manifest["config"]["batch_size"], 8);
}

#[test]
fn resume_continues_a_run() {
    let f = fixture("0.1", "1e-2");
    let longer = f.root.join("longer");
    ok(&[
        "train", "--data", s(&f.data), "--out", s(&longer), "--seed", "7", "--beta", "0.1", "--gamma", "1e-2", "--T",
        "3", "--epochs", "5", "--batch_size", "4", "--lr", "0.01", "--quiet",
    ]);
    let resumed = f.root.join("resumed");
    ok(&[
        "train", "--data", s(&f.data), "--out", s(&resumed), "--seed", "7", "--resume",
        s(&f.run.join(CHECKPOINT_FILE)), "--epochs", "5", "--quiet",
    ]);
    assert_eq!(fs::read(longer.join(REPORT_FILE)).unwrap(), fs::read(resumed.join(REPORT_FILE)).unwrap());

    let bad = relab(&[
        "train", "--data", s(&f.data), "--out", s(&f.root.join("bad")), "--seed", "7", "--resume",
        s(&f.run.join(CHECKPOINT_FILE)), "--gamma", "0.3",
    ]);
    assert!(!bad.status.success());
}

#[test]
fn train_needs_a_seed() {
    let out = relab(&["train", "--data", "d", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn relax_with_zero_steps_returns_priors() {
    let f = fixture("0.1", "1e-2");
    let text = ok(&["relax", "--checkpoint", s(&f.run.join(CHECKPOINT_FILE)), "--data", s(&f.data), "--T", "0"]);
    let ckpt = load_checkpoint(&f.run.join(CHECKPOINT_FILE)).unwrap();
    let model = ckpt.model().unwrap();
    let corpus = load_corpus(&f.data).unwrap();
    let records: Vec<RelaxRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), corpus.val.len());
    for (rec, sample) in records.iter().zip(&corpus.val) {
        assert_eq!(rec.id, sample.id);
        assert_eq!(rec.iterations, 0);
        assert_eq!(rec.assignment, model.prior_assignment(sample).unwrap().to_rows());
        assert_eq!(rec.consistency.len(), 1);
    }
}

#[test]
fn relax_traces_rise_with_symmetric_compat() {
    let f = fixture("0.1", "1e-2");
    let mut ckpt: Checkpoint = load_checkpoint(&f.run.join(CHECKPOINT_FILE)).unwrap();
    let c = ckpt.model.compat.clone();
    let dim = c.len();
    ckpt.model.compat = (0..dim).map(|a| (0..dim).map(|b| (c[a][b] + c[b][a]) / 2.0).collect()).collect();
    let path = f.root.join("sym.json");
    save_checkpoint(&path, &ckpt).unwrap();
    let out = f.root.join("relaxed.jsonl");
    ok(&["relax", "--checkpoint", s(&path), "--data", s(&f.data), "--split", "all", "--T", "6", "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 22);
    for line in text.lines() {
        let rec: RelaxRecord = serde_json::from_str(line).unwrap();
        assert_eq!(rec.consistency.len(), rec.iterations + 1);
        assert!(rec.consistency.windows(2).all(|w| w[1] >= w[0] - 1e-10), "{:?}", rec.consistency);
    }
}

#[test]
fn relax_reports_missing_checkpoint() {
    let f = fixture("0.1", "1e-2");
    let out = relab(&["relax", "--checkpoint", s(&f.root.join("nope.json")), "--data", s(&f.data)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
}

#[test]
fn evaluate_text_files() {
    let dir = tempfile::tempdir().unwrap();
    let (hyp, refs, json) = (dir.path().join("h.txt"), dir.path().join("r.txt"), dir.path().join("e.json"));
    fs::write(&refs, "the cat\nabc\n").unwrap();
    fs::write(&hyp, "the cat\nabc\n").unwrap();
    let text = ok(&["evaluate", "--hyp", s(&hyp), "--ref", s(&refs)]);
    assert!(text.contains("CER"));
    let summary: metrics::EvalSummary = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!((summary.cer, summary.wer), (0.0, 0.0));

    fs::write(&hyp, "the hat\nabd\n").unwrap();
    ok(&["evaluate", "--hyp", s(&hyp), "--ref", s(&refs), "--json", s(&json)]);
    let summary: metrics::EvalSummary = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let oracle = metrics::evaluate(&[("the hat", "the cat"), ("abd", "abc")]).unwrap();
    assert_eq!(summary, oracle);
    assert_eq!(summary.cer, 2.0 / 10.0);

    fs::write(&hyp, b"the cat\n\xff\n").unwrap();
    assert_eq!(relab(&["evaluate", "--hyp", s(&hyp), "--ref", s(&refs)]).status.code(), Some(4));
    fs::write(&hyp, "only one line\n").unwrap();
    assert_eq!(relab(&["evaluate", "--hyp", s(&hyp), "--ref", s(&refs)]).status.code(), Some(4));
    fs::write(&hyp, "x\ny\n").unwrap();
    fs::write(&refs, "\n\n").unwrap();
    assert_eq!(relab(&["evaluate", "--hyp", s(&hyp), "--ref", s(&refs)]).status.code(), Some(5));
}

#[test]
fn evaluate_decodes_from_a_checkpoint_with_oov() {
    let f = fixture("0.1", "1e-2");
    let ext = f.root.join("ext.txt");
    fs::write(&ext, "a\nb\nc\nd\ne\n").unwrap();
    let text = ok(&[
        "evaluate", "--checkpoint", s(&f.run.join(CHECKPOINT_FILE)), "--data", s(&f.data), "--external_vocab", s(&ext),
    ]);
    let summary: metrics::EvalSummary = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    let ckpt = load_checkpoint(&f.run.join(CHECKPOINT_FILE)).unwrap();
    let last = ckpt.report.epochs.last().unwrap().validation.as_ref().unwrap();
    assert_eq!(summary.cer, last.cer_baseline);
    assert!(summary.oov_rate.is_some());
}

#[test]
fn postproc_threshold_zero_is_identity_and_near_misses_improve() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    fs::write(p("train.txt"), "the quick brown fox\njumps over the lazy dog\n").unwrap();
    fs::write(p("hyp.txt"), "tha quick brwn fox\njumps ovr the lazy dg\n").unwrap();
    fs::write(p("ref.txt"), "the quick brown fox\njumps over the lazy dog\n").unwrap();

    ok(&["postproc", "--hyp", s(&p("hyp.txt")), "--out", s(&p("same.txt")), "--transcripts", s(&p("train.txt")), "--threshold", "0"]);
    assert_eq!(fs::read(p("hyp.txt")).unwrap(), fs::read(p("same.txt")).unwrap());

    let text = ok(&[
        "postproc", "--hyp", s(&p("hyp.txt")), "--out", s(&p("fixed.txt")), "--transcripts", s(&p("train.txt")), "--ref",
        s(&p("ref.txt")),
    ]);
    let summary: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!(summary["cer_after"].as_f64().unwrap() <= summary["cer_before"].as_f64().unwrap());
    assert_eq!(fs::read_to_string(p("fixed.txt")).unwrap(), "the quick brown fox\njumps over the lazy dog\n");

    let out = relab(&["postproc", "--hyp", s(&p("hyp.txt")), "--out", s(&p("x.txt"))]);
    assert_eq!(out.status.code(), Some(6));
    let out = relab(&["postproc", "--hyp", s(&p("missing.txt")), "--out", s(&p("x.txt")), "--transcripts", s(&p("train.txt"))]);
    assert_eq!(out.status.code(), Some(3));
}

fn inspect_fraction(path: &Path) -> f64 {
    let text = ok(&["inspect", "--checkpoint", s(path), "--json"]);
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    v["sparsity"]["fraction"].as_f64().unwrap()
}

#[test]
fn inspect_reports_sparsity() {
    let f = fixture("0.1", "1e-1");
    let path = f.run.join(CHECKPOINT_FILE);
    let ckpt = load_checkpoint(&path).unwrap();
    assert_eq!(inspect_fraction(&path), ckpt.report.epochs.last().unwrap().sparsity);
    let expected = sparsity_report(&ckpt.model().unwrap().compat, ckpt.config.sparsity_threshold);
    assert_eq!(inspect_fraction(&path), expected.fraction);

    for (value, fraction) in [(0.0, 1.0), (1.0, 0.0)] {
        let mut c = ckpt.clone();
        c.best = None;
        for row in &mut c.model.compat {
            row.fill(value);
        }
        let p = f.root.join(format!("r{value}.json"));
        save_checkpoint(&p, &c).unwrap();
        assert_eq!(inspect_fraction(&p), fraction);
    }

    let grid = f.root.join("grid.tsv");
    let text = ok(&["inspect", "--checkpoint", s(&path), "--grid", s(&grid), "--stat", "small"]);
    assert!(text.contains("sparsity"));
    let rows: Vec<&str> = fs::read_to_string(&grid).unwrap().leak().lines().collect();
    assert_eq!(rows.len(), ckpt.n);
    assert!(rows.iter().all(|r| r.split('\t').count() == ckpt.n));
}

//! The `relab` command line: argument definitions and command bodies.
//!
//! Data goes to files or standard output; progress and diagnostics go to the
//! error stream. Every command is deterministic given its inputs and seed.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{self, Corpus, CorpusManifest, SequenceSample, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalSummary};
use crate::postproc::{self, CorrectOptions};
use crate::relax::{self, RelaxationConfig};
use crate::train::{
    self, load_checkpoint, save_checkpoint, sparsity_report, Checkpoint, EpochRecord, Model, TrainConfig,
    Trainer,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.jsonl";
pub const CURVE_FILE: &str = "curve.tsv";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "relab", version, about = "Trainable relaxation labelling for sequence recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a prior model and compatibility matrix on a corpus directory.
    Train(TrainArgs),
    /// Run the relaxation with a checkpointed compatibility matrix.
    Relax(RelaxArgs),
    /// Character and word error rates of hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Vocabulary-based correction of hypothesis transcripts.
    Postproc(PostprocArgs),
    /// Sparsity and block structure of a checkpoint's compatibility matrix.
    Inspect(InspectArgs),
    /// Write a synthetic corpus directory.
    Generate(GenerateArgs),
}

/// One flag per [`TrainConfig`] field, named exactly like the field's
/// config-file key. Unset flags leave the file or default value alone.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "T", value_name = "ITERATIONS")]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "lr_decay_factor")]
    pub lr_decay_factor: Option<f64>,
    #[arg(long = "lr_decay_epoch")]
    pub lr_decay_epoch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch_size")]
    pub batch_size: Option<usize>,
    #[arg(long = "adam_beta1")]
    pub adam_beta1: Option<f64>,
    #[arg(long = "adam_beta2")]
    pub adam_beta2: Option<f64>,
    #[arg(long = "adam_eps")]
    pub adam_eps: Option<f64>,
    #[arg(long = "clamp_R_nonneg", action = ArgAction::Set, value_name = "BOOL")]
    pub clamp_r_nonneg: Option<bool>,
    #[arg(long = "detach_relax_prior", action = ArgAction::Set, value_name = "BOOL")]
    pub detach_relax_prior: Option<bool>,
    #[arg(long = "normalize_R_rows", action = ArgAction::Set, value_name = "BOOL")]
    pub normalize_r_rows: Option<bool>,
    #[arg(long = "init_scale")]
    pub init_scale: Option<f64>,
    #[arg(long = "r_init_noise")]
    pub r_init_noise: Option<f64>,
    #[arg(long = "sparsity_threshold")]
    pub sparsity_threshold: Option<f64>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            beta,
            gamma,
            iterations,
            lr,
            lr_decay_factor,
            lr_decay_epoch,
            epochs,
            batch_size,
            adam_beta1,
            adam_beta2,
            adam_eps,
            clamp_r_nonneg,
            detach_relax_prior,
            normalize_r_rows,
            init_scale,
            r_init_noise,
            sparsity_threshold
        );
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory holding manifest.json, train.jsonl and val.jsonl.
    #[arg(long, required_unless_present = "rerun")]
    pub data: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, required_unless_present = "rerun")]
    pub seed: Option<u64>,
    /// JSON file with any subset of the configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint. Only --epochs may change the stored
    /// configuration.
    #[arg(long, conflicts_with = "rerun")]
    pub resume: Option<PathBuf>,
    /// Repeat the run described by a run manifest.
    #[arg(long, conflicts_with_all = ["data", "seed", "config"])]
    pub rerun: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct RelaxArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
    /// Relaxation steps; defaults to the checkpoint's training value.
    #[arg(long = "T", value_name = "ITERATIONS")]
    pub iterations: Option<usize>,
    /// Stop early once consecutive assignments differ by less than this in
    /// L∞. Zero runs exactly T steps.
    #[arg(long = "stop_tol", default_value_t = 0.0)]
    pub stop_tol: f64,
    /// Use the best checkpointed model instead of the final one.
    #[arg(long)]
    pub best: bool,
    /// JSON-lines output; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Hypotheses, one per line.
    #[arg(long, requires = "reference", conflicts_with = "checkpoint")]
    pub hyp: Option<PathBuf>,
    /// References, one per line, aligned with --hyp.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Decode hypotheses with this checkpoint instead of reading them.
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
    /// Relaxation steps before decoding; 0 decodes the priors directly.
    #[arg(long = "T", value_name = "ITERATIONS", default_value_t = 0)]
    pub iterations: usize,
    #[arg(long)]
    pub best: bool,
    /// Dataset word list for the OOV rate; the corpus training transcripts
    /// are used when decoding from a checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// External word list; enables the OOV rate.
    #[arg(long = "external_vocab")]
    pub external_vocab: Option<PathBuf>,
    /// Also write the summary as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PostprocArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training transcripts, one per line.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    /// Take training transcripts from a corpus directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// External word list, one word per line.
    #[arg(long)]
    pub wordlist: Option<PathBuf>,
    /// Replace only when the edit distance is below this.
    #[arg(long, default_value_t = postproc::DEFAULT_THRESHOLD)]
    pub threshold: usize,
    /// Correct the word core and keep surrounding punctuation.
    #[arg(long = "strip_punct")]
    pub strip_punct: bool,
    /// References for before/after error rates.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BlockStat {
    L1,
    Max,
    Small,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the checkpoint's configured threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub best: bool,
    /// Value shown for each block in the grid.
    #[arg(long, value_enum, default_value = "l1")]
    pub stat: BlockStat,
    /// Write the grid as tab-separated values here instead of standard output.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Print the full sparsity report as JSON instead of the text summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 400)]
    pub val: usize,
    /// JSON synthetic spec; the flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long = "confusion_noise")]
    pub confusion_noise: Option<f64>,
    #[arg(long = "n_frames")]
    pub n_frames: Option<usize>,
    #[arg(long = "feature_window")]
    pub feature_window: Option<usize>,
}

/// Everything needed to repeat a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub data: PathBuf,
    pub corpus: CorpusManifest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resumed_from: Option<PathBuf>,
    pub artifacts: Artifacts,
}

/// File names inside the run's output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: String,
    pub report: String,
    pub curve: String,
}

impl Default for Artifacts {
    fn default() -> Self {
        Artifacts {
            checkpoint: CHECKPOINT_FILE.into(),
            report: REPORT_FILE.into(),
            curve: CURVE_FILE.into(),
        }
    }
}

/// One line of `report.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    /// `"trained"`, or `"untrained"` for control runs where the relaxation
    /// path uses an `R` that received no relaxation-loss signal.
    pub rl_path: String,
    #[serde(flatten)]
    pub record: EpochRecord,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::FileUnreadable { .. } | Error::FileUnwritable { .. } => 3,
        Error::ParseError { .. } => 4,
        Error::EmptyReference => 5,
        Error::InvalidInput(_) | Error::SpecInvalid(_) | Error::DimensionMismatch { .. } => 6,
        _ => 1,
    }
}

/// Parses `args`, runs the command against the real standard streams and
/// maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (stdout, stderr) = (io::stdout(), io::stderr());
    match execute(cli, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out, log),
        Command::Relax(a) => cmd_relax(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Postproc(a) => cmd_postproc(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
        Command::Generate(a) => cmd_generate(&a, log),
    }
}

fn stdout_err(source: io::Error) -> Error {
    Error::FileUnwritable { path: PathBuf::from("<stdout>"), source }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::FileUnwritable { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::FileUnwritable { path: path.to_path_buf(), source })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::FileUnreadable { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| Error::ParseError { line: e.line(), message: format!("{}: {e}", path.display()) })
}

/// Lines of a UTF-8 text file, without line terminators. A trailing newline
/// does not produce an extra empty line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|source| Error::FileUnreadable { path: path.to_path_buf(), source })?;
    let mut lines = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|e| Error::ParseError {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        lines.push(line.to_string());
    }
    if bytes.ends_with(b"\n") || bytes.is_empty() {
        lines.pop();
    }
    Ok(lines)
}

fn aligned_pairs(hyp_path: &Path, ref_path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let (hyps, refs) = (read_lines(hyp_path)?, read_lines(ref_path)?);
    if hyps.len() != refs.len() {
        let (short, len) = if hyps.len() < refs.len() { (hyp_path, hyps.len()) } else { (ref_path, refs.len()) };
        return Err(Error::ParseError {
            line: len + 1,
            message: format!("{} ends early: {} hypotheses for {} references", short.display(), hyps.len(), refs.len()),
        });
    }
    Ok((hyps, refs))
}

fn select(corpus: &Corpus, split: Split) -> Vec<SequenceSample> {
    match split {
        Split::Train => corpus.train.clone(),
        Split::Val => corpus.val.clone(),
        Split::All => corpus.train.iter().chain(&corpus.val).cloned().collect(),
    }
}

fn checkpoint_model(ckpt: &Checkpoint, best: bool) -> Result<Model> {
    if best {
        ckpt.best_model()
    } else {
        ckpt.model()
    }
}

fn check_labels(ckpt: &Checkpoint, manifest: &CorpusManifest) -> Result<()> {
    if ckpt.labels != manifest.labels || ckpt.blank != manifest.blank || ckpt.n != manifest.n_frames {
        return Err(Error::InvalidInput("checkpoint and corpus disagree on labels, blank or frame count".into()));
    }
    Ok(())
}

fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => parse_json(path)?,
        None => TrainConfig::default(),
    };
    args.overrides.apply(&mut cfg);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn curve_line(record: &EpochRecord) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
    let val = record.validation.as_ref();
    format!(
        "{}\t{}\t{}\n",
        record.epoch,
        opt(val.map(|v| v.cer_baseline)),
        opt(val.and_then(|v| v.cer_rl))
    )
}

fn curve_header(rl_trained: bool) -> String {
    let rl = if rl_trained { "val_cer_rl" } else { "val_cer_rl_untrained" };
    format!("epoch\tval_cer_baseline\t{rl}\n")
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write, log: &mut dyn Write) -> Result<()> {
    let (data_dir, cfg, resume, expected_corpus) = match &args.rerun {
        Some(path) => {
            let run: RunManifest = parse_json(path)?;
            (run.data, run.config, run.resumed_from, Some(run.corpus))
        }
        None => {
            let data = args.data.clone().expect("clap enforces --data");
            (data, resolve_config(args)?, args.resume.clone(), None)
        }
    };
    let corpus = data::load_corpus(&data_dir)?;
    if let Some(expected) = &expected_corpus {
        if expected != &corpus.manifest {
            return Err(Error::InvalidInput(format!(
                "corpus at {} no longer matches the run manifest",
                data_dir.display()
            )));
        }
    }

    let mut trainer = match &resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let epochs = if args.rerun.is_some() {
                cfg.epochs
            } else {
                let mut requested = ckpt.config.clone();
                args.overrides.apply(&mut requested);
                if let Some(seed) = args.seed {
                    requested.seed = seed;
                }
                let epochs = requested.epochs;
                requested.epochs = ckpt.config.epochs;
                if args.config.is_some() || requested != ckpt.config {
                    return Err(Error::InvalidInput("a resumed run may only change --epochs".into()));
                }
                epochs
            };
            let mut t = Trainer::resume(&corpus, ckpt)?;
            t.set_epochs(epochs);
            t
        }
        None => Trainer::new(&corpus, cfg)?,
    };
    let cfg = trainer.config().clone();

    create_dir(&args.out)?;
    let artifacts = Artifacts::default();
    let run = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: cfg.clone(),
        data: data_dir.clone(),
        corpus: corpus.manifest.clone(),
        resumed_from: resume.clone(),
        artifacts: artifacts.clone(),
    };
    write_file(
        &args.out.join(RUN_MANIFEST_FILE),
        &(serde_json::to_string_pretty(&run).expect("manifest serialises") + "\n"),
    )?;

    let rl_trained = cfg.beta > 0.0;
    let rl_path = if rl_trained { "trained" } else { "untrained" };
    let mut report = String::new();
    let mut curve = curve_header(rl_trained);
    for record in &trainer.report().epochs {
        report += &report_line(rl_path, record);
        curve += &curve_line(record);
    }
    let (report_path, curve_path, ckpt_path) = (
        args.out.join(&artifacts.report),
        args.out.join(&artifacts.curve),
        args.out.join(&artifacts.checkpoint),
    );
    write_file(&report_path, &report)?;
    write_file(&curve_path, &curve)?;

    while !trainer.is_finished() {
        let record = trainer.run_epoch()?.clone();
        report += &report_line(rl_path, &record);
        curve += &curve_line(&record);
        write_file(&report_path, &report)?;
        write_file(&curve_path, &curve)?;
        save_checkpoint(&ckpt_path, &trainer.checkpoint())?;
        if !args.quiet {
            let _ = writeln!(log, "{}", progress_line(&record, cfg.epochs));
        }
    }
    save_checkpoint(&ckpt_path, &trainer.checkpoint())?;

    let last = trainer.report().last().cloned();
    let best = trainer.best().map(|b| (b.epoch, b.val_cer));
    writeln!(out, "wrote {}", args.out.display()).map_err(stdout_err)?;
    if let Some(r) = last {
        writeln!(out, "epochs {}  final loss {:.6}  sparsity {:.4}", r.epoch, r.loss.total, r.sparsity)
            .map_err(stdout_err)?;
    }
    if let Some((epoch, cer)) = best {
        writeln!(out, "best val CER {:.4} at epoch {epoch}", cer).map_err(stdout_err)?;
    }
    Ok(())
}

fn report_line(rl_path: &str, record: &EpochRecord) -> String {
    let line = ReportLine { rl_path: rl_path.into(), record: record.clone() };
    serde_json::to_string(&line).expect("report serialises") + "\n"
}

fn progress_line(r: &EpochRecord, epochs: usize) -> String {
    let mut s = format!("epoch {}/{epochs} lr {:.1e} loss {:.5}", r.epoch, r.lr, r.loss.total);
    if let Some(v) = &r.validation {
        s += &format!(" val CER {:.4}", v.cer_baseline);
        match v.cer_rl {
            Some(c) => s += &format!(" (RL {c:.4})"),
            None => s += " (RL failed)",
        }
    }
    s + &format!(" sparsity {:.4}", r.sparsity)
}

/// One line of `relax` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxRecord {
    pub id: String,
    pub iterations: usize,
    pub assignment: Vec<Vec<f64>>,
    /// Average local consistency of `p0, p1, ...`.
    pub consistency: Vec<f64>,
}

fn cmd_relax(args: &RelaxArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let corpus = data::load_corpus(&args.data)?;
    check_labels(&ckpt, &corpus.manifest)?;
    let model = checkpoint_model(&ckpt, args.best)?;
    let iterations = args.iterations.unwrap_or(ckpt.config.iterations);
    let mut text = String::new();
    for sample in select(&corpus, args.split) {
        let p0 = model.prior_assignment(&sample)?;
        let record = if iterations == 0 {
            RelaxRecord {
                id: sample.id.clone(),
                iterations: 0,
                assignment: p0.to_rows(),
                consistency: vec![relax::average_local_consistency(&p0, &model.compat)?],
            }
        } else {
            let cfg = RelaxationConfig::new(iterations, args.stop_tol, true)?;
            let outcome = relax::run(&p0, &model.compat, &cfg).map_err(|e| e.in_sample(&sample.id))?;
            RelaxRecord {
                id: sample.id.clone(),
                iterations: outcome.iterations,
                assignment: outcome.assignment.to_rows(),
                consistency: outcome.tape()?.consistency_trace()?,
            }
        };
        text += &(serde_json::to_string(&record).expect("record serialises") + "\n");
    }
    match &args.out {
        Some(path) => write_file(path, &text),
        None => out.write_all(text.as_bytes()).map_err(stdout_err),
    }
}

fn word_set<S: AsRef<str>>(lines: &[S]) -> HashSet<String> {
    lines
        .iter()
        .flat_map(|l| l.as_ref().split_whitespace().map(metrics::strip_punctuation).collect::<Vec<_>>())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Human-readable summary table.
pub fn render_summary(summary: &EvalSummary) -> String {
    let mut s = String::new();
    s += &format!("{:<8} {:>10} {:>10} {:>10}\n", "metric", "rate %", "edits", "ref units");
    s += &format!(
        "{:<8} {:>10.2} {:>10} {:>10}\n",
        "CER",
        summary.cer * 100.0,
        summary.total_edit_ops,
        summary.total_ref_chars
    );
    s += &format!(
        "{:<8} {:>10.2} {:>10} {:>10}\n",
        "WER",
        summary.wer * 100.0,
        summary.total_word_edit_ops,
        summary.total_ref_words
    );
    if let Some(oov) = summary.oov_rate {
        s += &format!("{:<8} {:>10.2}\n", "OOV", oov * 100.0);
    }
    s
}

fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let (hyps, refs, train_text) = match (&args.hyp, &args.reference, &args.checkpoint, &args.data) {
        (Some(h), Some(r), None, _) => {
            let (hyps, refs) = aligned_pairs(h, r)?;
            (hyps, refs, None)
        }
        (None, _, Some(c), Some(d)) => {
            let ckpt = load_checkpoint(c)?;
            let corpus = data::load_corpus(d)?;
            check_labels(&ckpt, &corpus.manifest)?;
            let model = checkpoint_model(&ckpt, args.best)?;
            let samples = select(&corpus, args.split);
            let decoded = train::decode_samples(&model, &samples, &corpus.manifest, args.iterations)?;
            let mut hyps = Vec::with_capacity(samples.len());
            for (base, refined) in decoded {
                let t = if args.iterations == 0 { base } else { refined? };
                hyps.push(t.text().to_string());
            }
            let refs = samples.iter().map(|s| s.transcript.text().to_string()).collect();
            let train_text: Vec<String> = corpus.train.iter().map(|s| s.transcript.text().to_string()).collect();
            (hyps, refs, Some(train_text))
        }
        _ => {
            return Err(Error::InvalidInput(
                "evaluate needs either --hyp and --ref, or --checkpoint and --data".into(),
            ))
        }
    };
    let pairs: Vec<(&str, &str)> = hyps.iter().map(String::as_str).zip(refs.iter().map(String::as_str)).collect();
    let mut summary = metrics::evaluate(&pairs)?;
    if let Some(ext) = &args.external_vocab {
        let external: HashSet<String> = postproc::read_wordlist(ext)?.into_iter().collect();
        let dataset = match (&args.vocab, &train_text) {
            (Some(path), _) => postproc::read_wordlist(path)?.into_iter().collect(),
            (None, Some(text)) => word_set(text),
            (None, None) => HashSet::new(),
        };
        summary.oov_rate = Some(metrics::oov_rate(&hyps, &dataset, &external));
    }
    let json = serde_json::to_string(&summary).expect("summary serialises");
    if let Some(path) = &args.json {
        write_file(path, &(json.clone() + "\n"))?;
    }
    writeln!(out, "{}{json}", render_summary(&summary)).map_err(stdout_err)
}

/// Before/after error rates printed by `postproc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocSummary {
    pub vocabulary: usize,
    pub lines: usize,
    pub changed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cer_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cer_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wer_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wer_after: Option<f64>,
}

fn cmd_postproc(args: &PostprocArgs, out: &mut dyn Write) -> Result<()> {
    let mut training = Vec::new();
    if let Some(path) = &args.transcripts {
        training.extend(read_lines(path)?);
    }
    if let Some(dir) = &args.data {
        let corpus = data::load_corpus(dir)?;
        training.extend(corpus.train.iter().map(|s| s.transcript.text().to_string()));
    }
    let vocab = postproc::build_vocab(&training, args.wordlist.as_deref())?;
    let raw = fs::read(&args.hyp).map_err(|source| Error::FileUnreadable { path: args.hyp.clone(), source })?;
    let text = String::from_utf8(raw).map_err(|e| Error::ParseError {
        line: 0,
        message: format!("{}: {e}", args.hyp.display()),
    })?;
    let opts = CorrectOptions { threshold: args.threshold, strip_punct: args.strip_punct };
    // correct line by line so that line structure and terminators survive
    let corrected: String = text
        .split_inclusive('\n')
        .map(|line| {
            let body = line.trim_end_matches(['\n', '\r']);
            postproc::correct(body, &vocab, opts) + &line[body.len()..]
        })
        .collect();
    write_file(&args.out, &corrected)?;

    let before = read_lines(&args.hyp)?;
    let after = read_lines(&args.out)?;
    let changed = before.iter().zip(&after).filter(|(a, b)| a != b).count();
    let mut summary = PostprocSummary {
        vocabulary: vocab.len(),
        lines: before.len(),
        changed,
        cer_before: None,
        cer_after: None,
        wer_before: None,
        wer_after: None,
    };
    if let Some(r) = &args.reference {
        let (_, refs) = aligned_pairs(&args.hyp, r)?;
        let pairs = |h: &[String]| -> Vec<(String, String)> { h.iter().cloned().zip(refs.iter().cloned()).collect() };
        let b = metrics::evaluate(&pairs(&before))?;
        let a = metrics::evaluate(&pairs(&after))?;
        summary.cer_before = Some(b.cer);
        summary.cer_after = Some(a.cer);
        summary.wer_before = Some(b.wer);
        summary.wer_after = Some(a.wer);
        writeln!(out, "CER before {:.4} after {:.4}", b.cer, a.cer).map_err(stdout_err)?;
        writeln!(out, "WER before {:.4} after {:.4}", b.wer, a.wer).map_err(stdout_err)?;
    }
    writeln!(out, "{}", serde_json::to_string(&summary).expect("summary serialises")).map_err(stdout_err)
}

/// Norms of a compatibility matrix printed by `inspect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixNorms {
    pub l1: f64,
    pub frobenius: f64,
    pub max_abs: f64,
    pub min: f64,
    pub symmetric: bool,
}

pub fn matrix_norms(compat: &relax::CompatibilityMatrix) -> MatrixNorms {
    let c = compat.coeffs();
    MatrixNorms {
        l1: compat.l1_norm(),
        frobenius: c.iter().map(|v| v * v).sum::<f64>().sqrt(),
        max_abs: c.iter().fold(0.0, |a, v| a.max(v.abs())),
        min: c.iter().copied().fold(f64::INFINITY, f64::min),
        symmetric: compat.is_symmetric(1e-12),
    }
}

fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = checkpoint_model(&ckpt, args.best)?;
    let threshold = args.threshold.unwrap_or(ckpt.config.sparsity_threshold);
    let report = sparsity_report(&model.compat, threshold);
    let norms = matrix_norms(&model.compat);
    let n = model.compat.n();

    let mut grid = String::new();
    for i in 0..n {
        let row: Vec<String> = report.blocks[i * n..(i + 1) * n]
            .iter()
            .map(|b| match args.stat {
                BlockStat::L1 => b.l1.to_string(),
                BlockStat::Max => b.max_abs.to_string(),
                BlockStat::Small => b.small.to_string(),
            })
            .collect();
        grid += &row.join("\t");
        grid += "\n";
    }

    let mut text = String::new();
    if args.json {
        #[derive(Serialize)]
        struct Inspect<'a> {
            sparsity: &'a train::SparsityReport,
            norms: &'a MatrixNorms,
        }
        text += &serde_json::to_string(&Inspect { sparsity: &report, norms: &norms }).expect("report serialises");
        text += "\n";
    } else {
        text += &format!("objects {n}  labels {}  epoch {}\n", model.compat.m(), ckpt.epoch);
        text += &format!(
            "sparsity {:.6}  ({} of {} entries below {:e})\n",
            report.fraction, report.count, report.total, report.threshold
        );
        text += &format!(
            "norms  l1 {:.6}  frobenius {:.6}  max {:.6}  min {:.6}  symmetric {}\n",
            norms.l1, norms.frobenius, norms.max_abs, norms.min, norms.symmetric
        );
    }
    match &args.grid {
        Some(path) => write_file(path, &grid)?,
        None if !args.json => {
            text += &format!("block grid ({})\n", format!("{:?}", args.stat).to_lowercase());
            text += &grid;
        }
        None => {}
    }
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn cmd_generate(args: &GenerateArgs, log: &mut dyn Write) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => parse_json(path)?,
        None => SyntheticSpec::desk_scale(args.seed, 0),
    };
    spec.seed = args.seed;
    if let Some(v) = args.confusion_noise {
        spec.confusion_noise = v;
    }
    if let Some(v) = args.n_frames {
        spec.n_frames = v;
    }
    if let Some(v) = args.feature_window {
        spec.feature_window = v;
    }
    let corpus = data::synthetic_corpus(&spec, args.train, args.val)?;
    data::save_corpus(&args.out, &corpus)?;
    let _ = writeln!(
        log,
        "wrote {} training and {} validation samples to {} ({})",
        corpus.train.len(),
        corpus.val.len(),
        args.out.display(),
        spec.contextual_rule.describe(&spec.alphabet)
    );
    Ok(())
}

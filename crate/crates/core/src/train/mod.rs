//! Joint training of the prior model and the compatibility matrix.
//!
//! The objective for one sample is
//!
//! ```text
//! L = ctc(p0) + β·ctc(run(p0, R, T)) + γ·‖R‖₁,    p0 = SoftMax(xW + b)
//! ```
//!
//! Gradients of the CTC terms are averaged over the samples of a batch; the
//! ℓ1 subgradient `γ·sign(R)` (zero at exact zeros) is added once. Each batch
//! takes one Adam step and, when `clamp_r_nonneg` is set, projects `R` back
//! onto `R ≥ 0`. During training the relaxation always runs exactly `T`
//! steps so the unrolled graph has a fixed depth.
//!
//! Validation decodes two paths every epoch: greedy decoding of the prior
//! alone (the baseline path) and greedy decoding after relaxation.

mod adam;
mod checkpoint;
mod sparsity;
mod sweep;

pub use adam::{adam_update, AdamConfig, Moments};
pub use checkpoint::{load_checkpoint, save_checkpoint, BestRecord, Checkpoint, ModelRecord, TrainState, CHECKPOINT_VERSION};
pub use sparsity::{sparsity_fraction, sparsity_report, BlockSummary, SparsityReport, DEFAULT_SPARSITY_THRESHOLD};
pub use sweep::{iteration_sweep, SweepReport, SweepRow};

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bptt;
use crate::ctc::{ctc_loss, greedy_decode, Transcript};
use crate::data::{Corpus, CorpusManifest, SequenceSample};
use crate::error::{Error, Result};
use crate::metrics;
use crate::prior::{prior_backward, prior_forward, PriorModelParams};
use crate::relax::{self, CompatibilityMatrix, LabelingAssignment, RelaxationConfig};

fn default_seed() -> u64 {
    0
}

/// Hyperparameters of a training run. Field names double as CLI flags and
/// config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "T")]
    pub iterations: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// The decay applies from this (0-based) epoch onwards, once.
    pub lr_decay_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    #[serde(rename = "clamp_R_nonneg")]
    pub clamp_r_nonneg: bool,
    /// Stop relaxation-loss gradients from reaching the prior model.
    pub detach_relax_prior: bool,
    /// Rescale each object's block-row of `R` to unit maximum after every
    /// step. The relaxation output does not depend on that scale, so only
    /// the ℓ1 term sees it; without the rescaling ℓ1 shrinks whole rows to
    /// zero and the support degenerates.
    #[serde(rename = "normalize_R_rows")]
    pub normalize_r_rows: bool,
    /// Prior model weights start in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// `R` starts at `1 + U[0, r_init_noise]`.
    pub r_init_noise: f64,
    pub sparsity_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 0.1,
            gamma: 1e-2,
            iterations: 3,
            lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_epoch: 80,
            epochs: 400,
            batch_size: 20,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clamp_r_nonneg: true,
            detach_relax_prior: false,
            normalize_r_rows: true,
            init_scale: 0.1,
            r_init_noise: 0.01,
            sparsity_threshold: DEFAULT_SPARSITY_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("train config: {msg}")));
        let reals = [
            self.beta,
            self.gamma,
            self.lr,
            self.lr_decay_factor,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.init_scale,
            self.r_init_noise,
            self.sparsity_threshold,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return bad("all real-valued settings must be finite");
        }
        if self.beta < 0.0 || self.gamma < 0.0 {
            return bad("beta and gamma must be >= 0");
        }
        if self.iterations == 0 {
            return bad("T must be at least 1");
        }
        if self.lr <= 0.0 || self.lr_decay_factor <= 0.0 {
            return bad("lr and lr_decay_factor must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be > 0");
        }
        if self.init_scale < 0.0 || self.r_init_noise < 0.0 || self.sparsity_threshold < 0.0 {
            return bad("init_scale, r_init_noise and sparsity_threshold must be >= 0");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    /// Learning rate in effect during the 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }
}

/// Trainable parameters. Without a prior model the samples' stored priors
/// are used as `p0` and only `R` is learned.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub prior: Option<PriorModelParams>,
    pub compat: CompatibilityMatrix,
}

impl Model {
    /// Prior weights from `U[-init_scale, init_scale]`, `R = 1 + U[0, noise]`.
    pub fn init(manifest: &CorpusManifest, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let (n, m) = (manifest.n_frames, manifest.m());
        let prior = manifest
            .feature_dim
            .map(|d| PriorModelParams::init_uniform(d, m, cfg.init_scale, rng));
        let dim = n * m;
        let noise = cfg.r_init_noise;
        let coeffs = Array2::from_shape_fn((dim, dim), |_| 1.0 + if noise > 0.0 { rng.random_range(0.0..=noise) } else { 0.0 });
        Ok(Model { prior, compat: CompatibilityMatrix::new(n, m, coeffs)? })
    }

    /// The assignment fed to the relaxation: the prior model's output, or the
    /// sample's stored priors when there is no prior model.
    pub fn prior_assignment(&self, sample: &SequenceSample) -> Result<LabelingAssignment> {
        match (&self.prior, &sample.features, &sample.priors) {
            (Some(params), Some(x), _) => prior_forward(x, params),
            (None, _, Some(p)) => Ok(p.clone()),
            (Some(_), None, _) => Err(Error::InvalidInput("sample has no features for the prior model".into())),
            (None, _, None) => Err(Error::InvalidInput("sample has no stored priors".into())),
        }
        .map_err(|e| e.in_sample(&sample.id))
    }

    /// Exactly `iterations` relaxation steps from `p0`.
    pub fn refine(&self, p0: &LabelingAssignment, iterations: usize) -> Result<LabelingAssignment> {
        if iterations == 0 {
            return Ok(p0.clone());
        }
        let cfg = RelaxationConfig::fixed(iterations, false)?;
        Ok(relax::run(p0, &self.compat, &cfg)?.assignment)
    }
}

/// Per-sample or batch-mean loss terms. `l1` is already multiplied by γ;
/// `total = orig + β·relax + l1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub orig: f64,
    /// Not evaluated during training steps with β = 0.
    pub relax: Option<f64>,
    pub l1: f64,
    pub total: f64,
}

/// Evaluates all three terms of the objective on one sample.
pub fn combined_loss(
    sample: &SequenceSample,
    model: &Model,
    cfg: &TrainConfig,
    blank: usize,
) -> Result<LossComponents> {
    cfg.validate()?;
    let p0 = model.prior_assignment(sample)?;
    let orig = ctc_loss(&p0, &sample.transcript, blank).map_err(|e| e.in_sample(&sample.id))?.loss;
    let refined = model.refine(&p0, cfg.iterations).map_err(|e| e.in_sample(&sample.id))?;
    let relax = ctc_loss(&refined, &sample.transcript, blank).map_err(|e| e.in_sample(&sample.id))?.loss;
    let l1 = cfg.gamma * model.compat.l1_norm();
    Ok(LossComponents { orig, relax: Some(relax), l1, total: orig + cfg.beta * relax + l1 })
}

/// Adam state for every parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub weights: Moments,
    pub bias: Moments,
    pub compat: Moments,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        let (w, b) = model
            .prior
            .as_ref()
            .map_or((0, 0), |p| (p.weights.len(), p.bias.len()));
        OptimizerState {
            step: 0,
            weights: Moments::zeros(w),
            bias: Moments::zeros(b),
            compat: Moments::zeros(model.compat.coeffs().len()),
        }
    }
}

struct SampleGrad {
    orig: f64,
    relax: Option<f64>,
    d_weights: Option<Array2<f64>>,
    d_bias: Option<ndarray::Array1<f64>>,
    d_compat: Option<Array2<f64>>,
}

fn sample_gradients(sample: &SequenceSample, model: &Model, cfg: &TrainConfig, blank: usize) -> Result<SampleGrad> {
    let p0 = model.prior_assignment(sample)?;
    let base = ctc_loss(&p0, &sample.transcript, blank)?;
    let mut d_p0 = base.grad;
    let (mut relax_loss, mut d_compat) = (None, None);
    if cfg.beta > 0.0 {
        let tape = bptt::unroll(&p0, &model.compat, cfg.iterations)?;
        let refined = ctc_loss(tape.last(), &sample.transcript, blank)?;
        let rl = bptt::backward(&tape, &refined.grad)?;
        if !cfg.detach_relax_prior {
            d_p0.scaled_add(cfg.beta, &rl.d_prior);
        }
        relax_loss = Some(refined.loss);
        d_compat = Some(rl.d_compat * cfg.beta);
    }
    let (d_weights, d_bias) = match (&model.prior, &sample.features) {
        (Some(params), Some(x)) => {
            let g = prior_backward(x, params, &d_p0)?;
            (Some(g.d_weights), Some(g.d_bias))
        }
        _ => (None, None),
    };
    Ok(SampleGrad { orig: base.loss, relax: relax_loss, d_weights, d_bias, d_compat })
}

/// Divides each object's block-row by its largest magnitude.
pub fn normalize_block_rows(compat: &mut CompatibilityMatrix) {
    let m = compat.m();
    for mut rows in compat.coeffs_mut().axis_chunks_iter_mut(ndarray::Axis(0), m) {
        let max = rows.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if max > 0.0 {
            rows.mapv_inplace(|v| v / max);
        }
    }
}

/// Outcome of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: LossComponents,
    pub used: usize,
    pub skipped: usize,
}

fn accumulate<D: ndarray::Dimension>(acc: &mut Option<ndarray::Array<f64, D>>, g: Option<ndarray::Array<f64, D>>) {
    match (acc.as_mut(), g) {
        (Some(a), Some(g)) => *a += &g,
        (None, Some(g)) => *acc = Some(g),
        _ => {}
    }
}

/// One Adam step on the mean gradient of `batch`. Samples whose target does
/// not fit their frames are skipped; a batch with nothing left is an error.
pub fn train_step(
    batch: &[&SequenceSample],
    model: &mut Model,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    lr: f64,
    blank: usize,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let shared: &Model = model;
    let results: Vec<Result<SampleGrad>> = batch
        .par_iter()
        .map(|s| sample_gradients(s, shared, cfg, blank).map_err(|e| e.in_sample(&s.id)))
        .collect();

    let (mut used, mut skipped) = (0usize, 0usize);
    let (mut orig, mut relax) = (0.0, 0.0);
    let mut d_weights = None;
    let mut d_bias = None;
    let mut d_compat = None;
    for result in results {
        match result {
            Ok(g) => {
                used += 1;
                orig += g.orig;
                relax += g.relax.unwrap_or(0.0);
                accumulate(&mut d_weights, g.d_weights);
                accumulate(&mut d_bias, g.d_bias);
                accumulate(&mut d_compat, g.d_compat);
            }
            Err(e) if matches!(e.root(), Error::TargetTooLong { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::BatchSkipped { skipped });
    }

    let scale = 1.0 / used as f64;
    let l1 = cfg.gamma * model.compat.l1_norm();
    let relax = (cfg.beta > 0.0).then_some(relax * scale);
    let orig = orig * scale;
    let loss = LossComponents { orig, relax, l1, total: orig + cfg.beta * relax.unwrap_or(0.0) + l1 };

    opt.step += 1;
    let adam = cfg.adam();
    if let Some(params) = model.prior.as_mut() {
        if let (Some(mut dw), Some(mut db)) = (d_weights, d_bias) {
            dw *= scale;
            db *= scale;
            let w = params.weights.as_slice_mut().expect("standard layout");
            adam_update(w, dw.as_slice().expect("standard layout"), &mut opt.weights, lr, opt.step, &adam);
            let b = params.bias.as_slice_mut().expect("standard layout");
            adam_update(b, db.as_slice().expect("standard layout"), &mut opt.bias, lr, opt.step, &adam);
        }
    }

    let mut d_r = d_compat.unwrap_or_else(|| Array2::zeros(model.compat.coeffs().dim()));
    d_r *= scale;
    if cfg.gamma > 0.0 {
        Zip::from(&mut d_r).and(model.compat.coeffs()).for_each(|g, &r| {
            if r != 0.0 {
                *g += cfg.gamma * r.signum();
            }
        });
    }
    let coeffs = model.compat.coeffs_mut();
    let r = coeffs.as_slice_mut().expect("standard layout");
    adam_update(r, d_r.as_slice().expect("standard layout"), &mut opt.compat, lr, opt.step, &adam);
    if cfg.clamp_r_nonneg {
        r.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    if cfg.normalize_r_rows {
        normalize_block_rows(&mut model.compat);
    }

    Ok(StepReport { loss, used, skipped })
}

/// Validation error rates for both decoding paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub cer_baseline: f64,
    pub wer_baseline: f64,
    pub cer_rl: Option<f64>,
    pub wer_rl: Option<f64>,
    /// Why the relaxation path could not be decoded, if it failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rl_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based count of completed epochs.
    pub epoch: usize,
    pub lr: f64,
    /// Means over the epoch's batches.
    pub loss: LossComponents,
    pub skipped: usize,
    pub validation: Option<ValidationRecord>,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// False when β = 0: the relaxation path then uses an `R` that never
    /// received a loss gradient.
    pub rl_path_trained: bool,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// The best model seen so far by baseline validation CER.
#[derive(Debug, Clone, PartialEq)]
pub struct BestModel {
    pub epoch: usize,
    pub val_cer: f64,
    pub model: Model,
}

/// Greedy transcripts for every sample, before and after relaxation.
/// Relaxation failures are reported per sample.
pub fn decode_samples(
    model: &Model,
    samples: &[SequenceSample],
    manifest: &CorpusManifest,
    iterations: usize,
) -> Result<Vec<(Transcript, Result<Transcript>)>> {
    samples
        .par_iter()
        .map(|s| {
            let p0 = model.prior_assignment(s)?;
            let base = greedy_decode(&p0, &manifest.labels, manifest.blank)?;
            let refined = model
                .refine(&p0, iterations)
                .and_then(|p| greedy_decode(&p, &manifest.labels, manifest.blank))
                .map_err(|e| e.in_sample(&s.id));
            Ok((base, refined))
        })
        .collect()
}

pub fn validate_model(
    model: &Model,
    samples: &[SequenceSample],
    manifest: &CorpusManifest,
    iterations: usize,
) -> Result<ValidationRecord> {
    let decoded = decode_samples(model, samples, manifest, iterations)?;
    let base: Vec<(&str, &str)> = decoded
        .iter()
        .zip(samples)
        .map(|((b, _), s)| (b.text(), s.transcript.text()))
        .collect();
    let base = metrics::evaluate(&base)?;
    let mut rl_pairs = Vec::with_capacity(samples.len());
    let mut rl_error = None;
    for ((_, refined), s) in decoded.iter().zip(samples) {
        match refined {
            Ok(t) => rl_pairs.push((t.text(), s.transcript.text())),
            Err(e) => {
                rl_error = Some(e.to_string());
                break;
            }
        }
    }
    let rl = match rl_error {
        None => Some(metrics::evaluate(&rl_pairs)?),
        Some(_) => None,
    };
    Ok(ValidationRecord {
        cer_baseline: base.cer,
        wer_baseline: base.wer,
        cer_rl: rl.as_ref().map(|s| s.cer),
        wer_rl: rl.as_ref().map(|s| s.wer),
        rl_error,
    })
}

/// Training state that can be advanced epoch by epoch and checkpointed.
#[derive(Debug, Clone)]
pub struct Trainer<'c> {
    corpus: &'c Corpus,
    cfg: TrainConfig,
    model: Model,
    optimizer: OptimizerState,
    epoch: usize,
    report: TrainReport,
    best: Option<BestModel>,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub best: Option<BestModel>,
    pub report: TrainReport,
    pub optimizer: OptimizerState,
}

fn check_corpus(corpus: &Corpus, model: &Model) -> Result<()> {
    let manifest = &corpus.manifest;
    if model.compat.n() != manifest.n_frames || model.compat.m() != manifest.m() {
        return Err(Error::dims(
            "compatibility matrix",
            format!("n={} m={}", manifest.n_frames, manifest.m()),
            format!("n={} m={}", model.compat.n(), model.compat.m()),
        ));
    }
    if let Some(p) = &model.prior {
        if Some(p.feature_dim()) != manifest.feature_dim || p.labels() != manifest.m() {
            return Err(Error::dims(
                "prior model",
                format!("{:?}x{}", manifest.feature_dim, manifest.m()),
                format!("{}x{}", p.feature_dim(), p.labels()),
            ));
        }
    }
    Ok(())
}

impl<'c> Trainer<'c> {
    pub fn new(corpus: &'c Corpus, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        corpus.manifest.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::init(&corpus.manifest, &cfg, &mut rng)?;
        let optimizer = OptimizerState::new(&model);
        let report = TrainReport { epochs: Vec::new(), rl_path_trained: cfg.beta > 0.0 };
        Ok(Trainer { corpus, cfg, model, optimizer, epoch: 0, report, best: None })
    }

    /// Restores a trainer from a checkpoint so that further epochs continue
    /// exactly as an uninterrupted run would.
    pub fn resume(corpus: &'c Corpus, checkpoint: Checkpoint) -> Result<Self> {
        checkpoint.config.validate()?;
        let state = checkpoint.into_state()?;
        check_corpus(corpus, &state.model)?;
        Ok(Trainer {
            corpus,
            cfg: state.config,
            model: state.model,
            optimizer: state.optimizer,
            epoch: state.epoch,
            report: state.report,
            best: state.best,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Allows extending a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.cfg.epochs = epochs;
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn best(&self) -> Option<&BestModel> {
        self.best.as_ref()
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// Batch order for the 0-based `epoch`; depends only on the seed and the
    /// epoch, so a resumed run reshuffles identically.
    fn order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.corpus.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        if self.corpus.train.is_empty() {
            return Err(Error::InvalidInput("training split is empty".into()));
        }
        let epoch = self.epoch;
        let lr = self.cfg.lr_at(epoch);
        let blank = self.corpus.manifest.blank;
        let order = self.order(epoch);
        let (mut orig, mut relax, mut l1, mut total) = (0.0, 0.0, 0.0, 0.0);
        let (mut batches, mut skipped) = (0usize, 0usize);
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| &self.corpus.train[i]).collect();
            let step = train_step(&batch, &mut self.model, &mut self.optimizer, &self.cfg, lr, blank)?;
            orig += step.loss.orig;
            relax += step.loss.relax.unwrap_or(0.0);
            l1 += step.loss.l1;
            total += step.loss.total;
            skipped += step.skipped;
            batches += 1;
        }
        let k = batches as f64;
        let loss = LossComponents {
            orig: orig / k,
            relax: (self.cfg.beta > 0.0).then_some(relax / k),
            l1: l1 / k,
            total: total / k,
        };

        let validation = if self.corpus.val.is_empty() {
            None
        } else {
            Some(validate_model(&self.model, &self.corpus.val, &self.corpus.manifest, self.cfg.iterations)?)
        };
        self.epoch += 1;
        if let Some(v) = &validation {
            if self.best.as_ref().is_none_or(|b| v.cer_baseline < b.val_cer) {
                self.best = Some(BestModel { epoch: self.epoch, val_cer: v.cer_baseline, model: self.model.clone() });
            }
        }
        self.report.epochs.push(EpochRecord {
            epoch: self.epoch,
            lr,
            loss,
            skipped,
            validation,
            sparsity: sparsity_fraction(&self.model.compat, self.cfg.sparsity_threshold),
        });
        Ok(self.report.epochs.last().expect("just pushed"))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.corpus.manifest,
            &self.cfg,
            &self.model,
            &self.optimizer,
            self.epoch,
            &self.report,
            self.best.as_ref(),
        )
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run_with(mut self, mut on_epoch: impl FnMut(&Trainer<'c>, &EpochRecord)) -> Result<TrainOutcome> {
        while !self.is_finished() {
            let record = self.run_epoch()?.clone();
            on_epoch(&self, &record);
        }
        Ok(self.finish())
    }

    pub fn run(self) -> Result<TrainOutcome> {
        self.run_with(|_, _| {})
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome { model: self.model, best: self.best, report: self.report, optimizer: self.optimizer }
    }
}

/// Full training loop over `corpus.train`, validating on `corpus.val`.
pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(corpus, cfg.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_corpus, SyntheticSpec};

    fn tiny_corpus(seed: u64, train: usize, val: usize) -> Corpus {
        let spec = SyntheticSpec { n_frames: 8, frames_per_char: 2, ..SyntheticSpec::desk_scale(seed, 0) };
        synthetic_corpus(&spec, train, val).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig { epochs: 2, batch_size: 4, lr: 1e-2, ..TrainConfig::default() }
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.beta, cfg.iterations, cfg.batch_size, cfg.lr), (0.1, 3, 20, 1e-3));
        assert_eq!(cfg.lr_at(79), 1e-3);
        assert!((cfg.lr_at(80) - 1e-4).abs() < 1e-20);
        for bad in [
            TrainConfig { beta: -1.0, ..cfg.clone() },
            TrainConfig { iterations: 0, ..cfg.clone() },
            TrainConfig { lr: 0.0, ..cfg.clone() },
            TrainConfig { batch_size: 0, ..cfg.clone() },
            TrainConfig { gamma: f64::NAN, ..cfg.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn config_json_uses_flag_names() {
        let json = serde_json::to_value(TrainConfig::default()).unwrap();
        assert!(json.get("T").is_some() && json.get("clamp_R_nonneg").is_some());
        let partial: TrainConfig = serde_json::from_str(r#"{"T": 5, "gamma": 0.1}"#).unwrap();
        assert_eq!((partial.iterations, partial.gamma, partial.beta), (5, 0.1, 0.1));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"typo": 1}"#).is_err());
    }

    #[test]
    fn combined_loss_degenerate_weights() {
        let corpus = tiny_corpus(1, 3, 0);
        let cfg = TrainConfig { beta: 0.0, gamma: 0.0, ..TrainConfig::default() };
        let model = Model::init(&corpus.manifest, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let s = &corpus.train[0];
        let loss = combined_loss(s, &model, &cfg, 0).unwrap();
        let p0 = model.prior_assignment(s).unwrap();
        assert_eq!(loss.total, ctc_loss(&p0, &s.transcript, 0).unwrap().loss);

        let zero = Model { compat: CompatibilityMatrix::zeros(8, 6), ..model.clone() };
        let cfg = TrainConfig { gamma: 1.0, ..cfg };
        assert_eq!(zero.compat.l1_norm() * cfg.gamma, 0.0);
    }

    #[test]
    fn combined_loss_recomposes() {
        let corpus = tiny_corpus(2, 3, 0);
        let cfg = TrainConfig { beta: 0.1, gamma: 1e-2, ..TrainConfig::default() };
        let model = Model::init(&corpus.manifest, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let s = &corpus.train[1];
        let c = combined_loss(s, &model, &cfg, 0).unwrap();

        let p0 = model.prior_assignment(s).unwrap();
        let orig = ctc_loss(&p0, &s.transcript, 0).unwrap().loss;
        let mut p = p0.clone();
        for _ in 0..3 {
            p = relax::step(&p, &model.compat).unwrap();
        }
        let relax_term = ctc_loss(&p, &s.transcript, 0).unwrap().loss;
        let l1: f64 = model.compat.coeffs().iter().map(|v| v.abs()).sum::<f64>() * 1e-2;
        assert!((c.total - (orig + 0.1 * relax_term + l1)).abs() < 1e-12);
        assert!((c.total - (c.orig + cfg.beta * c.relax.unwrap() + c.l1)).abs() < 1e-12);
    }

    #[test]
    fn step_is_deterministic() {
        let corpus = tiny_corpus(3, 8, 0);
        let cfg = quick_cfg();
        let run = || {
            let mut model = Model::init(&corpus.manifest, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let mut opt = OptimizerState::new(&model);
            let batch: Vec<&SequenceSample> = corpus.train.iter().collect();
            let report = train_step(&batch, &mut model, &mut opt, &cfg, cfg.lr, 0).unwrap();
            (model, opt, report)
        };
        let (m1, o1, r1) = run();
        let (m2, o2, r2) = run();
        assert_eq!(m1, m2);
        assert_eq!(o1, o2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn no_signal_leaves_compat_unchanged() {
        let corpus = tiny_corpus(4, 4, 0);
        let cfg = TrainConfig { beta: 0.0, gamma: 0.0, normalize_r_rows: false, ..quick_cfg() };
        let mut model = Model::init(&corpus.manifest, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let before = model.compat.clone();
        let mut opt = OptimizerState::new(&model);
        let batch: Vec<&SequenceSample> = corpus.train.iter().collect();
        let step = train_step(&batch, &mut model, &mut opt, &cfg, cfg.lr, 0).unwrap();
        assert_eq!(model.compat, before);
        assert_eq!(step.loss.relax, None);
        assert_eq!(step.loss.total, step.loss.orig);
    }

    #[test]
    fn clamp_keeps_compat_nonnegative() {
        // the first Adam step moves every entry by about lr against the
        // gradient sign, which the l1 term makes positive here
        let corpus = tiny_corpus(5, 8, 0);
        let cfg = TrainConfig { gamma: 0.5, ..quick_cfg() };
        let mut model = Model::init(&corpus.manifest, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut opt = OptimizerState::new(&model);
        let batch: Vec<&SequenceSample> = corpus.train.iter().collect();
        train_step(&batch, &mut model, &mut opt, &cfg, 1.005, 0).unwrap();
        assert!(model.compat.is_nonnegative());
        let zeros = model.compat.coeffs().iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 0 && zeros < model.compat.coeffs().len());

        let unclamped = TrainConfig { clamp_r_nonneg: false, ..cfg };
        let mut model = Model::init(&corpus.manifest, &unclamped, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut opt = OptimizerState::new(&model);
        train_step(&batch, &mut model, &mut opt, &unclamped, 1.005, 0).unwrap();
        assert!(!model.compat.is_nonnegative());
    }

    #[test]
    fn skipped_samples_are_counted() {
        let corpus = tiny_corpus(6, 2, 0);
        let mut long = corpus.train[0].clone();
        long.transcript = Transcript::from_labels(vec![1; 6], &corpus.manifest.labels, 0).unwrap();
        let cfg = quick_cfg();
        let mut model = Model::init(&corpus.manifest, &cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut opt = OptimizerState::new(&model);
        let report = train_step(&[&long, &corpus.train[1]], &mut model, &mut opt, &cfg, cfg.lr, 0).unwrap();
        assert_eq!((report.used, report.skipped), (1, 1));
        assert!(matches!(
            train_step(&[&long], &mut model, &mut opt, &cfg, cfg.lr, 0),
            Err(Error::BatchSkipped { skipped: 1 })
        ));
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let corpus = tiny_corpus(7, 4, 2);
        let cfg = TrainConfig { epochs: 0, ..quick_cfg() };
        let out = train(&corpus, &cfg).unwrap();
        let init = Model::init(&corpus.manifest, &cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
        assert_eq!(out.model, init);
        assert!(out.report.epochs.is_empty());
        assert!(out.best.is_none());
    }

    #[test]
    fn report_invariants() {
        let corpus = tiny_corpus(8, 12, 4);
        let out = train(&corpus, &quick_cfg()).unwrap();
        assert_eq!(out.report.epochs.len(), 2);
        for r in &out.report.epochs {
            let l = r.loss;
            assert!(l.orig.is_finite() && l.l1.is_finite() && l.relax.unwrap().is_finite());
            assert!((l.total - (l.orig + 0.1 * l.relax.unwrap() + l.l1)).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&r.sparsity));
            let v = r.validation.as_ref().unwrap();
            assert!(v.cer_baseline >= 0.0 && v.cer_rl.is_some());
        }
        assert!(out.best.is_some());
    }
}

//! JSON checkpoints holding everything needed to resume or reuse a run.
//!
//! Matrices are nested arrays of decimals in shortest round-trip form, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{BestModel, Model, OptimizerState, TrainConfig, TrainReport};
use crate::data::CorpusManifest;
use crate::error::{Error, Result};
use crate::prior::PriorModelParams;
use crate::relax::{rows_to_array, CompatibilityMatrix, LabelSet};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    pub compat: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub val_cer: f64,
    pub model: ModelRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub labels: LabelSet,
    pub blank: usize,
    pub n: usize,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer: OptimizerState,
    pub model: ModelRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<BestRecord>,
    pub report: TrainReport,
}

/// Parts of a checkpoint turned back into live values.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: OptimizerState,
    pub epoch: usize,
    pub report: TrainReport,
    pub best: Option<BestModel>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl ModelRecord {
    pub fn capture(model: &Model) -> Self {
        ModelRecord {
            weights: model.prior.as_ref().map(|p| rows(&p.weights)),
            bias: model.prior.as_ref().map(|p| p.bias.to_vec()),
            compat: rows(model.compat.coeffs()),
        }
    }

    pub fn restore(&self, n: usize, m: usize) -> Result<Model> {
        let coeffs = rows_to_array(&self.compat)?;
        // unclamped training may leave negative coefficients
        let compat = if coeffs.iter().all(|&v| v >= 0.0) {
            CompatibilityMatrix::new(n, m, coeffs)?
        } else {
            CompatibilityMatrix::new_unconstrained(n, m, coeffs)?
        };
        let prior = match (&self.weights, &self.bias) {
            (Some(w), Some(b)) => Some(PriorModelParams::new(rows_to_array(w)?, Array1::from(b.clone()))?),
            (None, None) => None,
            _ => return Err(Error::InvalidInput("checkpoint has prior weights without bias or vice versa".into())),
        };
        if let Some(p) = &prior {
            if p.labels() != m {
                return Err(Error::dims("checkpoint prior model", m, p.labels()));
            }
        }
        Ok(Model { prior, compat })
    }
}

impl Checkpoint {
    pub fn capture(
        manifest: &CorpusManifest,
        config: &TrainConfig,
        model: &Model,
        optimizer: &OptimizerState,
        epoch: usize,
        report: &TrainReport,
        best: Option<&BestModel>,
    ) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            labels: manifest.labels.clone(),
            blank: manifest.blank,
            n: model.compat.n(),
            m: model.compat.m(),
            feature_dim: model.prior.as_ref().map(PriorModelParams::feature_dim),
            config: config.clone(),
            epoch,
            optimizer: optimizer.clone(),
            model: ModelRecord::capture(model),
            best: best.map(|b| BestRecord { epoch: b.epoch, val_cer: b.val_cer, model: ModelRecord::capture(&b.model) }),
            report: report.clone(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        self.model.restore(self.n, self.m)
    }

    /// The best model by validation CER, or the final one if none was kept.
    pub fn best_model(&self) -> Result<Model> {
        match &self.best {
            Some(b) => b.model.restore(self.n, self.m),
            None => self.model(),
        }
    }

    pub fn into_state(self) -> Result<TrainState> {
        let model = self.model()?;
        let best = match &self.best {
            Some(b) => Some(BestModel { epoch: b.epoch, val_cer: b.val_cer, model: b.model.restore(self.n, self.m)? }),
            None => None,
        };
        let expected = OptimizerState::new(&model);
        if expected.weights.len() != self.optimizer.weights.len()
            || expected.bias.len() != self.optimizer.bias.len()
            || expected.compat.len() != self.optimizer.compat.len()
        {
            return Err(Error::InvalidInput("optimizer state does not match parameter shapes".into()));
        }
        Ok(TrainState {
            config: self.config,
            model,
            optimizer: self.optimizer,
            epoch: self.epoch,
            report: self.report,
            best,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(checkpoint).expect("checkpoint serialises");
    fs::write(path, text + "\n").map_err(|source| Error::FileUnwritable { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|source| Error::FileUnreadable { path: path.to_path_buf(), source })?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::ParseError { line: e.line(), message: e.to_string() })?;
    if ckpt.format_version != CHECKPOINT_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ckpt.format_version
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::super::{Trainer, TrainConfig};
    use super::*;
    use crate::data::{synthetic_corpus, SyntheticSpec};

    fn corpus() -> crate::data::Corpus {
        let spec = SyntheticSpec { n_frames: 8, frames_per_char: 2, ..SyntheticSpec::desk_scale(21, 0) };
        synthetic_corpus(&spec, 10, 4).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let corpus = corpus();
        let cfg = TrainConfig { epochs: 1, batch_size: 5, ..TrainConfig::default() };
        let mut trainer = Trainer::new(&corpus, cfg).unwrap();
        trainer.run_epoch().unwrap();
        let ckpt = trainer.checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
        assert_eq!(&loaded.model().unwrap(), trainer.model());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let corpus = corpus();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, lr: 1e-2, ..TrainConfig::default() };
        let straight = Trainer::new(&corpus, cfg.clone()).unwrap().run().unwrap();

        let mut first = Trainer::new(&corpus, cfg).unwrap();
        first.run_epoch().unwrap();
        let text = serde_json::to_string(&first.checkpoint()).unwrap();
        let resumed = Trainer::resume(&corpus, serde_json::from_str(&text).unwrap()).unwrap().run().unwrap();
        assert_eq!(resumed.model, straight.model);
        assert_eq!(resumed.report, straight.report);
        assert_eq!(resumed.optimizer, straight.optimizer);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_checkpoint(Path::new("/nonexistent/ckpt.json")),
            Err(Error::FileUnreadable { .. })
        ));
    }
}

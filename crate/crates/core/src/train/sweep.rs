//! Training the same corpus at several relaxation depths.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::data::Corpus;
use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub iterations: usize,
    pub gamma: f64,
    /// Whether training finished and the relaxation path decoded cleanly.
    pub converged: bool,
    pub final_loss: Option<f64>,
    pub val_cer_baseline: Option<f64>,
    pub val_cer_rl: Option<f64>,
    pub sparsity: Option<f64>,
    pub degenerate_support: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn all_converged(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.converged && !r.degenerate_support)
    }
}

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * scale))
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>3} {:>8} {:>10} {:>12} {:>10} {:>9} {:>9}", "T", "gamma", "loss", "CER base %", "CER RL %", "sparse %", "status")?;
        for r in &self.rows {
            let status = if r.degenerate_support {
                "degen"
            } else if r.converged {
                "ok"
            } else {
                "failed"
            };
            writeln!(
                f,
                "{:>3} {:>8.0e} {:>10} {:>12} {:>10} {:>9} {:>9}",
                r.iterations,
                r.gamma,
                r.final_loss.map_or_else(|| "-".to_string(), |v| format!("{v:.4}")),
                cell(r.val_cer_baseline, 100.0),
                cell(r.val_cer_rl, 100.0),
                cell(r.sparsity, 100.0),
                status
            )?;
        }
        Ok(())
    }
}

/// Trains once per entry of `iterations`, keeping everything else from
/// `base`. Failures are recorded in the row rather than aborting the sweep.
pub fn iteration_sweep(corpus: &Corpus, base: &TrainConfig, iterations: &[usize]) -> SweepReport {
    let rows = iterations
        .iter()
        .map(|&t| {
            let cfg = TrainConfig { iterations: t, ..base.clone() };
            match train(corpus, &cfg) {
                Ok(out) => {
                    let last = out.report.last();
                    let val = last.and_then(|r| r.validation.as_ref());
                    let rl_error = val.and_then(|v| v.rl_error.clone());
                    SweepRow {
                        iterations: t,
                        gamma: cfg.gamma,
                        converged: rl_error.is_none() && last.is_some_and(|r| r.loss.total.is_finite()),
                        final_loss: last.map(|r| r.loss.total),
                        val_cer_baseline: val.map(|v| v.cer_baseline),
                        val_cer_rl: val.and_then(|v| v.cer_rl),
                        sparsity: last.map(|r| r.sparsity),
                        degenerate_support: rl_error.as_deref().is_some_and(|e| e.contains("degenerate support")),
                        error: rl_error,
                    }
                }
                Err(e) => SweepRow {
                    iterations: t,
                    gamma: cfg.gamma,
                    converged: false,
                    final_loss: None,
                    val_cer_baseline: None,
                    val_cer_rl: None,
                    sparsity: None,
                    degenerate_support: matches!(e.root(), Error::DegenerateSupport { .. }),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    SweepReport { rows }
}

//! Counting near-zero compatibility coefficients.

use serde::{Deserialize, Serialize};

use crate::relax::CompatibilityMatrix;

/// Magnitude below which a coefficient counts as pruned.
pub const DEFAULT_SPARSITY_THRESHOLD: f64 = 1e-4;

/// Statistics for the `m×m` block linking objects `i` and `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub i: usize,
    pub j: usize,
    pub small: usize,
    pub l1: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub threshold: f64,
    pub count: usize,
    pub total: usize,
    pub fraction: f64,
    pub l1_norm: f64,
    pub blocks: Vec<BlockSummary>,
}

/// Entries with `|r| < threshold`, overall and per block.
pub fn sparsity_report(compat: &CompatibilityMatrix, threshold: f64) -> SparsityReport {
    let (n, m) = (compat.n(), compat.m());
    let mut blocks = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let block = compat.block(i, j);
            blocks.push(BlockSummary {
                i,
                j,
                small: block.iter().filter(|v| v.abs() < threshold).count(),
                l1: block.iter().map(|v| v.abs()).sum(),
                max_abs: block.iter().fold(0.0, |a, v| a.max(v.abs())),
            });
        }
    }
    let count = blocks.iter().map(|b| b.small).sum();
    let total = (n * m) * (n * m);
    SparsityReport {
        threshold,
        count,
        total,
        fraction: count as f64 / total as f64,
        l1_norm: compat.l1_norm(),
        blocks,
    }
}

/// Fraction of entries with `|r| < threshold`.
pub fn sparsity_fraction(compat: &CompatibilityMatrix, threshold: f64) -> f64 {
    let small = compat.coeffs().iter().filter(|v| v.abs() < threshold).count();
    small as f64 / compat.coeffs().len() as f64
}

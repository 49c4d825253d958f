//! The relaxation labelling dynamical system.
//!
//! A set of `n` objects (frames of a sequence) each carries a probability
//! distribution over `m` labels. A compatibility matrix couples every
//! object/label hypothesis with every other one; the support it lends to a
//! hypothesis drives a multiplicative update that stays on the product of
//! simplices.

use ndarray::{Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::bptt::Tape;
use crate::error::{Error, Result};

/// Row sums of an assignment must be within this distance of one.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Below this, the normaliser of an update is treated as annihilated mass.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-30;

/// Default L∞ distance between consecutive assignments that stops `run`.
pub const DEFAULT_STOP_TOL: f64 = 1e-6;

/// Ordered, distinct label names. Index positions are label ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a label set needs at least 2 labels, got {}",
                names.len()
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::InvalidInput(format!("duplicate label name {a:?}")));
            }
        }
        Ok(LabelSet { names })
    }

    /// Labels named `"0"`, `"1"`, ... `m - 1`.
    pub fn numbered(m: usize) -> Result<Self> {
        Self::new((0..m).map(|i| i.to_string()))
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        LabelSet::new(names)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(labels: LabelSet) -> Self {
        labels.names
    }
}

/// A weighted labelling assignment: one probability row per object.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelingAssignment {
    probs: Array2<f64>,
}

impl LabelingAssignment {
    /// Validates that every row lies on the probability simplex.
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        let (n, m) = probs.dim();
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput(format!("empty assignment of shape {n}x{m}")));
        }
        for (i, row) in probs.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "object {i} has an invalid probability {v}"
                )));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "object {i} probabilities sum to {sum}"
                )));
            }
        }
        Ok(Self::from_array_unchecked(probs))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_array(rows)?)
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Self::from_array_unchecked(Array2::from_elem((n, m), 1.0 / m as f64))
    }

    /// Floors every entry at `floor`, then rescales rows to sum to one.
    pub fn floor_and_normalize(mut probs: Array2<f64>, floor: f64) -> Result<Self> {
        for mut row in probs.rows_mut() {
            row.mapv_inplace(|v| v.max(floor));
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        Self::new(probs)
    }

    pub(crate) fn from_array_unchecked(probs: Array2<f64>) -> Self {
        let probs = if probs.is_standard_layout() {
            probs
        } else {
            probs.as_standard_layout().into_owned()
        };
        LabelingAssignment { probs }
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }

    pub fn m(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.probs
    }

    pub fn get(&self, object: usize, label: usize) -> f64 {
        self.probs[[object, label]]
    }

    pub fn row(&self, object: usize) -> ArrayView1<'_, f64> {
        self.probs.row(object)
    }

    /// The assignment as an `n·m` vector, object-major.
    pub fn flat(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.probs.as_slice().expect("standard layout"))
    }

    /// L∞ distance to another assignment of the same shape.
    pub fn max_abs_diff(&self, other: &LabelingAssignment) -> f64 {
        Zip::from(&self.probs)
            .and(&other.probs)
            .fold(0.0f64, |acc, a, b| acc.max((a - b).abs()))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.probs.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

pub(crate) fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != m) {
        return Err(Error::dims("matrix rows", m, bad.len()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((n, m), flat).expect("shape checked"))
}

/// The `(n·m)×(n·m)` block matrix of compatibility coefficients.
///
/// Entry `(i·m + λ, j·m + μ)` is `r_ij(λ, μ)`: the compatibility of label `λ`
/// on object `i` with label `μ` on object `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityMatrix {
    n: usize,
    m: usize,
    coeffs: Array2<f64>,
}

impl CompatibilityMatrix {
    /// Builds a matrix whose coefficients are all finite and non-negative.
    pub fn new(n: usize, m: usize, coeffs: Array2<f64>) -> Result<Self> {
        let matrix = Self::new_unconstrained(n, m, coeffs)?;
        if let Some(v) = matrix.coeffs.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "compatibility coefficients must be non-negative, found {v}"
            )));
        }
        Ok(matrix)
    }

    /// Like [`CompatibilityMatrix::new`] but admits negative coefficients.
    ///
    /// Used by unconstrained training. With negative entries the update can
    /// leave the simplex and the convergence results no longer apply.
    pub fn new_unconstrained(n: usize, m: usize, coeffs: Array2<f64>) -> Result<Self> {
        let dim = n * m;
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput("compatibility matrix needs n, m >= 1".into()));
        }
        if coeffs.dim() != (dim, dim) {
            return Err(Error::dims(
                "compatibility matrix",
                format!("{dim}x{dim}"),
                format!("{}x{}", coeffs.nrows(), coeffs.ncols()),
            ));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite compatibility coefficient".into()));
        }
        let coeffs = if coeffs.is_standard_layout() {
            coeffs
        } else {
            coeffs.as_standard_layout().into_owned()
        };
        Ok(CompatibilityMatrix { n, m, coeffs })
    }

    pub fn from_fn(n: usize, m: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let coeffs = Array2::from_shape_fn((n * m, n * m), |(a, b)| f(a / m, a % m, b / m, b % m));
        Self::new(n, m, coeffs)
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        CompatibilityMatrix { n, m, coeffs: Array2::zeros((n * m, n * m)) }
    }

    pub fn ones(n: usize, m: usize) -> Self {
        CompatibilityMatrix { n, m, coeffs: Array2::ones((n * m, n * m)) }
    }

    /// Every block `R_ij` is the `m×m` identity.
    pub fn block_identity(n: usize, m: usize) -> Self {
        Self::from_fn(n, m, |_, l, _, u| if l == u { 1.0 } else { 0.0 }).expect("valid")
    }

    /// `R_ij = δ_ij · I`.
    pub fn block_diagonal_identity(n: usize, m: usize) -> Self {
        Self::from_fn(n, m, |i, l, j, u| if i == j && l == u { 1.0 } else { 0.0 }).expect("valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Side length `n·m`.
    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut Array2<f64> {
        &mut self.coeffs
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.coeffs
    }

    pub fn get(&self, i: usize, lambda: usize, j: usize, mu: usize) -> f64 {
        self.coeffs[[i * self.m + lambda, j * self.m + mu]]
    }

    /// The `m×m` block `R_ij`.
    pub fn block(&self, i: usize, j: usize) -> ArrayView2<'_, f64> {
        let m = self.m;
        self.coeffs.slice(ndarray::s![i * m..(i + 1) * m, j * m..(j + 1) * m])
    }

    pub fn is_nonnegative(&self) -> bool {
        self.coeffs.iter().all(|v| *v >= 0.0)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|a| (a + 1..d).all(|b| (self.coeffs[[a, b]] - self.coeffs[[b, a]]).abs() <= tol))
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v.abs()).sum()
    }

    fn check_assignment(&self, p: &LabelingAssignment, context: &'static str) -> Result<()> {
        if p.n() != self.n || p.m() != self.m {
            return Err(Error::dims(
                context,
                format!("n={}, m={}", self.n, self.m),
                format!("n={}, m={}", p.n(), p.m()),
            ));
        }
        Ok(())
    }
}

/// Contextual support `q_i(λ)` for every object/label hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportField {
    values: Array2<f64>,
}

impl SupportField {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, object: usize, label: usize) -> f64 {
        self.values[[object, label]]
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// Stopping rule for [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationConfig {
    pub max_iters: usize,
    pub stop_tol: f64,
    pub record_tape: bool,
}

impl RelaxationConfig {
    pub fn new(max_iters: usize, stop_tol: f64, record_tape: bool) -> Result<Self> {
        let cfg = RelaxationConfig { max_iters, stop_tol, record_tape };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Exactly `iterations` unrolled steps, no early stop.
    pub fn fixed(iterations: usize, record_tape: bool) -> Result<Self> {
        Self::new(iterations, 0.0, record_tape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidInput(format!("stop_tol must be >= 0, got {}", self.stop_tol)));
        }
        Ok(())
    }
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        RelaxationConfig { max_iters: 100, stop_tol: DEFAULT_STOP_TOL, record_tape: false }
    }
}

/// `q_i(λ) = Σ_j Σ_μ r_ij(λ, μ) p_j(μ)`.
pub fn support(p: &LabelingAssignment, compat: &CompatibilityMatrix) -> Result<SupportField> {
    compat.check_assignment(p, "support")?;
    let q = compat.coeffs.dot(&p.flat());
    let values = q.into_shape_with_order((p.n(), p.m())).expect("n*m elements");
    Ok(SupportField { values })
}

/// One multiplicative update, returning the support and products it used.
pub(crate) fn step_parts(
    p: &LabelingAssignment,
    compat: &CompatibilityMatrix,
) -> Result<(SupportField, Array2<f64>, LabelingAssignment)> {
    let q = support(p, compat)?;
    let products = &p.probs * &q.values;
    let mut next = products.clone();
    for (i, mut row) in next.rows_mut().into_iter().enumerate() {
        let denom = row.sum();
        // negated comparison also rejects NaN
        if !(denom >= DEGENERATE_DENOMINATOR) {
            return Err(Error::DegenerateSupport { object: i, iteration: None });
        }
        row.mapv_inplace(|h| h / denom);
    }
    Ok((q, products, LabelingAssignment::from_array_unchecked(next)))
}

/// `p'_i(λ) = p_i(λ) q_i(λ) / Σ_μ p_i(μ) q_i(μ)`.
pub fn step(p: &LabelingAssignment, compat: &CompatibilityMatrix) -> Result<LabelingAssignment> {
    step_parts(p, compat).map(|(_, _, next)| next)
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RelaxOutcome<'a> {
    pub assignment: LabelingAssignment,
    pub iterations: usize,
    pub tape: Option<Tape<'a>>,
}

impl<'a> RelaxOutcome<'a> {
    pub fn tape(&self) -> Result<&Tape<'a>> {
        self.tape.as_ref().ok_or(Error::TapeIncomplete)
    }
}

/// Iterates [`step`] until two consecutive assignments are within
/// `stop_tol` in L∞ or `max_iters` steps have been taken.
pub fn run<'a>(
    p0: &LabelingAssignment,
    compat: &'a CompatibilityMatrix,
    cfg: &RelaxationConfig,
) -> Result<RelaxOutcome<'a>> {
    cfg.validate()?;
    compat.check_assignment(p0, "run")?;
    let mut tape = cfg.record_tape.then(|| Tape::start(p0.clone(), compat));
    let mut current = p0.clone();
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        let (q, h, next) = step_parts(&current, compat).map_err(|e| match e {
            Error::DegenerateSupport { object, .. } => {
                Error::DegenerateSupport { object, iteration: Some(it) }
            }
            e => e,
        })?;
        let dist = next.max_abs_diff(&current);
        if let Some(tape) = tape.as_mut() {
            tape.push(q, h, next.clone());
        }
        current = next;
        iterations = it + 1;
        if dist < cfg.stop_tol {
            break;
        }
    }
    Ok(RelaxOutcome { assignment: current, iterations, tape })
}

/// `A(p) = Σ_i Σ_λ p_i(λ) q_i(λ)`.
pub fn average_local_consistency(p: &LabelingAssignment, compat: &CompatibilityMatrix) -> Result<f64> {
    let q = support(p, compat)?;
    Ok((&p.probs * &q.values).sum())
}

/// Whether every label carrying mass (above `tol`) attains the maximal
/// support of its object, up to `tol`.
///
/// This is the finite characterisation of the variational-inequality
/// definition of consistency: `Σ_λ p_i(λ) q_i(λ) >= Σ_λ p'_i(λ) q_i(λ)` for
/// all `p'` holds iff `p_i` is supported on `argmax_λ q_i(λ)`.
pub fn is_consistent(p: &LabelingAssignment, compat: &CompatibilityMatrix, tol: f64) -> Result<bool> {
    let q = support(p, compat)?;
    for i in 0..p.n() {
        let q_row = q.values.row(i);
        let best = q_row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let ok = p
            .row(i)
            .iter()
            .zip(q_row.iter())
            .all(|(&pl, &ql)| pl <= tol || ql >= best - tol);
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

//! Per-frame linear SoftMax classifier producing the prior assignment.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::relax::LabelingAssignment;

/// `n×d` feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature frames must be finite".into()));
        }
        Ok(FeatureSequence { frames })
    }

    pub fn n(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }
}

/// Weights `d×m` and bias `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModelParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl PriorModelParams {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.ncols() != bias.len() {
            return Err(Error::dims("prior model bias", weights.ncols(), bias.len()));
        }
        Ok(PriorModelParams { weights, bias })
    }

    pub fn zeros(dim: usize, labels: usize) -> Self {
        PriorModelParams { weights: Array2::zeros((dim, labels)), bias: Array1::zeros(labels) }
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn init_uniform(dim: usize, labels: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let weights = Array2::from_shape_fn((dim, labels), |_| rng.random_range(-scale..=scale));
        let bias = Array1::from_shape_fn(labels, |_| rng.random_range(-scale..=scale));
        PriorModelParams { weights, bias }
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn labels(&self) -> usize {
        self.bias.len()
    }

    fn check(&self, x: &FeatureSequence) -> Result<()> {
        if x.dim() != self.feature_dim() {
            return Err(Error::dims("prior model features", self.feature_dim(), x.dim()));
        }
        Ok(())
    }
}

/// Gradients of a loss with respect to [`PriorModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct PriorGradients {
    pub d_weights: Array2<f64>,
    pub d_bias: Array1<f64>,
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - max).exp().max(f64::MIN_POSITIVE));
        let sum = row.sum();
        row /= sum;
    }
    logits
}

/// Row `t` is `SoftMax(x_t W + b)`.
pub fn prior_forward(x: &FeatureSequence, params: &PriorModelParams) -> Result<LabelingAssignment> {
    params.check(x)?;
    let logits = x.frames.dot(&params.weights) + &params.bias;
    Ok(LabelingAssignment::from_array_unchecked(softmax_rows(logits)))
}

/// Backpropagates `∂L/∂p⁽⁰⁾` through the SoftMax and the linear map.
pub fn prior_backward(
    x: &FeatureSequence,
    params: &PriorModelParams,
    d_prior: &Array2<f64>,
) -> Result<PriorGradients> {
    let p = prior_forward(x, params)?;
    if d_prior.dim() != (x.n(), params.labels()) {
        return Err(Error::dims(
            "prior gradient",
            format!("{}x{}", x.n(), params.labels()),
            format!("{}x{}", d_prior.nrows(), d_prior.ncols()),
        ));
    }
    // dz = p ⊙ (g − ⟨g, p⟩)
    let mut d_logits = d_prior.clone();
    for (mut dz, prow) in d_logits.rows_mut().into_iter().zip(p.probs().rows()) {
        let inner = dz.dot(&prow);
        dz.zip_mut_with(&prow, |g, &pk| *g = pk * (*g - inner));
    }
    Ok(PriorGradients {
        d_weights: x.frames.t().dot(&d_logits),
        d_bias: d_logits.sum_axis(Axis(0)),
    })
}

//! Reverse-mode gradients through an unrolled relaxation.
//!
//! Writing one update as `p'_iλ = h_iλ / Σ_μ h_iμ` with `h_iλ = p_iλ q_iλ`,
//! the sweep applies, from the last iteration back to the first,
//!
//! ```text
//! ∂p'_iλ/∂h_iη = (1(λ=η) Σ_μ h_iμ − h_iλ) / (Σ_μ h_iμ)²
//! ∂h_iλ/∂p_iλ = q_iλ        ∂h_iλ/∂q_iλ = p_iλ
//! q = R p  ⇒  ∂L/∂R += (∂L/∂q) pᵀ,   ∂L/∂p += Rᵀ (∂L/∂q)
//! ```
//!
//! Every coefficient `r_ij(λ, μ)` is an independent parameter; the prior
//! `p⁽⁰⁾` does not depend on `R`.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::relax::{self, CompatibilityMatrix, LabelingAssignment, SupportField};

/// Forward trajectory of a relaxation, kept for the backward sweep.
#[derive(Debug, Clone)]
pub struct Tape<'a> {
    trajectory: Vec<LabelingAssignment>,
    supports: Vec<SupportField>,
    products: Vec<Array2<f64>>,
    compat: &'a CompatibilityMatrix,
}

impl<'a> Tape<'a> {
    pub(crate) fn start(p0: LabelingAssignment, compat: &'a CompatibilityMatrix) -> Self {
        Tape { trajectory: vec![p0], supports: Vec::new(), products: Vec::new(), compat }
    }

    pub(crate) fn push(&mut self, q: SupportField, h: Array2<f64>, next: LabelingAssignment) {
        self.supports.push(q);
        self.products.push(h);
        self.trajectory.push(next);
    }

    /// `p⁽⁰⁾ … p⁽ᵀ⁾`.
    pub fn trajectory(&self) -> &[LabelingAssignment] {
        &self.trajectory
    }

    pub fn supports(&self) -> &[SupportField] {
        &self.supports
    }

    pub fn products(&self) -> &[Array2<f64>] {
        &self.products
    }

    pub fn compat(&self) -> &'a CompatibilityMatrix {
        self.compat
    }

    pub fn iterations(&self) -> usize {
        self.supports.len()
    }

    pub fn initial(&self) -> &LabelingAssignment {
        &self.trajectory[0]
    }

    pub fn last(&self) -> &LabelingAssignment {
        self.trajectory.last().expect("tape holds p0")
    }

    /// Average local consistency at every point of the trajectory.
    pub fn consistency_trace(&self) -> Result<Vec<f64>> {
        self.trajectory
            .iter()
            .map(|p| relax::average_local_consistency(p, self.compat))
            .collect()
    }

    /// Checks the length relations and `h = p ⊙ q` within 1e-12.
    pub fn validate(&self) -> Result<()> {
        let t = self.supports.len();
        if self.products.len() != t || self.trajectory.len() != t + 1 {
            return Err(Error::TapeIncomplete);
        }
        for ((p, q), h) in self.trajectory.iter().zip(&self.supports).zip(&self.products) {
            let expected = p.probs() * q.values();
            let worst = (&expected - h).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if worst > 1e-12 {
                return Err(Error::InvalidInput(format!("tape product off by {worst}")));
            }
        }
        Ok(())
    }
}

/// Runs exactly `iterations` updates and records the tape.
///
/// Unlike [`relax::run`] this admits zero iterations, in which case the
/// tape holds only the prior.
pub fn unroll<'a>(
    p0: &LabelingAssignment,
    compat: &'a CompatibilityMatrix,
    iterations: usize,
) -> Result<Tape<'a>> {
    if iterations == 0 {
        relax::support(p0, compat)?;
        return Ok(Tape::start(p0.clone(), compat));
    }
    let cfg = relax::RelaxationConfig::fixed(iterations, true)?;
    let out = relax::run(p0, compat, &cfg)?;
    Ok(out.tape.expect("recorded"))
}

/// Loss gradients with respect to the compatibility matrix and the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct RlGradients {
    pub d_compat: Array2<f64>,
    pub d_prior: Array2<f64>,
}

/// Backpropagates `d_final = ∂L/∂p⁽ᵀ⁾` through the recorded trajectory.
pub fn backward(tape: &Tape<'_>, d_final: &Array2<f64>) -> Result<RlGradients> {
    let compat = tape.compat;
    let (n, m) = (compat.n(), compat.m());
    if d_final.dim() != (n, m) {
        return Err(Error::dims(
            "backward",
            format!("{n}x{m}"),
            format!("{}x{}", d_final.nrows(), d_final.ncols()),
        ));
    }
    if tape.trajectory.len() != tape.supports.len() + 1 || tape.products.len() != tape.supports.len() {
        return Err(Error::TapeIncomplete);
    }

    let r = compat.coeffs();
    let mut d_compat = Array2::<f64>::zeros(r.dim());
    let mut grad = d_final.to_owned();

    for tau in (0..tape.iterations()).rev() {
        let p = &tape.trajectory[tau];
        let p_next = &tape.trajectory[tau + 1];
        let q = tape.supports[tau].values();
        let h = &tape.products[tau];
        let sums = h.sum_axis(Axis(1));

        // through the normalisation: dh_iη = (g_iη − Σ_λ g_iλ p'_iλ) / S_i
        let mut d_h = grad;
        for i in 0..n {
            let inner: f64 = d_h.row(i).dot(&p_next.row(i));
            let s = sums[i];
            d_h.row_mut(i).mapv_inplace(|g| (g - inner) / s);
        }

        let d_q = &d_h * p.probs();
        let mut d_p = &d_h * q;

        let d_q_flat = flat_view(&d_q);
        let p_flat = p.flat();
        for (a, &dq) in d_q_flat.iter().enumerate() {
            if dq != 0.0 {
                d_compat.row_mut(a).scaled_add(dq, &p_flat);
            }
        }
        let back: Array1<f64> = r.t().dot(&d_q_flat);
        let back = back.into_shape_with_order((n, m)).expect("n*m elements");
        d_p += &back;
        grad = d_p;
    }

    Ok(RlGradients { d_compat, d_prior: grad })
}

fn flat_view(a: &Array2<f64>) -> ArrayView1<'_, f64> {
    ArrayView1::from(a.as_slice().expect("standard layout"))
}

/// A differentiable scalar function of the final assignment.
pub trait AssignmentLoss {
    /// Returns the loss value and `∂L/∂p`.
    fn evaluate(&self, p: &LabelingAssignment) -> Result<(f64, Array2<f64>)>;
}

impl<F> AssignmentLoss for F
where
    F: Fn(&LabelingAssignment) -> Result<(f64, Array2<f64>)>,
{
    fn evaluate(&self, p: &LabelingAssignment) -> Result<(f64, Array2<f64>)> {
        self(p)
    }
}

/// `L(p) = p_i(λ)` for a fixed hypothesis.
#[derive(Debug, Clone, Copy)]
pub struct EntryLoss {
    pub object: usize,
    pub label: usize,
}

impl AssignmentLoss for EntryLoss {
    fn evaluate(&self, p: &LabelingAssignment) -> Result<(f64, Array2<f64>)> {
        let mut grad = Array2::zeros((p.n(), p.m()));
        grad[[self.object, self.label]] = 1.0;
        Ok((p.get(self.object, self.label), grad))
    }
}

/// `L(p) = A(p)` under a fixed compatibility matrix; `∂L/∂p = (R + Rᵀ) p`.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyLoss<'a> {
    pub compat: &'a CompatibilityMatrix,
}

impl AssignmentLoss for ConsistencyLoss<'_> {
    fn evaluate(&self, p: &LabelingAssignment) -> Result<(f64, Array2<f64>)> {
        let value = relax::average_local_consistency(p, self.compat)?;
        let r = self.compat.coeffs();
        let flat = p.flat();
        let grad = r.dot(&flat) + r.t().dot(&flat);
        Ok((value, grad.into_shape_with_order((p.n(), p.m())).expect("n*m elements")))
    }
}

/// Relative discrepancy with the denominator floored at 1e-8.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn max_abs<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    values.fold(0.0, |a, v| a.max(v.abs()))
}

/// [`relative_error`] with the denominator also floored at `floor`.
pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor).max(1e-8)
}

/// Fourth-order central difference `(-f(2h) + 8f(h) - 8f(-h) + f(-2h)) / 12h`.
pub fn central_difference(step: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (p1, m1) = (f(step)?, f(-step)?);
    let (p2, m2) = (f(2.0 * step)?, f(-2.0 * step)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step))
}

/// Share of a parameter group's largest analytic gradient used as the
/// smallest denominator in [`finite_diff_check`].
pub const GRAD_CHECK_SCALE_FLOOR: f64 = 1e-4;

/// Compares [`backward`] against fourth-order central finite differences.
///
/// Every coefficient of `compat` and every prior entry is perturbed by
/// `±step`. Prior perturbations move along the simplex tangent
/// (`e_iλ − 1/m`), so the comparison is against the tangential component of
/// the analytic prior gradient. Returns the worst relative error.
///
/// The relative error of an entry divides by `max(|analytic|, |numeric|)`
/// floored at [`GRAD_CHECK_SCALE_FLOOR`] times the largest analytic entry of
/// its group (`R` or `p0`). Entries that cancel to nearly zero would
/// otherwise be compared against pure rounding noise of the differences.
pub fn finite_diff_check(
    p0: &LabelingAssignment,
    compat: &CompatibilityMatrix,
    iterations: usize,
    loss: &dyn AssignmentLoss,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step must be > 0, got {step}")));
    }
    let tape = unroll(p0, compat, iterations)?;
    let (_, d_final) = loss.evaluate(tape.last())?;
    let grads = backward(&tape, &d_final)?;

    let eval = |p: &LabelingAssignment, r: &CompatibilityMatrix| -> Result<f64> {
        let t = unroll(p, r, iterations)?;
        Ok(loss.evaluate(t.last())?.0)
    };

    let (n, m) = (p0.n(), p0.m());
    let tangent = Array2::from_shape_fn((n, m), |(i, l)| grads.d_prior[[i, l]] - grads.d_prior.row(i).sum() / m as f64);
    let compat_floor = GRAD_CHECK_SCALE_FLOOR * max_abs(grads.d_compat.iter());
    let prior_floor = GRAD_CHECK_SCALE_FLOOR * max_abs(tangent.iter());

    let mut worst = 0.0f64;
    let dim = compat.dim();
    let base = compat.coeffs();
    for a in 0..dim {
        for b in 0..dim {
            let numeric = central_difference(step, |h| {
                let mut shifted = base.clone();
                shifted[[a, b]] += h;
                eval(p0, &CompatibilityMatrix::new_unconstrained(compat.n(), compat.m(), shifted)?)
            })?;
            worst = worst.max(relative_error_floored(grads.d_compat[[a, b]], numeric, compat_floor));
        }
    }

    for i in 0..n {
        for l in 0..m {
            let mut dir = Array2::<f64>::zeros((n, m));
            dir.row_mut(i).fill(-1.0 / m as f64);
            dir[[i, l]] += 1.0;
            let numeric = central_difference(step, |h| {
                eval(&LabelingAssignment::from_array_unchecked(p0.probs() + &(&dir * h)), compat)
            })?;
            worst = worst.max(relative_error_floored(tangent[[i, l]], numeric, prior_floor));
        }
    }
    Ok(worst)
}

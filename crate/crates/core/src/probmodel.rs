//! Temporal probability model of a whole trajectory.
//!
//! The X and Y coordinate series of a track are modeled by two independent
//! multivariate Cauchy distributions whose locations are the predicted
//! trajectory and whose scale matrices come from a linear kernel over
//! per-frame features: `Σ = F Fᵀ + σ I`.
//!
//! Every loss here has a matching analytic gradient so it can be checked
//! against finite differences or used for calibration.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default diagonal floor added to every scale matrix.
pub const DEFAULT_SIGMA: f64 = 1e-3;

/// Discount between refinement iterates in the trajectory loss.
pub const DEFAULT_GAMMA: f64 = 0.8;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum ProbError {
    #[error("scale matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// `ln Γ(n/2)` for a positive integer `n`, by the half-integer recurrence.
pub fn ln_gamma_half(n: usize) -> f64 {
    assert!(n > 0);
    let mut acc = if n.is_multiple_of(2) {
        0.0
    } else {
        0.5 * std::f64::consts::PI.ln()
    };
    let mut x = if n.is_multiple_of(2) { 1.0 } else { 0.5 };
    let target = n as f64 / 2.0;
    while x < target - 0.25 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

/// Normalizing constant `ln Γ((1+S)/2) − ln Γ(1/2) − (S/2) ln π`.
fn log_normalizer(s: usize) -> f64 {
    ln_gamma_half(s + 1) - ln_gamma_half(1) - 0.5 * s as f64 * std::f64::consts::PI.ln()
}

/// Linear-kernel scale matrix `Fp Fpᵀ + σ I`.
pub fn build_scale_matrix(fp: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let s = fp.nrows();
    let mut m = fp * fp.transpose();
    // exact symmetry regardless of summation order
    for i in 0..s {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m[(i, i)] += sigma;
    }
    m
}

fn cholesky(sigma: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, ProbError> {
    if !sigma.is_square() {
        return Err(ProbError::Shape(format!(
            "scale matrix is {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    Cholesky::new(sigma.clone()).ok_or(ProbError::NotPositiveDefinite)
}

/// Log-density of the `S`-variate Cauchy distribution at `a`.
pub fn cauchy_logpdf(a: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64, ProbError> {
    let s = a.len();
    if mu.len() != s || sigma.nrows() != s {
        return Err(ProbError::Shape(format!(
            "value {s}, location {}, scale {}",
            mu.len(),
            sigma.nrows()
        )));
    }
    let chol = cholesky(sigma)?;
    let l = chol.l_dirty();
    let log_det = 2.0 * (0..s).map(|i| l[(i, i)].ln()).sum::<f64>();
    let r = a - mu;
    let y = l
        .solve_lower_triangular(&r)
        .ok_or(ProbError::NotPositiveDefinite)?;
    let q = y.norm_squared();
    Ok(log_normalizer(s) - 0.5 * log_det - 0.5 * (1.0 + s as f64) * q.ln_1p())
}

/// Gradient of `−cauchy_logpdf` w.r.t. the location and the scale matrix.
pub struct CauchyNllGradient {
    pub value: f64,
    pub d_mu: DVector<f64>,
    /// Symmetric gradient w.r.t. `Σ`.
    pub d_sigma: DMatrix<f64>,
}

pub fn cauchy_nll_grad(
    a: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<CauchyNllGradient, ProbError> {
    let s = a.len();
    let value = -cauchy_logpdf(a, mu, sigma)?;
    let chol = cholesky(sigma)?;
    let r = a - mu;
    let alpha = chol.solve(&r); // Σ⁻¹ r
    let q = r.dot(&alpha);
    let c = 0.5 * (1.0 + s as f64) / (1.0 + q);
    // ∂/∂μ [c' ln(1+q)] = −2c Σ⁻¹ r
    let d_mu = &alpha * (-2.0 * c);
    // ∂/∂Σ [½ ln|Σ| + c' ln(1+q)] = ½ Σ⁻¹ − c Σ⁻¹ r rᵀ Σ⁻¹
    let d_sigma = chol.inverse() * 0.5 - (&alpha * alpha.transpose()) * c;
    Ok(CauchyNllGradient {
        value,
        d_mu,
        d_sigma,
    })
}

fn split_coords(x: &[Vector2<f64>]) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_iterator(x.len(), x.iter().map(|p| p.x)),
        DVector::from_iterator(x.len(), x.iter().map(|p| p.y)),
    )
}

fn check_len(x: &[Vector2<f64>], xstar: &[Vector2<f64>]) -> Result<(), ProbError> {
    if x.len() != xstar.len() || x.is_empty() {
        return Err(ProbError::Shape(format!(
            "trajectory lengths {} and {}",
            x.len(),
            xstar.len()
        )));
    }
    Ok(())
}

/// Negative log-likelihood of the observed trajectory `xstar` under the
/// distribution located at the prediction `x`.
pub fn track_nll(
    x: &[Vector2<f64>],
    xstar: &[Vector2<f64>],
    sigma_a: &DMatrix<f64>,
    sigma_b: &DMatrix<f64>,
) -> Result<f64, ProbError> {
    check_len(x, xstar)?;
    let (mu_a, mu_b) = split_coords(x);
    let (a, b) = split_coords(xstar);
    Ok(-cauchy_logpdf(&a, &mu_a, sigma_a)? - cauchy_logpdf(&b, &mu_b, sigma_b)?)
}

/// Gradient of [`track_nll`] through `Σ = F Fᵀ + σ I`.
#[derive(Clone, Debug)]
pub struct NllGradient {
    pub d_x: Vec<Vector2<f64>>,
    pub d_fa: DMatrix<f64>,
    pub d_fb: DMatrix<f64>,
}

impl NllGradient {
    fn scaled(mut self, w: f64) -> Self {
        self.d_x.iter_mut().for_each(|g| *g *= w);
        self.d_fa *= w;
        self.d_fb *= w;
        self
    }
}

/// [`track_nll`] with scale matrices built from projected features, and its
/// gradient w.r.t. the trajectory and both feature matrices.
pub fn track_nll_grad(
    x: &[Vector2<f64>],
    xstar: &[Vector2<f64>],
    fa: &DMatrix<f64>,
    fb: &DMatrix<f64>,
    sigma: f64,
) -> Result<(f64, NllGradient), ProbError> {
    check_len(x, xstar)?;
    let (mu_a, mu_b) = split_coords(x);
    let (a, b) = split_coords(xstar);
    let ga = cauchy_nll_grad(&a, &mu_a, &build_scale_matrix(fa, sigma))?;
    let gb = cauchy_nll_grad(&b, &mu_b, &build_scale_matrix(fb, sigma))?;
    // Σ = F Fᵀ + σI with symmetric G = ∂L/∂Σ gives ∂L/∂F = 2 G F
    let grad = NllGradient {
        d_x: (0..x.len())
            .map(|s| Vector2::new(ga.d_mu[s], gb.d_mu[s]))
            .collect(),
        d_fa: (&ga.d_sigma * fa) * 2.0,
        d_fb: (&gb.d_sigma * fb) * 2.0,
    };
    Ok((ga.value + gb.value, grad))
}

/// Weights `γ^{K−k}` for iterates `k = 1..=K`.
pub fn iteration_weights(k: usize, gamma: f64) -> Vec<f64> {
    (1..=k).map(|i| gamma.powi((k - i) as i32)).collect()
}

/// One refinement iterate: predicted trajectory and its scale matrices.
#[derive(Clone, Debug)]
pub struct Iterate {
    pub x: Vec<Vector2<f64>>,
    pub sigma_a: DMatrix<f64>,
    pub sigma_b: DMatrix<f64>,
}

/// One refinement iterate in feature form.
#[derive(Clone, Debug)]
pub struct FeatureIterate {
    pub x: Vec<Vector2<f64>>,
    pub fa: DMatrix<f64>,
    pub fb: DMatrix<f64>,
}

/// Discounted sum of per-iterate NLLs; the last iterate has weight one.
pub fn main_loss(iterates: &[Iterate], xstar: &[Vector2<f64>], gamma: f64) -> Result<f64, ProbError> {
    if iterates.is_empty() {
        return Err(ProbError::Shape("no iterates".into()));
    }
    iteration_weights(iterates.len(), gamma)
        .iter()
        .zip(iterates)
        .map(|(w, it)| Ok(w * track_nll(&it.x, xstar, &it.sigma_a, &it.sigma_b)?))
        .sum()
}

pub fn main_loss_grad(
    iterates: &[FeatureIterate],
    xstar: &[Vector2<f64>],
    sigma: f64,
    gamma: f64,
) -> Result<(f64, Vec<NllGradient>), ProbError> {
    if iterates.is_empty() {
        return Err(ProbError::Shape("no iterates".into()));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(iterates.len());
    for (w, it) in iteration_weights(iterates.len(), gamma).into_iter().zip(iterates) {
        let (v, g) = track_nll_grad(&it.x, xstar, &it.fa, &it.fb, sigma)?;
        total += w * v;
        grads.push(g.scaled(w));
    }
    Ok((total, grads))
}

/// Mean binary cross-entropy `−[(1−g) ln(1−p) + g ln p]`.
pub fn bce_loss(pred: &[f64], gt: &[f64]) -> f64 {
    bce_loss_grad(pred, gt).0
}

/// [`bce_loss`] and its gradient w.r.t. `pred`; zero outside the clamp.
pub fn bce_loss_grad(pred: &[f64], gt: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), gt.len(), "prediction and label counts differ");
    if pred.is_empty() {
        return (0.0, Vec::new());
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(&p0, &g)| {
            let p = p0.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= (1.0 - g) * (1.0 - p).ln() + g * p.ln();
            if p != p0 {
                0.0
            } else {
                ((1.0 - g) / (1.0 - p) - g / p) / n
            }
        })
        .collect();
    (loss / n, grad)
}

/// Weights of the trajectory, visibility and dynamic-label losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub main: f64,
    pub vis: f64,
    pub dyn_label: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            main: 1.0,
            vis: 0.5,
            dyn_label: 0.5,
        }
    }
}

pub fn total_loss(main: f64, vis: f64, dyn_label: f64, w: &LossWeights) -> f64 {
    w.main * main + w.vis * vis + w.dyn_label * dyn_label
}

/// Per-frame uncertainty `Σ_a[s,s] + Σ_b[s,s]`.
pub fn point_uncertainty(sigma_a: &DMatrix<f64>, sigma_b: &DMatrix<f64>) -> Vec<f64> {
    sigma_a
        .diagonal()
        .iter()
        .zip(sigma_b.diagonal().iter())
        .map(|(a, b)| a + b)
        .collect()
}

/// Cauchy distributions over the X and Y series of one track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackDistribution {
    pub mu_a: DVector<f64>,
    pub mu_b: DVector<f64>,
    pub sigma_a: DMatrix<f64>,
    pub sigma_b: DMatrix<f64>,
}

impl TrackDistribution {
    /// Locates the distribution at `x` with linear-kernel scales.
    pub fn from_features(x: &[Vector2<f64>], fa: &DMatrix<f64>, fb: &DMatrix<f64>, sigma: f64) -> Self {
        let (mu_a, mu_b) = split_coords(x);
        Self {
            mu_a,
            mu_b,
            sigma_a: build_scale_matrix(fa, sigma),
            sigma_b: build_scale_matrix(fb, sigma),
        }
    }

    pub fn len(&self) -> usize {
        self.mu_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_a.is_empty()
    }

    pub fn uncertainty(&self) -> Vec<f64> {
        point_uncertainty(&self.sigma_a, &self.sigma_b)
    }

    pub fn location(&self) -> Vec<Vector2<f64>> {
        self.mu_a
            .iter()
            .zip(self.mu_b.iter())
            .map(|(&a, &b)| Vector2::new(a, b))
            .collect()
    }

    /// Log-likelihood of an observed trajectory.
    pub fn log_likelihood(&self, observed: &[Vector2<f64>]) -> Result<f64, ProbError> {
        Ok(-track_nll(&self.location(), observed, &self.sigma_a, &self.sigma_b)?)
    }
}

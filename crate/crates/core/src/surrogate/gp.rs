//! Exact zero-mean GP regression on standardized targets.

use std::f64::consts::PI;

use super::kernel::{cross_kernel, matern52_from_r, matern52_radial_factor, scaled_distance, KernelHypers};
use crate::diff::{Cholesky, Tensor};
use crate::error::{Error, Result};

/// Predictive moments in standardized target units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorStats {
    pub mean: f64,
    /// Clamped at zero.
    pub variance: f64,
    /// Before clamping.
    pub raw_variance: f64,
    offset: f64,
    scale: f64,
}

impl PosteriorStats {
    pub fn new(mean: f64, variance: f64) -> Self {
        Self {
            mean,
            variance: variance.max(0.0),
            raw_variance: variance,
            offset: 0.0,
            scale: 1.0,
        }
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Mean in the units of the observed targets.
    pub fn destandardized_mean(&self) -> f64 {
        self.mean * self.scale + self.offset
    }

    pub fn destandardized_std(&self) -> f64 {
        self.std() * self.scale
    }
}

/// Mean and scale used to standardize targets. A single target, or targets
/// without spread, are only shifted.
pub fn standardization(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    if y.len() < 2 {
        return (mean, 1.0);
    }
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// A fitted GP. Immutable once built.
#[derive(Clone, Debug)]
pub struct GpState {
    x: Tensor,
    y: Vec<f64>,
    offset: f64,
    scale: f64,
    hypers: KernelHypers,
    inv_ls: Vec<f64>,
    chol: Cholesky,
    alpha: Vec<f64>,
}

fn check_inputs(x: &Tensor, y: &[f64], hypers: &KernelHypers) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("GP needs at least one observation".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Shape(format!("{} inputs but {} targets", x.rows(), y.len())));
    }
    hypers.check_width(x.cols())?;
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite GP inputs or targets".into()));
    }
    Ok(())
}

fn noisy_kernel(x: &Tensor, hypers: &KernelHypers) -> Result<Tensor> {
    let mut k = cross_kernel(x, x, hypers)?;
    let noise = hypers.noise();
    for i in 0..k.rows() {
        k.set(i, i, k.at(i, i) + noise);
    }
    Ok(k)
}

/// Standardizes `y`, factorizes `K + noise I` and solves for `alpha`.
pub fn gp_fit(x: &Tensor, y: &[f64], hypers: &KernelHypers) -> Result<GpState> {
    check_inputs(x, y, hypers)?;
    let (offset, scale) = standardization(y);
    let ys: Vec<f64> = y.iter().map(|v| (v - offset) / scale).collect();
    fit_standardized(x, ys, offset, scale, hypers)
}

/// Like [`gp_fit`] but takes the targets as already standardized.
pub fn gp_fit_raw(x: &Tensor, y: &[f64], hypers: &KernelHypers) -> Result<GpState> {
    check_inputs(x, y, hypers)?;
    fit_standardized(x, y.to_vec(), 0.0, 1.0, hypers)
}

fn fit_standardized(x: &Tensor, ys: Vec<f64>, offset: f64, scale: f64, hypers: &KernelHypers) -> Result<GpState> {
    let chol = Cholesky::new(&noisy_kernel(x, hypers)?)?;
    let alpha = chol.solve(&ys);
    Ok(GpState {
        x: x.clone(),
        y: ys,
        offset,
        scale,
        inv_ls: hypers.log_lengthscales.iter().map(|l| (-l).exp()).collect(),
        hypers: hypers.clone(),
        chol,
        alpha,
    })
}

impl GpState {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.x
    }

    /// Standardized targets.
    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn hypers(&self) -> &KernelHypers {
        &self.hypers
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn destandardize(&self, y: f64) -> f64 {
        y * self.scale + self.offset
    }

    /// Largest standardized target, the incumbent `f*`.
    pub fn best_target(&self) -> f64 {
        self.y.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn kernel_row(&self, xq: &[f64]) -> Vec<f64> {
        assert_eq!(xq.len(), self.x.cols(), "query width");
        let s = self.hypers.signal();
        (0..self.len())
            .map(|i| matern52_from_r(scaled_distance(xq, self.x.row_slice(i), &self.inv_ls), s))
            .collect()
    }

    pub fn posterior(&self, xq: &[f64]) -> PosteriorStats {
        let k = self.kernel_row(xq);
        let mean = k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = self.chol.solve_lower(&k);
        let variance = self.hypers.signal() - v.iter().map(|t| t * t).sum::<f64>();
        PosteriorStats {
            offset: self.offset,
            scale: self.scale,
            ..PosteriorStats::new(mean, variance)
        }
    }

    /// Gradient of the standardized posterior mean with respect to the query.
    pub fn mean_gradient(&self, xq: &[f64]) -> Vec<f64> {
        assert_eq!(xq.len(), self.x.cols(), "query width");
        let s = self.hypers.signal();
        let mut grad = vec![0.0; xq.len()];
        for i in 0..self.len() {
            let xi = self.x.row_slice(i);
            let f = matern52_radial_factor(scaled_distance(xq, xi, &self.inv_ls), s);
            for d in 0..grad.len() {
                let il = self.inv_ls[d];
                grad[d] -= self.alpha[i] * f * (xq[d] - xi[d]) * il * il;
            }
        }
        grad
    }
}

/// Log marginal likelihood and its gradients.
#[derive(Clone, Debug)]
pub struct LmlOutput {
    pub value: f64,
    pub grad_log_lengthscales: Vec<f64>,
    pub grad_log_signal: f64,
    pub grad_log_noise: f64,
    /// `n x d` gradient with respect to the kernel inputs.
    pub grad_inputs: Tensor,
}

/// `-½ yᵀ(K+σ²I)⁻¹y - ½ log det(K+σ²I) - (n/2) log 2π` for targets `y` as given.
pub fn log_marginal_likelihood(x: &Tensor, y: &[f64], hypers: &KernelHypers) -> Result<LmlOutput> {
    check_inputs(x, y, hypers)?;
    let n = y.len();
    let chol = Cholesky::new(&noisy_kernel(x, hypers)?)?;
    let alpha = chol.solve(y);
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let value = -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

    // dL/dK = ½(ααᵀ - K⁻¹)
    let inv = chol.inverse();
    let g = |i: usize, j: usize| 0.5 * (alpha[i] * alpha[j] - inv.at(i, j));
    let inv_ls: Vec<f64> = hypers.log_lengthscales.iter().map(|l| (-l).exp()).collect();
    let s = hypers.signal();
    let d = x.cols();
    let mut grad_ls = vec![0.0; d];
    let mut grad_signal = 0.0;
    let mut trace = 0.0;
    let mut grad_x = Tensor::zeros(n, d);
    for i in 0..n {
        trace += g(i, i);
        for j in 0..n {
            let gij = g(i, j);
            let (xi, xj) = (x.row_slice(i), x.row_slice(j));
            let r = scaled_distance(xi, xj, &inv_ls);
            grad_signal += gij * matern52_from_r(r, s);
            if i == j {
                continue;
            }
            let f = matern52_radial_factor(r, s);
            for k in 0..d {
                let u = (xi[k] - xj[k]) * inv_ls[k];
                grad_ls[k] += gij * f * u * u;
                let dx = grad_x.at(i, k) - 2.0 * gij * f * u * inv_ls[k];
                grad_x.set(i, k, dx);
            }
        }
    }
    Ok(LmlOutput {
        value,
        grad_log_lengthscales: grad_ls,
        grad_log_signal: grad_signal,
        grad_log_noise: hypers.noise() * trace,
        grad_inputs: grad_x,
    })
}

//! Matérn-5/2 kernel with per-dimension lengthscales.

use serde::{Deserialize, Serialize};

use crate::diff::{ParamStore, Tensor};
use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Kernel hyperparameters in log space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHypers {
    pub log_lengthscales: Vec<f64>,
    pub log_signal: f64,
    pub log_noise: f64,
}

impl KernelHypers {
    pub const LENGTHSCALES: &'static str = "gp.log_lengthscale";
    pub const SIGNAL: &'static str = "gp.log_signal";
    pub const NOISE: &'static str = "gp.log_noise";

    /// Unit lengthscales and signal variance, noise variance `1e-2`.
    pub fn new(dim: usize) -> Self {
        Self {
            log_lengthscales: vec![0.0; dim],
            log_signal: 0.0,
            log_noise: 1e-2f64.ln(),
        }
    }

    pub fn isotropic(dim: usize, lengthscale: f64, signal: f64, noise: f64) -> Self {
        Self {
            log_lengthscales: vec![lengthscale.ln(); dim],
            log_signal: signal.ln(),
            log_noise: noise.ln(),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn signal(&self) -> f64 {
        self.log_signal.exp()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn init_params(&self, store: &mut ParamStore) -> Result<()> {
        store.add_tensor(Self::LENGTHSCALES, Tensor::row(&self.log_lengthscales))?;
        store.add_tensor(Self::SIGNAL, Tensor::scalar(self.log_signal))?;
        store.add_tensor(Self::NOISE, Tensor::scalar(self.log_noise))
    }

    pub fn from_params(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            log_lengthscales: store.get(Self::LENGTHSCALES)?.data().to_vec(),
            log_signal: store.get(Self::SIGNAL)?.item(),
            log_noise: store.get(Self::NOISE)?.item(),
        })
    }

    pub fn write_params(&self, store: &mut ParamStore) -> Result<()> {
        store.set(Self::LENGTHSCALES, Tensor::row(&self.log_lengthscales))?;
        store.set(Self::SIGNAL, Tensor::scalar(self.log_signal))?;
        store.set(Self::NOISE, Tensor::scalar(self.log_noise))
    }

    pub(crate) fn check_width(&self, width: usize) -> Result<()> {
        if width != self.dim() {
            return Err(Error::Shape(format!(
                "inputs of width {width} but {} lengthscales",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Lengthscale-scaled distance.
pub fn scaled_distance(x: &[f64], y: &[f64], inv_ls: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(inv_ls)
        .map(|((a, b), il)| {
            let d = (a - b) * il;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `s (1 + √5 r + 5r²/3) exp(-√5 r)`.
pub fn matern52_from_r(r: f64, signal: f64) -> f64 {
    signal * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp()
}

/// `-(1/r) dk/dr`, i.e. `(5/3) s (1 + √5 r) exp(-√5 r)`; finite at `r = 0`.
pub fn matern52_radial_factor(r: f64, signal: f64) -> f64 {
    5.0 / 3.0 * signal * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
}

pub fn matern52(x: &[f64], y: &[f64], hypers: &KernelHypers) -> f64 {
    let inv: Vec<f64> = hypers.log_lengthscales.iter().map(|l| (-l).exp()).collect();
    matern52_from_r(scaled_distance(x, y, &inv), hypers.signal())
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn cross_kernel(a: &Tensor, b: &Tensor, hypers: &KernelHypers) -> Result<Tensor> {
    hypers.check_width(a.cols())?;
    hypers.check_width(b.cols())?;
    let inv: Vec<f64> = hypers.log_lengthscales.iter().map(|l| (-l).exp()).collect();
    let s = hypers.signal();
    let mut k = Tensor::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            k.set(i, j, matern52_from_r(scaled_distance(a.row_slice(i), b.row_slice(j), &inv), s));
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance_gives_signal_variance() {
        let h = KernelHypers::isotropic(3, 0.7, 2.5, 1e-3);
        let x = [0.3, -1.0, 2.0];
        assert_eq!(matern52(&x, &x, &h), 2.5);
    }

    #[test]
    fn symmetric() {
        let h = KernelHypers {
            log_lengthscales: vec![0.1, -0.4],
            log_signal: 0.3,
            log_noise: -5.0,
        };
        let (a, b) = ([0.2, 1.1], [-0.7, 0.4]);
        assert_eq!(matern52(&a, &b, &h), matern52(&b, &a, &h));
    }

    #[test]
    fn store_round_trip() {
        let h = KernelHypers {
            log_lengthscales: vec![0.1, -0.4],
            log_signal: 0.3,
            log_noise: -5.0,
        };
        let mut store = ParamStore::new(0);
        h.init_params(&mut store).unwrap();
        assert_eq!(KernelHypers::from_params(&store).unwrap(), h);
    }
}

//! Cholesky factorization and solves for symmetric positive-definite systems.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Diagonal jitter tried in turn when a plain factorization fails.
pub const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Lower-triangular factor `L` with `L L^T = A + jitter I`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cholesky {
    factor: Tensor,
    jitter: f64,
}

fn try_factor(a: &Tensor, jitter: f64) -> Option<Tensor> {
    let n = a.rows();
    let mut l = Tensor::zeros(n, n);
    for j in 0..n {
        let mut diag = a.at(j, j) + jitter;
        for k in 0..j {
            diag -= l.at(j, k) * l.at(j, k);
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let d = diag.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Some(l)
}

impl Cholesky {
    /// Factors `a`, escalating diagonal jitter along [`JITTER_LADDER`] on failure.
    pub fn new(a: &Tensor) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::Shape(format!("cholesky of {:?}", a.shape())));
        }
        std::iter::once(0.0)
            .chain(JITTER_LADDER)
            .find_map(|jitter| try_factor(a, jitter).map(|factor| Self { factor, jitter }))
            .ok_or(Error::NotPositiveDefinite(JITTER_LADDER[JITTER_LADDER.len() - 1]))
    }

    pub fn factor(&self) -> &Tensor {
        &self.factor
    }

    /// Jitter that was added to the diagonal (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.factor.row_slice(i);
            let s: f64 = row[..i].iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / row[i];
        }
        y
    }

    /// Solves `L^T x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.factor.at(k, i) * x[k];
            }
            x[i] = s / self.factor.at(i, i);
        }
        x
    }

    /// Solves `(A + jitter I) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log det(A + jitter I)` as twice the sum of log pivots.
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.factor.at(i, i).ln()).sum::<f64>() * 2.0
    }

    /// Dense inverse of `A + jitter I`.
    pub fn inverse(&self) -> Tensor {
        let n = self.dim();
        let mut inv = Tensor::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            let col = self.solve(&e);
            e[c] = 0.0;
            for (r, v) in col.into_iter().enumerate() {
                inv.set(r, c, v);
            }
        }
        inv
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn cholesky_solve(a: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::Shape(format!(
            "rhs of length {} for a {}x{} system",
            b.len(),
            a.rows(),
            a.cols()
        )));
    }
    Ok(Cholesky::new(a)?.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let b = [0.5, -2.0, 3.25];
        assert_eq!(cholesky_solve(&Tensor::identity(3), &b).unwrap(), b.to_vec());
    }

    #[test]
    fn two_by_two_hand_case() {
        let a = Tensor::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let x = cholesky_solve(&a, &[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((x[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_is_rescued_by_jitter() {
        let a = Tensor::filled(3, 3, 1.0);
        let chol = Cholesky::new(&a).unwrap();
        assert!(chol.jitter() > 0.0);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert!(matches!(Cholesky::new(&a), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn log_det_of_diagonal() {
        let a = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 8.0]]).unwrap();
        let chol = Cholesky::new(&a).unwrap();
        assert!((chol.log_det() - 16f64.ln()).abs() < 1e-14);
    }
}

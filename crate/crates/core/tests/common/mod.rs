//! Reference implementations used as test oracles: finite differences,
//! dense solvers, Monte Carlo and rank statistics. The dense oracles do not
//! call into the library's numerical code.

#![allow(dead_code)]

pub mod grad_cases;

use std::collections::BTreeMap;

use grabnas::diff::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Central differences of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm, with a small absolute
/// floor so that two vanishing gradients compare equal.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = norm(a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(a.iter().copied()).max(norm(b.iter().copied())).max(1e-7);
    diff / scale
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Also returns `log |det a|` from the pivots.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, f64) {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &v)| {
        let mut row = r.clone();
        row.push(v);
        row
    }).collect();
    let mut log_det = 0.0;
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, p);
        let pivot = m[col][col];
        log_det += pivot.abs().ln();
        for r in col + 1..n {
            let f = m[r][col] / pivot;
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    (x, log_det)
}

/// `sigma² (1 + √5 r + 5r²/3) exp(-√5 r)` with ARD distance.
pub fn matern(x: &[f64], y: &[f64], lengthscales: &[f64], signal: f64) -> f64 {
    let r = x
        .iter()
        .zip(y)
        .zip(lengthscales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum::<f64>()
        .sqrt();
    let s5 = 5f64.sqrt() * r;
    signal * (1.0 + s5 + 5.0 * r * r / 3.0) * (-s5).exp()
}

pub struct DenseGp {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub lengthscales: Vec<f64>,
    pub signal: f64,
    pub noise: f64,
}

impl DenseGp {
    fn gram(&self) -> Vec<Vec<f64>> {
        let n = self.x.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        matern(&self.x[i], &self.x[j], &self.lengthscales, self.signal)
                            + if i == j { self.noise } else { 0.0 }
                    })
                    .collect()
            })
            .collect()
    }

    /// Posterior mean and variance for the targets exactly as stored.
    pub fn posterior(&self, q: &[f64]) -> (f64, f64) {
        let k: Vec<f64> = self.x.iter().map(|xi| matern(q, xi, &self.lengthscales, self.signal)).collect();
        let g = self.gram();
        let (alpha, _) = gauss_solve(&g, &self.y);
        let (v, _) = gauss_solve(&g, &k);
        let mean = k.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let var = matern(q, q, &self.lengthscales, self.signal) - k.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        (mean, var)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let g = self.gram();
        let (alpha, log_det) = gauss_solve(&g, &self.y);
        let fit: f64 = self.y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let n = self.y.len() as f64;
        -0.5 * fit - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Zero-mean, unit-variance targets using the population standard deviation.
pub fn standardize(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if y.len() > 1 && sd > 1e-12 { sd } else { 1.0 };
    y.iter().map(|v| (v - mean) / sd).collect()
}

/// Monte-Carlo estimate of `E[max(0, f - best)]`, `f ~ N(mu, sigma²)`,
/// using antithetic pairs.
pub fn mc_expected_improvement(mu: f64, sigma: f64, best: f64, samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let pairs = samples / 2;
    let mut total = 0.0;
    for _ in 0..pairs {
        let z: f64 = StandardNormal.sample(&mut r);
        total += (mu + sigma * z - best).max(0.0) + (mu - sigma * z - best).max(0.0);
    }
    total / (2 * pairs) as f64
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Median by full sort; mean of the middle pair for even lengths.
pub fn median_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Tape parameter gradients of `loss` against central differences over
/// every entry of every parameter accepted by `select`.
pub fn param_fd_error_where(
    store: &ParamStore,
    select: impl Fn(&str) -> bool,
    loss: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let out = loss(&mut tape, store);
    let grads = tape.backward(out).unwrap().param_map(store);
    let names: Vec<String> = store.names().filter(|n| select(n)).map(str::to_owned).collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for name in &names {
        let base = store.get(name).unwrap().clone();
        analytic.extend_from_slice(grads[name].data());
        let f = |x: &[f64]| {
            let mut s = store.clone();
            s.set(name, Tensor::from_vec(base.rows(), base.cols(), x.to_vec()).unwrap()).unwrap();
            let mut t = Tape::new();
            let o = loss(&mut t, &s);
            t.value(o).item()
        };
        numeric.extend(fd_grad(f, base.data(), 1e-5));
    }
    rel_err(&analytic, &numeric)
}

pub fn param_fd_error(store: &ParamStore, loss: impl Fn(&mut Tape, &ParamStore) -> Var) -> f64 {
    param_fd_error_where(store, |_| true, loss)
}

/// Directional check for large parameter sets: for random unit directions
/// `v` over the selected parameters, compares `∇f·v` with the central
/// difference of `f` along `v`. Returns the worst relative error.
pub fn directional_fd_error(
    store: &ParamStore,
    select: impl Fn(&str) -> bool,
    loss: impl Fn(&mut Tape, &ParamStore) -> Var,
    directions: usize,
    seed: u64,
) -> f64 {
    let mut tape = Tape::new();
    let out = loss(&mut tape, store);
    let grads = tape.backward(out).unwrap().param_map(store);
    let value = |s: &ParamStore| {
        let mut tape = Tape::new();
        let o = loss(&mut tape, s);
        tape.value(o).item()
    };
    directional_error_of(store, select, value, &grads, directions, seed)
}

/// [`directional_fd_error`] for a function whose gradient map is already
/// known. Parameters missing from `grads` count as zero gradient.
pub fn directional_error_of(
    store: &ParamStore,
    select: impl Fn(&str) -> bool,
    value: impl Fn(&ParamStore) -> f64,
    grads: &BTreeMap<String, Tensor>,
    directions: usize,
    seed: u64,
) -> f64 {
    let names: Vec<String> = store.names().filter(|n| select(n)).map(str::to_owned).collect();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let dirs: Vec<Vec<f64>> = names.iter().map(|n| normal_vec(&mut r, store.get(n).unwrap().len(), 1.0)).collect();
        let len = dirs.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let analytic: f64 = names
            .iter()
            .zip(&dirs)
            .filter_map(|(n, d)| grads.get(n).map(|g| g.data().iter().zip(d).map(|(g, v)| g * v / len).sum::<f64>()))
            .sum();
        let shifted = |h: f64| {
            let mut s = store.clone();
            for (n, d) in names.iter().zip(&dirs) {
                let mut t = s.get(n).unwrap().clone();
                for (x, v) in t.data_mut().iter_mut().zip(d) {
                    *x += h * v / len;
                }
                s.set(n, t).unwrap();
            }
            value(&s)
        };
        let h = 1e-5;
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        worst = worst.max(rel_err(&[analytic], &[numeric]));
    }
    worst
}

//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep is a single reverse pass.

use std::collections::HashMap;

use super::params::{GradMap, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    /// Right operand is either the same shape or a broadcast `1 x c` row.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a * x + b`
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    /// Per-op cached forward quantities (layer-norm inverse std).
    aux: Vec<f64>,
}

/// Single-owner record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

fn broadcast_ok(lhs: &Tensor, rhs: &Tensor) -> bool {
    lhs.shape() == rhs.shape() || (rhs.rows() == 1 && rhs.cols() == lhs.cols())
}

fn col_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(t.row_slice(r)) {
            *o += v;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_aux(value, op, Vec::new())
    }

    fn push_aux(&mut self, value: Tensor, op: Op, aux: Vec<f64>) -> Var {
        self.nodes.push(Node { value, op, aux });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf whose gradient can be read back with [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Alias of [`Tape::leaf`] for values treated as constants.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    /// Records a stored parameter once per tape; later calls reuse the node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_index.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.push(value, Op::Param);
        self.params.push((name.to_owned(), v));
        self.param_index.insert(name.to_owned(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !broadcast_ok(x, y) {
            return Err(Error::Shape(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let mut out = x.clone();
        let cols = out.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += if y.rows() == 1 { y.data()[i % cols] } else { y.data()[i] };
        }
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!("sub {:?} - {:?}", x.shape(), y.shape())));
        }
        let out = x.zip_map(y, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !broadcast_ok(x, y) {
            return Err(Error::Shape(format!("mul {:?} * {:?}", x.shape(), y.shape())));
        }
        let mut out = x.clone();
        let cols = out.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o *= if y.rows() == 1 { y.data()[i % cols] } else { y.data()[i] };
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.affine(x, k, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        self.push(out, Op::Softplus(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_slice_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_slice_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows(x))
    }

    /// Row-wise standardization to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let mut inv_std = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_slice_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push_aux(out, Op::LayerNormRows(x), inv_std)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols with differing row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row_slice(r);
                out.row_slice_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::Shape("concat_rows with differing column counts".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        if start + len > src.cols() {
            return Err(Error::Shape(format!(
                "column slice {start}..{} of width {}",
                start + len,
                src.cols()
            )));
        }
        let mut out = Tensor::zeros(src.rows(), len);
        for r in 0..src.rows() {
            out.row_slice_mut(r)
                .copy_from_slice(&src.row_slice(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols(x, start)))
    }

    /// Gathers rows (repeats allowed).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= src.rows()) {
            return Err(Error::Shape(format!("row {bad} of {}", src.rows())));
        }
        let mut data = Vec::with_capacity(rows.len() * src.cols());
        for &r in rows {
            data.extend_from_slice(src.row_slice(r));
        }
        let out = Tensor::from_vec(rows.len(), src.cols(), data)?;
        Ok(self.push(out, Op::SelectRows(x, rows.to_vec())))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(out, Op::Mean(x))
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let out = col_sums(self.value(x));
        self.push(out, Op::SumRows(x))
    }

    /// `sum(x ⊙ weights)` for a constant weight tensor: contracts a vector-valued
    /// node with an upstream gradient so a scalar backward yields its VJP.
    pub fn contract(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let w = self.constant(weights);
        let prod = self.mul(x, w)?;
        Ok(self.sum(prod))
    }

    /// Backward sweep from a scalar node.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let (r, c) = self.value(out).shape();
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarOutput(r, c));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=out.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let da = dy.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&dy);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    let db = if self.value(*b).rows() == 1 && dy.rows() != 1 {
                        col_sums(&dy)
                    } else {
                        dy.clone()
                    };
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *a, dy.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, dy.scale(-1.0));
                    accumulate(&mut grads, *a, dy.clone());
                }
                Op::Mul(a, b) => {
                    let (x, w) = (self.value(*a), self.value(*b));
                    let cols = x.cols();
                    let bcast = w.rows() == 1 && x.rows() != 1;
                    let mut da = dy.clone();
                    let mut dw_full = dy.clone();
                    for i in 0..dy.len() {
                        let wi = if bcast { w.data()[i % cols] } else { w.data()[i] };
                        da.data_mut()[i] *= wi;
                        dw_full.data_mut()[i] *= x.data()[i];
                    }
                    let db = if bcast { col_sums(&dw_full) } else { dw_full };
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Affine(x, scale) => {
                    accumulate(&mut grads, *x, dy.scale(*scale));
                }
                Op::Tanh(x) => {
                    accumulate(&mut grads, *x, dy.zip_map(y, |g, t| g * (1.0 - t * t)));
                }
                Op::Sigmoid(x) => {
                    accumulate(&mut grads, *x, dy.zip_map(y, |g, s| g * s * (1.0 - s)));
                }
                Op::Relu(x) => {
                    let dx = dy.zip_map(self.value(*x), |g, v| if v > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Softplus(x) => {
                    let dx = dy.zip_map(self.value(*x), |g, v| g * sigmoid(v));
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let mut dx = dy.clone();
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let dot: f64 = dy.row_slice(r).iter().zip(yr).map(|(g, s)| g * s).sum();
                        for (d, s) in dx.row_slice_mut(r).iter_mut().zip(yr) {
                            *d = s * (*d - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LogSoftmaxRows(x) => {
                    let mut dx = dy.clone();
                    for r in 0..y.rows() {
                        let total: f64 = dy.row_slice(r).iter().sum();
                        for (d, l) in dx.row_slice_mut(r).iter_mut().zip(y.row_slice(r)) {
                            *d -= l.exp() * total;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNormRows(x) => {
                    let mut dx = dy.clone();
                    let n = y.cols() as f64;
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = dy.row_slice(r);
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(g, v)| g * v).sum::<f64>() / n;
                        let inv = node.aux[r];
                        for ((d, g), v) in dx.row_slice_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d = inv * (g - mean_g - v * mean_gy);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut dp = Tensor::zeros(dy.rows(), w);
                        for r in 0..dy.rows() {
                            dp.row_slice_mut(r)
                                .copy_from_slice(&dy.row_slice(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let (h, w) = self.value(p).shape();
                        let slice = dy.data()[row * w..(row + h) * w].to_vec();
                        row += h;
                        accumulate(&mut grads, p, Tensor::from_vec(h, w, slice)?);
                    }
                }
                Op::SliceCols(x, start) => {
                    let src = self.value(*x);
                    let mut dx = Tensor::zeros(src.rows(), src.cols());
                    for r in 0..dy.rows() {
                        dx.row_slice_mut(r)[*start..*start + dy.cols()]
                            .copy_from_slice(dy.row_slice(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SelectRows(x, rows) => {
                    let src = self.value(*x);
                    let mut dx = Tensor::zeros(src.rows(), src.cols());
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, g) in dx.row_slice_mut(r).iter_mut().zip(dy.row_slice(i)) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Transpose(x) => {
                    accumulate(&mut grads, *x, dy.transpose());
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Tensor::filled(r, c, dy.item()));
                }
                Op::Mean(x) => {
                    let (r, c) = self.value(*x).shape();
                    let g = dy.item() / (r * c) as f64;
                    accumulate(&mut grads, *x, Tensor::filled(r, c, g));
                }
                Op::SumRows(x) => {
                    let (r, c) = self.value(*x).shape();
                    let mut dx = Tensor::zeros(r, c);
                    for i in 0..r {
                        dx.row_slice_mut(i).copy_from_slice(dy.data());
                    }
                    accumulate(&mut grads, *x, dx);
                }
            }
            grads[idx] = Some(dy);
        }

        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient with respect to a node, `None` when the node does not reach the output.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter in `store`; unreached parameters get zeros.
    pub fn param_map(&self, store: &ParamStore) -> GradMap {
        let mut map = store.zeros_like();
        for (name, v) in &self.params {
            if let (Some(slot), Some(g)) = (map.get_mut(name), self.wrt(*v)) {
                *slot = g.clone();
            }
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn tanh_slope_at_zero_is_one() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.tanh(x);
        assert_eq!(t.backward(y).unwrap().wrt(x).unwrap().item(), 1.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 2.0]));
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(Error::NonScalarOutput(1, 2))));
    }

    #[test]
    fn unreached_parameters_get_zero_gradients() {
        let mut store = ParamStore::new(0);
        store.add_glorot("used", 2, 2).unwrap();
        store.add_glorot("unused", 3, 1).unwrap();
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, -1.0]));
        let w = t.param(&store, "used").unwrap();
        let y = t.matmul(x, w).unwrap();
        let s = t.sum(y);
        let map = t.backward(s).unwrap().param_map(&store);
        assert_eq!(map["unused"], Tensor::zeros(3, 1));
        assert_eq!(map["used"].data(), &[1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn shared_parameter_node_accumulates() {
        let mut store = ParamStore::new(0);
        store.add_constant("w", 1, 1, 2.0).unwrap();
        let mut t = Tape::new();
        let a = t.param(&store, "w").unwrap();
        let b = t.param(&store, "w").unwrap();
        assert_eq!(a, b);
        let y = t.mul(a, b).unwrap();
        let map = t.backward(y).unwrap().param_map(&store);
        assert_eq!(map["w"].item(), 4.0);
    }
}

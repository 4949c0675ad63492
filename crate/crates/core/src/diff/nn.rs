//! Layer building blocks recorded on a [`Tape`]. Each layer owns the
//! parameters under a name prefix in a [`ParamStore`].

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

pub fn apply(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Tanh => tape.tanh(x),
        Activation::Relu => tape.relu(x),
        Activation::Identity => x,
    }
}

pub fn init_linear(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    store.add_glorot(&format!("{prefix}.w"), fan_in, fan_out)?;
    store.add_constant(&format!("{prefix}.b"), 1, fan_out, 0.0)
}

/// `x W + b`, with `b` broadcast over rows.
pub fn linear(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

/// `x W` without bias.
pub fn init_projection(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    store.add_glorot(&format!("{prefix}.w"), fan_in, fan_out)
}

pub fn projection(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    tape.matmul(x, w)
}

/// Two affine layers with a hidden activation; the output layer is linear.
pub fn init_mlp2(store: &mut ParamStore, prefix: &str, d_in: usize, d_hidden: usize, d_out: usize) -> Result<()> {
    init_linear(store, &format!("{prefix}.l1"), d_in, d_hidden)?;
    init_linear(store, &format!("{prefix}.l2"), d_hidden, d_out)
}

pub fn mlp2(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, act: Activation) -> Result<Var> {
    let h = linear(tape, store, &format!("{prefix}.l1"), x)?;
    let h = apply(tape, h, act);
    linear(tape, store, &format!("{prefix}.l2"), h)
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, width: usize) -> Result<()> {
    store.add_constant(&format!("{prefix}.gain"), 1, width, 1.0)?;
    store.add_constant(&format!("{prefix}.offset"), 1, width, 0.0)
}

pub fn layer_norm(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gain = tape.param(store, &format!("{prefix}.gain"))?;
    let offset = tape.param(store, &format!("{prefix}.offset"))?;
    let n = tape.layer_norm_rows(x);
    let scaled = tape.mul(n, gain)?;
    tape.add(scaled, offset)
}

/// Gated recurrent unit over row inputs `x` (`1 x d_in`) and state `h` (`1 x d_h`).
pub fn init_gru(store: &mut ParamStore, prefix: &str, d_in: usize, d_hidden: usize) -> Result<()> {
    for gate in ["r", "z", "n"] {
        store.add_glorot(&format!("{prefix}.wx_{gate}"), d_in, d_hidden)?;
        store.add_glorot(&format!("{prefix}.wh_{gate}"), d_hidden, d_hidden)?;
        store.add_constant(&format!("{prefix}.bx_{gate}"), 1, d_hidden, 0.0)?;
        store.add_constant(&format!("{prefix}.bh_{gate}"), 1, d_hidden, 0.0)?;
    }
    Ok(())
}

pub fn gru_cell(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, h: Var) -> Result<Var> {
    let gate_parts = |tape: &mut Tape, gate: &str| -> Result<(Var, Var)> {
        let wx = tape.param(store, &format!("{prefix}.wx_{gate}"))?;
        let bx = tape.param(store, &format!("{prefix}.bx_{gate}"))?;
        let wh = tape.param(store, &format!("{prefix}.wh_{gate}"))?;
        let bh = tape.param(store, &format!("{prefix}.bh_{gate}"))?;
        let xs = tape.matmul(x, wx)?;
        let xs = tape.add(xs, bx)?;
        let hs = tape.matmul(h, wh)?;
        let hs = tape.add(hs, bh)?;
        Ok((xs, hs))
    };
    let (xr, hr) = gate_parts(tape, "r")?;
    let (xz, hz) = gate_parts(tape, "z")?;
    let (xn, hn) = gate_parts(tape, "n")?;
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r);
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z);
    let gated = tape.mul(r, hn)?;
    let n = tape.add(xn, gated)?;
    let n = tape.tanh(n);
    // h' = n + z ⊙ (h - n)
    let diff = tape.sub(h, n)?;
    let keep = tape.mul(z, diff)?;
    tape.add(n, keep)
}

/// Multi-head scaled dot-product attention with query/key/value/output projections.
pub fn init_multihead(store: &mut ParamStore, prefix: &str, width: usize, heads: usize) -> Result<()> {
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::InvalidArgument(format!(
            "{heads} heads do not divide width {width}"
        )));
    }
    for proj in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{prefix}.{proj}"), width, width)?;
    }
    Ok(())
}

pub fn multihead(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    queries: Var,
    keys_values: Var,
    heads: usize,
) -> Result<Var> {
    let width = tape.value(queries).cols();
    if tape.value(keys_values).cols() != width {
        return Err(Error::Shape("attention width mismatch".into()));
    }
    let head_dim = width / heads;
    let q = linear(tape, store, &format!("{prefix}.q"), queries)?;
    let k = linear(tape, store, &format!("{prefix}.k"), keys_values)?;
    let v = linear(tape, store, &format!("{prefix}.v"), keys_values)?;
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
        let weights = tape.softmax_rows(scores);
        outputs.push(tape.matmul(weights, vh)?);
    }
    let joined = tape.concat_cols(&outputs)?;
    linear(tape, store, &format!("{prefix}.o"), joined)
}

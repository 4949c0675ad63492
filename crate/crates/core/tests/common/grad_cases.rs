//! Finite-difference cases for every tape primitive.

use grabnas::diff::{Tape, Tensor, Var};

use super::{fd_grad, normal_vec, rel_err};

pub type Build = fn(&mut Tape, &[Var]) -> Var;

/// Compares the tape gradient of `sum(build(inputs) ⊙ w)` with central
/// differences, for every input.
pub fn check_primitive(shapes: &[(usize, usize)], build: Build, seed: u64) -> f64 {
    let mut r = super::rng(seed);
    let sizes: Vec<usize> = shapes.iter().map(|(a, b)| a * b).collect();
    let flat = normal_vec(&mut r, sizes.iter().sum(), 0.8);
    let split = |flat: &[f64]| -> Vec<Tensor> {
        let mut out = Vec::new();
        let mut at = 0;
        for (&(rows, cols), &n) in shapes.iter().zip(&sizes) {
            out.push(Tensor::from_vec(rows, cols, flat[at..at + n].to_vec()).unwrap());
            at += n;
        }
        out
    };
    let probe_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = split(&flat).into_iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).shape()
    };
    let weights = Tensor::from_vec(
        probe_shape.0,
        probe_shape.1,
        normal_vec(&mut r, probe_shape.0 * probe_shape.1, 1.0),
    )
    .unwrap();
    let eval = |flat: &[f64]| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = split(flat).into_iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars);
        let loss = tape.contract(out, weights.clone()).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = vars.iter().flat_map(|&v| grads.wrt(v).unwrap().data().to_vec()).collect();
        (tape.value(loss).item(), g)
    };
    let (_, analytic) = eval(&flat);
    let numeric = fd_grad(|x| eval(x).0, &flat, 1e-5);
    rel_err(&analytic, &numeric)
}

pub type Case = (&'static str, Vec<(usize, usize)>, Build);

pub fn primitives() -> Vec<Case> {
    vec![
        ("matmul", vec![(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1]).unwrap()),
        ("add", vec![(3, 4), (3, 4)], |t, v| t.add(v[0], v[1]).unwrap()),
        ("add_row_broadcast", vec![(3, 4), (1, 4)], |t, v| t.add(v[0], v[1]).unwrap()),
        ("sub", vec![(2, 5), (2, 5)], |t, v| t.sub(v[0], v[1]).unwrap()),
        ("mul", vec![(3, 3), (3, 3)], |t, v| t.mul(v[0], v[1]).unwrap()),
        ("mul_row_broadcast", vec![(4, 3), (1, 3)], |t, v| t.mul(v[0], v[1]).unwrap()),
        ("affine", vec![(2, 3)], |t, v| t.affine(v[0], -1.7, 0.3)),
        ("tanh", vec![(3, 4)], |t, v| t.tanh(v[0])),
        ("sigmoid", vec![(3, 4)], |t, v| t.sigmoid(v[0])),
        ("relu", vec![(3, 4)], |t, v| t.relu(v[0])),
        ("softplus", vec![(3, 4)], |t, v| t.softplus(v[0])),
        ("softmax_rows", vec![(3, 5)], |t, v| t.softmax_rows(v[0])),
        ("log_softmax_rows", vec![(3, 5)], |t, v| t.log_softmax_rows(v[0])),
        ("layer_norm_rows", vec![(3, 6)], |t, v| t.layer_norm_rows(v[0])),
        ("concat_cols", vec![(2, 3), (2, 2)], |t, v| t.concat_cols(&[v[0], v[1], v[0]]).unwrap()),
        ("concat_rows", vec![(2, 3), (1, 3)], |t, v| t.concat_rows(&[v[0], v[1]]).unwrap()),
        ("slice_cols", vec![(3, 6)], |t, v| t.slice_cols(v[0], 2, 3).unwrap()),
        ("select_rows", vec![(4, 3)], |t, v| t.select_rows(v[0], &[2, 0, 2, 3]).unwrap()),
        ("transpose", vec![(2, 5)], |t, v| t.transpose(v[0])),
        ("sum", vec![(3, 4)], |t, v| t.sum(v[0])),
        ("mean", vec![(3, 4)], |t, v| t.mean(v[0])),
        ("sum_rows", vec![(3, 4)], |t, v| t.sum_rows(v[0])),
        ("composite", vec![(2, 3), (3, 3)], |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let h = t.tanh(h);
            let s = t.softmax_rows(h);
            t.mul(s, h).unwrap()
        }),
    ]
}

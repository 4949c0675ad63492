mod common;

use common::grad_cases::{check_primitive, primitives};
use common::{gauss_solve, normal_vec, param_fd_error};
use grabnas::diff::nn::{self, Activation};
use grabnas::diff::{cholesky_solve, Cholesky, ParamStore, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, shapes, build) in primitives() {
        for seed in 0..5 {
            let err = check_primitive(&shapes, build, seed);
            assert!(err < 1e-5, "{name} seed {seed}: rel err {err:e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn primitives_hold_on_random_inputs(seed in any::<u64>()) {
        for (name, shapes, build) in primitives() {
            let err = check_primitive(&shapes, build, seed);
            prop_assert!(err < 1e-5, "{} rel err {:e}", name, err);
        }
    }
}

#[test]
fn two_layer_perceptron_parameter_gradients() {
    for seed in 0..3 {
        let mut store = ParamStore::new(seed);
        nn::init_mlp2(&mut store, "mlp", 4, 6, 3).unwrap();
        let x = Tensor::from_vec(5, 4, normal_vec(&mut common::rng(seed + 10), 20, 1.0)).unwrap();
        let err = param_fd_error(&store, |tape, s| {
            let xv = tape.constant(x.clone());
            let h = nn::mlp2(tape, s, "mlp", xv, Activation::Tanh).unwrap();
            let h = tape.tanh(h);
            tape.sum(h)
        });
        assert!(err < 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn gru_and_attention_parameter_gradients() {
    let mut store = ParamStore::new(3);
    nn::init_gru(&mut store, "gru", 3, 4).unwrap();
    nn::init_multihead(&mut store, "att", 4, 2).unwrap();
    nn::init_layer_norm(&mut store, "ln", 4).unwrap();
    let mut r = common::rng(4);
    let x = Tensor::from_vec(1, 3, normal_vec(&mut r, 3, 1.0)).unwrap();
    let h0 = Tensor::from_vec(1, 4, normal_vec(&mut r, 4, 0.5)).unwrap();
    let set = Tensor::from_vec(3, 4, normal_vec(&mut r, 12, 1.0)).unwrap();
    let w = Tensor::from_vec(3, 4, normal_vec(&mut r, 12, 1.0)).unwrap();
    let err = param_fd_error(&store, |tape, s| {
        let xv = tape.constant(x.clone());
        let hv = tape.constant(h0.clone());
        let h = nn::gru_cell(tape, s, "gru", xv, hv).unwrap();
        let h = nn::gru_cell(tape, s, "gru", xv, h).unwrap();
        let kv = tape.constant(set.clone());
        let hh = tape.select_rows(h, &[0, 0, 0]).unwrap();
        let joined = tape.add(kv, hh).unwrap();
        let a = nn::multihead(tape, s, "att", joined, joined, 2).unwrap();
        let a = nn::layer_norm(tape, s, "ln", a).unwrap();
        tape.contract(a, w.clone()).unwrap()
    });
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn backward_is_deterministic() {
    let mut store = ParamStore::new(9);
    nn::init_mlp2(&mut store, "mlp", 3, 5, 2).unwrap();
    let run = || {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.1, -0.2, 0.3], vec![1.0, 0.5, -0.5]]).unwrap());
        let y = nn::mlp2(&mut tape, &store, "mlp", x, Activation::Relu).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap().param_map(&store)
    };
    assert_eq!(run(), run());
}

fn random_spd(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = common::rng(seed);
    let m: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut r, n, 1.0)).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| m[i][k] * m[j][k]).sum::<f64>() + if i == j { n as f64 } else { 0.0 })
                .collect()
        })
        .collect()
}

#[test]
fn cholesky_matches_dense_elimination() {
    for seed in 0..10 {
        let a = random_spd(20, seed);
        let b = normal_vec(&mut common::rng(seed + 100), 20, 1.0);
        let t = Tensor::from_rows(&a).unwrap();
        let x = cholesky_solve(&t, &b).unwrap();
        let (oracle, log_det) = gauss_solve(&a, &b);
        for (p, q) in x.iter().zip(&oracle) {
            assert!((p - q).abs() < 1e-8, "{p} vs {q}");
        }
        let chol = Cholesky::new(&t).unwrap();
        assert_eq!(chol.jitter(), 0.0);
        assert!((chol.log_det() - log_det).abs() < 1e-8);
        let l = chol.factor();
        let llt = l.matmul_t(l);
        for i in 0..20 {
            for j in 0..20 {
                assert!((llt.at(i, j) - a[i][j]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn cholesky_examples() {
    let i = Tensor::identity(3);
    assert_eq!(cholesky_solve(&i, &[1.0, -2.0, 5.0]).unwrap(), vec![1.0, -2.0, 5.0]);
    let a = Tensor::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
    let x = cholesky_solve(&a, &[1.0, 1.0]).unwrap();
    assert!((x[0] - 1.0 / 3.0).abs() < 1e-12 && (x[1] - 1.0 / 3.0).abs() < 1e-12);
}

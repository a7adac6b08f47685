use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::gradcheck::op_error_table;
use super::*;

#[test]
fn softplus_derivative_at_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Value::scalar(0.0));
    let y = tape.softplus(x);
    tape.backward(y).unwrap();
    assert!((tape.grad(x)[0] - 0.5).abs() < 1e-15);
}

#[test]
fn every_op_passes_grad_check() {
    for (name, err) in op_error_table() {
        assert!(err < 1e-5, "op {name}: max relative error {err:e}");
    }
}

#[test]
fn scan_adjoint_matches_finite_differences() {
    let table = op_error_table();
    let err = table.iter().find(|(n, _)| *n == "complex_scan").unwrap().1;
    assert!(err < 1e-6, "scan adjoint error {err:e}");
}

#[test]
fn fft_adjoint_is_conjugate_transpose_dft() {
    let n = 8;
    let mut rng = StdRng::seed_from_u64(41);
    let x: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut tape = Tape::new();
    let xid = tape.leaf(Value::new(vec![1, 2, n], x));
    let wid = tape.leaf(Value::new(vec![1, 2, n], w.clone()));
    let spec = tape.fft_op(xid, false);
    let prod = tape.mul(spec, wid);
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();

    // expected dx = F^H w where the loss pairs real parts with real parts
    let tau = -2.0 * std::f64::consts::PI / n as f64;
    for j in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..n {
            let f_kj = Complex64::new(0.0, tau * (k * j) as f64).exp();
            acc += f_kj.conj() * Complex64::new(w[k], w[n + k]);
        }
        assert!((tape.grad(xid)[j] - acc.re).abs() < 1e-10, "re j={j}");
        assert!((tape.grad(xid)[n + j] - acc.im).abs() < 1e-10, "im j={j}");
    }
}

#[test]
fn ifft_roundtrip_gradient_is_identity() {
    let n = 8;
    let mut rng = StdRng::seed_from_u64(42);
    let x: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let xid = tape.leaf(Value::new(vec![1, 2, n], x));
    let wid = tape.leaf(Value::new(vec![1, 2, n], w.clone()));
    let spec = tape.fft_op(xid, false);
    let back = tape.fft_op(spec, true);
    let prod = tape.mul(back, wid);
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();
    for (g, expect) in tape.grad(xid).iter().zip(&w) {
        assert!((g - expect).abs() < 1e-12);
    }
}

fn quadratic_run(
    store: &mut crate::autodiff::ParamStore,
    with_grads: bool,
    x: &[f64],
    y: &[f64],
) -> f64 {
    let mut tape = Tape::new();
    let w = tape.leaf(store.get("w").value.clone());
    let xid = tape.leaf(Value::new(vec![3, 1], x.to_vec()));
    let yid = tape.leaf(Value::new(vec![2, 1], y.to_vec()));
    let pred = tape.matmul(w, xid);
    let resid = tape.sub(pred, yid);
    let sq = tape.mul(resid, resid);
    let loss = tape.sum(sq);
    let value = tape.value(loss).data[0];
    if with_grads {
        tape.backward(loss).unwrap();
        store.zero_grads();
        let g = tape.grad(w).to_vec();
        store.accumulate("w", &g);
    }
    value
}

#[test]
fn quadratic_loss_grad_check_is_exact() {
    let mut rng = StdRng::seed_from_u64(43);
    let mut store = ParamStore::new();
    let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    store.insert("w", Value::new(vec![2, 3], w), true);
    let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut run =
        |s: &mut ParamStore, g: bool| -> f64 { quadratic_run(s, g, &x, &y) };
    let err = grad_check(&mut store, &mut run, 1e-5, 200);
    assert!(err < 1e-9, "err {err:e}");
}

#[test]
fn frozen_params_report_zero_grads() {
    let mut store = ParamStore::new();
    store.insert("frozen", Value::new(vec![3], vec![1.0, 2.0, 3.0]), false);
    store.accumulate("frozen", &[5.0, 5.0, 5.0]);
    assert!(store.get("frozen").grad.iter().all(|&g| g == 0.0));
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    assert!(matches!(
        tape.backward(NodeId(0)),
        Err(AutodiffError::BackwardBeforeForward)
    ));
    let x = tape.leaf(Value::new(vec![2], vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarLoss(2))));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(AutodiffError::DoubleBackward)));
}

#[test]
fn adam_zero_grad_no_change() {
    let mut store = ParamStore::new();
    store.insert("p", Value::new(vec![2], vec![0.4, -0.7]), true);
    let mut state = AdamState::new();
    let before = store.get("p").value.data.clone();
    adam_step(&mut store, &mut state, &AdamConfig::with_lr(1e-3));
    assert_eq!(store.get("p").value.data, before);
}

#[test]
fn adam_first_step_is_minus_lr() {
    // bias correction makes the first update -lr * g/|g| up to eps
    let mut store = ParamStore::new();
    store.insert("p", Value::scalar(0.0), true);
    store.accumulate("p", &[1.0]);
    let mut state = AdamState::new();
    let lr = 1e-3;
    adam_step(&mut store, &mut state, &AdamConfig::with_lr(lr));
    let step = store.get("p").value.data[0];
    assert!((step + lr).abs() < 1e-8, "step {step}");
}

#[test]
fn adam_convex_quadratic_monotone() {
    // f(p) = sum (p_i - t_i)^2 decreases every step
    let target = [1.0, -2.0, 0.5];
    let mut store = ParamStore::new();
    store.insert("p", Value::new(vec![3], vec![0.0; 3]), true);
    let mut state = AdamState::new();
    let cfg = AdamConfig::with_lr(1e-3);
    let loss_of = |v: &[f64]| -> f64 {
        v.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum()
    };
    let mut prev = loss_of(&store.get("p").value.data);
    for _ in 0..100 {
        store.zero_grads();
        let grads: Vec<f64> = store
            .get("p")
            .value
            .data
            .iter()
            .zip(&target)
            .map(|(p, t)| 2.0 * (p - t))
            .collect();
        store.accumulate("p", &grads);
        adam_step(&mut store, &mut state, &cfg);
        let cur = loss_of(&store.get("p").value.data);
        assert!(cur < prev, "loss went {prev} -> {cur}");
        prev = cur;
    }
}

#[test]
fn seeded_training_is_bitwise_deterministic() {
    let run_once = || -> Vec<f64> {
        let mut rng = StdRng::seed_from_u64(44);
        let mut store = ParamStore::new();
        let init: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        store.insert("w", Value::new(vec![2, 3], init), true);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut state = AdamState::new();
        let cfg = AdamConfig::with_lr(1e-3);
        for _ in 0..10 {
            quadratic_run(&mut store, true, &x, &y);
            adam_step(&mut store, &mut state, &cfg);
        }
        store.get("w").value.data.clone()
    };
    assert_eq!(run_once(), run_once());
}

#[test]
fn topk_mask_straight_through() {
    // gradient flows only through kept coordinates
    let mut tape = Tape::new();
    let x = tape.leaf(Value::new(
        vec![1, 2, 4],
        vec![3.0, 0.1, 2.0, 0.2, 0.0, 0.0, 0.0, 0.0],
    ));
    let masked = tape.topk_mask(x, 2);
    let loss = tape.sum(masked);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x)[..4], [1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn normalize_cols_forward_stats() {
    let mut tape = Tape::new();
    let x = tape.leaf(Value::new(vec![4, 2], vec![1.0, 9.0, 2.0, 9.0, 3.0, 9.0, 4.0, 9.0]));
    let y = tape.normalize_cols(x);
    let v = tape.value(y);
    // first column standardized, constant column collapses to zero
    let mean: f64 = (0..4).map(|r| v.data[r * 2]).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12);
    for r in 0..4 {
        assert!(v.data[r * 2 + 1].abs() < 1e-12);
    }
}

#[test]
fn dense_scan_matches_diagonal_scan() {
    // a diagonal A expressed as a dense matrix gives the same trajectory
    let len = 6;
    let a = [0.5, -0.3];
    let b = [0.7, 0.2];
    let mut rng = StdRng::seed_from_u64(45);
    let u: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut tape = Tape::new();
    let uid = tape.leaf(Value::new(vec![len, 1], u.clone()));
    let a_bar = crate::tensor::RealMatrix::from_rows(&[vec![a[0], 0.0], vec![0.0, a[1]]]);
    let dense = tape.dense_scan(uid, &a_bar, &b);

    let mut expect = vec![0.0; len * 2];
    let mut s = [0.0; 2];
    for t in 0..len {
        for j in 0..2 {
            s[j] = a[j] * s[j] + b[j] * u[t];
            expect[t * 2 + j] = s[j];
        }
    }
    for (got, want) in tape.value(dense).data.iter().zip(&expect) {
        assert!((got - want).abs() < 1e-12);
    }
}

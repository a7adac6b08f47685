use super::*;
use crate::hippo::{build_legs_normal, diagonalize};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn ones_c(n: usize) -> Vec<Complex64> {
    vec![c(1.0, 0.0); n]
}

fn random_params(rng: &mut StdRng, len: usize, n: usize) -> TimeVaryingParams {
    let mut gen = |max_norm: f64| -> Vec<Complex64> {
        (0..len * n)
            .map(|_| c(rng.gen_range(-max_norm..max_norm), rng.gen_range(-max_norm..max_norm)))
            .collect()
    };
    let a_bar: Vec<Complex64> = gen(0.7);
    let b_bar = gen(1.0);
    let cmat = gen(1.0);
    TimeVaryingParams::new(len, n, a_bar, b_bar, cmat).unwrap()
}

#[test]
fn memoryless_when_a_is_zero() {
    let len = 5;
    let n = 3;
    let mut rng = StdRng::seed_from_u64(1);
    let mut p = random_params(&mut rng, len, n);
    p.a_bar = vec![c(0.0, 0.0); len * n];
    let u: Vec<f64> = (0..len).map(|t| t as f64 + 1.0).collect();
    let (y, _) = recur_sequential(&p, &u).unwrap();
    for t in 0..len {
        let mut expect = 0.0;
        for j in 0..n {
            expect += (p.c[t * n + j] * p.b_bar[t * n + j]).re * u[t];
        }
        assert!((y[t] - expect).abs() < 1e-12);
    }
}

#[test]
fn running_sum() {
    // a=1, b=1, c=1, u=ones -> y_t = t+1
    let len = 10;
    let p = TimeVaryingParams::time_invariant(len, &ones_c(1), &ones_c(1), &ones_c(1));
    let u = vec![1.0; len];
    let (y, _) = recur_sequential(&p, &u).unwrap();
    for (t, v) in y.iter().enumerate() {
        assert!((v - (t as f64 + 1.0)).abs() < 1e-12);
    }
}

#[test]
fn scan_matches_sequential_time_varying() {
    let mut rng = StdRng::seed_from_u64(2);
    for &(len, n) in &[(1usize, 4usize), (64, 8), (200, 3), (512, 16)] {
        let p = random_params(&mut rng, len, n);
        let u: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y_seq, _) = recur_sequential(&p, &u).unwrap();
        let y_scan = scan_parallel(&p, &u).unwrap();
        for t in 0..len {
            assert!(
                (y_seq[t] - y_scan[t]).abs() < 1e-10,
                "scan mismatch at t={t}, len={len}"
            );
        }
    }
}

#[test]
fn kernel_trivial_running_sum() {
    // lambda=0, delta=1, b=c=1 -> A_bar=1, K = [1,1,1,...]
    let k = conv_kernel(&[c(0.0, 0.0)], &ones_c(1), &ones_c(1), 1.0, 6);
    for v in &k {
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn kernel_single_mode_geometric() {
    let k = conv_kernel(&[c(-1.0, 0.0)], &ones_c(1), &ones_c(1), 0.1, 8);
    let rho = (-0.1f64).exp();
    for (l, v) in k.iter().enumerate() {
        assert!((v - 0.1 * rho.powi(l as i32)).abs() < 1e-12);
    }
}

#[test]
fn conv_matches_recurrence() {
    let mut rng = StdRng::seed_from_u64(3);
    let n = 8;
    let len = 128;
    let delta = 0.05;
    let lambda: Vec<Complex64> = (0..n)
        .map(|_| c(rng.gen_range(-2.0..-0.1), rng.gen_range(-3.0..3.0)))
        .collect();
    let b: Vec<Complex64> = (0..n)
        .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let cv: Vec<Complex64> = (0..n)
        .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let u: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let kernel = conv_kernel(&lambda, &b, &cv, delta, len);
    let y_conv = conv_apply(&kernel, &u);

    let (a_bar, b_bar) = crate::discretize::discretize_zoh_euler_diag(&lambda, &b, delta);
    let p = TimeVaryingParams::time_invariant(len, &a_bar, &b_bar, &cv);
    let (y_seq, _) = recur_sequential(&p, &u).unwrap();
    for t in 0..len {
        assert!((y_conv[t] - y_seq[t]).abs() < 1e-10, "t={t}");
    }
}

#[test]
fn three_way_equivalence_random_systems() {
    let mut rng = StdRng::seed_from_u64(4);
    for trial in 0..20 {
        let n = rng.gen_range(1..=16);
        let len = rng.gen_range(4..=256);
        let delta = rng.gen_range(0.01..0.2);
        let lambda: Vec<Complex64> = (0..n)
            .map(|_| c(rng.gen_range(-2.0..-0.05), rng.gen_range(-3.0..3.0)))
            .collect();
        let b: Vec<Complex64> = (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let cv: Vec<Complex64> = (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let u: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let (a_bar, b_bar) = crate::discretize::discretize_zoh_euler_diag(&lambda, &b, delta);
        let p = TimeVaryingParams::time_invariant(len, &a_bar, &b_bar, &cv);
        let (y_seq, _) = recur_sequential(&p, &u).unwrap();
        let y_scan = scan_parallel(&p, &u).unwrap();
        let y_conv = conv_apply(&conv_kernel(&lambda, &b, &cv, delta, len), &u);
        for t in 0..len {
            assert!((y_seq[t] - y_scan[t]).abs() < 1e-10, "trial {trial} t={t}");
            assert!((y_seq[t] - y_conv[t]).abs() < 1e-10, "trial {trial} t={t}");
        }
    }
}

#[test]
fn bounded_rollout_long_horizon() {
    // Re(lambda) <= 0 and |u| <= 1: state stays within sum |b_bar|
    let lambda = [c(-0.01, 2.0), c(-0.5, -1.0)];
    let b = [c(0.3, 0.1), c(-0.2, 0.4)];
    let (a_bar, b_bar) = crate::discretize::discretize_zoh_euler_diag(&lambda, &b, 0.01);
    let n = 2;
    let mut state = vec![c(0.0, 0.0); n];
    let mut rng = StdRng::seed_from_u64(6);
    let mut bound = 0.0;
    for j in 0..n {
        bound += b_bar[j].norm();
    }
    let horizon_bound = bound / (1.0 - a_bar.iter().map(|a| a.norm()).fold(0.0, f64::max));
    for _ in 0..100_000 {
        let u: f64 = rng.gen_range(-1.0..1.0);
        for j in 0..n {
            state[j] = a_bar[j] * state[j] + b_bar[j] * u;
        }
        for j in 0..n {
            assert!(state[j].norm() <= horizon_bound + 1e-9);
            assert!(state[j].re.is_finite() && state[j].im.is_finite());
        }
    }
}

#[test]
fn conjugate_identity_transform() {
    let n = 3;
    let t = ComplexMatrix::identity(n);
    let mut a = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = c(-(i as f64) - 1.0, 0.5);
    }
    let b = ones_c(n);
    let cv = ones_c(n);
    let (a2, b2, c2) = conjugate_system(&t, &a, &b, &cv).unwrap();
    assert!(a2.sub(&a).frobenius_norm() < 1e-14);
    assert_eq!(b2, b);
    assert_eq!(c2, cv);
}

#[test]
fn conjugation_preserves_output_dense_vs_diagonal() {
    // unitary V from the scaled-Legendre normal form: dense recurrence on
    // A_normal equals diagonal recurrence on lambda
    let n = 4;
    let nf = build_legs_normal(n);
    let diag = diagonalize(&nf).unwrap();
    let mut rng = StdRng::seed_from_u64(8);
    let b: Vec<Complex64> = (0..n).map(|_| c(rng.gen_range(-1.0..1.0), 0.0)).collect();
    let cv: Vec<Complex64> = (0..n).map(|_| c(rng.gen_range(-1.0..1.0), 0.0)).collect();
    let len = 64;
    let delta = 0.05;
    let u: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // dense path: A_bar = exp(delta A_normal)
    let a_bar_dense = crate::tensor::matexp(&nf.a_normal.scale(delta))
        .unwrap()
        .to_complex();
    let y_dense = recur_sequential_dense(
        &a_bar_dense,
        &b.iter().map(|v| v * delta).collect::<Vec<_>>(),
        &cv,
        &u,
    )
    .unwrap();

    // diagonal path in the eigenbasis: B' = V* B, C' = C V
    let vh = diag.v.adjoint();
    let b_diag = vh.matvec(&b);
    let mut c_diag = vec![c(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            c_diag[j] += cv[i] * diag.v[(i, j)];
        }
    }
    let (a_bar, b_bar) = crate::discretize::discretize_zoh_euler_diag(&diag.lambda, &b_diag, delta);
    let p = TimeVaryingParams::time_invariant(len, &a_bar, &b_bar, &c_diag);
    let (y_diag, _) = recur_sequential(&p, &u).unwrap();
    for t in 0..len {
        assert!((y_dense[t] - y_diag[t]).abs() < 1e-9, "t={t}");
    }
}

#[test]
fn conjugation_preserves_char_poly() {
    let mut rng = StdRng::seed_from_u64(9);
    let n = 4;
    let mut a = ComplexMatrix::zeros(n, n);
    let mut t = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            t[(i, j)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        t[(i, i)] += c(3.0, 0.0); // keep well conditioned
    }
    let b = ones_c(n);
    let cv = ones_c(n);
    let (a2, _, _) = conjugate_system(&t, &a, &b, &cv).unwrap();
    let p1 = char_poly(&a);
    let p2 = char_poly(&a2);
    for (u, v) in p1.iter().zip(&p2) {
        assert!((u - v).norm() < 1e-8, "{u} vs {v}");
    }
}

#[test]
fn singular_transform_rejected() {
    let t = ComplexMatrix::zeros(2, 2);
    let a = ComplexMatrix::identity(2);
    let res = conjugate_system(&t, &a, &ones_c(2), &ones_c(2));
    assert!(matches!(res, Err(EngineError::SingularTransform(_))));
}

#[test]
fn shape_mismatch_rejected() {
    let p = TimeVaryingParams::time_invariant(4, &ones_c(2), &ones_c(2), &ones_c(2));
    assert!(recur_sequential(&p, &[1.0, 2.0]).is_err());
}

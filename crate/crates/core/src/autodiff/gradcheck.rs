//! Central-difference validation of tape gradients, plus the per-op error
//! table backing the `gradcheck` subcommand.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::params::ParamStore;
use super::tape::{NodeId, Tape, Value};
use crate::tensor::RealMatrix;

/// Compare analytic gradients against central differences with step `eps`
/// on at most `max_samples` trainable coordinates; returns the max relative
/// error. `run(store, with_grads)` must return the scalar loss and, when
/// `with_grads` is set, leave fresh gradients in the store.
pub fn grad_check(
    store: &mut ParamStore,
    run: &mut dyn FnMut(&mut ParamStore, bool) -> f64,
    eps: f64,
    max_samples: usize,
) -> f64 {
    store.zero_grads();
    run(store, true);
    let analytic: Vec<(String, Vec<f64>)> = store
        .iter()
        .filter(|p| p.trainable)
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();
    let mut coords: Vec<(String, usize)> = analytic
        .iter()
        .flat_map(|(name, g)| (0..g.len()).map(move |j| (name.clone(), j)))
        .collect();
    if coords.len() > max_samples {
        let mut rng = StdRng::seed_from_u64(0x6C);
        for i in 0..max_samples {
            let j = rng.gen_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(max_samples);
    }
    let mut worst = 0.0f64;
    for (name, j) in coords {
        let ga = analytic
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| g[j])
            .unwrap();
        let orig = store.get(&name).value.data[j];
        store.get_mut(&name).value.data[j] = orig + eps;
        let plus = run(store, false);
        store.get_mut(&name).value.data[j] = orig - eps;
        let minus = run(store, false);
        store.get_mut(&name).value.data[j] = orig;
        let gf = (plus - minus) / (2.0 * eps);
        let rel = (ga - gf).abs() / ga.abs().max(gf.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    worst
}

/// Max relative gradient error for each registered op on a fixed random
/// instance; consumed by tests and the CLI table.
pub fn op_error_table() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    out.push(("add", check(1, &[6, 6], |t, x| t.add(x[0], x[1]))));
    out.push(("sub", check(2, &[6, 6], |t, x| t.sub(x[0], x[1]))));
    out.push(("mul", check(3, &[6, 6], |t, x| t.mul(x[0], x[1]))));
    out.push(("neg", check(4, &[5], |t, x| t.neg(x[0]))));
    out.push(("scale", check(5, &[5], |t, x| t.scale(x[0], -1.7))));
    out.push(("exp", check(6, &[5], |t, x| t.exp(x[0]))));
    out.push(("sin", check(7, &[5], |t, x| t.sin(x[0]))));
    out.push(("cos", check(8, &[5], |t, x| t.cos(x[0]))));
    out.push(("softplus", check(9, &[5], |t, x| t.softplus(x[0]))));
    out.push(("gelu", check(10, &[5], |t, x| t.gelu(x[0]))));
    out.push(("matmul", check(11, &[12, 20], |t, x| {
        let a = t.reshape(x[0], vec![3, 4]);
        let b = t.reshape(x[1], vec![4, 5]);
        t.matmul(a, b)
    })));
    out.push(("add_row", check(12, &[12, 4], |t, x| {
        let a = t.reshape(x[0], vec![3, 4]);
        t.add_row(a, x[1])
    })));
    out.push(("sum", check(13, &[7], |t, x| t.sum(x[0]))));
    out.push(("mean", check(14, &[7], |t, x| t.mean(x[0]))));
    out.push(("reshape", check(15, &[6], |t, x| t.reshape(x[0], vec![2, 3]))));
    out.push(("transpose2", check(16, &[6], |t, x| {
        let a = t.reshape(x[0], vec![2, 3]);
        t.transpose2(a)
    })));
    out.push(("swap01", check(17, &[24], |t, x| t.swap01(x[0], 2, 3, 4))));
    out.push(("swap12", check(33, &[24], |t, x| t.swap12(x[0], 2, 3, 4))));
    out.push(("concat_rows", check(34, &[6, 9], |t, x| t.concat_rows(x[0], x[1], 2, 3))));
    out.push(("tile_outer", check(18, &[5], |t, x| t.tile_outer(x[0], 3))));
    out.push(("tile_mid", check(19, &[6], |t, x| t.tile_mid(x[0], 2, 4))));
    out.push(("tile_inner", check(20, &[5], |t, x| t.tile_inner(x[0], 3))));
    out.push(("sum_inner", check(21, &[12], |t, x| t.sum_inner(x[0], 4))));
    out.push(("select_mid", check(22, &[24], |t, x| t.select_mid(x[0], 2, 3, 1))));
    out.push(("stack2_mid", check(23, &[8, 8], |t, x| t.stack2_mid(x[0], x[1], 2))));
    out.push(("slice_rows", check(24, &[12], |t, x| t.slice_rows(x[0], 4, 1, 3))));
    out.push(("pad_rows", check(25, &[6], |t, x| t.pad_rows(x[0], 2, 4))));
    out.push(("complex_scan", check(26, &[16, 16, 16, 16], |t, x| {
        t.complex_scan(x[0], x[1], x[2], x[3], 8)
    })));
    out.push(("dense_scan", check(27, &[12], |t, x| {
        let a_bar = RealMatrix::from_rows(&[vec![0.5, 0.2], vec![-0.1, 0.6]]);
        let u = t.reshape(x[0], vec![6, 2]);
        t.dense_scan(u, &a_bar, &[0.7, -0.3])
    })));
    out.push(("fft", check(28, &[32], |t, x| {
        let a = t.reshape(x[0], vec![2, 2, 8]);
        t.fft_op(a, false)
    })));
    out.push(("ifft", check(29, &[32], |t, x| {
        let a = t.reshape(x[0], vec![2, 2, 8]);
        t.fft_op(a, true)
    })));
    out.push(("topk_mask", check(30, &[32], |t, x| {
        let a = t.reshape(x[0], vec![2, 2, 8]);
        t.topk_mask(a, 3)
    })));
    out.push(("cmul_vec", check(31, &[32, 8, 8], |t, x| {
        let a = t.reshape(x[0], vec![2, 2, 8]);
        t.cmul_vec(a, x[1], x[2])
    })));
    out.push(("normalize_cols", check(32, &[21], |t, x| {
        let a = t.reshape(x[0], vec![7, 3]);
        t.normalize_cols(a)
    })));
    out
}

/// Probe a single op: random leaves feed the op under test and the loss is
/// a fixed random linear functional of the output.
fn check(
    seed: u64,
    input_sizes: &[usize],
    build: impl Fn(&mut Tape, &[NodeId]) -> NodeId,
) -> f64 {
    let mut rng = StdRng::seed_from_u64(0xAD0 + seed);
    let mut store = ParamStore::new();
    for (i, &size) in input_sizes.iter().enumerate() {
        let data: Vec<f64> = (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        store.insert(&format!("x{i}"), Value::new(vec![size], data), true);
    }
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    let probe: std::cell::RefCell<Option<Vec<f64>>> = std::cell::RefCell::new(None);
    let mut run = |store: &mut ParamStore, with_grads: bool| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = names
            .iter()
            .map(|n| tape.leaf(store.get(n).value.clone()))
            .collect();
        let out = build(&mut tape, &leaves);
        let out_len = tape.value(out).len();
        let mut p = probe.borrow_mut();
        let weights = p.get_or_insert_with(|| {
            let mut prng = StdRng::seed_from_u64(0xBEEF + seed);
            (0..out_len).map(|_| prng.gen_range(-1.0..1.0)).collect()
        });
        let shape = tape.value(out).shape.clone();
        let w = tape.leaf(Value::new(shape, weights.clone()));
        let prod = tape.mul(out, w);
        let loss = tape.sum(prod);
        let value = tape.value(loss).data[0];
        if with_grads {
            tape.backward(loss).unwrap();
            store.zero_grads();
            for (n, id) in names.iter().zip(&leaves) {
                let g = tape.grad(*id).to_vec();
                store.accumulate(n, &g);
            }
        }
        value
    };
    grad_check(&mut store, &mut run, 1e-5, 200)
}

//! Three routes to evaluate an SSM — sequential recurrence (diagonal and
//! dense), FFT convolution with the impulse-response kernel, and a
//! work-efficient parallel associative scan — plus similarity transforms.

mod scan;

pub use scan::{scan_linear_recurrence, ScanElem};

use num_complex::Complex64;
use thiserror::Error;

use crate::discretize::discretize_zoh_euler_diag;
use crate::tensor::{fft, ifft, ComplexMatrix};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("transform is singular or too ill-conditioned (cond estimate {0:e})")]
    SingularTransform(f64),
}

/// Per-step diagonal parameters for one sequence: row-major (length, n_state).
#[derive(Debug, Clone)]
pub struct TimeVaryingParams {
    pub len: usize,
    pub n_state: usize,
    pub a_bar: Vec<Complex64>,
    pub b_bar: Vec<Complex64>,
    pub c: Vec<Complex64>,
}

impl TimeVaryingParams {
    pub fn new(
        len: usize,
        n_state: usize,
        a_bar: Vec<Complex64>,
        b_bar: Vec<Complex64>,
        c: Vec<Complex64>,
    ) -> Result<Self, EngineError> {
        let want = len * n_state;
        if a_bar.len() != want || b_bar.len() != want || c.len() != want {
            return Err(EngineError::ShapeMismatch(format!(
                "expected {want} entries per tensor, got {}/{}/{}",
                a_bar.len(),
                b_bar.len(),
                c.len()
            )));
        }
        Ok(Self { len, n_state, a_bar, b_bar, c })
    }

    /// Broadcast time-invariant parameters over a horizon.
    pub fn time_invariant(
        len: usize,
        a_bar: &[Complex64],
        b_bar: &[Complex64],
        c: &[Complex64],
    ) -> Self {
        let n = a_bar.len();
        let tile = |v: &[Complex64]| {
            let mut out = Vec::with_capacity(len * n);
            for _ in 0..len {
                out.extend_from_slice(v);
            }
            out
        };
        Self {
            len,
            n_state: n,
            a_bar: tile(a_bar),
            b_bar: tile(b_bar),
            c: tile(c),
        }
    }
}

/// State trajectory (length, n_state), zero initial state.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub len: usize,
    pub n_state: usize,
    pub x: Vec<Complex64>,
}

/// x_t = a_t * x_{t-1} + b_t * u_t elementwise, y_t = Re(sum_n c_{t,n} x_{t,n}).
pub fn recur_sequential(
    params: &TimeVaryingParams,
    u: &[f64],
) -> Result<(Vec<f64>, StateTrajectory), EngineError> {
    if u.len() != params.len {
        return Err(EngineError::ShapeMismatch(format!(
            "input length {} vs params length {}",
            u.len(),
            params.len
        )));
    }
    let n = params.n_state;
    let mut state = vec![Complex64::new(0.0, 0.0); n];
    let mut x = Vec::with_capacity(params.len * n);
    let mut y = Vec::with_capacity(params.len);
    for t in 0..params.len {
        let row = t * n;
        let mut out = Complex64::new(0.0, 0.0);
        for j in 0..n {
            state[j] = params.a_bar[row + j] * state[j] + params.b_bar[row + j] * u[t];
            out += params.c[row + j] * state[j];
        }
        x.extend_from_slice(&state);
        y.push(out.re);
    }
    Ok((y, StateTrajectory { len: params.len, n_state: n, x }))
}

/// Same recurrence with a dense state matrix; time-invariant parameters only.
pub fn recur_sequential_dense(
    a_bar: &ComplexMatrix,
    b_bar: &[Complex64],
    c: &[Complex64],
    u: &[f64],
) -> Result<Vec<f64>, EngineError> {
    let n = a_bar.rows;
    if !a_bar.is_square() || b_bar.len() != n || c.len() != n {
        return Err(EngineError::ShapeMismatch("dense system dims".into()));
    }
    let mut state = vec![Complex64::new(0.0, 0.0); n];
    let mut y = Vec::with_capacity(u.len());
    for &ut in u {
        let moved = a_bar.matvec(&state);
        for j in 0..n {
            state[j] = moved[j] + b_bar[j] * ut;
        }
        let out: Complex64 = c.iter().zip(&state).map(|(ci, xi)| ci * xi).sum();
        y.push(out.re);
    }
    Ok(y)
}

/// Parallel associative scan over the diagonal recurrence; output matches
/// the sequential path to roundoff.
pub fn scan_parallel(params: &TimeVaryingParams, u: &[f64]) -> Result<Vec<f64>, EngineError> {
    if u.len() != params.len {
        return Err(EngineError::ShapeMismatch("input length".into()));
    }
    let n = params.n_state;
    let l = params.len;
    let mut y = vec![0.0; l];
    let mut lane: Vec<ScanElem> = Vec::with_capacity(l);
    for j in 0..n {
        lane.clear();
        for t in 0..l {
            lane.push(ScanElem {
                a: params.a_bar[t * n + j],
                b: params.b_bar[t * n + j] * u[t],
            });
        }
        let states = scan_linear_recurrence(&lane);
        for t in 0..l {
            y[t] += (params.c[t * n + j] * states[t]).re;
        }
    }
    Ok(y)
}

/// Impulse-response kernel K[l] = Re(sum_n c_n a_bar_n^l b_bar_n) from a
/// time-invariant diagonal system discretized at step `delta`.
pub fn conv_kernel(
    lambda: &[Complex64],
    b: &[Complex64],
    c: &[Complex64],
    delta: f64,
    len: usize,
) -> Vec<f64> {
    let (a_bar, b_bar) = discretize_zoh_euler_diag(lambda, b, delta);
    let n = lambda.len();
    let mut powers: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); n];
    let mut kernel = Vec::with_capacity(len);
    for _ in 0..len {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            acc += c[j] * powers[j] * b_bar[j];
        }
        kernel.push(acc.re);
        for j in 0..n {
            powers[j] *= a_bar[j];
        }
    }
    kernel
}

/// Causal convolution y = K * u via FFT with zero padding to 2L.
pub fn conv_apply(kernel: &[f64], u: &[f64]) -> Vec<f64> {
    let l = u.len();
    assert_eq!(kernel.len(), l, "kernel and input lengths must agree");
    let padded = (2 * l).next_power_of_two();
    let lift = |v: &[f64]| {
        let mut out = vec![Complex64::new(0.0, 0.0); padded];
        for (o, &x) in out.iter_mut().zip(v) {
            *o = Complex64::new(x, 0.0);
        }
        out
    };
    let kf = fft(&lift(kernel));
    let uf = fft(&lift(u));
    let prod: Vec<Complex64> = kf.iter().zip(&uf).map(|(a, b)| a * b).collect();
    let full = ifft(&prod);
    full.iter().take(l).map(|z| z.re).collect()
}

/// Similarity transform (A, B, C) -> (T^-1 A T, T^-1 B, C T); preserves the
/// input-output map.
pub fn conjugate_system(
    t: &ComplexMatrix,
    a: &ComplexMatrix,
    b: &[Complex64],
    c: &[Complex64],
) -> Result<(ComplexMatrix, Vec<Complex64>, Vec<Complex64>), EngineError> {
    let n = t.rows;
    let t_inv = invert(t)?;
    let cond = t.frobenius_norm() * t_inv.frobenius_norm();
    if cond > 1e6 {
        return Err(EngineError::SingularTransform(cond));
    }
    let a_new = t_inv.matmul(a).matmul(t);
    let b_new = t_inv.matvec(b);
    let mut c_new = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            acc += c[i] * t[(i, j)];
        }
        c_new[j] = acc;
    }
    Ok((a_new, b_new, c_new))
}

fn invert(m: &ComplexMatrix) -> Result<ComplexMatrix, EngineError> {
    let n = m.rows;
    let mut a = m.clone();
    let mut inv = ComplexMatrix::identity(n);
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[(col, col)].norm();
        for r in (col + 1)..n {
            if a[(r, col)].norm() > best {
                best = a[(r, col)].norm();
                pivot = r;
            }
        }
        if best < 1e-300 {
            return Err(EngineError::SingularTransform(f64::INFINITY));
        }
        if pivot != col {
            for j in 0..n {
                a.data.swap(col * n + j, pivot * n + j);
                inv.data.swap(col * n + j, pivot * n + j);
            }
        }
        let scale = Complex64::new(1.0, 0.0) / a[(col, col)];
        for j in 0..n {
            a[(col, j)] *= scale;
            inv[(col, j)] *= scale;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[(r, col)];
            if factor.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..n {
                let av = a[(col, j)];
                let iv = inv[(col, j)];
                a[(r, j)] -= factor * av;
                inv[(r, j)] -= factor * iv;
            }
        }
    }
    Ok(inv)
}

/// Characteristic polynomial coefficients by Faddeev-LeVerrier, leading
/// coefficient first. Small N only; used by similarity tests.
pub fn char_poly(a: &ComplexMatrix) -> Vec<Complex64> {
    let n = a.rows;
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    let mut m = ComplexMatrix::zeros(n, n);
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I
        let mut am = a.matmul(&m);
        let c_prev = *coeffs.last().unwrap();
        for i in 0..n {
            am[(i, i)] += c_prev;
        }
        m = am;
        let prod = a.matmul(&m);
        let trace: Complex64 = (0..n).map(|i| prod[(i, i)]).sum();
        coeffs.push(-trace / k as f64);
    }
    coeffs
}

#[cfg(test)]
mod tests;

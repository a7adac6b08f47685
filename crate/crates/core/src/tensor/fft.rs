//! Radix-2 FFT with an O(n^2) DFT fallback for arbitrary lengths.
//!
//! Forward transform is unnormalized; the inverse carries the 1/n factor.

use num_complex::Complex64;
use std::f64::consts::PI;

pub fn fft(x: &[Complex64]) -> Vec<Complex64> {
    if x.len().is_power_of_two() {
        let mut buf = x.to_vec();
        radix2(&mut buf, false);
        buf
    } else {
        dft(x)
    }
}

pub fn ifft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut out = if n.is_power_of_two() {
        let mut buf = x.to_vec();
        radix2(&mut buf, true);
        buf
    } else {
        idft_unnormalized(x)
    };
    let scale = 1.0 / n as f64;
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

/// Direct O(n^2) DFT, used for non-power-of-two lengths (n <= 4096).
pub fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    assert!(n <= 4096, "direct DFT limited to length 4096");
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &v) in x.iter().enumerate() {
            let angle = -2.0 * PI * (k * j % n) as f64 / n as f64;
            acc += v * Complex64::new(angle.cos(), angle.sin());
        }
        *o = acc;
    }
    out
}

pub fn idft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let mut out = idft_unnormalized(x);
    let scale = 1.0 / n.max(1) as f64;
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

fn idft_unnormalized(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    assert!(n <= 4096, "direct DFT limited to length 4096");
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &v) in x.iter().enumerate() {
            let angle = 2.0 * PI * (k * j % n) as f64 / n as f64;
            acc += v * Complex64::new(angle.cos(), angle.sin());
        }
        *o = acc;
    }
    out
}

/// In-place iterative Cooley-Tukey, decimation in time.
fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i as u32).reverse_bits() >> (32 - bits);
        let j = j as usize;
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let wlen = Complex64::new(ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = buf[start + k];
                let t = buf[start + k + len / 2] * w;
                buf[start + k] = u + t;
                buf[start + k + len / 2] = u - t;
                w *= wlen;
            }
        }
        len <<= 1;
    }
}

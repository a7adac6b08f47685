//! Work-efficient associative scan for first-order linear recurrences.
//!
//! Elements (a, b) represent the affine map x -> a*x + b; composition is
//! (a2, b2) after (a1, b1) = (a2*a1, a2*b1 + b2). An inclusive scan of
//! the per-step elements yields the state trajectory from x_0 = 0.

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanElem {
    pub a: Complex64,
    pub b: Complex64,
}

impl ScanElem {
    pub const IDENTITY: ScanElem = ScanElem {
        a: Complex64::new(1.0, 0.0),
        b: Complex64::new(0.0, 0.0),
    };

    /// `self` applied after `earlier`.
    pub fn after(&self, earlier: &ScanElem) -> ScanElem {
        ScanElem {
            a: self.a * earlier.a,
            b: self.a * earlier.b + self.b,
        }
    }
}

/// Inclusive scan: out[t] = x_{t+1} starting from x_0 = 0, i.e. the
/// composed map applied to zero. Blelloch up-sweep/down-sweep over a
/// power-of-two padded tree; deterministic for a fixed input.
pub fn scan_linear_recurrence(elems: &[ScanElem]) -> Vec<Complex64> {
    let l = elems.len();
    if l == 0 {
        return Vec::new();
    }
    let size = l.next_power_of_two();
    let mut tree = vec![ScanElem::IDENTITY; size];
    tree[..l].copy_from_slice(elems);

    // up-sweep: tree[i] at stride d holds the composition of its block
    let mut d = 1;
    while d < size {
        let mut i = 2 * d - 1;
        while i < size {
            tree[i] = tree[i].after(&tree[i - d]);
            i += 2 * d;
        }
        d *= 2;
    }

    // down-sweep: convert to exclusive prefix compositions
    tree[size - 1] = ScanElem::IDENTITY;
    let mut d = size / 2;
    while d >= 1 {
        let mut i = 2 * d - 1;
        while i < size {
            let left = tree[i - d];
            tree[i - d] = tree[i];
            tree[i] = left.after(&tree[i]);
            i += 2 * d;
        }
        d /= 2;
    }

    // inclusive value at t is (elem_t after exclusive_prefix_t) applied to 0
    elems
        .iter()
        .zip(tree.iter())
        .map(|(e, prefix)| e.after(prefix).b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_elems(rng: &mut StdRng, l: usize) -> Vec<ScanElem> {
        (0..l)
            .map(|_| ScanElem {
                a: c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                b: c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            })
            .collect()
    }

    #[test]
    fn single_element() {
        let e = ScanElem { a: c(0.5, 0.0), b: c(2.0, 0.0) };
        assert_eq!(scan_linear_recurrence(&[e]), vec![c(2.0, 0.0)]);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = StdRng::seed_from_u64(42);
        for &l in &[2usize, 3, 64, 100, 257] {
            let elems = random_elems(&mut rng, l);
            let scanned = scan_linear_recurrence(&elems);
            let mut x = c(0.0, 0.0);
            for (t, e) in elems.iter().enumerate() {
                x = e.a * x + e.b;
                assert!(
                    (scanned[t] - x).norm() < 1e-12,
                    "mismatch at t={t} (len {l})"
                );
            }
        }
    }

    #[test]
    fn combine_is_associative() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..200 {
            let elems = random_elems(&mut rng, 3);
            let (p, q, r) = (elems[0], elems[1], elems[2]);
            let left = r.after(&q).after(&p);
            let right = r.after(&q.after(&p));
            assert!((left.a - right.a).norm() < 1e-14);
            assert!((left.b - right.b).norm() < 1e-14);
        }
    }
}

use num_complex::Complex64;

use super::TensorError;

/// Keep the k largest-magnitude entries, zero the rest.
///
/// Ties are broken toward the lower index.
pub fn topk_by_magnitude(x: &[Complex64], k: usize) -> Result<Vec<Complex64>, TensorError> {
    if k == 0 {
        return Err(TensorError::ZeroK);
    }
    let keep = k.min(x.len());
    let mut order: Vec<usize> = (0..x.len()).collect();
    // stable sort by descending magnitude keeps lower indices on ties
    order.sort_by(|&i, &j| x[j].norm().partial_cmp(&x[i].norm()).unwrap());
    let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
    for &i in order.iter().take(keep) {
        out[i] = x[i];
    }
    Ok(out)
}

/// Boolean mask version of [`topk_by_magnitude`], used by the
/// straight-through gradient path.
pub fn topk_mask(x: &[Complex64], k: usize) -> Result<Vec<bool>, TensorError> {
    if k == 0 {
        return Err(TensorError::ZeroK);
    }
    let keep = k.min(x.len());
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[j].norm().partial_cmp(&x[i].norm()).unwrap());
    let mut mask = vec![false; x.len()];
    for &i in order.iter().take(keep) {
        mask[i] = true;
    }
    Ok(mask)
}

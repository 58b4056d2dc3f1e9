//! Dense layers gated by a near-binary learned mask.
//!
//! Each weight has a pair of logits `(active, pruned)`; its gate is the
//! "active" entry of `softmax([active, pruned] / temperature)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Active probability of one logit pair.
#[inline]
pub fn mask_gate(active: f64, pruned: f64, temperature: f64) -> f64 {
    let z = (active - pruned) / temperature;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Elementwise gates `M'` for matrices of paired logits.
pub fn mask_matrix(active: &DMatrix<f64>, pruned: &DMatrix<f64>, temperature: f64) -> Result<DMatrix<f64>> {
    if active.shape() != pruned.shape() {
        return Err(Error::InvalidArgument("mask logit shapes differ".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument("mask temperature must be positive".into()));
    }
    Ok(active.zip_map(pruned, |a, p| mask_gate(a, p, temperature)))
}

/// `(W ⊙ M') x`.
pub fn masked_forward(
    weights: &DMatrix<f64>,
    active: &DMatrix<f64>,
    pruned: &DMatrix<f64>,
    temperature: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let mask = mask_matrix(active, pruned, temperature)?;
    if mask.shape() != weights.shape() {
        return Err(Error::InvalidArgument("mask and weight shapes differ".into()));
    }
    check_len(weights.ncols(), x.len())?;
    let effective = weights.component_mul(&mask);
    Ok((effective * DVector::from_column_slice(x)).as_slice().to_vec())
}

/// Mean gate value over all entries: the fraction of weights in use.
pub fn mask_usage(active: &DMatrix<f64>, pruned: &DMatrix<f64>, temperature: f64) -> Result<f64> {
    let mask = mask_matrix(active, pruned, temperature)?;
    Ok(mask.mean())
}

/// Flat-slice form used by the policy: `out[i] = sum_j w[i,j] gate[i,j] x[j]`.
pub(crate) fn masked_matvec(
    m: usize,
    n: usize,
    weights: &[f64],
    active: &[f64],
    pruned: &[f64],
    temperature: f64,
    x: &[f64],
) -> Vec<f64> {
    (0..m)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let k = i * n + j;
                    weights[k] * mask_gate(active[k], pruned[k], temperature) * x[j]
                })
                .sum()
        })
        .collect()
}

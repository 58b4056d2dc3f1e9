use nalgebra::DMatrix;

use crate::error::{check_len, Result};

/// Builds the `m x n` Toeplitz matrix with `T[i][j] = first_col[i - j]` on and
/// below the diagonal and `T[i][j] = first_row_tail[j - i - 1]` above it.
pub fn toeplitz_expand(first_col: &[f64], first_row_tail: &[f64]) -> DMatrix<f64> {
    let m = first_col.len();
    let n = first_row_tail.len() + 1;
    DMatrix::from_fn(m, n, |i, j| {
        if i >= j {
            first_col[i - j]
        } else {
            first_row_tail[j - i - 1]
        }
    })
}

/// Weights of an `m x n` Toeplitz layer: one value per diagonal.
pub fn toeplitz_weight_count(m: usize, n: usize) -> usize {
    m + n - 1
}

/// `T x` without materializing the matrix; `params` is `first_col ++ first_row_tail`.
pub(crate) fn toeplitz_matvec(m: usize, n: usize, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len(toeplitz_weight_count(m, n), params.len())?;
    check_len(n, x.len())?;
    let (col, tail) = params.split_at(m);
    Ok((0..m)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let w = if i >= j { col[i - j] } else { tail[j - i - 1] };
                    w * x[j]
                })
                .sum()
        })
        .collect())
}

//! Small dense linear-algebra kernels on row-major `f64` slices.
//!
//! Only what the Gaussian likelihoods need: Cholesky factorization of a
//! symmetric positive definite matrix and the two triangular solves.

use crate::error::{Error, Result};

/// Lower Cholesky factor `L` with `a = L Lᵀ`. `a` is `n×n` row-major.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::dim("cholesky", format!("expected {} values, got {}", n * n, a.len())));
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::domain("cholesky", "matrix is not positive definite"));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L y = b` in place for lower-triangular `L`.
pub fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ x = y` in place for lower-triangular `L`.
pub fn backward_solve(l: &[f64], n: usize, y: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
}

/// Solves `(L Lᵀ) x = b` in place.
pub fn chol_solve(l: &[f64], n: usize, b: &mut [f64]) {
    forward_solve(l, n, b);
    backward_solve(l, n, b);
}

/// Solves `(L Lᵀ) X = B` for an `n×cols` right-hand side, column by column.
pub fn chol_solve_matrix(l: &[f64], n: usize, b: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * cols];
    let mut col = vec![0.0; n];
    for c in 0..cols {
        for r in 0..n {
            col[r] = b[r * cols + c];
        }
        chol_solve(l, n, &mut col);
        for r in 0..n {
            out[r * cols + c] = col[r];
        }
    }
    out
}

/// `log|L Lᵀ|` from the Cholesky factor.
pub fn chol_logdet(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0
}

/// `C Cᵀ + I` for a `d×r` factor.
pub fn factor_covariance(c: &[f64], d: usize, r: usize) -> Vec<f64> {
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let v: f64 = (0..r).map(|k| c[i * r + k] * c[j * r + k]).sum();
            s[i * d + j] = v;
            s[j * d + i] = v;
        }
        s[i * d + i] += 1.0;
    }
    s
}

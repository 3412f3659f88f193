//! Weighted ridge regression on binary design rows via the normal equations.

use crate::error::{Error, Result};

/// Solution `[intercept, b_1, .., b_S]` of
/// `min sum_i w_i (y_i - b0 - z_i·b)^2 + lambda |b|^2` (intercept unpenalized).
pub fn weighted_ridge(rows: &[Vec<bool>], y: &[f64], w: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let Some(first) = rows.first() else {
        return Err(Error::Input("regression needs at least one sample".into()));
    };
    if rows.len() != y.len() || rows.len() != w.len() {
        return Err(Error::Input("rows, targets and weights differ in length".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Input(format!("ridge_lambda must be non-negative, got {lambda}")));
    }
    let d = first.len() + 1;
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let mut active = Vec::with_capacity(d);
    for ((row, &yi), &wi) in rows.iter().zip(y).zip(w) {
        if row.len() + 1 != d {
            return Err(Error::Input("design rows have different widths".into()));
        }
        active.clear();
        active.push(0);
        active.extend(row.iter().enumerate().filter(|(_, &on)| on).map(|(j, _)| j + 1));
        for &p in &active {
            b[p] += wi * yi;
            for &q in &active {
                a[p * d + q] += wi;
            }
        }
    }
    for j in 1..d {
        a[j * d + j] += lambda;
    }
    cholesky_solve(&mut a, &mut b, d).map_err(|_| {
        if lambda == 0.0 {
            Error::Numeric(
                "surrogate regression is singular; set a positive ridge_lambda".into(),
            )
        } else {
            Error::Numeric("surrogate regression is numerically singular".into())
        }
    })?;
    Ok(b)
}

/// In-place Cholesky factorization and solve of the SPD system `a x = b`.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], d: usize) -> std::result::Result<(), ()> {
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-13;
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > tol) {
            return Err(());
        }
        let l = diag.sqrt();
        a[j * d + j] = l;
        for i in j + 1..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / l;
        }
    }
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * d + k] * b[k];
        }
        b[i] = v / a[i * d + i];
    }
    for i in (0..d).rev() {
        let mut v = b[i];
        for k in i + 1..d {
            v -= a[k * d + i] * b[k];
        }
        b[i] = v / a[i * d + i];
    }
    Ok(())
}

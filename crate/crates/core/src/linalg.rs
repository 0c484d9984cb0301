//! Small dense linear-algebra helpers shared by the modules.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// Lower Cholesky factor `C` with `C Cᵀ = sigma`.
pub fn cholesky(sigma: ArrayView2<'_, f64>) -> Result<Array2<f64>, LinalgError> {
    let (n, cols) = sigma.dim();
    if n != cols {
        return Err(LinalgError::NotSquare { rows: n, cols });
    }
    let mut c = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = sigma[[j, j]];
        for p in 0..j {
            d -= c[[j, p]] * c[[j, p]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        c[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = sigma[[i, j]];
            for p in 0..j {
                s -= c[[i, p]] * c[[j, p]];
            }
            c[[i, j]] = s / d;
        }
    }
    Ok(c)
}

/// `out[i] = sum_j w[i, j] * x[j]`, summed in index order.
///
/// The fixed order matters for the memorizer networks, whose exactness
/// argument relies on which partial sums are formed.
pub fn matvec_ordered(w: ArrayView2<'_, f64>, x: ArrayView1<'_, f64>) -> Array1<f64> {
    debug_assert_eq!(w.ncols(), x.len());
    let dot = |r: &[f64], xs: &[f64]| r.iter().zip(xs).fold(0.0, |acc, (a, b)| acc + a * b);
    match (w.as_slice(), x.as_slice()) {
        (Some(ws), Some(xs)) if !xs.is_empty() => ws.chunks_exact(xs.len()).map(|r| dot(r, xs)).collect(),
        _ => w.rows().into_iter().map(|row| row.iter().zip(x.iter()).fold(0.0, |acc, (a, b)| acc + a * b)).collect(),
    }
}

/// `wᵀ v` in index order.
pub fn matvec_t_ordered(w: ArrayView2<'_, f64>, v: ArrayView1<'_, f64>) -> Array1<f64> {
    debug_assert_eq!(w.nrows(), v.len());
    let mut out = Array1::<f64>::zeros(w.ncols());
    for (row, &vi) in w.rows().into_iter().zip(v.iter()) {
        if vi == 0.0 {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row.iter()) {
            *o += a * vi;
        }
    }
    out
}

/// Largest singular value by power iteration on `WᵀW`.
///
/// Runs at least `min_iters` iterations and stops once the relative change
/// of the estimate drops below `tol` (or after `max_iters`).
pub fn spectral_norm(w: ArrayView2<'_, f64>, min_iters: usize, max_iters: usize, tol: f64) -> f64 {
    let cols = w.ncols();
    if cols == 0 || w.nrows() == 0 {
        return 0.0;
    }
    // deterministic start with no special symmetry
    let mut v: Array1<f64> = (0..cols).map(|i| 1.0 + 0.01 * ((i * 7919) % 101) as f64).collect();
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut est = 0.0;
    for it in 0..max_iters {
        let wv = w.dot(&v);
        let mut next = w.t().dot(&wv);
        let nn = next.dot(&next).sqrt();
        if nn == 0.0 {
            return 0.0;
        }
        next /= nn;
        let new_est = wv.dot(&wv).sqrt();
        v = next;
        let converged = (new_est - est).abs() <= tol * new_est.max(f64::MIN_POSITIVE);
        est = new_est;
        if it + 1 >= min_iters && converged {
            break;
        }
    }
    // one more application with the final vector gives the Rayleigh value
    let wv = w.dot(&v);
    est.max(wv.dot(&wv).sqrt())
}

/// Extreme eigenvalues `(min, max)` of a symmetric positive semidefinite matrix.
pub fn sym_extreme_eigenvalues(s: ArrayView2<'_, f64>) -> (f64, f64) {
    let n = s.nrows();
    // for symmetric PSD matrices the spectral norm is the top eigenvalue
    let top = spectral_norm(s, 50, 5000, 1e-12);
    let shifted = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            top - s[[i, j]]
        } else {
            -s[[i, j]]
        }
    });
    let gap = spectral_norm(shifted.view(), 50, 5000, 1e-12);
    ((top - gap).max(0.0), top)
}

/// Neumaier-compensated sum; reduction order affects the result only at
/// the level of the final rounding.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and standard error of a sample.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Median of a non-empty sample (average of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn norm2(x: ArrayView1<'_, f64>) -> f64 {
    x.dot(&x).sqrt()
}

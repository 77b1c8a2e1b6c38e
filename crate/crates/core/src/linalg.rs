//! Small dense helpers on top of nalgebra plus a coordinate-format sparse
//! matrix used by the solver's per-iteration products.

use nalgebra::{DMatrix, DVector, Dyn, SVD};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Reads only the lower triangle of `a`. Fails with the index of the first
/// non-positive pivot.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape(format!("cholesky of {}x{} matrix", n, a.ncols())));
    }
    let mut l = a.lower_triangle();
    for j in 0..n {
        for k in 0..j {
            let ljk = l[(j, k)];
            if ljk != 0.0 {
                for i in j..n {
                    l[(i, j)] -= l[(i, k)] * ljk;
                }
            }
        }
        let d = l[(j, j)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Factorization { pivot: j, value: d });
        }
        let d = d.sqrt();
        for i in j..n {
            l[(i, j)] /= d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    let n = l.nrows();
    for i in 0..n {
        let mut v = x[i];
        for k in 0..i {
            v -= l[(i, k)] * x[k];
        }
        x[i] = v / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut v = x[i];
        for k in (i + 1)..n {
            v -= l[(k, i)] * x[k];
        }
        x[i] = v / l[(i, i)];
    }
    x
}

/// Copy of `m` with entries below `1e-30` times the largest magnitude set to
/// zero. The change is far below double precision relative to `‖m‖`, and
/// entries spanning hundreds of decades make nalgebra's iterative
/// decompositions return NaN or never converge.
pub fn flush_tiny(m: &DMatrix<f64>) -> DMatrix<f64> {
    let floor = 1e-30 * m.amax();
    m.map(|v| if v.abs() < floor { 0.0 } else { v })
}

/// Thin SVD with an iteration cap, applied to [`flush_tiny`] of `m`. When the direct iteration stalls the
/// transpose is tried, then an SVD of the triangular factor of a QR
/// decomposition.
pub fn svd(m: &DMatrix<f64>, want_u: bool, want_v: bool) -> Result<SVD<f64, Dyn, Dyn>> {
    const EPS: f64 = f64::EPSILON;
    const ITERS: usize = 2_000;
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Conditioning("SVD of a matrix with non-finite entries".into()));
    }
    let a = flush_tiny(m);
    if let Some(s) = SVD::try_new(a.clone(), want_u, want_v, EPS, ITERS) {
        return Ok(s);
    }
    if let Some(t) = SVD::try_new(a.transpose(), want_v, want_u, EPS, ITERS) {
        return Ok(SVD {
            u: t.v_t.map(|v| v.transpose()),
            v_t: t.u.map(|u| u.transpose()),
            singular_values: t.singular_values,
        });
    }
    if a.nrows() > a.ncols() {
        let qr = a.qr();
        let (q, r) = (qr.q(), qr.r());
        if let Some(inner) = SVD::try_new(r, want_u, want_v, EPS, ITERS) {
            return Ok(SVD { u: inner.u.map(|u| q * u), v_t: inner.v_t, singular_values: inner.singular_values });
        }
    }
    Err(Error::Conditioning(format!("SVD of a {}x{} matrix did not converge", m.nrows(), m.ncols())))
}

/// Smallest and largest singular values. Empty matrices report `(0, 0)`.
pub fn singular_value_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (0.0, 0.0);
    }
    let Ok(svd) = svd(m, false, false) else {
        return (0.0, f64::INFINITY);
    };
    let sv = svd.singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, max)
}

/// True when the columns of `m` are linearly independent up to the given
/// relative tolerance on the singular values.
pub fn has_full_column_rank(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.ncols() == 0 {
        return true;
    }
    if m.ncols() > m.nrows() {
        return false;
    }
    let (min, max) = singular_value_range(m);
    max > 0.0 && min > rel_tol * max
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j && m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// `a ⊗ I_n`: each entry of `a` becomes an `n x n` diagonal block.
pub fn kron_identity(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() * n, a.ncols() * n);
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let v = a[(i, j)];
            if v != 0.0 {
                for d in 0..n {
                    out[(i * n + d, j * n + d)] = v;
                }
            }
        }
    }
    out
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "vstack column mismatch");
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

pub fn vcat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned())
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn mat_inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Coordinate-format sparse matrix. Built once from a dense matrix by
/// dropping exact zeros.
#[derive(Debug, Clone)]
pub struct SparseMat {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMat {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self {
            nrows: m.nrows(),
            ncols: m.ncols(),
            entries,
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `self * x`
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        for &(i, j, v) in &self.entries {
            out[i] += v * x[j];
        }
        out
    }

    /// `selfᵀ * x`
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for &(i, j, v) in &self.entries {
            out[j] += v * x[i];
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

//! Shape constraints on `x = L y`, written as `G x ≤ 0` and mapped to
//! polyhedra on `y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ipsolver::Polyhedron;
use crate::linalg::vstack;

/// Lower-triangular Toeplitz first-difference matrix with first column
/// `[1, −1, 0, …]ᵀ`.
pub fn difference_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if i == j + 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// `−I`: `x ≥ 0`.
pub fn nonneg_rows(n: usize) -> DMatrix<f64> {
    -DMatrix::identity(n, n)
}

/// Rows encoding `x ≥ 0`, `x₁ ≤ … ≤ x_k` and `x_k ≥ … ≥ x_n` (1-based mode
/// `k`).
pub fn unimodal_rows(n: usize, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 || k > n {
        return Err(Error::ParameterDomain(format!("mode index {k} outside 1..={n}")));
    }
    let d = difference_matrix(n);
    let mut rows: Vec<DMatrix<f64>> = Vec::new();
    // x_i − x_{i−1} ≥ 0 for i ≤ k
    if k > 1 {
        rows.push(-d.rows(1, k - 1).into_owned());
    }
    // x_i − x_{i−1} ≤ 0 for i > k
    if k < n {
        rows.push(d.rows(k, n - k).into_owned());
    }
    rows.push(nonneg_rows(n));
    Ok(rows.iter().skip(1).fold(rows[0].clone(), |acc, r| vstack(&acc, r)))
}

/// Rows encoding `(−1)^ℓ Δ^ℓ x ≥ 0` for `ℓ = 0..=order`, where `Δ^ℓ` keeps
/// only the differences that do not reach before `x₁`.
pub fn complete_monotone_rows(n: usize, order: usize) -> Result<DMatrix<f64>> {
    if order == 0 {
        return Err(Error::ParameterDomain("complete monotonicity order must be at least 1".into()));
    }
    let d = difference_matrix(n);
    let mut out = nonneg_rows(n);
    let mut dl = DMatrix::identity(n, n);
    for ell in 1..=order.min(n.saturating_sub(1)) {
        dl = &d * &dl;
        let sign = if ell % 2 == 1 { 1.0 } else { -1.0 };
        out = vstack(&out, &(dl.rows(ell, n - ell) * sign));
    }
    Ok(out)
}

fn on_y(g: DMatrix<f64>, l: &DMatrix<f64>) -> Polyhedron {
    let p = g.nrows();
    Polyhedron::from_rows(g * l, DVector::zeros(p)).expect("shapes agree by construction")
}

/// `x = L y ≥ 0`.
pub fn constraints_nonneg(l: &DMatrix<f64>) -> Polyhedron {
    on_y(nonneg_rows(l.nrows()), l)
}

/// Nonnegative, nondecreasing through `k`, nonincreasing after.
pub fn constraints_unimodal(l: &DMatrix<f64>, k: usize) -> Result<Polyhedron> {
    Ok(on_y(unimodal_rows(l.nrows(), k)?, l))
}

/// Alternating-sign differences of orders `0..=order`.
pub fn constraints_complete_monotone(l: &DMatrix<f64>, order: usize) -> Result<Polyhedron> {
    Ok(on_y(complete_monotone_rows(l.nrows(), order)?, l))
}

/// `lower ≤ x ≤ upper` componentwise.
pub fn constraints_box(l: &DMatrix<f64>, lower: f64, upper: f64) -> Result<Polyhedron> {
    if !(lower < upper) {
        return Err(Error::ParameterDomain(format!("empty box [{lower}, {upper}]")));
    }
    let n = l.nrows();
    let mut g = Vec::new();
    let mut h = Vec::new();
    if upper.is_finite() {
        g.push(l.clone());
        h.extend(std::iter::repeat(upper).take(n));
    }
    if lower.is_finite() {
        g.push(-l);
        h.extend(std::iter::repeat(-lower).take(n));
    }
    if g.is_empty() {
        return Ok(Polyhedron::none(n));
    }
    let g = g.iter().skip(1).fold(g[0].clone(), |acc, r| vstack(&acc, r));
    Polyhedron::from_rows(g, DVector::from_vec(h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feasible(g: &DMatrix<f64>, x: &[f64]) -> bool {
        (g * DVector::from_row_slice(x)).iter().all(|&v| v <= 1e-12)
    }

    #[test]
    fn difference_matrix_shape() {
        let d = difference_matrix(3);
        assert_eq!(d, DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0]));
    }

    #[test]
    fn unimodal_examples() {
        let g = unimodal_rows(5, 3).unwrap();
        assert!(feasible(&g, &[1.0, 2.0, 3.0, 2.0, 1.0]));
        assert!(!feasible(&g, &[1.0, 3.0, 2.0, 4.0, 1.0]));
        let g1 = unimodal_rows(3, 1).unwrap();
        assert!(feasible(&g1, &[3.0, 2.0, 2.0]));
        assert!(!feasible(&g1, &[1.0, 2.0, 0.0]));
        assert!(!feasible(&g1, &[1.0, 0.5, -0.1]));
        assert!(unimodal_rows(3, 0).is_err());
        assert!(unimodal_rows(3, 4).is_err());
        assert!(feasible(&unimodal_rows(3, 3).unwrap(), &[0.0, 1.0, 2.0]));
    }

    #[test]
    fn complete_monotone_examples() {
        let x: Vec<f64> = (1..=20).map(|t| 1.0 / ((t as f64 + 2.0).powi(2))).collect();
        assert!(feasible(&complete_monotone_rows(20, 5).unwrap(), &x));
        assert!(!feasible(&complete_monotone_rows(2, 5).unwrap(), &[1.0, 2.0]));
        assert!(feasible(&complete_monotone_rows(4, 1).unwrap(), &[3.0, 3.0, 1.0, 0.0]));
        // convex violation caught at order 2
        assert!(!feasible(&complete_monotone_rows(4, 2).unwrap(), &[3.0, 2.9, 0.5, 0.4]));
    }

    #[test]
    fn polyhedra_on_y() {
        let l = DMatrix::from_element(1, 1, 2.0);
        let p = constraints_nonneg(&l);
        assert!(p.contains(&DVector::from_element(1, 0.5), 0.0));
        assert!(!p.contains(&DVector::from_element(1, -0.5), 1e-9));
        let b = constraints_box(&l, -1.0, 1.0).unwrap();
        assert!(b.contains(&DVector::from_element(1, 0.5), 0.0));
        assert!(!b.contains(&DVector::from_element(1, 0.6), 1e-9));
        assert!(constraints_box(&l, 1.0, 1.0).is_err());
    }
}

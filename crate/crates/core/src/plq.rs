//! Piecewise linear-quadratic functions in dual form
//!
//! ```text
//! ρ(y) = sup_{u : Cᵀu ≤ c} ⟨u, b + B y⟩ − ½ ⟨u, M u⟩
//! ```
//!
//! A [`PlqRep`] stores `(c, C, b, B, M)`. The builders cover the scalar
//! penalties used by the estimators (L2, L1, Huber, Vapnik) and the calculus
//! operations ([`lift_scalar`], [`compose_affine`], [`add`], [`scale`]) build
//! compound objectives out of them. [`evaluate`] computes the supremum
//! directly and is used as the reference when checking assembled problems.
//!
//! An unbounded dual block (`U = ℝᵏ`) is written as a single constraint row
//! `0ᵀu ≤ 1`, so `l ≥ 1` for every representation built here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, has_full_column_rank, is_diagonal, kron_identity, vcat, vstack};

/// Relative tolerance for the PSD check on `M`.
pub const PSD_TOL: f64 = 1e-10;
/// Relative tolerance on singular values for injectivity of `B`.
pub const INJECTIVITY_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_COUPLED_CONSTRAINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlqDims {
    /// Dual dimension (length of `u` and `b`).
    pub k: usize,
    /// Number of dual-domain constraints (length of `c`).
    pub l: usize,
    /// Primal dimension (length of `y`).
    pub n: usize,
}

/// Dual representation `(c, C, b, B, M)` of a PLQ function.
#[derive(Debug, Clone, PartialEq)]
pub struct PlqRep {
    c: DVector<f64>,
    cmat: DMatrix<f64>,
    b: DVector<f64>,
    bmat: DMatrix<f64>,
    m: DMatrix<f64>,
}

impl PlqRep {
    /// Builds a representation and checks every invariant: shapes, `M`
    /// symmetric positive semidefinite and `B` injective.
    ///
    /// `M` within `1e-12` of symmetric is symmetrized on the way in so the
    /// stored matrix is exactly symmetric.
    pub fn new(
        c: DVector<f64>,
        cmat: DMatrix<f64>,
        b: DVector<f64>,
        bmat: DMatrix<f64>,
        m: DMatrix<f64>,
    ) -> Result<Self> {
        check_shapes(&c, &cmat, &b, &bmat, &m)?;
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * m.amax().max(1.0) {
            return Err(Error::InvalidRep(format!("M is not symmetric (max asymmetry {asym:.3e})")));
        }
        let m = (&m + m.transpose()) * 0.5;
        let rep = Self { c, cmat, b, bmat, m };
        rep.validate()?;
        Ok(rep)
    }

    /// Assembles without the (potentially expensive) rank and PSD checks.
    /// Callers guarantee the invariants.
    pub(crate) fn from_parts(
        c: DVector<f64>,
        cmat: DMatrix<f64>,
        b: DVector<f64>,
        bmat: DMatrix<f64>,
        m: DMatrix<f64>,
    ) -> Self {
        debug_assert!(check_shapes(&c, &cmat, &b, &bmat, &m).is_ok());
        Self { c, cmat, b, bmat, m }
    }

    /// Re-checks all invariants of the representation.
    pub fn validate(&self) -> Result<()> {
        check_shapes(&self.c, &self.cmat, &self.b, &self.bmat, &self.m)?;
        if self.m != self.m.transpose() {
            return Err(Error::InvalidRep("M is not exactly symmetric".into()));
        }
        let min_eig = min_eigenvalue(&self.m);
        let scale = self.m.amax();
        if min_eig < -PSD_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidRep(format!(
                "M is not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        if self.bmat.ncols() > self.bmat.nrows() {
            return Err(Error::Injectivity(format!("B is {}x{}, cannot be injective", self.bmat.nrows(), self.bmat.ncols())));
        }
        if !has_full_column_rank(&self.bmat, INJECTIVITY_TOL) {
            return Err(Error::Injectivity("B has a nontrivial null space".into()));
        }
        Ok(())
    }

    /// The identically-zero penalty on `ℝⁿ`: `U = {0}` encoded by `u ≤ 0, −u ≤ 0`.
    pub fn zero(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::ParameterDomain("zero penalty needs n >= 1".into()));
        }
        let eye = DMatrix::<f64>::identity(n, n);
        let mut cmat = DMatrix::zeros(n, 2 * n);
        cmat.view_mut((0, 0), (n, n)).copy_from(&eye);
        cmat.view_mut((0, n), (n, n)).copy_from(&(-&eye));
        Ok(Self::from_parts(
            DVector::zeros(2 * n),
            cmat,
            DVector::zeros(n),
            eye,
            DMatrix::zeros(n, n),
        ))
    }

    pub fn dims(&self) -> PlqDims {
        PlqDims {
            k: self.b.len(),
            l: self.c.len(),
            n: self.bmat.ncols(),
        }
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
    pub fn cmat(&self) -> &DMatrix<f64> {
        &self.cmat
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn bmat(&self) -> &DMatrix<f64> {
        &self.bmat
    }
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// `0 ∈ U`, which makes the function nonnegative.
    pub fn is_penalty(&self) -> bool {
        self.c.iter().all(|&x| x >= 0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PlqRepDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PlqRepDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

fn check_shapes(
    c: &DVector<f64>,
    cmat: &DMatrix<f64>,
    b: &DVector<f64>,
    bmat: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<()> {
    let (k, l) = (b.len(), c.len());
    if cmat.shape() != (k, l) {
        return Err(Error::Shape(format!("C is {:?}, expected ({k}, {l})", cmat.shape())));
    }
    if bmat.nrows() != k {
        return Err(Error::Shape(format!("B has {} rows, expected {k}", bmat.nrows())));
    }
    if m.shape() != (k, k) {
        return Err(Error::Shape(format!("M is {:?}, expected ({k}, {k})", m.shape())));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if is_diagonal(m) {
        return m.diagonal().min();
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// JSON layout: named arrays, matrices flattened row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlqRepDoc {
    pub dims: PlqDims,
    pub c: Vec<f64>,
    #[serde(rename = "C")]
    pub cmat: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(rename = "B")]
    pub bmat: Vec<f64>,
    #[serde(rename = "M")]
    pub m: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl From<&PlqRep> for PlqRepDoc {
    fn from(rep: &PlqRep) -> Self {
        Self {
            dims: rep.dims(),
            c: rep.c.as_slice().to_vec(),
            cmat: row_major(&rep.cmat),
            b: rep.b.as_slice().to_vec(),
            bmat: row_major(&rep.bmat),
            m: row_major(&rep.m),
        }
    }
}

impl TryFrom<PlqRepDoc> for PlqRep {
    type Error = Error;

    fn try_from(doc: PlqRepDoc) -> Result<Self> {
        let PlqDims { k, l, n } = doc.dims;
        let want = |name: &str, got: usize, expected: usize| {
            if got == expected {
                Ok(())
            } else {
                Err(Error::Shape(format!("{name} has {got} entries, dims say {expected}")))
            }
        };
        want("c", doc.c.len(), l)?;
        want("C", doc.cmat.len(), k * l)?;
        want("b", doc.b.len(), k)?;
        want("B", doc.bmat.len(), k * n)?;
        want("M", doc.m.len(), k * k)?;
        PlqRep::new(
            DVector::from_vec(doc.c),
            DMatrix::from_row_slice(k, l, &doc.cmat),
            DVector::from_vec(doc.b),
            DMatrix::from_row_slice(k, n, &doc.bmat),
            DMatrix::from_row_slice(k, k, &doc.m),
        )
    }
}

fn scalar_rep(c: &[f64], cmat_row: &[f64], b: f64, m: f64) -> PlqRep {
    PlqRep::from_parts(
        DVector::from_row_slice(c),
        DMatrix::from_row_slice(1, cmat_row.len(), cmat_row),
        DVector::from_element(1, b),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, m),
    )
}

/// `½y²`: `U = ℝ` (one `0·u ≤ 1` row), `M = 1`.
pub fn make_l2() -> PlqRep {
    scalar_rep(&[1.0], &[0.0], 0.0, 1.0)
}

/// `|y|`: `U = [−1, 1]`, `M = 0`.
pub fn make_l1() -> PlqRep {
    scalar_rep(&[1.0, 1.0], &[1.0, -1.0], 0.0, 0.0)
}

/// Huber penalty with threshold `kappa`: `U = [−κ, κ]`, `M = 1`.
pub fn make_huber(kappa: f64) -> Result<PlqRep> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::ParameterDomain(format!("huber kappa must be positive, got {kappa}")));
    }
    Ok(scalar_rep(&[kappa, kappa], &[1.0, -1.0], 0.0, 1.0))
}

/// ε-insensitive loss `(y − ε)₊ + (−y − ε)₊`, with `k = 2` and `U = [0, 1]²`.
pub fn make_vapnik(epsilon: f64) -> Result<PlqRep> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "vapnik epsilon must be nonnegative, got {epsilon}"
        )));
    }
    Ok(PlqRep::from_parts(
        DVector::from_row_slice(&[1.0, 0.0, 1.0, 0.0]),
        DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]),
        DVector::from_row_slice(&[-epsilon, -epsilon]),
        DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        DMatrix::zeros(2, 2),
    ))
}

/// Separable sum `Σᵢ ρ(yᵢ)` of a scalar penalty over `n` coordinates.
///
/// The dual vector is grouped by scalar dual coordinate: block `r` holds the
/// `n` copies of the scalar's `u_r`, so `C`, `B` and `M` become `· ⊗ Iₙ`.
/// All-zero constraint columns (free dual blocks) are kept as one row
/// instead of `n` copies.
pub fn lift_scalar(rep: &PlqRep, n: usize) -> Result<PlqRep> {
    if n == 0 {
        return Err(Error::ParameterDomain("lift_scalar needs n >= 1".into()));
    }
    let PlqDims { k, l, n: n0 } = rep.dims();
    if n0 != 1 {
        return Err(Error::Shape(format!("lift_scalar expects a scalar rep, got n = {n0}")));
    }
    let mut c = Vec::new();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..l {
        let col = rep.cmat.column(j);
        if col.iter().all(|&v| v == 0.0) {
            c.push(rep.c[j]);
            cols.push(DVector::zeros(k * n));
        } else {
            for d in 0..n {
                c.push(rep.c[j]);
                let mut v = DVector::zeros(k * n);
                for r in 0..k {
                    v[r * n + d] = col[r];
                }
                cols.push(v);
            }
        }
    }
    let cmat = DMatrix::from_columns(&cols);
    let b = DVector::from_iterator(k * n, rep.b.iter().flat_map(|&v| std::iter::repeat(v).take(n)));
    Ok(PlqRep::from_parts(
        DVector::from_vec(c),
        cmat,
        b,
        kron_identity(&rep.bmat, n),
        kron_identity(&rep.m, n),
    ))
}

/// `x ↦ ρ(E x + e)`, represented as `(c, C, b + B e, B E, M)`.
pub fn compose_affine(rep: &PlqRep, e_mat: &DMatrix<f64>, e_vec: &DVector<f64>) -> Result<PlqRep> {
    let n = rep.dims().n;
    if e_mat.nrows() != n || e_vec.len() != n {
        return Err(Error::Shape(format!(
            "affine map {}x{} + {} does not land in R^{n}",
            e_mat.nrows(),
            e_mat.ncols(),
            e_vec.len()
        )));
    }
    if !has_full_column_rank(e_mat, INJECTIVITY_TOL) {
        return Err(Error::Injectivity("E has a nontrivial null space".into()));
    }
    Ok(compose_affine_unchecked(rep, e_mat, e_vec))
}

/// Same as [`compose_affine`] without the rank check on `E`; the caller is
/// responsible for injectivity of the final representation.
pub(crate) fn compose_affine_unchecked(
    rep: &PlqRep,
    e_mat: &DMatrix<f64>,
    e_vec: &DVector<f64>,
) -> PlqRep {
    PlqRep::from_parts(
        rep.c.clone(),
        rep.cmat.clone(),
        &rep.b + &rep.bmat * e_vec,
        &rep.bmat * e_mat,
        rep.m.clone(),
    )
}

/// Sum of two PLQ functions on the same primal space.
pub fn add(r1: &PlqRep, r2: &PlqRep) -> Result<PlqRep> {
    let (n1, n2) = (r1.dims().n, r2.dims().n);
    if n1 != n2 {
        return Err(Error::Shape(format!("cannot add PLQ functions on R^{n1} and R^{n2}")));
    }
    Ok(PlqRep::from_parts(
        vcat(&r1.c, &r2.c),
        block_diag(&r1.cmat, &r2.cmat),
        vcat(&r1.b, &r2.b),
        vstack(&r1.bmat, &r2.bmat),
        block_diag(&r1.m, &r2.m),
    ))
}

/// `γ·ρ` through the dual substitution `u' = γu`: `(γc, C, b, B, M/γ)`.
///
/// Rows `0ᵀu ≤ c_j` are left as they are since scaling does not change them.
pub fn scale(rep: &PlqRep, gamma: f64) -> Result<PlqRep> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::ParameterDomain(format!("scale factor must be positive, got {gamma}")));
    }
    let mut c = rep.c.clone();
    for j in 0..c.len() {
        if rep.cmat.column(j).iter().any(|&v| v != 0.0) {
            c[j] *= gamma;
        }
    }
    Ok(PlqRep::from_parts(
        c,
        rep.cmat.clone(),
        rep.b.clone(),
        rep.bmat.clone(),
        &rep.m / gamma,
    ))
}

/// Value of the supremum at `y`. May be `+∞` (unbounded sup) or `−∞` (empty
/// dual domain).
///
/// The dual coordinates are split into groups coupled through `M` or through
/// a shared constraint row. Single-coordinate groups are interval problems
/// with closed-form maximizers. Larger groups are handled by enumerating
/// active sets, which is limited to 16 constraint rows per group.
pub fn evaluate(rep: &PlqRep, y: &DVector<f64>) -> Result<f64> {
    let PlqDims { k, l, n } = rep.dims();
    if y.len() != n {
        return Err(Error::Shape(format!("point has length {}, rep expects {n}", y.len())));
    }
    let v = &rep.b + &rep.bmat * y;

    let mut groups = UnionFind::new(k);
    for i in 0..k {
        for j in (i + 1)..k {
            if rep.m[(i, j)] != 0.0 {
                groups.union(i, j);
            }
        }
    }
    let mut col_owner: Vec<Option<usize>> = vec![None; l];
    for j in 0..l {
        let mut first = None;
        for i in 0..k {
            if rep.cmat[(i, j)] != 0.0 {
                match first {
                    None => first = Some(i),
                    Some(f) => groups.union(f, i),
                }
            }
        }
        col_owner[j] = first;
    }
    for j in 0..l {
        if col_owner[j].is_none() && rep.c[j] < 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..k {
        members[groups.find(i)].push(i);
    }
    let mut constraints: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (j, owner) in col_owner.iter().enumerate() {
        if let Some(i) = owner {
            constraints[groups.find(*i)].push(j);
        }
    }

    let mut total = 0.0;
    for root in 0..k {
        if members[root].is_empty() {
            continue;
        }
        let value = if members[root].len() == 1 {
            scalar_sup(rep, members[root][0], &constraints[root], v[members[root][0]])
        } else {
            coupled_sup(rep, &members[root], &constraints[root], &v)?
        };
        if value == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += value;
    }
    Ok(total)
}

fn scalar_sup(rep: &PlqRep, i: usize, cols: &[usize], v: f64) -> f64 {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for &j in cols {
        let a = rep.cmat[(i, j)];
        let bound = rep.c[j] / a;
        if a > 0.0 {
            hi = hi.min(bound);
        } else {
            lo = lo.max(bound);
        }
    }
    if lo > hi {
        return f64::NEG_INFINITY;
    }
    let curvature = rep.m[(i, i)];
    if curvature > 0.0 {
        let u = (v / curvature).clamp(lo, hi);
        v * u - 0.5 * curvature * u * u
    } else if v > 0.0 {
        v * hi
    } else if v < 0.0 {
        v * lo
    } else {
        0.0
    }
}

/// Active-set enumeration for a group of coupled dual coordinates. Returns
/// `+∞` when no KKT point exists.
fn coupled_sup(rep: &PlqRep, idx: &[usize], cols: &[usize], v: &DVector<f64>) -> Result<f64> {
    if cols.len() > MAX_COUPLED_CONSTRAINTS {
        return Err(Error::Unsupported(format!(
            "reference evaluation of a coupled block with {} constraints",
            cols.len()
        )));
    }
    let s = idx.len();
    let msub = DMatrix::from_fn(s, s, |a, b| rep.m[(idx[a], idx[b])]);
    let csub = DMatrix::from_fn(s, cols.len(), |a, j| rep.cmat[(idx[a], cols[j])]);
    let csub_rhs = DVector::from_fn(cols.len(), |j, _| rep.c[cols[j]]);
    let vsub = DVector::from_fn(s, |a, _| v[idx[a]]);
    let scale = 1.0 + vsub.amax() + csub_rhs.amax() + msub.amax() + csub.amax();
    let tol = 1e-9 * scale;

    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << cols.len()) {
        let active: Vec<usize> = (0..cols.len()).filter(|j| mask & (1 << j) != 0).collect();
        let na = active.len();
        let mut kkt = DMatrix::zeros(s + na, s + na);
        kkt.view_mut((0, 0), (s, s)).copy_from(&msub);
        let mut rhs = DVector::zeros(s + na);
        rhs.rows_mut(0, s).copy_from(&vsub);
        for (a, &j) in active.iter().enumerate() {
            for r in 0..s {
                kkt[(r, s + a)] = csub[(r, j)];
                kkt[(s + a, r)] = csub[(r, j)];
            }
            rhs[s + a] = csub_rhs[j];
        }
        let Ok(svd) = crate::linalg::svd(&kkt, true, true) else {
            continue;
        };
        let Ok(sol) = svd.solve(&rhs, 1e-12 * scale) else {
            continue;
        };
        if (&kkt * &sol - &rhs).amax() > tol {
            continue;
        }
        let u = sol.rows(0, s).into_owned();
        if sol.rows(s, na).iter().any(|&lam| lam < -tol) {
            continue;
        }
        if (csub.transpose() * &u - &csub_rhs).iter().any(|&r| r > tol) {
            continue;
        }
        let value = vsub.dot(&u) - 0.5 * u.dot(&(&msub * &u));
        best = best.max(value);
    }
    Ok(if best == f64::NEG_INFINITY { f64::INFINITY } else { best })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(rep: &PlqRep, y: f64) -> f64 {
        evaluate(rep, &DVector::from_element(1, y)).unwrap()
    }

    fn evaln(rep: &PlqRep, y: &[f64]) -> f64 {
        evaluate(rep, &DVector::from_row_slice(y)).unwrap()
    }

    #[test]
    fn l2_values() {
        let r = make_l2();
        assert_eq!(eval1(&r, 2.0), 2.0);
        assert_eq!(eval1(&r, 0.0), 0.0);
        assert_eq!(eval1(&r, -3.0), 4.5);
    }

    #[test]
    fn l1_values() {
        let r = make_l1();
        assert_eq!(eval1(&r, 3.0), 3.0);
        assert_eq!(eval1(&r, -3.0), 3.0);
        assert_eq!(eval1(&r, 0.0), 0.0);
    }

    #[test]
    fn huber_values() {
        let r = make_huber(1.0).unwrap();
        assert_eq!(eval1(&r, 0.5), 0.125);
        assert_eq!(eval1(&r, 2.0), 1.5);
        assert_eq!(eval1(&r, -2.0), 1.5);
        assert_eq!(eval1(&make_huber(2.0).unwrap(), 1.0), 0.5);
        assert!(matches!(make_huber(0.0), Err(Error::ParameterDomain(_))));
        assert!(matches!(make_huber(-1.0), Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn vapnik_values() {
        let r = make_vapnik(1.0).unwrap();
        assert_eq!(r.dims(), PlqDims { k: 2, l: 4, n: 1 });
        assert_eq!(eval1(&r, 0.5), 0.0);
        assert_eq!(eval1(&r, 2.5), 1.5);
        assert_eq!(eval1(&make_vapnik(0.0).unwrap(), 2.5), 2.5);
        assert!(matches!(make_vapnik(-0.1), Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn builders_pass_invariants() {
        for r in [
            make_l2(),
            make_l1(),
            make_huber(0.7).unwrap(),
            make_vapnik(0.3).unwrap(),
        ] {
            r.validate().unwrap();
            assert!(r.is_penalty());
        }
    }

    #[test]
    fn lift_values() {
        assert_eq!(evaln(&lift_scalar(&make_l1(), 3).unwrap(), &[1.0, -2.0, 0.0]), 3.0);
        assert_eq!(evaln(&lift_scalar(&make_l2(), 2).unwrap(), &[2.0, 2.0]), 4.0);
        let huber = make_huber(1.0).unwrap();
        let expected = eval1(&huber, 0.5) + eval1(&huber, 2.0);
        assert_eq!(expected, 1.625);
        assert_eq!(evaln(&lift_scalar(&huber, 2).unwrap(), &[0.5, 2.0]), expected);
        assert!(matches!(lift_scalar(&make_l1(), 0), Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn lift_keeps_single_free_row() {
        let r = lift_scalar(&make_l2(), 5).unwrap();
        assert_eq!(r.dims(), PlqDims { k: 5, l: 1, n: 5 });
        assert!(r.cmat().iter().all(|&v| v == 0.0));
        r.validate().unwrap();
    }

    #[test]
    fn lift_rejects_non_scalar() {
        let r = lift_scalar(&make_l1(), 2).unwrap();
        assert!(matches!(lift_scalar(&r, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn compose_scalar_example() {
        let r = compose_affine(
            &make_l1(),
            &DMatrix::from_element(1, 1, 2.0),
            &DVector::from_element(1, -1.0),
        )
        .unwrap();
        assert_eq!(eval1(&r, 2.0), 3.0);
    }

    #[test]
    fn compose_identity_matches_lift() {
        let lifted = lift_scalar(&make_l2(), 2).unwrap();
        let composed =
            compose_affine(&lifted, &DMatrix::identity(2, 2), &DVector::zeros(2)).unwrap();
        for p in [[0.0, 0.0], [1.0, -2.0], [3.5, 0.25]] {
            assert_eq!(evaln(&composed, &p), evaln(&lifted, &p));
        }
    }

    #[test]
    fn compose_errors() {
        let lifted = lift_scalar(&make_l1(), 2).unwrap();
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            compose_affine(&lifted, &singular, &DVector::zeros(2)),
            Err(Error::Injectivity(_))
        ));
        assert!(matches!(
            compose_affine(&lifted, &DMatrix::identity(3, 3), &DVector::zeros(3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn add_examples() {
        let r = add(&make_l1(), &make_l2()).unwrap();
        assert_eq!(eval1(&r, 2.0), 4.0);
        assert_eq!(r.dims(), PlqDims { k: 2, l: 3, n: 1 });
        let base = make_huber(1.5).unwrap();
        let with_zero = add(&base, &PlqRep::zero(1).unwrap()).unwrap();
        for y in [-4.0, -1.0, 0.0, 0.3, 2.0] {
            assert_eq!(eval1(&with_zero, y), eval1(&base, y));
        }
        let two = lift_scalar(&make_l1(), 2).unwrap();
        assert!(matches!(add(&two, &make_l1()), Err(Error::Shape(_))));
    }

    #[test]
    fn scale_examples() {
        assert_eq!(eval1(&scale(&make_l2(), 2.0).unwrap(), 3.0), 9.0);
        let g = 0.37;
        let s = scale(&lift_scalar(&make_l1(), 3).unwrap(), g).unwrap();
        assert!(s.c().iter().all(|&x| x == g));
        let r = make_huber(0.8).unwrap();
        let back = scale(&scale(&r, 2.0).unwrap(), 0.5).unwrap();
        for y in [-3.0, -0.5, 0.0, 0.6, 5.0] {
            assert!((eval1(&back, y) - eval1(&r, y)).abs() < 1e-15);
        }
        assert!(matches!(scale(&r, 0.0), Err(Error::ParameterDomain(_))));
        assert!(matches!(scale(&r, -1.0), Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn unbounded_and_empty_domains() {
        // M = 0 with an unconstrained dual coordinate: sup is +inf unless v = 0.
        let free = PlqRep::new(
            DVector::from_element(1, 1.0),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert_eq!(eval1(&free, 1.0), f64::INFINITY);
        assert_eq!(eval1(&free, 0.0), 0.0);
        // u <= -1 and -u <= -1: empty.
        let empty = PlqRep::new(
            DVector::from_row_slice(&[-1.0, -1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        assert_eq!(eval1(&empty, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn coupled_block_matches_manual() {
        // u in the simplex-like set u1 + u2 <= 1, u >= 0, M = I:
        // sup <u, v> - |u|^2/2.
        let rep = PlqRep::new(
            DVector::from_row_slice(&[1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 1.0, 0.0, -1.0]),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        // v = (2, 2): projection of v onto the constraint gives u = (0.5, 0.5).
        let val = evaln(&rep, &[2.0, 2.0]);
        assert!((val - (2.0 - 0.25)).abs() < 1e-12);
        // v = (0.2, -1): interior/face u = (0.2, 0).
        let val = evaln(&rep, &[0.2, -1.0]);
        assert!((val - 0.02).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_reps() {
        let asym = PlqRep::new(
            DVector::from_element(1, 1.0),
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
        );
        assert!(matches!(asym, Err(Error::InvalidRep(_))));
        let indefinite = PlqRep::new(
            DVector::from_element(1, 1.0),
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        );
        assert!(matches!(indefinite, Err(Error::InvalidRep(_))));
        let not_injective = PlqRep::new(
            DVector::from_element(1, 1.0),
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(not_injective, Err(Error::Injectivity(_))));
    }

    #[test]
    fn json_roundtrip() {
        let rep = add(
            &lift_scalar(&make_vapnik(0.2).unwrap(), 2).unwrap(),
            &scale(&lift_scalar(&make_l2(), 2).unwrap(), 3.0).unwrap(),
        )
        .unwrap();
        let text = rep.to_json().unwrap();
        let back = PlqRep::from_json(&text).unwrap();
        assert_eq!(back, rep);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["c", "C", "b", "B", "M", "dims"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
    }
}

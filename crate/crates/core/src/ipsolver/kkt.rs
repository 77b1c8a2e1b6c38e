//! Relaxed KKT map, its Jacobian and the reduced Newton step.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::{IpState, Polyhedron};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, cholesky_solve, is_diagonal, SparseMat};
use crate::plq::PlqRep;

/// The six blocks of `F_μ`.
#[derive(Debug, Clone)]
pub struct Residual {
    /// `Cᵀu + s − c`
    pub f1: DVector<f64>,
    /// `Aᵀy + r − a`
    pub f2: DVector<f64>,
    /// `Mu + Cq − By − b`
    pub f3: DVector<f64>,
    /// `Bᵀu + Aw`
    pub f4: DVector<f64>,
    /// `q∘s − μ`
    pub f5: DVector<f64>,
    /// `w∘r − μ`
    pub f6: DVector<f64>,
}

impl Residual {
    pub fn stacked(&self) -> DVector<f64> {
        let parts = [&self.f1, &self.f2, &self.f3, &self.f4, &self.f5, &self.f6];
        DVector::from_iterator(
            parts.iter().map(|v| v.len()).sum(),
            parts.iter().flat_map(|v| v.iter().cloned()),
        )
    }

    pub fn norm2(&self) -> f64 {
        [&self.f1, &self.f2, &self.f3, &self.f4, &self.f5, &self.f6]
            .iter()
            .map(|v| v.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn plus(&self, o: &Residual) -> Residual {
        Residual {
            f1: &self.f1 + &o.f1,
            f2: &self.f2 + &o.f2,
            f3: &self.f3 + &o.f3,
            f4: &self.f4 + &o.f4,
            f5: &self.f5 + &o.f5,
            f6: &self.f6 + &o.f6,
        }
    }

    pub fn norm_inf(&self) -> f64 {
        [&self.f1, &self.f2, &self.f3, &self.f4, &self.f5, &self.f6]
            .iter()
            .map(|v| v.amax())
            .fold(0.0, f64::max)
    }
}

/// Newton direction, blocks in the same order as the iterate.
#[derive(Debug, Clone)]
pub struct Direction {
    pub dq: DVector<f64>,
    pub dw: DVector<f64>,
    pub du: DVector<f64>,
    pub dy: DVector<f64>,
    pub ds: DVector<f64>,
    pub dr: DVector<f64>,
}

impl Direction {
    pub fn plus(&self, o: &Direction) -> Direction {
        Direction {
            dq: &self.dq + &o.dq,
            dw: &self.dw + &o.dw,
            du: &self.du + &o.du,
            dy: &self.dy + &o.dy,
            ds: &self.ds + &o.ds,
            dr: &self.dr + &o.dr,
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        let parts = [&self.dq, &self.dw, &self.du, &self.dy, &self.ds, &self.dr];
        DVector::from_iterator(
            parts.iter().map(|v| v.len()).sum(),
            parts.iter().flat_map(|v| v.iter().cloned()),
        )
    }
}

/// Problem data prepared for repeated residual and Newton evaluations.
///
/// `C` and `M` are kept in coordinate form; rows of `B` with a single
/// nonzero are split off so that their contribution to `BᵀT⁻¹B` costs
/// `O(1)` each.
pub struct KktSystem<'a> {
    rep: &'a PlqRep,
    poly: &'a Polyhedron,
    c_sp: SparseMat,
    m_sp: SparseMat,
    /// `T = M + C diag(q/s) Cᵀ` is diagonal for every iterate.
    diagonal_t: bool,
    m_diag: DVector<f64>,
    unit_rows: Vec<(usize, usize, f64)>,
    dense_rows: Vec<usize>,
    b_dense: DMatrix<f64>,
}

impl<'a> KktSystem<'a> {
    pub fn new(rep: &'a PlqRep, poly: &'a Polyhedron) -> Result<Self> {
        let dims = rep.dims();
        if poly.n() != dims.n {
            return Err(Error::Shape(format!(
                "constraints live in R^{} but the objective in R^{}",
                poly.n(),
                dims.n
            )));
        }
        let c_sp = SparseMat::from_dense(rep.cmat());
        let m_sp = SparseMat::from_dense(rep.m());
        let mut col_rows = vec![0usize; dims.l];
        for &(_, j, _) in &c_sp.entries {
            col_rows[j] += 1;
        }
        let diagonal_t = is_diagonal(rep.m()) && col_rows.iter().all(|&c| c <= 1);

        let bmat = rep.bmat();
        let mut unit_rows = Vec::new();
        let mut dense_rows = Vec::new();
        for i in 0..dims.k {
            let nz: Vec<usize> = (0..dims.n).filter(|&j| bmat[(i, j)] != 0.0).collect();
            match nz.as_slice() {
                [] => {}
                [j] => unit_rows.push((i, *j, bmat[(i, *j)])),
                _ => dense_rows.push(i),
            }
        }
        let b_dense = DMatrix::from_fn(dense_rows.len(), dims.n, |a, j| bmat[(dense_rows[a], j)]);
        Ok(Self {
            rep,
            poly,
            c_sp,
            m_sp,
            diagonal_t,
            m_diag: rep.m().diagonal(),
            unit_rows,
            dense_rows,
            b_dense,
        })
    }

    pub fn rep(&self) -> &PlqRep {
        self.rep
    }

    pub fn poly(&self) -> &Polyhedron {
        self.poly
    }

    /// `N = 2l + 2p + k + n`.
    pub fn size(&self) -> usize {
        let d = self.rep.dims();
        2 * d.l + 2 * self.poly.p() + d.k + d.n
    }

    pub fn has_diagonal_t(&self) -> bool {
        self.diagonal_t
    }

    /// `F_μ` at `st`.
    pub fn residual(&self, st: &IpState, mu: f64) -> Residual {
        let rep = self.rep;
        let a = self.poly.a();
        Residual {
            f1: self.c_sp.tr_mul_vec(&st.u) + &st.s - rep.c(),
            f2: a.tr_mul(&st.y) + &st.r - self.poly.rhs(),
            f3: self.m_sp.mul_vec(&st.u) + self.c_sp.mul_vec(&st.q) - rep.bmat() * &st.y - rep.b(),
            f4: rep.bmat().tr_mul(&st.u) + a * &st.w,
            f5: st.q.component_mul(&st.s).add_scalar(-mu),
            f6: st.w.component_mul(&st.r).add_scalar(-mu),
        }
    }

    /// Objective value `⟨u, b + By⟩ − ½⟨u, Mu⟩` at the iterate; equals
    /// `ρ(y)` once `u` attains the supremum.
    pub fn dual_objective(&self, st: &IpState) -> f64 {
        let v = self.rep.b() + self.rep.bmat() * &st.y;
        st.u.dot(&v) - 0.5 * st.u.dot(&self.m_sp.mul_vec(&st.u))
    }

    /// Solves `F'_μ d = −F_μ` by block elimination.
    ///
    /// Eliminating `ds = −f1 − Cᵀdu`, `dr = −f2 − Aᵀdy` and the
    /// complementarity rows leaves
    ///
    /// ```text
    /// [ T   −B ] [du]   [g3]      T = M + C diag(q/s) Cᵀ
    /// [ Bᵀ   D ] [dy] = [g4]      D = A diag(w/r) Aᵀ
    /// ```
    ///
    /// which is solved through `Ω = BᵀT⁻¹B + D`. Up to two rounds of
    /// iterative refinement against the unreduced system reuse the
    /// factorization.
    ///
    /// When `Ω` is too ill-conditioned for refinement to recover a useful
    /// direction, the constraint block is kept unreduced and the augmented
    /// system in `(dy, dw)` is solved instead.
    pub fn newton_step(&self, st: &IpState, res: &Residual) -> Result<Direction> {
        let fact = self.factor(st)?;
        let (d, err) = self.refine(st, res, self.back_solve(st, &fact, res)?, |r| self.back_solve(st, &fact, r))?;
        if err <= AUGMENT_TRIGGER * res.norm2() || self.poly.p() == 0 {
            return Ok(d);
        }
        let Some(aug) = self.factor_augmented(st, &fact) else {
            return Ok(d);
        };
        let first = self.augmented_solve(st, &fact, &aug, res)?;
        let (d2, err2) = self.refine(st, res, first, |r| self.augmented_solve(st, &fact, &aug, r))?;
        Ok(if err2 < err { d2 } else { d })
    }

    /// Up to two rounds of iterative refinement; returns the direction and
    /// `‖F'd + F‖₂`.
    fn refine(
        &self,
        st: &IpState,
        res: &Residual,
        mut d: Direction,
        solve: impl Fn(&Residual) -> Result<Direction>,
    ) -> Result<(Direction, f64)> {
        let target = REFINE_TOL * res.norm2();
        let mut err = self.jacobian_apply(st, &d).plus(res);
        for _ in 0..2 {
            if !(err.norm2() > target) {
                break;
            }
            let refined = d.plus(&solve(&err)?);
            let refined_err = self.jacobian_apply(st, &refined).plus(res);
            if !(refined_err.norm2() < err.norm2()) {
                break;
            }
            d = refined;
            err = refined_err;
        }
        Ok((d, err.norm2()))
    }

    /// LU of `[Ω₀ A; Aᵀ −diag(r/w)]` with `Ω₀ = BᵀT⁻¹B`.
    fn factor_augmented(&self, st: &IpState, fact: &Factored) -> Option<LU<f64, Dyn, Dyn>> {
        let omega0 = fact.omega0.as_ref()?;
        let (n, p) = (omega0.nrows(), self.poly.p());
        let a = self.poly.a();
        let mut aug = DMatrix::zeros(n + p, n + p);
        aug.view_mut((0, 0), (n, n)).copy_from(omega0);
        aug.view_mut((0, n), (n, p)).copy_from(a);
        aug.view_mut((n, 0), (p, n)).copy_from(&a.transpose());
        for j in 0..p {
            aug[(n + j, n + j)] = -st.r[j] / st.w[j];
        }
        Some(aug.lu())
    }

    fn augmented_solve(&self, st: &IpState, fact: &Factored, aug: &LU<f64, Dyn, Dyn>, res: &Residual) -> Result<Direction> {
        let a = self.poly.a();
        let bmat = self.rep.bmat();
        let n = bmat.ncols();
        let h1 = (st.q.component_mul(&res.f1) - &res.f5).component_div(&st.s);
        let h2 = (st.w.component_mul(&res.f2) - &res.f6).component_div(&st.r);
        let g3 = -&res.f3 - self.c_sp.mul_vec(&h1);
        let t_solve = |v: &DVector<f64>| match &fact.reduced {
            Reduced::Diagonal { t, .. } => v.component_div(t),
            Reduced::Dense { lt, .. } => cholesky_solve(lt, v),
            Reduced::Block(_) => unreachable!("no augmented form without T"),
        };
        let top = -&res.f4 - bmat.tr_mul(&t_solve(&g3));
        let bottom = -st.r.component_div(&st.w).component_mul(&h2);
        let sol = aug
            .solve(&crate::linalg::vcat(&top, &bottom))
            .ok_or_else(|| Error::Structure("augmented KKT matrix is singular".into()))?;
        let dy = sol.rows(0, n).into_owned();
        let dw = sol.rows(n, sol.len() - n).into_owned();
        let du = t_solve(&(&g3 + bmat * &dy));
        let ct_du = self.c_sp.tr_mul_vec(&du);
        let ds = -&res.f1 - &ct_du;
        let dr = -&res.f2 - a.tr_mul(&dy);
        let dq = &h1 + fact.qs.component_mul(&ct_du);
        Ok(Direction { dq, dw, du, dy, ds, dr })
    }

    /// `F'_μ d` in residual block layout.
    pub fn jacobian_apply(&self, st: &IpState, d: &Direction) -> Residual {
        let a = self.poly.a();
        let bmat = self.rep.bmat();
        Residual {
            f1: self.c_sp.tr_mul_vec(&d.du) + &d.ds,
            f2: a.tr_mul(&d.dy) + &d.dr,
            f3: self.m_sp.mul_vec(&d.du) + self.c_sp.mul_vec(&d.dq) - bmat * &d.dy,
            f4: bmat.tr_mul(&d.du) + a * &d.dw,
            f5: st.s.component_mul(&d.dq) + st.q.component_mul(&d.ds),
            f6: st.r.component_mul(&d.dw) + st.w.component_mul(&d.dr),
        }
    }

    fn factor(&self, st: &IpState) -> Result<Factored> {
        let a = self.poly.a();
        let qs = st.q.component_div(&st.s);
        let wr = st.w.component_div(&st.r);
        let d_mat = {
            let mut scaled = a.transpose();
            for (j, mut row) in scaled.row_iter_mut().enumerate() {
                row *= wr[j].sqrt();
            }
            scaled.tr_mul(&scaled)
        };
        let (reduced, omega0) = if self.diagonal_t {
            self.factor_diagonal(&qs, d_mat)?
        } else {
            self.factor_dense(&qs, d_mat)?
        };
        Ok(Factored { qs, wr, reduced, omega0 })
    }

    fn back_solve(&self, st: &IpState, fact: &Factored, res: &Residual) -> Result<Direction> {
        let a = self.poly.a();
        let bmat = self.rep.bmat();
        let (qs, wr) = (&fact.qs, &fact.wr);
        // h1 = (−f5 + q∘f1)/s, h2 = (−f6 + w∘f2)/r
        let h1 = (st.q.component_mul(&res.f1) - &res.f5).component_div(&st.s);
        let h2 = (st.w.component_mul(&res.f2) - &res.f6).component_div(&st.r);
        let g3 = -&res.f3 - self.c_sp.mul_vec(&h1);
        let g4 = -&res.f4 - a * &h2;

        let (du, dy) = match &fact.reduced {
            Reduced::Diagonal { t, omega } => {
                let t_inv_g3 = g3.component_div(t);
                let dy = omega.solve(&(&g4 - bmat.tr_mul(&t_inv_g3)))?;
                let du = (&g3 + bmat * &dy).component_div(t);
                (du, dy)
            }
            Reduced::Dense { lt, omega } => {
                let t_inv_g3 = cholesky_solve(lt, &g3);
                let dy = omega.solve(&(&g4 - bmat.tr_mul(&t_inv_g3)))?;
                let du = cholesky_solve(lt, &(&g3 + bmat * &dy));
                (du, dy)
            }
            Reduced::Block(lu) => {
                let k = g3.len();
                let sol = lu.solve(&crate::linalg::vcat(&g3, &g4)).ok_or_else(|| {
                    Error::Structure("reduced KKT matrix is singular: the injectivity condition fails".into())
                })?;
                (sol.rows(0, k).into_owned(), sol.rows(k, sol.len() - k).into_owned())
            }
        };

        let ct_du = self.c_sp.tr_mul_vec(&du);
        let at_dy = a.tr_mul(&dy);
        let ds = -&res.f1 - &ct_du;
        let dr = -&res.f2 - &at_dy;
        let dq = &h1 + qs.component_mul(&ct_du);
        let dw = &h2 + wr.component_mul(&at_dy);
        Ok(Direction { dq, dw, du, dy, ds, dr })
    }

    fn factor_diagonal(&self, qs: &DVector<f64>, d_mat: DMatrix<f64>) -> Result<(Reduced, Option<DMatrix<f64>>)> {
        let mut t = self.m_diag.clone();
        for &(i, j, v) in &self.c_sp.entries {
            t[i] += v * v * qs[j];
        }
        if let Some(i) = t.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Structure(format!(
                "T = M + C S⁻¹Q Cᵀ is singular at dual coordinate {i}: the injectivity condition fails"
            )));
        }
        let mut omega = DMatrix::zeros(d_mat.nrows(), d_mat.ncols());
        for &(i, j, v) in &self.unit_rows {
            omega[(j, j)] += v * v / t[i];
        }
        if !self.dense_rows.is_empty() {
            let mut scaled = self.b_dense.clone();
            for (a, mut row) in scaled.row_iter_mut().enumerate() {
                row /= t[self.dense_rows[a]].sqrt();
            }
            omega += scaled.tr_mul(&scaled);
        }
        let omega0 = self.keep_omega0().then(|| omega.clone());
        omega += d_mat;
        Ok((Reduced::Diagonal { t, omega: Spd::factor(omega) }, omega0))
    }

    fn factor_dense(&self, qs: &DVector<f64>, d_mat: DMatrix<f64>) -> Result<(Reduced, Option<DMatrix<f64>>)> {
        let d = self.rep.dims();
        let mut t = self.m_sp.to_dense();
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d.l];
        for &(i, j, v) in &self.c_sp.entries {
            by_col[j].push((i, v));
        }
        for (j, entries) in by_col.iter().enumerate() {
            for &(i1, v1) in entries {
                for &(i2, v2) in entries {
                    t[(i1, i2)] += v1 * v2 * qs[j];
                }
            }
        }
        let bmat = self.rep.bmat();
        if let Ok(lt) = cholesky_lower(&t) {
            let mut t_inv_b = bmat.clone();
            for j in 0..d.n {
                let col = cholesky_solve(&lt, &bmat.column(j).into_owned());
                t_inv_b.set_column(j, &col);
            }
            let omega0 = bmat.transpose() * &t_inv_b;
            let omega = &omega0 + d_mat;
            return Ok((Reduced::Dense { lt, omega: Spd::factor(omega) }, self.keep_omega0().then_some(omega0)));
        }
        // T singular: factor the reduced block system directly.
        let size = d.k + d.n;
        let mut red = DMatrix::zeros(size, size);
        red.view_mut((0, 0), (d.k, d.k)).copy_from(&t);
        red.view_mut((0, d.k), (d.k, d.n)).copy_from(&(-bmat));
        red.view_mut((d.k, 0), (d.n, d.k)).copy_from(&bmat.transpose());
        red.view_mut((d.k, d.k), (d.n, d.n)).copy_from(&d_mat);
        Ok((Reduced::Block(red.lu()), None))
    }

    fn keep_omega0(&self) -> bool {
        self.poly.p() > 0
    }

    /// Dense `F'_μ` in the variable order `(q, w, u, y, s, r)`.
    pub fn jacobian_dense(&self, st: &IpState) -> DMatrix<f64> {
        let d = self.rep.dims();
        let p = self.poly.p();
        let (oq, ow, ou, oy, os, or) = (
            0,
            d.l,
            d.l + p,
            d.l + p + d.k,
            d.l + p + d.k + d.n,
            2 * d.l + p + d.k + d.n,
        );
        let (r1, r2, r3, r4, r5, r6) = (oq, ow, ou, oy, os, or);
        let mut j = DMatrix::zeros(self.size(), self.size());
        let cmat = self.rep.cmat();
        let a = self.poly.a();
        let bmat = self.rep.bmat();
        // f1 = Cᵀu + s − c
        j.view_mut((r1, ou), (d.l, d.k)).copy_from(&cmat.transpose());
        j.view_mut((r1, os), (d.l, d.l)).fill_diagonal(1.0);
        // f2 = Aᵀy + r − a
        j.view_mut((r2, oy), (p, d.n)).copy_from(&a.transpose());
        j.view_mut((r2, or), (p, p)).fill_diagonal(1.0);
        // f3 = Mu + Cq − By − b
        j.view_mut((r3, oq), (d.k, d.l)).copy_from(cmat);
        j.view_mut((r3, ou), (d.k, d.k)).copy_from(self.rep.m());
        j.view_mut((r3, oy), (d.k, d.n)).copy_from(&(-bmat));
        // f4 = Bᵀu + Aw
        j.view_mut((r4, ou), (d.n, d.k)).copy_from(&bmat.transpose());
        j.view_mut((r4, ow), (d.n, p)).copy_from(a);
        // f5 = q∘s − μ
        for i in 0..d.l {
            j[(r5 + i, oq + i)] = st.s[i];
            j[(r5 + i, os + i)] = st.q[i];
        }
        // f6 = w∘r − μ
        for i in 0..p {
            j[(r6 + i, ow + i)] = st.r[i];
            j[(r6 + i, or + i)] = st.w[i];
        }
        j
    }
}

/// Relative Newton residual below which no refinement is attempted.
const REFINE_TOL: f64 = 1e-10;
/// Relative Newton residual above which the augmented system is tried.
const AUGMENT_TRIGGER: f64 = 1e-3;

struct Factored {
    qs: DVector<f64>,
    wr: DVector<f64>,
    reduced: Reduced,
    /// `BᵀT⁻¹B`, kept when there are constraints to fall back on.
    omega0: Option<DMatrix<f64>>,
}

enum Reduced {
    Diagonal { t: DVector<f64>, omega: Spd },
    Dense { lt: DMatrix<f64>, omega: Spd },
    Block(LU<f64, Dyn, Dyn>),
}

/// Factorization of `Ω`: Cholesky, or LU when `Ω` is not numerically
/// positive definite.
enum Spd {
    Cholesky(DMatrix<f64>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl Spd {
    fn factor(mat: DMatrix<f64>) -> Self {
        match cholesky_lower(&mat) {
            Ok(l) => Spd::Cholesky(l),
            Err(_) => Spd::Lu(mat.lu()),
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Spd::Cholesky(l) => Ok(cholesky_solve(l, rhs)),
            Spd::Lu(lu) => lu
                .solve(rhs)
                .ok_or_else(|| Error::Structure("Ω = BᵀT⁻¹B + A diag(w/r) Aᵀ is singular".into())),
        }
    }
}

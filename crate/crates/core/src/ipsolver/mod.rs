//! Primal-dual interior-point solver for
//!
//! ```text
//! min_y ρ(c, C, b, B, M; y)   s.t.  Aᵀ y ≤ a
//! ```
//!
//! The iterate is `(q, w, u, y, s, r)`: `u` is the PLQ dual variable, `s`
//! and `r` are slacks for `Cᵀu ≤ c` and `Aᵀy ≤ a`, and `q`, `w` are their
//! multipliers. Each iteration takes a damped Newton step on the relaxed KKT
//! map `F_μ` (see [`KktSystem::residual`]) and reduces `μ` toward zero.

mod kkt;
mod solve;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{has_full_column_rank, is_diagonal, singular_value_range, vstack};
use crate::plq::PlqRep;

pub use kkt::{Direction, KktSystem, Residual};
pub use solve::{line_search, solve, LineSearchOutcome};

/// Polyhedral feasible set `{y : Aᵀ y ≤ a}` with `A` of shape `n x p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    a: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl Polyhedron {
    pub fn new(a: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if a.ncols() != rhs.len() {
            return Err(Error::Shape(format!(
                "constraint matrix has {} columns but {} bounds",
                a.ncols(),
                rhs.len()
            )));
        }
        Ok(Self { a, rhs })
    }

    /// Builds the set from the row form `G y ≤ h` (so `A = Gᵀ`).
    pub fn from_rows(g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        Self::new(g.transpose(), h)
    }

    /// No constraints on `ℝⁿ` (`p = 0`).
    pub fn none(n: usize) -> Self {
        Self {
            a: DMatrix::zeros(n, 0),
            rhs: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.rhs.len()
    }

    /// `A` (`n x p`).
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `a` (length `p`).
    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    /// Intersection with another polyhedron on the same space.
    pub fn intersect(&self, other: &Polyhedron) -> Result<Self> {
        if self.n() != other.n() {
            return Err(Error::Shape("intersecting polyhedra of different dimension".into()));
        }
        let rows = vstack(&self.a.transpose(), &other.a.transpose());
        Self::from_rows(rows, crate::linalg::vcat(&self.rhs, &other.rhs))
    }

    /// `max(Aᵀy − a)`, or 0 when there are no constraints.
    pub fn max_violation(&self, y: &DVector<f64>) -> f64 {
        if self.p() == 0 {
            return 0.0;
        }
        (self.a.tr_mul(y) - &self.rhs).max()
    }

    pub fn contains(&self, y: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(y) <= tol
    }
}

/// Solver iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IpState {
    pub q: DVector<f64>,
    pub w: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    pub r: DVector<f64>,
    pub mu: f64,
}

impl IpState {
    /// Default interior start: `y = 0`, `u = 0`, slacks `max(c, 1)` and
    /// `max(a, 1)`, multipliers 1, `μ` the average complementarity.
    pub fn initial(rep: &PlqRep, poly: &Polyhedron) -> Self {
        let dims = rep.dims();
        let s = rep.c().map(|v| v.max(1.0));
        let r = poly.rhs().map(|v| v.max(1.0));
        let mut st = Self {
            q: DVector::from_element(dims.l, 1.0),
            w: DVector::from_element(poly.p(), 1.0),
            u: DVector::zeros(dims.k),
            y: DVector::zeros(dims.n),
            s,
            r,
            mu: 0.0,
        };
        st.mu = st.complementarity();
        st
    }

    /// `(sᵀq + rᵀw) / (p + l)`.
    pub fn complementarity(&self) -> f64 {
        let count = self.s.len() + self.r.len();
        if count == 0 {
            return 0.0;
        }
        (self.s.dot(&self.q) + self.r.dot(&self.w)) / count as f64
    }

    /// True when `s, q, r, w` are all strictly positive.
    pub fn is_interior(&self) -> bool {
        [&self.s, &self.q, &self.r, &self.w]
            .iter()
            .all(|v| v.iter().all(|&x| x > 0.0))
    }

    /// Stacked in the order `(q, w, u, y, s, r)`.
    pub fn stacked(&self) -> DVector<f64> {
        let parts = [&self.q, &self.w, &self.u, &self.y, &self.s, &self.r];
        DVector::from_iterator(
            parts.iter().map(|v| v.len()).sum(),
            parts.iter().flat_map(|v| v.iter().cloned()),
        )
    }

    pub fn step(&self, d: &Direction, t: f64) -> Self {
        Self {
            q: &self.q + &d.dq * t,
            w: &self.w + &d.dw * t,
            u: &self.u + &d.du * t,
            y: &self.y + &d.dy * t,
            s: &self.s + &d.ds * t,
            r: &self.r + &d.dr * t,
            mu: self.mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Termination tolerance on `max(‖F₀‖∞, μ)`.
    pub tol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease constant of the line search.
    pub eta: f64,
    /// Backtracking factor of the line search.
    pub backtrack: f64,
    /// Fraction-to-boundary cap on the step.
    pub boundary_fraction: f64,
    /// Multiplier applied to `μ` after a full (`t = 1`) step.
    pub centering: f64,
    pub max_backtracks: usize,
    /// Assemble the dense Jacobian each iteration and record the residual of
    /// the Newton system. Expensive; meant for tests on small problems.
    pub verify_newton: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200,
            eta: 0.01,
            backtrack: 0.5,
            boundary_fraction: 0.995,
            centering: 0.1,
            max_backtracks: 60,
            verify_newton: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    LineSearchStall,
    StructureError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Relaxation targeted by this iteration's Newton step.
    pub mu: f64,
    /// `‖F_μ‖₂` before the step.
    pub residual_norm: f64,
    /// `‖F₀‖∞` before the step.
    pub kkt_residual: f64,
    /// Accepted step length.
    pub step: f64,
    /// `‖F'd + F_μ‖₂` when `verify_newton` is on.
    pub newton_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub y_star: DVector<f64>,
    pub u_star: DVector<f64>,
    pub state: IpState,
    pub iterations: usize,
    pub final_mu: f64,
    /// `‖F₀‖∞` at termination.
    pub kkt_residual: f64,
    pub objective: f64,
    pub status: SolveStatus,
    pub max_violation: f64,
    pub trace: Vec<IterationRecord>,
    pub centering: f64,
    /// Wall time of the iteration loop alone, in seconds.
    pub loop_seconds: f64,
    pub message: Option<String>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn into_converged(self) -> Result<Self> {
        if self.converged() {
            Ok(self)
        } else {
            Err(Error::Solver(format!(
                "{:?} after {} iterations (kkt residual {:.3e}){}",
                self.status,
                self.iterations,
                self.kkt_residual,
                self.message.as_deref().map(|m| format!(": {m}")).unwrap_or_default()
            )))
        }
    }

    /// Writes the iteration trace as CSV.
    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "mu", "residual_norm", "kkt_residual", "step"])?;
        for rec in &self.trace {
            w.write_record([
                rec.iter.to_string(),
                format!("{:e}", rec.mu),
                format!("{:e}", rec.residual_norm),
                format!("{:e}", rec.kkt_residual),
                format!("{}", rec.step),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn seconds_per_iteration(&self) -> f64 {
        self.loop_seconds / self.iterations.max(1) as f64
    }
}

/// Outcome of the injectivity test on `[M; Bᵀ; Cᵀ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectivityReport {
    /// `Null(M) ∩ Null(Bᵀ) ∩ Null(Cᵀ) = {0}`.
    pub injective: bool,
    /// The stronger `Null(M) ∩ Null(Bᵀ) = {0}`.
    pub simple_condition: bool,
}

const RANK_TOL: f64 = 1e-10;

/// Checks that the MLCP matrix is injective.
///
/// With diagonal `M` the null space of `M` is spanned by the coordinates with
/// a zero diagonal entry, and when every constraint row touches only one
/// coordinate the intersection with `Null(Cᵀ)` is spanned by the zero-curvature
/// coordinates that no constraint touches. Both conditions then reduce to
/// row-rank tests on subsets of `B`. Otherwise the stacked matrix is checked
/// through its singular values.
pub fn check_injectivity(rep: &PlqRep) -> InjectivityReport {
    let dims = rep.dims();
    let m = rep.m();
    let cmat = rep.cmat();
    let separable_c = (0..dims.l).all(|j| cmat.column(j).iter().filter(|&&v| v != 0.0).count() <= 1);
    if is_diagonal(m) && separable_c {
        let zero_curv: Vec<usize> = (0..dims.k).filter(|&i| m[(i, i)] == 0.0).collect();
        let free: Vec<usize> = zero_curv
            .iter()
            .copied()
            .filter(|&i| cmat.row(i).iter().all(|&v| v == 0.0))
            .collect();
        let rows_independent = |idx: &[usize]| {
            if idx.is_empty() {
                return true;
            }
            let sub = DMatrix::from_fn(dims.n, idx.len(), |j, a| rep.bmat()[(idx[a], j)]);
            has_full_column_rank(&sub, RANK_TOL)
        };
        return InjectivityReport {
            injective: rows_independent(&free),
            simple_condition: rows_independent(&zero_curv),
        };
    }
    let stacked = |with_c: bool| {
        let mut s = vstack(m, &rep.bmat().transpose());
        if with_c {
            s = vstack(&s, &cmat.transpose());
        }
        s
    };
    let full = |mat: &DMatrix<f64>| {
        let (min, max) = singular_value_range(mat);
        dims.k == 0 || (max > 0.0 && min > RANK_TOL * max)
    };
    InjectivityReport {
        injective: full(&stacked(true)),
        simple_condition: full(&stacked(false)),
    }
}

/// The MLCP matrix
///
/// ```text
/// [ 0   0  −Cᵀ   0 ]
/// [ 0   0   0   −Aᵀ]
/// [ C   0   M   −B ]
/// [ 0   A   Bᵀ   0 ]
/// ```
///
/// acting on `(q, w, u, y)`. Its symmetric part is `diag(0, 0, M, 0)`, so it
/// is positive semidefinite as a quadratic form.
pub fn mlcp_matrix(rep: &PlqRep, poly: &Polyhedron) -> DMatrix<f64> {
    let d = rep.dims();
    let p = poly.p();
    let size = d.l + p + d.k + d.n;
    let (oq, ow, ou, oy) = (0, d.l, d.l + p, d.l + p + d.k);
    let mut out = DMatrix::zeros(size, size);
    out.view_mut((oq, ou), (d.l, d.k)).copy_from(&(-rep.cmat().transpose()));
    out.view_mut((ow, oy), (p, d.n)).copy_from(&(-poly.a().transpose()));
    out.view_mut((ou, oq), (d.k, d.l)).copy_from(rep.cmat());
    out.view_mut((ou, ou), (d.k, d.k)).copy_from(rep.m());
    out.view_mut((ou, oy), (d.k, d.n)).copy_from(&(-rep.bmat()));
    out.view_mut((oy, ow), (d.n, p)).copy_from(poly.a());
    out.view_mut((oy, ou), (d.n, d.k)).copy_from(&rep.bmat().transpose());
    out
}

/// Smallest eigenvalue of the symmetric part of a square matrix.
pub fn min_symmetric_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    let sym = (mat + mat.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

//! Regularized FIR estimators
//!
//! ```text
//! min_y  V(Φ L y − z) + γ ‖y‖²   s.t.  Aᵀ y ≤ a,      x = L y,  Q = L Lᵀ
//! ```
//!
//! with `V` one of the PLQ losses, assembled into a single [`PlqRep`] and
//! handed to the interior-point solver.

mod constraints;
pub mod spec;
mod tuning;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipsolver::{check_injectivity, solve, Polyhedron, SolveReport, SolverOptions};
use crate::kernel::{factorize, RegressionModel, StableSplineKernel};
use crate::plq::{self, lift_scalar, make_huber, make_l1, make_l2, make_vapnik, PlqRep};

pub use constraints::{
    complete_monotone_rows, constraints_box, constraints_complete_monotone, constraints_nonneg,
    constraints_unimodal, difference_matrix, nonneg_rows, unimodal_rows,
};
pub use tuning::{
    alpha_grid, closed_form_l2, cv_tune, estimate_sigma2, gamma_from, gamma_grid, ml_objective,
    ml_tune, CvTune, Hyperparams, MlTune,
};

/// Data-fit penalty applied to the residual `Φx − z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Loss {
    /// `‖r‖²`
    L2,
    /// `‖r‖₁`
    L1,
    Huber { kappa: f64 },
    Vapnik { epsilon: f64 },
}

impl Loss {
    pub fn label(&self) -> &'static str {
        match self {
            Loss::L2 => "l2",
            Loss::L1 => "l1",
            Loss::Huber { .. } => "huber",
            Loss::Vapnik { .. } => "vapnik",
        }
    }

    /// Representation on `ℝᵐ`.
    pub fn rep(&self, m: usize) -> Result<PlqRep> {
        match *self {
            Loss::L2 => plq::scale(&lift_scalar(&make_l2(), m)?, 2.0),
            Loss::L1 => lift_scalar(&make_l1(), m),
            Loss::Huber { kappa } => lift_scalar(&make_huber(kappa)?, m),
            Loss::Vapnik { epsilon } => lift_scalar(&make_vapnik(epsilon)?, m),
        }
    }

    /// Direct evaluation on a residual vector.
    pub fn value(&self, r: &DVector<f64>) -> f64 {
        match *self {
            Loss::L2 => r.norm_squared(),
            Loss::L1 => r.iter().map(|v| v.abs()).sum(),
            Loss::Huber { kappa } => r
                .iter()
                .map(|v| {
                    let a = v.abs();
                    if a <= kappa {
                        0.5 * a * a
                    } else {
                        kappa * a - 0.5 * kappa * kappa
                    }
                })
                .sum(),
            Loss::Vapnik { epsilon } => r.iter().map(|v| (v.abs() - epsilon).max(0.0)).sum(),
        }
    }

    /// Degree `d` with `V(s r) = s^d V_s(r)` for the rescaled loss `V_s`.
    pub fn degree(&self) -> i32 {
        match self {
            Loss::L2 | Loss::Huber { .. } => 2,
            Loss::L1 | Loss::Vapnik { .. } => 1,
        }
    }

    /// Loss on data divided by `s`: thresholds shrink by `s`.
    pub fn rescaled(&self, s: f64) -> Loss {
        match *self {
            Loss::Huber { kappa } => Loss::Huber { kappa: kappa / s },
            Loss::Vapnik { epsilon } => Loss::Vapnik { epsilon: epsilon / s },
            other => other,
        }
    }
}

/// `‖y‖²` on `ℝⁿ`.
pub fn squared_norm(n: usize) -> Result<PlqRep> {
    plq::scale(&lift_scalar(&make_l2(), n)?, 2.0)
}

/// One identification problem: data, kernel factor, loss, weight and
/// constraints on `y`.
#[derive(Debug, Clone)]
pub struct IdentProblem {
    pub model: RegressionModel,
    pub kernel: StableSplineKernel,
    /// Factor with `Q = L Lᵀ`.
    pub l: DMatrix<f64>,
    pub loss: Loss,
    pub gamma: f64,
    pub constraints: Polyhedron,
}

impl IdentProblem {
    /// Unconstrained problem with `L` the Cholesky factor of the kernel Gram
    /// matrix.
    pub fn new(model: RegressionModel, kernel: StableSplineKernel, loss: Loss, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::ParameterDomain(format!("gamma must be positive, got {gamma}")));
        }
        let n = model.n();
        let l = factorize(&kernel.gram(n)?)?.l;
        Ok(Self { model, kernel, l, loss, gamma, constraints: Polyhedron::none(n) })
    }

    pub fn with_constraints(mut self, constraints: Polyhedron) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    /// `Φ L`.
    pub fn design(&self) -> DMatrix<f64> {
        &self.model.phi * &self.l
    }

    /// Objective `V(Φx − z) + γ xᵀQ⁻¹x` evaluated at `y` (with `x = L y`).
    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        let r = self.design() * y - &self.model.z;
        self.loss.value(&r) + self.gamma * y.norm_squared()
    }
}

/// `V(ΦLy − z) + γ‖y‖²` as one representation, plus the constraints.
pub fn assemble(problem: &IdentProblem) -> Result<(PlqRep, Polyhedron)> {
    let design = problem.design();
    assemble_parts(&problem.loss, &design, &problem.model.z, problem.gamma, &problem.constraints)
}

fn assemble_parts(
    loss: &Loss,
    design: &DMatrix<f64>,
    z: &DVector<f64>,
    gamma: f64,
    poly: &Polyhedron,
) -> Result<(PlqRep, Polyhedron)> {
    let (m, n) = design.shape();
    if z.len() != m {
        return Err(Error::Shape(format!("design has {m} rows, data has {}", z.len())));
    }
    if poly.n() != n {
        return Err(Error::Shape(format!("constraints act on R^{}, problem on R^{n}", poly.n())));
    }
    let fit = plq::compose_affine_unchecked(&loss.rep(m)?, design, &(-z));
    let rep = plq::add(&fit, &plq::scale(&squared_norm(n)?, gamma)?)?;
    if !check_injectivity(&rep).injective {
        return Err(Error::Structure("assembled problem fails the injectivity condition".into()));
    }
    Ok((rep, poly.clone()))
}

/// Solution of an [`IdentProblem`] in original units.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// `V(Φx − z) + γ xᵀQ⁻¹x`.
    pub objective: f64,
    /// Report of the solve on the rescaled data.
    pub report: SolveReport,
    /// Factor the data was divided by before solving.
    pub data_scale: f64,
}

impl Estimate {
    pub fn ensure_converged(self) -> Result<Self> {
        if self.report.converged() {
            Ok(self)
        } else {
            Err(self.report.into_converged().unwrap_err())
        }
    }
}

/// The same polyhedron with right-hand side divided by `s` and every
/// nonzero constraint normalized to a unit normal.
fn unit_rows(poly: &Polyhedron, s: f64) -> Result<Polyhedron> {
    let mut a = poly.a().clone();
    let mut rhs = poly.rhs() / s;
    for (j, mut col) in a.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
            rhs[j] /= norm;
        }
    }
    Polyhedron::new(a, rhs)
}

/// Solves the problem after dividing the data by `‖z‖∞` and normalizing
/// the constraints.
///
/// With `y = s y'` the loss becomes `s^d V_s(ΦLy' − z/s)` and the weight
/// `γ' = γ s^{2−d}`, so the rescaled problem has the same minimizer.
pub fn estimate(problem: &IdentProblem, opts: &SolverOptions) -> Result<Estimate> {
    let z = &problem.model.z;
    let s = {
        let v = z.amax();
        if v > 0.0 && v.is_finite() {
            v
        } else {
            1.0
        }
    };
    let loss = problem.loss.rescaled(s);
    let gamma = problem.gamma * s.powi(2 - problem.loss.degree());
    let poly = unit_rows(&problem.constraints, s)?;
    let design = problem.design();
    let (rep, poly) = assemble_parts(&loss, &design, &(z / s), gamma, &poly)?;
    let report = solve(&rep, &poly, opts)?;
    let y = &report.y_star * s;
    let x = &problem.l * &y;
    let r = &design * &y - z;
    let objective = problem.loss.value(&r) + problem.gamma * y.norm_squared();
    Ok(Estimate { x, y, objective, report, data_scale: s })
}

/// Mode indices to try for the unimodal estimator: all of `1..=n` when
/// `n ≤ 100`, otherwise a coarse pass (every 5th) refined to ±4 around the
/// best coarse mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModeCandidates {
    Auto,
    List(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct ModeSelection {
    pub mode: usize,
    pub estimate: Estimate,
    /// `(k, objective)` for every candidate that converged.
    pub objectives: Vec<(usize, f64)>,
}

/// Solves the unimodal problem for each candidate mode (the problem's own
/// constraints are replaced) and keeps the smallest objective. Ties go to
/// the smaller mode.
pub fn select_unimodal_mode(
    problem: &IdentProblem,
    candidates: &ModeCandidates,
    opts: &SolverOptions,
) -> Result<ModeSelection> {
    let n = problem.n();
    let run = |ks: &[usize]| -> Result<Vec<(usize, Estimate)>> {
        let results: Vec<_> = ks
            .par_iter()
            .map(|&k| {
                let poly = constraints_unimodal(&problem.l, k)?;
                let p = problem.clone().with_constraints(poly);
                estimate(&p, opts).and_then(Estimate::ensure_converged).map(|e| (k, e))
            })
            .collect();
        let mut ok = Vec::new();
        for r in results {
            match r {
                Ok(v) => ok.push(v),
                Err(Error::Solver(msg)) => log::warn!("unimodal candidate skipped: {msg}"),
                Err(e) => return Err(e),
            }
        }
        Ok(ok)
    };
    let mut solved = match candidates {
        ModeCandidates::List(ks) => {
            if ks.is_empty() {
                return Err(Error::ParameterDomain("empty mode candidate set".into()));
            }
            if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
                return Err(Error::ParameterDomain(format!("mode {k} outside 1..={n}")));
            }
            run(ks)?
        }
        ModeCandidates::Auto if n <= 100 => run(&(1..=n).collect::<Vec<_>>())?,
        ModeCandidates::Auto => {
            let coarse: Vec<usize> = (1..=n).step_by(5).collect();
            let mut solved = run(&coarse)?;
            if let Some((best, _)) = argmin_mode(&solved) {
                let fine: Vec<usize> = (best.saturating_sub(4).max(1)..=(best + 4).min(n))
                    .filter(|k| !coarse.contains(k))
                    .collect();
                solved.extend(run(&fine)?);
            }
            solved
        }
    };
    solved.sort_by_key(|(k, _)| *k);
    let (mode, _) = argmin_mode(&solved)
        .ok_or_else(|| Error::Solver("every unimodal candidate failed".into()))?;
    let objectives = solved.iter().map(|(k, e)| (*k, e.objective)).collect();
    let estimate = solved.into_iter().find(|(k, _)| *k == mode).unwrap().1;
    Ok(ModeSelection { mode, estimate, objectives })
}

fn argmin_mode(solved: &[(usize, Estimate)]) -> Option<(usize, f64)> {
    let mut sorted: Vec<_> = solved.iter().map(|(k, e)| (*k, e.objective)).collect();
    sorted.sort_by_key(|(k, _)| *k);
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in sorted {
        match best {
            Some((_, b)) if v >= b - 1e-9 * (1.0 + b.abs()) => {}
            _ => best = Some((k, v)),
        }
    }
    best
}

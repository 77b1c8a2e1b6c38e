//! Noise variance, marginal likelihood and cross-validation tuning.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate, Estimate, IdentProblem, Loss};
use crate::error::{Error, Result};
use crate::ipsolver::SolverOptions;
use crate::kernel::{factorize, KernelFamily, RegressionModel, StableSplineKernel};
use crate::linalg::{cholesky_lower, cholesky_solve, flush_tiny, svd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    /// Kernel scale.
    pub lambda: f64,
    pub sigma2: f64,
    pub gamma: f64,
}

/// `[0.01, 0.05, 0.10, …, 0.95, 0.99]`.
pub fn alpha_grid() -> Vec<f64> {
    let mut a = vec![0.01];
    a.extend((1..=19).map(|i| i as f64 * 0.05));
    a.push(0.99);
    a
}

/// 50 log-spaced values from `g/100` to `100 g`.
pub fn gamma_grid(center: f64) -> Vec<f64> {
    let (lo, hi) = ((center / 100.0).log10(), (center * 100.0).log10());
    (0..50).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / 49.0)).collect()
}

/// Weight for the loss given kernel scale and noise variance: `σ²/λ` for
/// the quadratic-type losses, `σ²/(2√2 λ)` for the absolute-value-type ones.
pub fn gamma_from(hp: &Hyperparams, loss: &Loss) -> f64 {
    match loss {
        Loss::L2 | Loss::Huber { .. } => hp.sigma2 / hp.lambda,
        Loss::L1 | Loss::Vapnik { .. } => hp.sigma2 / (2.0 * 2f64.sqrt() * hp.lambda),
    }
}

/// Columns `u(t − j − delay + 1)`, `j = 1..=p`, rebuilt from the first
/// column of a convolution regressor when `p` exceeds its width.
fn fir_regressor(phi: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    if p <= phi.ncols() {
        return phi.columns(0, p).into_owned();
    }
    let first = phi.column(0);
    DMatrix::from_fn(phi.nrows(), p, |t, j| if t >= j { first[t - j] } else { 0.0 })
}

/// Default FIR order for [`estimate_sigma2`]: `min(⌊m/2⌋, 2n)`.
pub fn default_fir_order(model: &RegressionModel) -> usize {
    (model.m() / 2).min(2 * model.n()).max(1)
}

/// Noise variance from an unregularized least-squares FIR fit of order `p`:
/// `‖z − Φ_p θ̂‖² / (m − p)`.
///
/// `Φ` must be a convolution regressor (as built by
/// [`build_phi`](crate::kernel::build_phi)) when `p > n`.
pub fn estimate_sigma2(model: &RegressionModel, p: usize) -> Result<f64> {
    let m = model.m();
    if p == 0 || p >= m {
        return Err(Error::ParameterDomain(format!("FIR order must satisfy 1 <= p < m = {m}, got {p}")));
    }
    let phi = fir_regressor(&model.phi, p);
    let svd = svd(&phi, true, true)?;
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Conditioning(format!(
            "order-{p} FIR regressor is rank deficient (singular values {smin:.2e}..{smax:.2e}); try a smaller FIR order"
        )));
    }
    let theta = svd.solve(&model.z, 0.0).map_err(|e| Error::Conditioning(e.to_string()))?;
    let r = &model.z - phi * theta;
    Ok(r.norm_squared() / (m - p) as f64)
}

/// `ΦQΦᵀ` in spectral form: `Σ = λΦQΦᵀ + σ²I` has eigenvalues
/// `λ sᵢ² + σ²` on the range of `U` and `σ²` elsewhere.
struct Spectrum {
    s2: Vec<f64>,
    proj2: Vec<f64>,
    rest: f64,
    m: usize,
}

impl Spectrum {
    fn new(phi: &DMatrix<f64>, z: &DVector<f64>, q: &DMatrix<f64>) -> Result<Self> {
        let scale = q.amax();
        let mut eig = SymmetricEigen::new(flush_tiny(&(q / scale)));
        if !eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).all(|v| v.is_finite()) {
            return Err(Error::Conditioning("eigendecomposition of the kernel produced non-finite values".into()));
        }
        eig.eigenvalues *= scale;
        let top = eig.eigenvalues.max();
        let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&j| eig.eigenvalues[j] > 1e-16 * top).collect();
        let mut g = DMatrix::zeros(phi.nrows(), keep.len());
        for (c, &j) in keep.iter().enumerate() {
            g.set_column(c, &(phi * eig.eigenvectors.column(j) * eig.eigenvalues[j].sqrt()));
        }
        let svd = svd(&g, true, false)?;
        let u = svd.u.expect("requested");
        let proj = u.tr_mul(z);
        let proj2: Vec<f64> = proj.iter().map(|v| v * v).collect();
        let rest = (z.norm_squared() - proj2.iter().sum::<f64>()).max(0.0);
        Ok(Self {
            s2: svd.singular_values.iter().map(|s| s * s).collect(),
            proj2,
            rest,
            m: phi.nrows(),
        })
    }

    fn total(&self) -> f64 {
        self.s2.iter().sum()
    }

    /// `zᵀΣ⁻¹z + log det Σ`.
    fn objective(&self, lambda: f64, sigma2: f64) -> f64 {
        let mut v = self.rest / sigma2 + (self.m - self.s2.len()) as f64 * sigma2.ln();
        for (s2, p2) in self.s2.iter().zip(&self.proj2) {
            let e = lambda * s2 + sigma2;
            v += p2 / e + e.ln();
        }
        v
    }
}

/// `zᵀΣ⁻¹z + log det Σ` with `Σ = λΦQ(α)Φᵀ + σ²I`, computed through a
/// Cholesky factor of `Σ`.
pub fn ml_objective(model: &RegressionModel, kernel: &StableSplineKernel, lambda: f64, sigma2: f64) -> Result<f64> {
    let q = kernel.gram(model.n())?;
    let mut sigma = &model.phi * q * model.phi.transpose() * lambda;
    for i in 0..model.m() {
        sigma[(i, i)] += sigma2;
    }
    let l = cholesky_lower(&sigma)?;
    let quad = model.z.dot(&cholesky_solve(&l, &model.z));
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(quad + logdet)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlTune {
    pub hp: Hyperparams,
    /// Marginal-likelihood objective at `hp`.
    pub objective: f64,
    /// The grid minimum sat on the edge of the λ grid.
    pub lambda_at_bound: bool,
    /// Every `(α, λ, objective)` evaluated.
    pub evaluated: Vec<(f64, f64, f64)>,
}

const LAMBDA_DECADES: f64 = 3.0;
const LAMBDA_PER_DECADE: usize = 4;

/// Minimizes `zᵀΣ⁻¹z + log det Σ` over `(λ, α)` with `σ²` fixed.
///
/// `α` runs over [`alpha_grid`], `λ` over 6 decades centred on the value that
/// makes `trace(λΦQΦᵀ)` equal `‖z‖²`. The best grid point is refined once in
/// `λ` and then in `α`, halving the step twice each time. `gamma` in the
/// result is `σ²/λ`.
pub fn ml_tune(model: &RegressionModel, family: KernelFamily, sigma2: f64) -> Result<MlTune> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::ParameterDomain(format!("sigma2 must be positive, got {sigma2}")));
    }
    let n = model.n();
    let spectrum = |alpha: f64| -> Result<Spectrum> {
        let q = StableSplineKernel::new(family, alpha)?.gram(n)?;
        Spectrum::new(&model.phi, &model.z, &q)
    };
    let zz = model.z.norm_squared().max(f64::MIN_POSITIVE);
    let steps = 2 * LAMBDA_DECADES as usize * LAMBDA_PER_DECADE;
    let h = 1.0 / LAMBDA_PER_DECADE as f64;

    let per_alpha: Vec<Result<(f64, Vec<(f64, f64)>)>> = alpha_grid()
        .into_par_iter()
        .map(|alpha| {
            let sp = spectrum(alpha)?;
            let total = sp.total();
            if !(total > 0.0) {
                return Ok((alpha, Vec::new()));
            }
            let center = (zz / total).log10();
            let vals = (0..=steps)
                .map(|i| {
                    let lambda = 10f64.powf(center - LAMBDA_DECADES + i as f64 * h);
                    (lambda, sp.objective(lambda, sigma2))
                })
                .collect();
            Ok((alpha, vals))
        })
        .collect();

    let mut evaluated = Vec::new();
    let mut best: Option<(f64, f64, f64, bool)> = None;
    for r in per_alpha {
        let (alpha, vals) = r?;
        for (i, &(lambda, v)) in vals.iter().enumerate() {
            evaluated.push((alpha, lambda, v));
            if v.is_finite() && best.map_or(true, |b| v < b.2) {
                best = Some((alpha, lambda, v, i == 0 || i == steps));
            }
        }
    }
    let (mut alpha, mut lambda, mut obj, at_bound) =
        best.ok_or_else(|| Error::Conditioning("marginal likelihood undefined on the whole grid".into()))?;

    let sp = spectrum(alpha)?;
    for step in [h / 2.0, h / 4.0] {
        for sign in [-1.0, 1.0] {
            let cand = lambda * 10f64.powf(sign * step);
            let v = sp.objective(cand, sigma2);
            evaluated.push((alpha, cand, v));
            if v < obj {
                (lambda, obj) = (cand, v);
                break;
            }
        }
    }
    for step in [0.025, 0.0125] {
        for sign in [-1.0, 1.0] {
            let cand = alpha + sign * step;
            if !(0.0..1.0).contains(&cand) {
                continue;
            }
            let v = spectrum(cand)?.objective(lambda, sigma2);
            evaluated.push((cand, lambda, v));
            if v < obj {
                (alpha, obj) = (cand, v);
                break;
            }
        }
    }
    Ok(MlTune {
        hp: Hyperparams { alpha, lambda, sigma2, gamma: sigma2 / lambda },
        objective: obj,
        lambda_at_bound: at_bound,
        evaluated,
    })
}

/// `x̂ = λ Q Φᵀ Σ⁻¹ z` with `Σ = λΦQΦᵀ + σ²I`.
pub fn closed_form_l2(model: &RegressionModel, family: KernelFamily, hp: &Hyperparams) -> Result<DVector<f64>> {
    let q = StableSplineKernel::new(family, hp.alpha)?.gram(model.n())?;
    let qpt = &q * model.phi.transpose();
    let mut sigma = &model.phi * &qpt * hp.lambda;
    for i in 0..model.m() {
        sigma[(i, i)] += hp.sigma2;
    }
    let l = cholesky_lower(&sigma)?;
    Ok(qpt * cholesky_solve(&l, &model.z) * hp.lambda)
}

#[derive(Debug, Clone)]
pub struct CvTune {
    pub alpha: f64,
    pub gamma: f64,
    /// Validation score at the selected pair.
    pub score: f64,
    /// Every `(α, γ, score)` that was evaluated.
    pub evaluated: Vec<(f64, f64, f64)>,
    pub skipped: usize,
    /// Fit on all the data with the selected pair.
    pub estimate: Estimate,
}

fn validation_score(loss: &Loss, r: &DVector<f64>) -> f64 {
    match loss {
        Loss::L2 => r.norm_squared(),
        _ => r.iter().map(|v| v.abs()).sum(),
    }
}

/// Hold-out tuning of `(α, γ)` over [`alpha_grid`] × [`gamma_grid`]`(g)`.
///
/// The first half of the data trains, the second half validates. Scores are
/// the sum of squared validation errors for the L2 loss and of absolute
/// errors otherwise. Grid points where the solver fails are skipped.
pub fn cv_tune(
    model: &RegressionModel,
    family: KernelFamily,
    loss: Loss,
    gamma_center: f64,
    opts: &SolverOptions,
) -> Result<CvTune> {
    let m = model.m();
    if m < 4 {
        return Err(Error::ParameterDomain(format!("cross validation needs m >= 4, got {m}")));
    }
    if !(gamma_center > 0.0) || !gamma_center.is_finite() {
        return Err(Error::ParameterDomain(format!("gamma center must be positive, got {gamma_center}")));
    }
    let mt = m / 2;
    let train = model.rows(0, mt);
    let valid = model.rows(mt, m - mt);
    let gammas = gamma_grid(gamma_center);
    let n = model.n();

    let factors: Vec<Result<(f64, DMatrix<f64>)>> = alpha_grid()
        .into_par_iter()
        .map(|a| Ok((a, factorize(&StableSplineKernel::new(family, a)?.gram(n)?)?.l)))
        .collect();
    let factors: Vec<(f64, DMatrix<f64>)> = factors
        .into_iter()
        .filter_map(|r| match r {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("cv: kernel factorization failed: {e}");
                None
            }
        })
        .collect();

    let scores: Vec<Option<(f64, f64, f64)>> = if loss == Loss::L2 {
        factors
            .par_iter()
            .flat_map_iter(|(alpha, l)| {
                let Ok(svd) = svd(&(&train.phi * l), true, true) else {
                    log::warn!("cv: alpha={alpha} skipped, SVD failed");
                    return vec![None; gammas.len()];
                };
                let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
                let uz = u.tr_mul(&train.z);
                let gv = &valid.phi * l * vt.transpose();
                let s = svd.singular_values;
                gammas
                    .iter()
                    .map(|&gamma| {
                        let coef = DVector::from_fn(s.len(), |i, _| s[i] * uz[i] / (s[i] * s[i] + gamma));
                        let r = &gv * coef - &valid.z;
                        Some((*alpha, gamma, validation_score(&loss, &r)))
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    } else {
        let grid: Vec<(usize, f64)> = (0..factors.len())
            .flat_map(|i| gammas.iter().map(move |&g| (i, g)))
            .collect();
        grid.par_iter()
            .map(|&(i, gamma)| {
                let (alpha, l) = &factors[i];
                let problem = IdentProblem {
                    model: train.clone(),
                    kernel: StableSplineKernel { family, alpha: *alpha },
                    l: l.clone(),
                    loss,
                    gamma,
                    constraints: crate::ipsolver::Polyhedron::none(n),
                };
                match estimate(&problem, opts).and_then(Estimate::ensure_converged) {
                    Ok(e) => {
                        let r = &valid.phi * &e.x - &valid.z;
                        Some((*alpha, gamma, validation_score(&loss, &r)))
                    }
                    Err(e) => {
                        log::warn!("cv: alpha={alpha} gamma={gamma:.3e} skipped: {e}");
                        None
                    }
                }
            })
            .collect()
    };

    let skipped = scores.iter().filter(|s| s.is_none()).count()
        + (alpha_grid().len() - factors.len()) * gammas.len();
    let evaluated: Vec<(f64, f64, f64)> = scores.into_iter().flatten().collect();
    let &(alpha, gamma, score) = evaluated
        .iter()
        .filter(|e| e.2.is_finite())
        .fold(None, |best: Option<&(f64, f64, f64)>, e| match best {
            Some(b) if b.2 <= e.2 => Some(b),
            _ => Some(e),
        })
        .ok_or_else(|| Error::Solver("every cross-validation grid point failed".into()))?;

    let l = factors.iter().find(|(a, _)| *a == alpha).unwrap().1.clone();
    let problem = IdentProblem {
        model: model.clone(),
        kernel: StableSplineKernel { family, alpha },
        l,
        loss,
        gamma,
        constraints: crate::ipsolver::Polyhedron::none(n),
    };
    let estimate = estimate(&problem, opts)?.ensure_converged()?;
    Ok(CvTune { alpha, gamma, score, evaluated, skipped, estimate })
}

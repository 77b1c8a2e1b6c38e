//! JSON problem specification for end-to-end identification.
//!
//! ```json
//! {
//!   "kernel": "tc",
//!   "n": 50,
//!   "delay": 1,
//!   "loss": {"name": "huber", "kappa": 1.0},
//!   "hyperparameters": "tune:ml",
//!   "constraints": "unimodal:auto"
//! }
//! ```
//!
//! `hyperparameters` is `"tune:ml"`, `"tune:cv"` or an object with `alpha`
//! and either `gamma` or `lambda` (the weight then follows from the noise
//! variance). `constraints` is `"none"`, `"nonneg"`, `"unimodal:auto"`,
//! `"unimodal:<k>"`, `"cm:<order>"` or `{"box": {"lower": .., "upper": ..}}`.

use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{
    constraints_box, constraints_complete_monotone, constraints_nonneg, constraints_unimodal,
    cv_tune, estimate, estimate_sigma2, gamma_from, ml_tune, select_unimodal_mode, Hyperparams,
    IdentProblem, Loss, ModeCandidates,
};
use crate::error::{Error, Result};
use crate::ipsolver::{IterationRecord, SolveStatus, SolverOptions};
use crate::kernel::{fit_metric, peak_fit, KernelFamily, RegressionModel, StableSplineKernel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperRepr")]
pub enum HyperSpec {
    TuneMl,
    TuneCv,
    Fixed { alpha: f64, gamma: Option<f64>, lambda: Option<f64> },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HyperRepr {
    Text(String),
    Fixed {
        alpha: f64,
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default)]
        lambda: Option<f64>,
    },
}

impl TryFrom<HyperRepr> for HyperSpec {
    type Error = String;

    fn try_from(r: HyperRepr) -> std::result::Result<Self, String> {
        match r {
            HyperRepr::Text(s) => match s.as_str() {
                "tune:ml" => Ok(HyperSpec::TuneMl),
                "tune:cv" => Ok(HyperSpec::TuneCv),
                other => Err(format!("unknown hyperparameter mode '{other}'")),
            },
            HyperRepr::Fixed { alpha, gamma, lambda } => {
                if gamma.is_none() && lambda.is_none() {
                    return Err("fixed hyperparameters need gamma or lambda".into());
                }
                Ok(HyperSpec::Fixed { alpha, gamma, lambda })
            }
        }
    }
}

impl Default for HyperSpec {
    fn default() -> Self {
        HyperSpec::TuneMl
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConstraintRepr")]
pub enum ConstraintSpec {
    None,
    Nonneg,
    UnimodalAuto,
    Unimodal(usize),
    CompleteMonotone(usize),
    Box { lower: f64, upper: f64 },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConstraintRepr {
    Text(String),
    Box { r#box: BoxRepr },
}

#[derive(Deserialize)]
struct BoxRepr {
    #[serde(default = "neg_inf")]
    lower: f64,
    #[serde(default = "pos_inf")]
    upper: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

impl FromStr for ConstraintSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ParameterDomain(format!("unknown constraint spec '{s}'"));
        let count = |v: &str| v.parse::<usize>().map_err(|_| bad());
        match s.split_once(':') {
            None if s == "none" => Ok(ConstraintSpec::None),
            None if s == "nonneg" => Ok(ConstraintSpec::Nonneg),
            Some(("unimodal", "auto")) => Ok(ConstraintSpec::UnimodalAuto),
            Some(("unimodal", k)) => Ok(ConstraintSpec::Unimodal(count(k)?)),
            Some(("cm", k)) => Ok(ConstraintSpec::CompleteMonotone(count(k)?)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<ConstraintRepr> for ConstraintSpec {
    type Error = String;

    fn try_from(r: ConstraintRepr) -> std::result::Result<Self, String> {
        match r {
            ConstraintRepr::Text(s) => s.parse().map_err(|e: Error| e.to_string()),
            ConstraintRepr::Box { r#box: b } => Ok(ConstraintSpec::Box { lower: b.lower, upper: b.upper }),
        }
    }
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec::None
    }
}

fn default_delay() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kernel: KernelFamily,
    /// FIR length.
    pub n: usize,
    #[serde(default = "default_delay")]
    pub delay: usize,
    pub loss: Loss,
    #[serde(default)]
    pub hyperparameters: HyperSpec,
    #[serde(default)]
    pub constraints: ConstraintSpec,
    /// Known noise variance; estimated from an FIR fit when absent.
    #[serde(default)]
    pub sigma2: Option<f64>,
    /// Order of the FIR fit used for the noise variance.
    #[serde(default)]
    pub fir_order: Option<usize>,
    /// True impulse response, for reporting the fit.
    #[serde(default)]
    pub truth: Option<Vec<f64>>,
}

impl ProblemSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectedHyperparams {
    pub kernel: KernelFamily,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: Option<f64>,
    pub sigma2: Option<f64>,
    pub lambda_at_bound: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentifyOutput {
    pub x: Vec<f64>,
    pub fit: Option<f64>,
    pub peak_fit: Option<f64>,
    pub hyperparameters: SelectedHyperparams,
    pub loss: Loss,
    pub mode: Option<usize>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub data_scale: f64,
    pub trace: Vec<IterationRecord>,
}

/// Noise variance from an FIR fit, halving the order while the regressor is
/// too ill-conditioned.
pub fn estimate_sigma2_fallback(model: &RegressionModel, p: usize) -> Result<f64> {
    let mut p = p.min(model.m().saturating_sub(1)).max(1);
    loop {
        match estimate_sigma2(model, p) {
            Err(Error::Conditioning(msg)) if p > 1 => {
                log::info!("{msg}; retrying with order {}", p / 2);
                p /= 2;
            }
            other => return other,
        }
    }
}

/// Runs the estimator described by `spec` on input `u` and output `z`.
pub fn identify(u: &[f64], z: DVector<f64>, spec: &ProblemSpec, opts: &SolverOptions) -> Result<IdentifyOutput> {
    let model = RegressionModel::from_io(u, z, spec.n, spec.delay)?;
    let sigma2 = || -> Result<f64> {
        match spec.sigma2 {
            Some(s) if s > 0.0 => Ok(s),
            Some(s) => Err(Error::ParameterDomain(format!("sigma2 must be positive, got {s}"))),
            None => estimate_sigma2_fallback(&model, spec.fir_order.unwrap_or_else(|| super::tuning::default_fir_order(&model))),
        }
    };

    let hp = match spec.hyperparameters {
        HyperSpec::TuneMl => {
            let s2 = sigma2()?;
            let t = ml_tune(&model, spec.kernel, s2)?;
            SelectedHyperparams {
                kernel: spec.kernel,
                alpha: t.hp.alpha,
                gamma: gamma_from(&t.hp, &spec.loss),
                lambda: Some(t.hp.lambda),
                sigma2: Some(s2),
                lambda_at_bound: Some(t.lambda_at_bound),
            }
        }
        HyperSpec::TuneCv => {
            let s2 = sigma2()?;
            let t = ml_tune(&model, spec.kernel, s2)?;
            let center = gamma_from(&t.hp, &spec.loss);
            let cv = cv_tune(&model, spec.kernel, spec.loss, center, opts)?;
            SelectedHyperparams {
                kernel: spec.kernel,
                alpha: cv.alpha,
                gamma: cv.gamma,
                lambda: None,
                sigma2: Some(s2),
                lambda_at_bound: None,
            }
        }
        HyperSpec::Fixed { alpha, gamma: Some(gamma), lambda } => SelectedHyperparams {
            kernel: spec.kernel,
            alpha,
            gamma,
            lambda,
            sigma2: spec.sigma2,
            lambda_at_bound: None,
        },
        HyperSpec::Fixed { alpha, gamma: None, lambda: Some(lambda) } => {
            let s2 = sigma2()?;
            let h = Hyperparams { alpha, lambda, sigma2: s2, gamma: 0.0 };
            SelectedHyperparams {
                kernel: spec.kernel,
                alpha,
                gamma: gamma_from(&h, &spec.loss),
                lambda: Some(lambda),
                sigma2: Some(s2),
                lambda_at_bound: None,
            }
        }
        HyperSpec::Fixed { gamma: None, lambda: None, .. } => {
            return Err(Error::ParameterDomain("fixed hyperparameters need gamma or lambda".into()))
        }
    };

    let kernel = StableSplineKernel::new(spec.kernel, hp.alpha)?;
    let problem = IdentProblem::new(model, kernel, spec.loss, hp.gamma)?;
    let (est, mode) = match spec.constraints {
        ConstraintSpec::UnimodalAuto => {
            let sel = select_unimodal_mode(&problem, &ModeCandidates::Auto, opts)?;
            (sel.estimate, Some(sel.mode))
        }
        other => {
            let poly = match other {
                ConstraintSpec::None => problem.constraints.clone(),
                ConstraintSpec::Nonneg => constraints_nonneg(&problem.l),
                ConstraintSpec::Unimodal(k) => constraints_unimodal(&problem.l, k)?,
                ConstraintSpec::CompleteMonotone(k) => constraints_complete_monotone(&problem.l, k)?,
                ConstraintSpec::Box { lower, upper } => constraints_box(&problem.l, lower, upper)?,
                ConstraintSpec::UnimodalAuto => unreachable!(),
            };
            let mode = match other {
                ConstraintSpec::Unimodal(k) => Some(k),
                _ => None,
            };
            (estimate(&problem.with_constraints(poly), opts)?, mode)
        }
    };

    let x: Vec<f64> = est.x.iter().copied().collect();
    let (fit, pfit) = match &spec.truth {
        Some(t) => (fit_metric(t, &x).ok(), peak_fit(t, &x).ok()),
        None => (None, None),
    };
    Ok(IdentifyOutput {
        x,
        fit,
        peak_fit: pfit,
        hyperparameters: hp,
        loss: spec.loss,
        mode,
        objective: est.objective,
        status: est.report.status,
        iterations: est.report.iterations,
        kkt_residual: est.report.kkt_residual,
        max_violation: est.report.max_violation,
        data_scale: est.data_scale,
        trace: est.report.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_spec() {
        let s = r#"{"kernel":"ss2","n":20,"loss":{"name":"vapnik","epsilon":0.1},
                    "hyperparameters":{"alpha":0.8,"gamma":0.5},
                    "constraints":{"box":{"lower":-1,"upper":2}}}"#;
        let spec = ProblemSpec::from_json(s).unwrap();
        assert_eq!(spec.kernel, KernelFamily::Ss2);
        assert_eq!(spec.delay, 1);
        assert_eq!(spec.loss, Loss::Vapnik { epsilon: 0.1 });
        assert_eq!(spec.hyperparameters, HyperSpec::Fixed { alpha: 0.8, gamma: Some(0.5), lambda: None });
        assert_eq!(spec.constraints, ConstraintSpec::Box { lower: -1.0, upper: 2.0 });
    }

    #[test]
    fn parses_strings() {
        let spec = ProblemSpec::from_json(
            r#"{"kernel":"tc","n":5,"loss":{"name":"l1"},"hyperparameters":"tune:cv","constraints":"cm:5"}"#,
        )
        .unwrap();
        assert_eq!(spec.hyperparameters, HyperSpec::TuneCv);
        assert_eq!(spec.constraints, ConstraintSpec::CompleteMonotone(5));
        assert_eq!("unimodal:auto".parse::<ConstraintSpec>().unwrap(), ConstraintSpec::UnimodalAuto);
        assert_eq!("unimodal:7".parse::<ConstraintSpec>().unwrap(), ConstraintSpec::Unimodal(7));
        assert!("unimodal:x".parse::<ConstraintSpec>().is_err());
        assert!(ProblemSpec::from_json(r#"{"kernel":"tc","n":5,"loss":{"name":"l2"},"hyperparameters":"tune:aic"}"#).is_err());
        assert!(ProblemSpec::from_json(r#"{"kernel":"tc","n":5,"loss":{"name":"l2"},"hyperparameters":{"alpha":0.5}}"#).is_err());
    }
}

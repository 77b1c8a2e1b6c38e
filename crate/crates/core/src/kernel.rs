//! Stable spline kernels, their Cholesky factors, FIR regressors and the
//! impulse-response fit metric.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, mat_inf_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// First-order stable spline (TC): `α^max(i,j)`.
    Tc,
    /// Second-order stable spline.
    Ss2,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tc" => Ok(Self::Tc),
            "ss2" | "ss" => Ok(Self::Ss2),
            other => Err(Error::ParameterDomain(format!("unknown kernel family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableSplineKernel {
    pub family: KernelFamily,
    pub alpha: f64,
}

impl StableSplineKernel {
    pub fn new(family: KernelFamily, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::ParameterDomain(format!("kernel alpha must lie in [0, 1), got {alpha}")));
        }
        Ok(Self { family, alpha })
    }

    /// Kernel entry for 1-based indices `i`, `j`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let a = self.alpha;
        let mx = i.max(j) as i32;
        match self.family {
            KernelFamily::Tc => a.powi(mx),
            KernelFamily::Ss2 => {
                a.powi((i + j) as i32) * a.powi(mx) / 2.0 - a.powi(3 * mx) / 6.0
            }
        }
    }

    /// `n x n` Gram matrix. Storage is 0-based; entry `(i, j)` is the kernel
    /// evaluated at `(i + 1, j + 1)`.
    pub fn gram(&self, n: usize) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::ParameterDomain("gram needs n >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::ParameterDomain(format!(
                "kernel alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| self.entry(i + 1, j + 1)))
    }
}

/// Lower-triangular `L` with `Q = L Lᵀ` (up to the recorded jitter).
#[derive(Debug, Clone)]
pub struct KernelFactor {
    pub l: DMatrix<f64>,
    /// Diagonal jitter added before a successful retry, 0 when none was
    /// needed.
    pub jitter: f64,
}

/// Cholesky factor of a kernel matrix. If the plain factorization breaks
/// down, `1e-12·trace(Q)/n` is added to the diagonal and the factorization is
/// retried once.
pub fn factorize(q: &DMatrix<f64>) -> Result<KernelFactor> {
    match cholesky_lower(q) {
        Ok(l) => Ok(KernelFactor { l, jitter: 0.0 }),
        Err(Error::Factorization { .. }) => {
            let n = q.nrows();
            let jitter = 1e-12 * q.trace() / n as f64;
            if !(jitter > 0.0) {
                return cholesky_lower(q).map(|l| KernelFactor { l, jitter: 0.0 });
            }
            let mut qj = q.clone();
            for i in 0..n {
                qj[(i, i)] += jitter;
            }
            let l = cholesky_lower(&qj)?;
            log::debug!("kernel factorization needed jitter {jitter:.3e}");
            Ok(KernelFactor { l, jitter })
        }
        Err(e) => Err(e),
    }
}

/// Reconstruction error `‖L Lᵀ − Q‖∞ / ‖Q‖∞`.
pub fn factor_error(q: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    mat_inf_norm(&(l * l.transpose() - q)) / mat_inf_norm(q).max(f64::MIN_POSITIVE)
}

/// Input/output data for an FIR model `z = Φ x + e`.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    pub phi: DMatrix<f64>,
    pub z: DVector<f64>,
}

impl RegressionModel {
    pub fn new(phi: DMatrix<f64>, z: DVector<f64>) -> Result<Self> {
        if phi.nrows() != z.len() {
            return Err(Error::Shape(format!(
                "regressor has {} rows but {} measurements",
                phi.nrows(),
                z.len()
            )));
        }
        Ok(Self { phi, z })
    }

    /// Builds `Φ` from the input samples and pairs it with `z`.
    pub fn from_io(u: &[f64], z: DVector<f64>, n: usize, delay: usize) -> Result<Self> {
        let phi = build_phi(u, n, z.len(), delay)?;
        Self::new(phi, z)
    }

    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    /// Rows `range` of the model (used for train/validation splits).
    pub fn rows(&self, start: usize, len: usize) -> Self {
        Self {
            phi: self.phi.rows(start, len).into_owned(),
            z: self.z.rows(start, len).into_owned(),
        }
    }
}

/// FIR regressor under zero initial conditions:
/// `Φ[t][j] = u(t − j − delay + 1)` with 1-based `t`, `j` and `u(τ) = 0` for
/// `τ < 1`, so `(Φ x)_t = Σⱼ xⱼ u(t − j − delay + 1)`.
pub fn build_phi(u: &[f64], n: usize, m: usize, delay: usize) -> Result<DMatrix<f64>> {
    if m < 1 || n < 1 {
        return Err(Error::ParameterDomain(format!("regressor needs m, n >= 1 (got m={m}, n={n})")));
    }
    if delay < 1 {
        return Err(Error::ParameterDomain("input delay must be at least 1".into()));
    }
    if u.len() < m {
        return Err(Error::Shape(format!("need {m} input samples, got {}", u.len())));
    }
    Ok(DMatrix::from_fn(m, n, |row, col| {
        let (t, j) = (row as i64 + 1, col as i64 + 1);
        let tau = t - j - delay as i64 + 1;
        if tau >= 1 {
            u[(tau - 1) as usize]
        } else {
            0.0
        }
    }))
}

/// Percentage fit `100·(1 − ‖g − ĝ‖₂ / ‖g‖₂)`. The shorter vector is
/// zero-padded.
pub fn fit_metric(g_true: &[f64], g_est: &[f64]) -> Result<f64> {
    let len = g_true.len().max(g_est.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let norm_true = g_true.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_true == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    let err = (0..len)
        .map(|i| (at(g_true, i) - at(g_est, i)).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * (1.0 - err / norm_true))
}

/// Fit of the peak value, `100·(1 − |max ĝ − max g| / |max g|)`.
pub fn peak_fit(g_true: &[f64], g_est: &[f64]) -> Result<f64> {
    let peak = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pt = peak(g_true);
    if pt == 0.0 || !pt.is_finite() {
        return Err(Error::UndefinedMetric);
    }
    Ok(100.0 * (1.0 - (peak(g_est) - pt).abs() / pt.abs()))
}

/// One row of an input/output record.
#[derive(Debug, Clone, PartialEq)]
pub struct IoSample {
    pub t: f64,
    pub u: f64,
    pub y: Option<f64>,
}

/// Reads `(t, u, y)` triples with one header row. An empty `y` marks a
/// prediction-only row.
pub fn read_io_csv<R: std::io::Read>(reader: R) -> Result<Vec<IoSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let parse = |i: usize, name: &str| -> Result<f64> {
            field(i).parse::<f64>().map_err(|_| {
                Error::ParameterDomain(format!("row {}: bad {name} value '{}'", line + 2, field(i)))
            })
        };
        let y = if field(2).is_empty() { None } else { Some(parse(2, "y")?) };
        out.push(IoSample {
            t: parse(0, "t")?,
            u: parse(1, "u")?,
            y,
        });
    }
    Ok(out)
}

pub fn read_io_csv_file(path: &Path) -> Result<Vec<IoSample>> {
    read_io_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tc_gram_small() {
        let q = StableSplineKernel::new(KernelFamily::Tc, 0.5).unwrap().gram(2).unwrap();
        assert_eq!(q, DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.25, 0.25]));
    }

    #[test]
    fn tc_alpha_zero_is_singular() {
        let q = StableSplineKernel::new(KernelFamily::Tc, 0.0).unwrap().gram(3).unwrap();
        assert!(q.iter().all(|&v| v == 0.0));
        assert!(matches!(factorize(&q), Err(Error::Factorization { pivot: 0, .. })));
    }

    #[test]
    fn ss2_first_entry() {
        let k = StableSplineKernel::new(KernelFamily::Ss2, 0.5).unwrap();
        let q = k.gram(3).unwrap();
        assert!((q[(0, 0)] - 1.0 / 24.0).abs() < 1e-15);
        assert_eq!(q, q.transpose());
    }

    #[test]
    fn alpha_domain() {
        assert!(StableSplineKernel::new(KernelFamily::Tc, 1.0).is_err());
        assert!(StableSplineKernel::new(KernelFamily::Ss2, -0.1).is_err());
        let bad = StableSplineKernel { family: KernelFamily::Tc, alpha: 1.2 };
        assert!(matches!(bad.gram(3), Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn factorize_examples() {
        let f = factorize(&DMatrix::identity(4, 4)).unwrap();
        assert_eq!(f.l, DMatrix::identity(4, 4));
        let q = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0]);
        let f = factorize(&q).unwrap();
        assert!((f.l - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn factorize_tc_reconstruction() {
        let q = StableSplineKernel::new(KernelFamily::Tc, 0.9).unwrap().gram(50).unwrap();
        let f = factorize(&q).unwrap();
        assert_eq!(f.jitter, 0.0);
        assert!(factor_error(&q, &f.l) <= 1e-10);
        assert!(f.l.diagonal().iter().all(|&d| d > 0.0));
        for i in 0..50 {
            for j in (i + 1)..50 {
                assert_eq!(f.l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn gram_pd_and_decaying() {
        for &alpha in &[0.1, 0.5, 0.9, 0.98] {
            for family in [KernelFamily::Tc, KernelFamily::Ss2] {
                let q = StableSplineKernel::new(family, alpha).unwrap().gram(200).unwrap();
                assert_eq!(q, q.transpose());
                factorize(&q).unwrap();
            }
            let q = StableSplineKernel::new(KernelFamily::Tc, alpha).unwrap().gram(40).unwrap();
            for i in 1..40 {
                assert!(q[(i, i)] < q[(i - 1, i - 1)]);
            }
        }
    }

    #[test]
    fn ss2_entries_positive() {
        for &alpha in &[0.05, 0.3, 0.6, 0.9, 0.99] {
            let k = StableSplineKernel::new(KernelFamily::Ss2, alpha).unwrap();
            for i in 1..=50 {
                for j in 1..=50 {
                    let mx = i.max(j) as i32;
                    let first = alpha.powi((i + j) as i32) * alpha.powi(mx) / 2.0;
                    let second = alpha.powi(3 * mx) / 6.0;
                    if first > 0.0 {
                        assert!(first > second);
                        assert!(k.entry(i, j) > 0.0, "alpha {alpha} ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn phi_impulse_input() {
        let mut u = vec![0.0; 8];
        u[0] = 1.0;
        let phi = build_phi(&u, 5, 8, 1).unwrap();
        let x = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = &phi * &x;
        assert_eq!(y[0], 0.0);
        for t in 2..=6 {
            assert_eq!(y[t - 1], x[t - 2]);
        }
    }

    #[test]
    fn phi_step_input_row() {
        let phi = build_phi(&[1.0; 6], 3, 6, 1).unwrap();
        assert_eq!(phi.row(3).iter().cloned().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn phi_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for delay in 1..=3 {
            let phi = build_phi(&u, 5, 20, delay).unwrap();
            let y = &phi * DVector::from_row_slice(&x);
            for t in 1..=20i64 {
                let mut direct = 0.0;
                for j in 1..=5i64 {
                    let tau = t - j - delay as i64 + 1;
                    if tau >= 1 {
                        direct += x[(j - 1) as usize] * u[(tau - 1) as usize];
                    }
                }
                assert!((y[(t - 1) as usize] - direct).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn phi_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u1: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u2: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let mix: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| a * x + b * y).collect();
        let lhs = build_phi(&mix, 4, 15, 1).unwrap();
        let rhs = build_phi(&u1, 4, 15, 1).unwrap() * a + build_phi(&u2, 4, 15, 1).unwrap() * b;
        assert!((lhs - rhs).amax() < 1e-14);
    }

    #[test]
    fn phi_errors() {
        assert!(matches!(build_phi(&[1.0], 0, 1, 1), Err(Error::ParameterDomain(_))));
        assert!(matches!(build_phi(&[1.0], 1, 0, 1), Err(Error::ParameterDomain(_))));
        assert!(matches!(build_phi(&[1.0], 1, 3, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn fit_examples() {
        let g = [1.0, 0.5, 0.25];
        assert_eq!(fit_metric(&g, &g).unwrap(), 100.0);
        assert_eq!(fit_metric(&g, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(fit_metric(&g, &[2.0, 1.0, 0.5]).unwrap(), 0.0);
        assert_eq!(fit_metric(&g, &[1.0, 0.5]).unwrap(), 100.0 * (1.0 - 0.25 / (1.3125f64).sqrt()));
        assert!(matches!(fit_metric(&[0.0, 0.0], &g), Err(Error::UndefinedMetric)));
    }

    #[test]
    fn csv_ingestion() {
        let text = "t,u,y\n1,0.5,0.1\n2,-1.0,\n3,2.0,0.3\n";
        let rows = read_io_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].y, None);
        assert_eq!(rows[2], IoSample { t: 3.0, u: 2.0, y: Some(0.3) });
        assert!(read_io_csv("t,u,y\n1,x,2\n".as_bytes()).is_err());
    }
}

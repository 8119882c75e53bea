//! Observed-information covariance and Wald intervals.
//!
//! Information is taken in the natural `(beta, gamma, theta)` coordinates by
//! central differences of the analytic gradient, so standard errors refer to
//! the interpretable coefficients rather than the `eta` reparametrization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{bernstein_vector, BernsteinBasis};
use crate::data::SurvivalDataset;
use crate::error::{FttmError, Result};
use crate::likelihood::{gradient_natural, LikelihoodWorkspace};
use crate::optimize::FttmFit;

/// Normal quantile for two-sided 95% intervals.
pub const Z_95: f64 = 1.96;

const FD_REL_STEP: f64 = 1e-5;
const RIDGE_START: f64 = 1e-8;
const RIDGE_MAX: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    /// Over `(beta, gamma, theta)`.
    #[serde(with = "serde_rows")]
    pub matrix: DMatrix<f64>,
    pub condition_number: f64,
    pub pd_repair_applied: bool,
    /// Ridge added to the information before inversion (0 when none).
    pub ridge: f64,
}

impl CovarianceEstimate {
    pub fn se(&self, i: usize) -> f64 {
        self.matrix[(i, i)].max(0.0).sqrt()
    }

    pub fn block(&self, range: std::ops::Range<usize>) -> DMatrix<f64> {
        self.matrix
            .view((range.start, range.start), (range.len(), range.len()))
            .into_owned()
    }
}

mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

/// Hessian of a function from central differences of its gradient; column `j` uses step `steps[j]`.
///
/// Columns are computed in parallel and assembled in index order.
pub fn fd_hessian<G>(grad: G, x: &[f64], steps: &[f64]) -> Result<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let d = x.len();
    let cols: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let h = steps[j];
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[j] += h;
            dn[j] -= h;
            let gu = grad(&up)?;
            let gd = grad(&dn)?;
            Ok(gu.iter().zip(&gd).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(d, d, |i, j| cols[j][i]))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn fd_steps(fit: &FttmFit) -> Vec<f64> {
    let v = fit.natural_params();
    let mut steps: Vec<f64> = v.iter().map(|x| FD_REL_STEP * x.abs().max(1.0)).collect();
    // keep perturbed gamma increasing
    let range = fit.spec.gamma_range();
    let g = &fit.gamma_hat;
    for (k, step) in steps[range].iter_mut().enumerate() {
        let left = if k > 0 { g[k] - g[k - 1] } else { f64::INFINITY };
        let right = if k + 1 < g.len() { g[k + 1] - g[k] } else { f64::INFINITY };
        // near the monotonicity boundary the step may cross a vanishing gap
        *step = step.min(0.25 * left.min(right)).max(1e-3 * *step);
    }
    steps
}

/// `-d²l / dpsi dpsi'` at the fit, before symmetrization.
pub fn observed_information_unsymmetrized(fit: &FttmFit, ds: &SurvivalDataset) -> Result<DMatrix<f64>> {
    let ws = LikelihoodWorkspace::new(&fit.spec, ds)?;
    let spec = &fit.spec;
    let hess = fd_hessian(
        |v: &[f64]| gradient_natural(spec, &ws, v),
        &fit.natural_params(),
        &fd_steps(fit),
    )?;
    let info = -hess;
    if info.iter().any(|v| !v.is_finite()) {
        return Err(FttmError::NonFiniteInformation);
    }
    Ok(info)
}

/// Observed Fisher information in `(beta, gamma, theta)`, symmetrized.
pub fn observed_information(fit: &FttmFit, ds: &SurvivalDataset) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&observed_information_unsymmetrized(fit, ds)?))
}

/// Inverse of a symmetric information matrix, ridge-repaired when not positive definite.
pub fn covariance_from_information(info: &DMatrix<f64>) -> Result<CovarianceEstimate> {
    if info.iter().any(|v| !v.is_finite()) {
        return Err(FttmError::NonFiniteInformation);
    }
    let dim = info.nrows();
    if dim == 0 {
        return Err(FttmError::SingularInformation);
    }
    let info = symmetrize(info);
    let scale = {
        let tr = info.trace() / dim as f64;
        if tr > 0.0 {
            tr
        } else {
            info.diagonal().iter().map(|v| v.abs()).sum::<f64>() / dim as f64
        }
    };
    let mut ridge = 0.0;
    loop {
        let mut m = info.clone();
        for i in 0..dim {
            m[(i, i)] += ridge;
        }
        if let Some(chol) = m.clone().cholesky() {
            let eig = SymmetricEigen::new(m).eigenvalues;
            let (lo, hi) = eig
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
            if lo > 0.0 {
                let inv = symmetrize(&chol.inverse());
                if inv.iter().all(|v| v.is_finite()) {
                    return Ok(CovarianceEstimate {
                        matrix: inv,
                        condition_number: hi / lo,
                        pd_repair_applied: ridge > 0.0,
                        ridge,
                    });
                }
            }
        }
        ridge = if ridge == 0.0 {
            RIDGE_START * scale
        } else {
            ridge * 10.0
        };
        if !(scale > 0.0) || ridge > RIDGE_MAX * scale * (1.0 + 1e-12) {
            return Err(FttmError::SingularInformation);
        }
    }
}

/// `V = J^{-1}` at the fit.
pub fn covariance(fit: &FttmFit, ds: &SurvivalDataset) -> Result<CovarianceEstimate> {
    let cov = covariance_from_information(&observed_information(fit, ds)?)?;
    if cov.pd_repair_applied {
        log::warn!("information not positive definite; ridge {:e} added", cov.ridge);
    }
    Ok(cov)
}

pub fn wald_interval(estimate: f64, se: f64) -> Result<(f64, f64)> {
    wald_interval_z(estimate, se, Z_95)
}

pub fn wald_interval_z(estimate: f64, se: f64, z: f64) -> Result<(f64, f64)> {
    if se.is_nan() || se < 0.0 {
        return Err(FttmError::domain(format!("standard error must be >= 0, got {se}")));
    }
    Ok((estimate - z * se, estimate + z * se))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub at: f64,
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

fn quad_form(v: &[f64], m: &DMatrix<f64>) -> f64 {
    let v = DVector::from_column_slice(v);
    (v.transpose() * m * &v)[(0, 0)]
}

fn check_cov(fit: &FttmFit, cov: &CovarianceEstimate) -> Result<()> {
    let d = fit.spec.dim();
    if cov.matrix.nrows() != d || cov.matrix.ncols() != d {
        return Err(FttmError::domain("covariance does not match the fit's dimension"));
    }
    Ok(())
}

/// Pointwise band for `beta(s) = b(s)' theta` on `eval_grid` ⊂ [0, 1].
pub fn functional_band(fit: &FttmFit, cov: &CovarianceEstimate, eval_grid: &[f64]) -> Result<Vec<BandPoint>> {
    functional_band_z(fit, cov, eval_grid, Z_95)
}

pub fn functional_band_z(
    fit: &FttmFit,
    cov: &CovarianceEstimate,
    eval_grid: &[f64],
    z: f64,
) -> Result<Vec<BandPoint>> {
    check_cov(fit, cov)?;
    let v = cov.block(fit.spec.theta_range());
    eval_grid
        .iter()
        .map(|&s| {
            let b = bernstein_vector(s, fit.spec.n1)?;
            let est = crate::basis::dot(&b, fit.theta());
            let se = quad_form(&b, &v).max(0.0).sqrt();
            let (lo, hi) = wald_interval_z(est, se, z)?;
            Ok(BandPoint {
                at: s,
                estimate: est,
                se,
                lo,
                hi,
            })
        })
        .collect()
}

/// Pointwise band for `H(t) = b(t / tau)' gamma` at `eval_times` ⊂ [0, tau].
pub fn h_curve_band(fit: &FttmFit, cov: &CovarianceEstimate, eval_times: &[f64]) -> Result<Vec<BandPoint>> {
    check_cov(fit, cov)?;
    let basis = BernsteinBasis::transformation(fit.spec.n0, fit.spec.tau)?;
    let v = cov.block(fit.spec.gamma_range());
    eval_times
        .iter()
        .map(|&t| {
            let b = basis.values(t)?;
            let est = crate::basis::dot(&b, &fit.gamma_hat);
            let se = quad_form(&b, &v).max(0.0).sqrt();
            let (lo, hi) = wald_interval(est, se)?;
            Ok(BandPoint {
                at: t,
                estimate: est,
                se,
                lo,
                hi,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarInterval {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Wald intervals for the scalar coefficients.
pub fn scalar_intervals(fit: &FttmFit, cov: &CovarianceEstimate, names: &[String]) -> Result<Vec<ScalarInterval>> {
    check_cov(fit, cov)?;
    fit.beta()
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let se = cov.se(j);
            let (lo, hi) = wald_interval(b, se)?;
            Ok(ScalarInterval {
                name: names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1)),
                estimate: b,
                se,
                lo,
                hi,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::ErrorFamily;
    use crate::optimize::{fit, FitOptions};
    use crate::params::FttmSpec;

    #[test]
    fn wald_examples() {
        assert_eq!(wald_interval(0.0, 1.0).unwrap(), (-1.96, 1.96));
        assert_eq!(wald_interval(2.0, 0.0).unwrap(), (2.0, 2.0));
        let (lo, hi) = wald_interval(0.077, 0.03163).unwrap();
        assert!((lo - 0.015).abs() < 5e-4 && (hi - 0.139).abs() < 5e-4);
        assert!(wald_interval(0.0, -1.0).is_err());
    }

    #[test]
    fn diagonal_inverse() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 25.0]));
        let c = covariance_from_information(&j).unwrap();
        assert!(!c.pd_repair_applied);
        assert!((c.matrix[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((c.matrix[(1, 1)] - 0.04).abs() < 1e-15);
        assert!(c.matrix[(0, 1)].abs() < 1e-15);
        assert!((c.condition_number - 6.25).abs() < 1e-12);
    }

    #[test]
    fn indefinite_is_repaired() {
        // eigenvalues 3 and -1e-9: a ridge of 1e-8 * trace/dim suffices
        let j = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1e-9]);
        let c = covariance_from_information(&j).unwrap();
        assert!(c.pd_repair_applied);
        assert!(c.ridge > 0.0);
        assert!(c.matrix.iter().all(|v| v.is_finite()));
        let eig = SymmetricEigen::new(c.matrix.clone()).eigenvalues;
        assert!(eig.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn hopeless_information_errors() {
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            covariance_from_information(&j),
            Err(FttmError::SingularInformation)
        ));
    }

    #[test]
    fn fd_hessian_recovers_quadratic() {
        // f(x) = 0.5 x' A x + b' x with known A
        let a = DMatrix::from_row_slice(3, 3, &[5.0, 1.0, -2.0, 1.0, 3.0, 0.5, -2.0, 0.5, 4.0]);
        let grad = |x: &[f64]| -> Result<Vec<f64>> {
            let v = &a * DVector::from_column_slice(x);
            Ok(v.iter().enumerate().map(|(i, g)| g + i as f64).collect())
        };
        let h = fd_hessian(grad, &[0.3, -1.2, 2.0], &[1e-5; 3]).unwrap();
        assert!((h - &a).abs().max() < 1e-6);
    }

    fn gompertz_data() -> SurvivalDataset {
        let n = 500;
        // unit-exponential quantiles; every 4th censored at 0.8 of its time
        let mut y = Vec::new();
        let mut delta = Vec::new();
        for i in 0..n {
            let t = -(1.0 - (i as f64 + 0.5) / n as f64).ln();
            if i % 4 == 0 {
                y.push(0.8 * t);
                delta.push(false);
            } else {
                y.push(t);
                delta.push(true);
            }
        }
        SurvivalDataset::new(
            y,
            delta,
            DMatrix::zeros(n, 0),
            DMatrix::zeros(n, 2),
            vec![0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn information_matches_closed_form_toy() {
        // p = 0, N1 = 0, N0 = 1, r = 0: H(t) = g0 (1 - t/tau) + g1 t/tau, so
        // J = d / (g1 - g0)^2 * s s' + sum_i exp(u_i) w_i w_i', s = (-1, 1), w_i = (1 - y_i/tau, y_i/tau)
        let ds = gompertz_data();
        let tau = crate::data::default_tau(&ds).unwrap();
        let spec = FttmSpec::new(1, 0, ErrorFamily::proportional_hazards(), tau, 0).unwrap();
        let f = fit(&spec, &ds, &FitOptions::default()).unwrap();
        assert!(f.converged);
        let info = observed_information(&f, &ds).unwrap();
        let (g0, g1) = (f.gamma_hat[0], f.gamma_hat[1]);
        let d = ds.events() as f64;
        let mut oracle = DMatrix::zeros(2, 2);
        let s = [-1.0, 1.0];
        for a in 0..2 {
            for b in 0..2 {
                oracle[(a, b)] += d / (g1 - g0).powi(2) * s[a] * s[b];
            }
        }
        for &y in &ds.y {
            let w = [1.0 - y / tau, y / tau];
            let u = g0 * w[0] + g1 * w[1];
            for a in 0..2 {
                for b in 0..2 {
                    oracle[(a, b)] += u.exp() * w[a] * w[b];
                }
            }
        }
        let block = info.view((0, 0), (2, 2)).into_owned();
        let rel = (&block - &oracle).abs().max() / oracle.abs().max();
        assert!(rel < 1e-5, "relative error {rel}");
        // the scale-parameter information d / sigma^2 with sigma = g1 - g0 is the s s' part
        let dir = DVector::from_vec(vec![-0.5, 0.5]);
        let along = (dir.transpose() * &block * &dir)[(0, 0)];
        assert!(along >= d / (g1 - g0).powi(2) * 0.95);
    }

    #[test]
    fn symmetry_before_and_after() {
        let ds = gompertz_data();
        let tau = crate::data::default_tau(&ds).unwrap();
        let spec = FttmSpec::new(4, 0, ErrorFamily::proportional_odds(), tau, 0).unwrap();
        let f = fit(&spec, &ds, &FitOptions::default()).unwrap();
        let raw = observed_information_unsymmetrized(&f, &ds).unwrap();
        let g = raw.view((0, 0), (5, 5)).into_owned();
        let asym = (&g - g.transpose()).abs().max() / g.abs().max();
        assert!(asym <= 1e-4);
        let sym = symmetrize(&g);
        assert!((&sym - sym.transpose()).abs().max() / sym.abs().max() <= 1e-6);
    }

    #[test]
    fn bands_degenerate_cases() {
        let spec = FttmSpec::new(2, 0, ErrorFamily::proportional_hazards(), 5.0, 1).unwrap();
        let fit = FttmFit {
            spec: spec.clone(),
            psi_hat: crate::params::RawParams {
                beta: vec![0.3],
                eta: vec![-1.0, 0.0, 0.0],
                theta: vec![0.7],
            },
            gamma_hat: vec![-1.0, 0.0, 1.0],
            loglik: 0.0,
            aic: 0.0,
            converged: true,
            iterations: 0,
            grad_norm_final: 0.0,
            covariance: None,
            warnings: vec![],
        };
        let zero = CovarianceEstimate {
            matrix: DMatrix::zeros(5, 5),
            condition_number: 1.0,
            pd_repair_applied: false,
            ridge: 0.0,
        };
        for bp in functional_band(&fit, &zero, &[0.0, 0.5, 1.0]).unwrap() {
            assert_eq!(bp.se, 0.0);
            assert_eq!((bp.lo, bp.hi), (0.7, 0.7));
        }
        for bp in h_curve_band(&fit, &zero, &[0.0, 2.5]).unwrap() {
            assert_eq!(bp.lo, bp.hi);
        }
        let mut m = DMatrix::identity(5, 5);
        m[(4, 4)] = 0.09;
        m[(1, 1)] = 0.16;
        let cov = CovarianceEstimate {
            matrix: m,
            ..zero
        };
        for bp in functional_band(&fit, &cov, &[0.1, 0.9]).unwrap() {
            assert!((bp.se - 0.3).abs() < 1e-15);
        }
        let h0 = h_curve_band(&fit, &cov, &[0.0]).unwrap()[0];
        assert_eq!(h0.estimate, -1.0);
        assert!((h0.se - 0.4).abs() < 1e-15);
        assert!(h_curve_band(&fit, &cov, &[6.0]).is_err());
    }
}

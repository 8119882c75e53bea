//! Conditional survival, inversion of the fitted transformation, and pseudo residuals.

use serde::{Deserialize, Serialize};

use crate::basis::{h_eval, FunctionalQuadrature};
use crate::data::SurvivalDataset;
use crate::error::{FttmError, Result};
use crate::likelihood::linear_predictor;
use crate::optimize::FttmFit;

/// Pseudo residuals are capped here when the fitted survival underflows.
pub const RESIDUAL_CAP: f64 = 700.0;

/// `beta' x + int X_f(s) beta(s) ds` for one covariate profile.
pub fn profile_linear_predictor(fit: &FttmFit, x_row: &[f64], xf_values: &[f64], grid: &[f64]) -> Result<f64> {
    if xf_values.len() != grid.len() {
        return Err(FttmError::domain(format!(
            "functional values ({}) and grid ({}) differ in length",
            xf_values.len(),
            grid.len()
        )));
    }
    let z = FunctionalQuadrature::new(grid, fit.spec.n1)?.design(xf_values)?;
    linear_predictor(fit.beta(), fit.theta(), x_row, z.as_slice())
}

fn check_time(fit: &FttmFit, t: f64) -> Result<()> {
    if !(0.0..=fit.spec.tau).contains(&t) {
        return Err(FttmError::domain(format!(
            "t = {t} outside [0, tau = {}]; the transformation is not defined beyond tau",
            fit.spec.tau
        )));
    }
    Ok(())
}

/// `H(t)` of the fit.
pub fn h_hat(fit: &FttmFit, t: f64) -> Result<f64> {
    check_time(fit, t)?;
    h_eval(&fit.gamma_hat, fit.spec.tau, t)
}

/// `S(t | lp) = F̄_eps(H(t) + lp)`.
pub fn survival_at_lp(fit: &FttmFit, lp: f64, t: f64) -> Result<f64> {
    Ok(fit.spec.error.survival(h_hat(fit, t)? + lp))
}

pub fn survival_at(fit: &FttmFit, x_row: &[f64], xf_values: &[f64], grid: &[f64], t: f64) -> Result<f64> {
    let lp = profile_linear_predictor(fit, x_row, xf_values, grid)?;
    survival_at_lp(fit, lp, t)
}

const INVERSE_MAX_ITERS: usize = 200;

/// `t` with `H(t) = v`, by bisection on `[0, tau]`.
pub fn h_inverse(fit: &FttmFit, v: f64) -> Result<f64> {
    let tau = fit.spec.tau;
    let g = &fit.gamma_hat;
    let (lo_v, hi_v) = (g[0], g[g.len() - 1]);
    if !(lo_v..=hi_v).contains(&v) {
        return Err(FttmError::Range {
            value: v,
            lo: lo_v,
            hi: hi_v,
        });
    }
    let tol = 1e-10 * (1.0 + v.abs());
    if (v - lo_v).abs() <= tol {
        return Ok(0.0);
    }
    let (mut a, mut b) = (0.0, tau);
    for _ in 0..INVERSE_MAX_ITERS {
        let mid = 0.5 * (a + b);
        let h = h_eval(g, tau, mid)?;
        if (h - v).abs() <= tol || b - a <= 1e-12 * tau {
            return Ok(mid);
        }
        if h < v {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Approximate expected survival time `H^{-1}(E H(T)) = H^{-1}(E eps - lp)`.
///
/// This is exact for the median-type quantity `H^{-1}(E H(T))`, not for `E T`.
/// Out of range targets return [`FttmError::Range`] carrying the target and the attainable interval.
pub fn expected_survival_lp(fit: &FttmFit, lp: f64) -> Result<f64> {
    h_inverse(fit, fit.spec.error.mean() - lp)
}

pub fn expected_survival(fit: &FttmFit, x_row: &[f64], xf_values: &[f64], grid: &[f64]) -> Result<f64> {
    expected_survival_lp(fit, profile_linear_predictor(fit, x_row, xf_values, grid)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoResiduals {
    /// `U_i = -log S(Y_i | x_i)`.
    pub u: Vec<f64>,
    pub delta: Vec<bool>,
    /// Residuals that hit [`RESIDUAL_CAP`].
    pub capped: usize,
}

/// `U_i = -log S(Y_i | x_i, X_i)` for every subject of `ds`.
pub fn pseudo_residuals(fit: &FttmFit, ds: &SurvivalDataset) -> Result<PseudoResiduals> {
    if ds.p() != fit.spec.p {
        return Err(FttmError::domain("dataset and fit disagree on the number of scalar covariates"));
    }
    let quad = FunctionalQuadrature::new(&ds.grid, fit.spec.n1)?;
    let mut u = Vec::with_capacity(ds.n());
    let mut capped = 0;
    for i in 0..ds.n() {
        let z = quad.design(&ds.xf_row(i))?;
        let lp = linear_predictor(fit.beta(), fit.theta(), &ds.x_row(i), z.as_slice())?;
        let log_s = fit.spec.error.log_survival(h_hat(fit, ds.y[i])? + lp);
        if log_s.is_nan() {
            return Err(FttmError::NonFinite { subject: i });
        }
        let mut ui = (-log_s).max(0.0);
        if ui > RESIDUAL_CAP {
            ui = RESIDUAL_CAP;
            capped += 1;
        }
        u.push(ui);
    }
    if capped > 0 {
        log::warn!("{capped} pseudo residuals capped at {RESIDUAL_CAP}");
    }
    Ok(PseudoResiduals {
        u,
        delta: ds.delta.clone(),
        capped,
    })
}

/// `S(t)` for each profile (row of `ds`) at each of `times`; `out[j][i]` is profile `j` at `times[i]`.
pub fn survival_curves(fit: &FttmFit, ds: &SurvivalDataset, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let quad = FunctionalQuadrature::new(&ds.grid, fit.spec.n1)?;
    let h: Vec<f64> = times.iter().map(|&t| h_hat(fit, t)).collect::<Result<_>>()?;
    (0..ds.n())
        .map(|i| {
            let z = quad.design(&ds.xf_row(i))?;
            let lp = linear_predictor(fit.beta(), fit.theta(), &ds.x_row(i), z.as_slice())?;
            Ok(h.iter().map(|hv| fit.spec.error.survival(hv + lp)).collect())
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::family::ErrorFamily;
    use crate::params::{eta_from_gamma, FttmSpec, RawParams};

    pub(crate) fn fixed_fit(gamma: Vec<f64>, tau: f64, beta: Vec<f64>, theta: Vec<f64>, error: ErrorFamily) -> FttmFit {
        let spec = FttmSpec::new(gamma.len() - 1, theta.len() - 1, error, tau, beta.len()).unwrap();
        FttmFit {
            psi_hat: RawParams {
                beta,
                eta: eta_from_gamma(&gamma).unwrap(),
                theta,
            },
            gamma_hat: gamma,
            loglik: 0.0,
            aic: 0.0,
            converged: true,
            iterations: 0,
            grad_norm_final: 0.0,
            covariance: None,
            warnings: vec![],
            spec,
        }
    }

    fn grid(m: usize) -> Vec<f64> {
        (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
    }

    #[test]
    fn identity_inverse() {
        let f = fixed_fit(vec![0.0, 5.0], 5.0, vec![], vec![0.0], ErrorFamily::proportional_odds());
        assert!((h_inverse(&f, 0.37).unwrap() - 0.37).abs() < 1e-9);
        assert_eq!(h_inverse(&f, 0.0).unwrap(), 0.0);
        assert!(matches!(h_inverse(&f, 5.5), Err(FttmError::Range { .. })));
        // r = 1 has zero error mean
        assert!((expected_survival_lp(&f, 0.0).unwrap() - h_inverse(&f, 0.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn inverse_round_trip() {
        let f = fixed_fit(
            vec![-4.0, -3.5, -1.0, 0.2, 0.3, 2.0],
            7.0,
            vec![],
            vec![0.0],
            ErrorFamily::proportional_hazards(),
        );
        for k in 0..=200 {
            let t = 7.0 * k as f64 / 200.0;
            let v = h_hat(&f, t).unwrap();
            assert!((h_inverse(&f, v).unwrap() - t).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn survival_is_monotone_and_bounded_to_tau() {
        let f = fixed_fit(
            vec![-3.0, -1.0, 0.5, 1.0],
            4.0,
            vec![0.4, -0.2],
            vec![1.0, -0.5, 0.3],
            ErrorFamily::logarithmic(0.5).unwrap(),
        );
        let g = grid(21);
        let xf: Vec<f64> = g.iter().map(|s| (3.0 * s).sin()).collect();
        let mut prev = 1.0;
        for k in 0..=100 {
            let t = 4.0 * k as f64 / 100.0;
            let s = survival_at(&f, &[1.0, 0.3], &xf, &g, t).unwrap();
            assert!(s <= prev + 1e-15);
            prev = s;
        }
        assert!(survival_at(&f, &[1.0, 0.3], &xf, &g, 4.01).is_err());
        assert!(survival_at(&f, &[1.0], &xf, &g, 1.0).is_err());
    }

    #[test]
    fn survival_saturates_for_very_negative_h() {
        let f = fixed_fit(vec![-30.0, 0.0], 1.0, vec![], vec![0.0], ErrorFamily::proportional_hazards());
        assert!(survival_at_lp(&f, 0.0, 0.0).unwrap() >= 1.0 - 1e-10);
    }

    #[test]
    fn expected_survival_decreases_in_lp() {
        let f = fixed_fit(vec![-5.0, -1.0, 0.0, 4.0], 10.0, vec![], vec![0.0], ErrorFamily::proportional_hazards());
        let a = expected_survival_lp(&f, -0.5).unwrap();
        let b = expected_survival_lp(&f, 0.5).unwrap();
        assert!(a > b);
    }

    #[test]
    fn residual_examples() {
        // H(t) = t - 1 on [0, 2] with PH: U = exp(Y - 1)
        let f = fixed_fit(vec![-1.0, 1.0], 2.0, vec![], vec![0.0], ErrorFamily::proportional_hazards());
        let ds = SurvivalDataset::new(
            vec![1.0, 1e-9],
            vec![true, false],
            nalgebra::DMatrix::zeros(2, 0),
            nalgebra::DMatrix::zeros(2, 2),
            vec![0.0, 1.0],
        )
        .unwrap();
        let r = pseudo_residuals(&f, &ds).unwrap();
        assert!((r.u[0] - 1.0).abs() < 1e-14);
        assert!((r.u[1] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(r.capped, 0);
        // S(0) = 1 when H(0) is very negative
        let f = fixed_fit(vec![-60.0, 1.0], 2.0, vec![], vec![0.0], ErrorFamily::proportional_hazards());
        let ds0 = ds.subset(&[1]);
        assert!(pseudo_residuals(&f, &ds0).unwrap().u[0] < 1e-20);
        // underflowed survival is capped
        let f = fixed_fit(vec![7.0, 8.0], 2.0, vec![], vec![0.0], ErrorFamily::proportional_hazards());
        let r = pseudo_residuals(&f, &ds).unwrap();
        assert_eq!(r.u[0], RESIDUAL_CAP);
        assert_eq!(r.capped, 2);
    }
}

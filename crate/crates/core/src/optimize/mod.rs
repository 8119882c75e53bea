//! Maximum-likelihood fitting in the unconstrained `(beta, eta, theta)` space.

mod bfgs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{has_errors, validate, SurvivalDataset};
use crate::error::{FttmError, Result};
use crate::inference::CovarianceEstimate;
use crate::likelihood::{value_and_gradient, LikelihoodWorkspace, LOGLIK_FLOOR};
use crate::params::{eta_from_gamma, FttmSpec, RawParams, MIN_GAMMA_GAP};
use crate::select::aic;

pub(crate) use bfgs::max_norm;
use bfgs::{minimize, BfgsSettings};

/// Coefficients beyond this magnitude trigger a post-fit warning.
const LARGE_GAMMA: f64 = 1e3;
/// Half-width of the uniform jitter applied to `eta` and `theta` on restart.
const RESTART_JITTER: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Max-norm of the gradient at convergence.
    pub grad_tol: f64,
    /// Relative parameter change accepted as convergence when the gradient is within `100 * grad_tol`.
    pub step_tol: f64,
    pub n_restarts: usize,
    /// Seed for restart jitter.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-6,
            step_tol: 1e-10,
            n_restarts: 3,
            seed: 0x5eed_f77e,
        }
    }
}

impl FitOptions {
    pub fn check(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(FttmError::domain("fit options must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FttmFit {
    pub spec: FttmSpec,
    pub psi_hat: RawParams,
    pub gamma_hat: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm_final: f64,
    #[serde(default)]
    pub covariance: Option<CovarianceEstimate>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FttmFit {
    pub fn beta(&self) -> &[f64] {
        &self.psi_hat.beta
    }

    pub fn theta(&self) -> &[f64] {
        &self.psi_hat.theta
    }

    /// Flattened `(beta, gamma, theta)`.
    pub fn natural_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.spec.dim());
        v.extend_from_slice(&self.psi_hat.beta);
        v.extend_from_slice(&self.gamma_hat);
        v.extend_from_slice(&self.psi_hat.theta);
        v
    }
}

/// Deterministic starting point: `beta = 0`, `theta = 0`, and a linear `H`
/// running between the error quantiles at survival 0.99 and at one minus the
/// observed event fraction.
pub fn initialize(spec: &FttmSpec, ds: &SurvivalDataset) -> Result<RawParams> {
    let fam = spec.error;
    let c_lo = fam.survival_quantile(0.99)?;
    let target_hi = (1.0 - 0.99 * ds.event_fraction()).max(0.01);
    let mut c_hi = if target_hi < 0.99 {
        fam.survival_quantile(target_hi)?
    } else {
        c_lo + 1.0
    };
    if c_hi <= c_lo {
        c_hi = c_lo + 1.0;
    }
    let n0 = spec.n0 as f64;
    let gamma: Vec<f64> = (0..=spec.n0)
        .map(|k| c_lo + (c_hi - c_lo) * k as f64 / n0)
        .collect();
    Ok(RawParams {
        beta: vec![0.0; spec.p],
        eta: eta_from_gamma(&gamma)?,
        theta: vec![0.0; spec.n1 + 1],
    })
}

fn objective<'a>(
    spec: &'a FttmSpec,
    ws: &'a LikelihoodWorkspace,
) -> impl Fn(&[f64]) -> Option<(f64, Vec<f64>)> + 'a {
    move |x: &[f64]| {
        let psi = RawParams::from_slice(spec, x).ok()?;
        let (v, g) = value_and_gradient(&psi, spec, ws).ok()?;
        if v <= LOGLIK_FLOOR {
            return None;
        }
        Some((-v, g.into_iter().map(|gi| -gi).collect()))
    }
}

/// Fits the model from [`initialize`].
pub fn fit(spec: &FttmSpec, ds: &SurvivalDataset, opts: &FitOptions) -> Result<FttmFit> {
    let findings = validate(ds);
    if has_errors(&findings) {
        let msgs: Vec<String> = findings.into_iter().map(|f| f.message).collect();
        return Err(FttmError::InvalidData(msgs.join("; ")));
    }
    let start = initialize(spec, ds)?;
    fit_from(spec, ds, &start, opts)
}

/// Fits the model from a caller-supplied starting point.
pub fn fit_from(
    spec: &FttmSpec,
    ds: &SurvivalDataset,
    start: &RawParams,
    opts: &FitOptions,
) -> Result<FttmFit> {
    opts.check()?;
    start.check(spec)?;
    let ws = LikelihoodWorkspace::new(spec, ds)?;
    let obj = objective(spec, &ws);
    let x0 = start.to_vec();
    if obj(&x0).is_none() {
        return Err(FttmError::DegenerateInitialization);
    }
    let settings = BfgsSettings {
        max_iters: opts.max_iters,
        grad_tol: opts.grad_tol,
        step_tol: opts.step_tol,
    };
    let mut best = minimize(&obj, &x0, settings).ok_or(FttmError::DegenerateInitialization)?;
    let mut iterations = best.iterations;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let jitter_range = spec.p..spec.dim();
    for _ in 0..opts.n_restarts {
        if best.converged {
            break;
        }
        let mut x = best.x.clone();
        for v in &mut x[jitter_range.clone()] {
            *v += rng.random_range(-RESTART_JITTER..=RESTART_JITTER);
        }
        if obj(&x).is_none() {
            continue;
        }
        if let Some(run) = minimize(&obj, &x, settings) {
            iterations += run.iterations;
            if run.converged || run.value < best.value {
                best = run;
            }
        }
    }

    let psi_hat = RawParams::from_slice(spec, &best.x)?;
    let gamma_hat = psi_hat.gamma();
    let loglik = -best.value;
    let mut warnings = Vec::new();
    if gamma_hat.iter().any(|g| g.abs() > LARGE_GAMMA) {
        warnings.push(format!(
            "transformation coefficients exceed {LARGE_GAMMA:e} in magnitude"
        ));
    }
    if let Some((lo, hi)) = spec.bounds {
        if gamma_hat.first().is_some_and(|&g| g < lo) || gamma_hat.last().is_some_and(|&g| g > hi) {
            warnings.push(format!("gamma leaves the sieve bounds [{lo}, {hi}]"));
        }
    }
    let flat: Vec<usize> = (1..psi_hat.eta.len())
        .filter(|&k| psi_hat.eta[k].exp() < MIN_GAMMA_GAP * (1.0 + gamma_hat[k].abs()))
        .collect();
    if !flat.is_empty() {
        warnings.push(format!(
            "transformation increments at the monotonicity boundary (k = {flat:?}); Wald intervals for gamma are unreliable"
        ));
    }
    if !best.converged {
        warnings.push(format!(
            "optimizer did not converge (gradient max-norm {:.3e})",
            max_norm(&best.grad)
        ));
    }
    for w in &warnings {
        log::debug!("{w}");
    }
    Ok(FttmFit {
        spec: spec.clone(),
        aic: aic(loglik, spec.p, spec.n0, spec.n1),
        psi_hat,
        gamma_hat,
        loglik,
        converged: best.converged,
        iterations,
        grad_norm_final: max_norm(&best.grad),
        covariance: None,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::ErrorFamily;
    use crate::likelihood::log_likelihood;
    use nalgebra::DMatrix;

    fn exp_data(n: usize) -> SurvivalDataset {
        // deterministic unit-exponential quantiles, every 5th censored
        let y: Vec<f64> = (0..n)
            .map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln())
            .collect();
        let delta = (0..n).map(|i| i % 5 != 0).collect();
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
    fn logistic_median_root() {
        let fam = ErrorFamily::proportional_odds();
        assert!(fam.survival_quantile(0.5).unwrap().abs() < 1e-9);
    }

    #[test]
    fn initial_gamma_increasing() {
        let ds = exp_data(50);
        for fam in [
            ErrorFamily::proportional_hazards(),
            ErrorFamily::proportional_odds(),
            ErrorFamily::logarithmic(4.0).unwrap(),
            ErrorFamily::box_cox(0.5).unwrap(),
        ] {
            for n0 in [1, 4, 13] {
                let spec = FttmSpec::new(n0, 0, fam, 6.0, 0).unwrap();
                let psi = initialize(&spec, &ds).unwrap();
                assert!(psi.gamma().windows(2).all(|w| w[1] > w[0]));
            }
        }
    }

    #[test]
    fn fit_ascends_and_is_stationary() {
        let ds = exp_data(200);
        let spec = FttmSpec::new(4, 0, ErrorFamily::proportional_hazards(), 7.0, 0).unwrap();
        let opts = FitOptions::default();
        let init = initialize(&spec, &ds).unwrap();
        let ws = LikelihoodWorkspace::new(&spec, &ds).unwrap();
        let l0 = log_likelihood(&init, &spec, &ws).unwrap();
        let f = fit(&spec, &ds, &opts).unwrap();
        assert!(f.converged);
        assert!(f.loglik >= l0);
        assert!(f.psi_hat.eta[1..].iter().all(|e| e.exp() > 0.0));
        assert!(f.gamma_hat.windows(2).all(|w| w[1] >= w[0]));
        assert!((f.aic - (-2.0 * f.loglik + 2.0 * 5.0)).abs() < 1e-9);
        let again = fit_from(&spec, &ds, &f.psi_hat, &opts).unwrap();
        assert!(again.loglik - f.loglik <= 1e-8);
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = exp_data(120);
        let spec = FttmSpec::new(3, 0, ErrorFamily::proportional_odds(), 6.0, 0).unwrap();
        let a = fit(&spec, &ds, &FitOptions::default()).unwrap();
        let b = fit(&spec, &ds, &FitOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_invalid_data() {
        let mut ds = exp_data(10);
        ds.delta = vec![false; 10];
        let spec = FttmSpec::new(3, 0, ErrorFamily::proportional_hazards(), 6.0, 0).unwrap();
        assert!(matches!(
            fit(&spec, &ds, &FitOptions::default()),
            Err(FttmError::InvalidData(_))
        ));
    }
}

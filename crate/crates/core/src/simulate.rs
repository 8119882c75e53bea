//! Scenario A1/A2 data generation and the Monte-Carlo replication harness.
//!
//! Per-replication generators are seeded from `(master seed, replication index)`
//! with a splitmix64 step, so reports do not depend on the parallel schedule:
//!
//! ```text
//! seed_r = splitmix64(master + (r + 1) * 0x9E3779B97F4A7C15)
//! ```

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Exp1, Normal, Open01};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{bernstein_vector, dot, h_eval, trapezoid_weights};
use crate::data::{default_tau, SurvivalDataset};
use crate::error::{FttmError, Result};
use crate::family::ErrorFamily;
use crate::inference::{covariance, Z_95};
use crate::optimize::{fit, FitOptions, FttmFit};
use crate::params::FttmSpec;
use crate::select::{grid_search, GridSpec};

/// Number of basis functions in the functional covariate.
pub const N_SCORES: usize = 10;
/// Largest tolerated fraction of failed replications.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;
/// Points of the uniform time grid used for the integrated error of `H`.
pub const H_GRID_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Proportional hazards with constant baseline hazard 0.2.
    A1,
    /// Proportional odds with `H(t) = log(t^2)`.
    A2,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a1" => Ok(Self::A1),
            "a2" => Ok(Self::A2),
            _ => Err(FttmError::Parse(format!("unknown scenario `{s}` (expected a1 or a2)"))),
        }
    }

    /// The error family of the data-generating model.
    pub fn error_family(self) -> ErrorFamily {
        match self {
            Self::A1 => ErrorFamily::proportional_hazards(),
            Self::A2 => ErrorFamily::proportional_odds(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, n: usize, seed: u64) -> Self {
        Self {
            scenario,
            n,
            m: 101,
            seed,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n < 10 {
            return Err(FttmError::domain("scenario needs n >= 10"));
        }
        if self.m < 11 {
            return Err(FttmError::domain("scenario needs m >= 11"));
        }
        Ok(())
    }
}

/// True parameters of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub scenario: Scenario,
    pub beta: Vec<f64>,
    /// `beta(s) = amplitude * cos(pi s)` (A1) or `amplitude * sin(pi s)` (A2).
    pub beta_s_amplitude: f64,
}

impl Truth {
    pub fn of(scenario: Scenario) -> Self {
        match scenario {
            Scenario::A1 => Self {
                scenario,
                beta: vec![-0.5, 0.4],
                beta_s_amplitude: 1.0,
            },
            Scenario::A2 => Self {
                scenario,
                beta: vec![-0.8, 1.6],
                beta_s_amplitude: 2.0,
            },
        }
    }

    pub fn beta_s(&self, s: f64) -> f64 {
        let pi_s = std::f64::consts::PI * s;
        self.beta_s_amplitude
            * match self.scenario {
                Scenario::A1 => pi_s.cos(),
                Scenario::A2 => pi_s.sin(),
            }
    }

    /// `log(0.2 t)` (A1) or `log(t^2)` (A2).
    pub fn h0(&self, t: f64) -> f64 {
        match self.scenario {
            Scenario::A1 => (0.2 * t).ln(),
            Scenario::A2 => 2.0 * t.ln(),
        }
    }

    /// Mean of the exponential censoring time.
    pub fn censoring_mean(&self) -> f64 {
        match self.scenario {
            Scenario::A1 => 20.0,
            Scenario::A2 => 5.0,
        }
    }

    /// Event time with error survival `u` at linear predictor `lp`: `S(T | lp) = u`.
    pub fn event_time(&self, u: f64, lp: f64) -> f64 {
        match self.scenario {
            // -log u is the unit-exponential variate of the constant-hazard model
            Scenario::A1 => -u.ln() / (0.2 * lp.exp()),
            Scenario::A2 => (((1.0 / u - 1.0).ln() - lp) / 2.0).exp(),
        }
    }
}

/// Uniform grid of `m` points on [0, 1].
pub fn uniform_grid(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

/// Polynomials of degree `0..count` orthonormal as vectors over `grid`
/// (`sum_i phi_j(s_i) phi_k(s_i) = delta_jk`), with positive leading coefficient.
///
/// Returned as a `count x m` matrix.
pub fn orthonormal_polynomials(grid: &[f64], count: usize) -> Result<DMatrix<f64>> {
    let m = grid.len();
    if count > m {
        return Err(FttmError::domain("more polynomials than grid points"));
    }
    let mean = grid.iter().sum::<f64>() / m as f64;
    let mut basis = DMatrix::zeros(count, m);
    for k in 0..count {
        let mut v: Vec<f64> = grid.iter().map(|s| (s - mean).powi(k as i32)).collect();
        // modified Gram-Schmidt, two passes
        for _ in 0..2 {
            for j in 0..k {
                let row = basis.row(j);
                let proj: f64 = v.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
                for (vi, bj) in v.iter_mut().zip(row.iter()) {
                    *vi -= proj * bj;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(FttmError::domain("grid cannot support the requested degree"));
        }
        for (i, vi) in v.iter().enumerate() {
            basis[(k, i)] = vi / norm;
        }
    }
    Ok(basis)
}

/// `n` curves `X_i = sum_k psi_ik phi_k` with `psi_ik ~ N(0, 4 (10 - k + 1))`, on a uniform `m` grid.
pub fn gen_functional_covariates<R: Rng>(n: usize, m: usize, rng: &mut R) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let grid = uniform_grid(m);
    let phi = orthonormal_polynomials(&grid, N_SCORES)?;
    let sds = score_sds();
    let mut xf = DMatrix::zeros(n, m);
    for i in 0..n {
        for (k, sd) in sds.iter().enumerate() {
            let psi: f64 = sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
            for j in 0..m {
                xf[(i, j)] += psi * phi[(k, j)];
            }
        }
    }
    Ok((xf, grid))
}

fn score_sds() -> Vec<f64> {
    (1..=N_SCORES).map(|k| (4.0 * (N_SCORES - k + 1) as f64).sqrt()).collect()
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: SurvivalDataset,
    pub truth: Truth,
    /// True `int X_i(s) beta(s) ds` (trapezoid on the grid).
    pub functional_term: Vec<f64>,
    /// True linear predictor.
    pub lp: Vec<f64>,
    /// Latent event times.
    pub event_times: Vec<f64>,
}

/// Draws a dataset from `truth` (which may differ from the scenario's defaults).
pub fn generate(cfg: &ScenarioConfig, truth: &Truth) -> Result<SimulatedData> {
    cfg.check()?;
    if truth.beta.len() != 2 {
        return Err(FttmError::domain("scenario truth needs two scalar coefficients"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let grid = uniform_grid(cfg.m);
    let phi = orthonormal_polynomials(&grid, N_SCORES)?;
    let sds = score_sds();
    let w = trapezoid_weights(&grid)?;
    let beta_s: Vec<f64> = grid.iter().map(|&s| truth.beta_s(s)).collect();
    let wb: Vec<f64> = w.iter().zip(&beta_s).map(|(a, b)| a * b).collect();
    let bern = Bernoulli::new(0.5).expect("valid probability");
    let std_normal = Normal::new(0.0, 1.0).expect("valid sd");

    let mut x = DMatrix::zeros(n, 2);
    let mut xf = DMatrix::zeros(n, cfg.m);
    let (mut y, mut delta) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut fterm, mut lps, mut times) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut curve = vec![0.0; cfg.m];
    for i in 0..n {
        x[(i, 0)] = if bern.sample(&mut rng) { 1.0 } else { 0.0 };
        x[(i, 1)] = std_normal.sample(&mut rng);
        curve.iter_mut().for_each(|c| *c = 0.0);
        for (k, sd) in sds.iter().enumerate() {
            let psi = sd * std_normal.sample(&mut rng);
            for (j, c) in curve.iter_mut().enumerate() {
                *c += psi * phi[(k, j)];
            }
        }
        for (j, c) in curve.iter().enumerate() {
            xf[(i, j)] = *c;
        }
        let f = dot(&curve, &wb);
        let lp = truth.beta[0] * x[(i, 0)] + truth.beta[1] * x[(i, 1)] + f;
        let t = match truth.scenario {
            Scenario::A1 => {
                let e: f64 = rng.sample(Exp1);
                e / (0.2 * lp.exp())
            }
            Scenario::A2 => {
                let u: f64 = rng.sample(Open01);
                truth.event_time(u, lp)
            }
        };
        let c = truth.censoring_mean() * rng.sample::<f64, _>(Exp1);
        y.push(t.min(c));
        delta.push(t <= c);
        fterm.push(f);
        lps.push(lp);
        times.push(t);
    }
    let dataset = SurvivalDataset::new(y, delta, x, xf, grid)?
        .with_scalar_names(vec!["x1".into(), "x2".into()])?;
    Ok(SimulatedData {
        dataset,
        truth: truth.clone(),
        functional_term: fterm,
        lp: lps,
        event_times: times,
    })
}

pub fn gen_scenario_a1(cfg: &ScenarioConfig) -> Result<SimulatedData> {
    generate(&ScenarioConfig { scenario: Scenario::A1, ..*cfg }, &Truth::of(Scenario::A1))
}

pub fn gen_scenario_a2(cfg: &ScenarioConfig) -> Result<SimulatedData> {
    generate(&ScenarioConfig { scenario: Scenario::A2, ..*cfg }, &Truth::of(Scenario::A2))
}

pub fn gen_scenario(cfg: &ScenarioConfig) -> Result<SimulatedData> {
    generate(cfg, &Truth::of(cfg.scenario))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator seed of replication `rep`.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    splitmix64(master.wrapping_add((rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// How each replication is fitted; the error family is the scenario's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStrategy {
    Fixed { n0: usize, n1: usize },
    Grid { n0: Vec<usize>, n1: Vec<usize> },
}

impl FitStrategy {
    /// N0 ∈ {4, 7, 10, 13}, N1 ∈ {3, 5, 7, 9}.
    pub fn simulation_grid() -> Self {
        Self::Grid {
            n0: vec![4, 7, 10, 13],
            n1: vec![3, 5, 7, 9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub seed: u64,
    pub censoring_rate: f64,
    #[serde(default)]
    pub error: Option<String>,
    pub converged: bool,
    pub n0: usize,
    pub n1: usize,
    pub beta_hat: Vec<f64>,
    pub sq_err_beta: Vec<f64>,
    pub ise_beta_s: f64,
    pub ise_h: f64,
    pub ise_h_fy: f64,
    /// `None` when the covariance could not be formed.
    pub covered_beta: Option<Vec<bool>>,
    pub coverage_beta_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenario: Scenario,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub strategy: FitStrategy,
    pub failures: usize,
    pub mse_beta: Vec<f64>,
    pub mise_beta_s: f64,
    /// Uniform time grid from the smallest to the largest observed time.
    pub mise_h: f64,
    /// Weighted by the empirical distribution of the observed times.
    pub mise_h_fy: f64,
    pub coverage_beta: Vec<f64>,
    pub coverage_beta_s: f64,
    /// Replications that contributed to the coverage figures.
    pub coverage_reps: usize,
    pub censoring_rate_mean: f64,
    pub replications: Vec<ReplicationRow>,
}

fn fit_replication(ds: &SurvivalDataset, scenario: Scenario, strategy: &FitStrategy, opts: &FitOptions) -> Result<FttmFit> {
    let fam = scenario.error_family();
    match strategy {
        FitStrategy::Fixed { n0, n1 } => {
            let spec = FttmSpec::new(*n0, *n1, fam, default_tau(ds)?, ds.p())?;
            fit(&spec, ds, opts)
        }
        FitStrategy::Grid { n0, n1 } => {
            let mut grid = GridSpec::new(n0.clone(), n1.clone(), vec![fam.param]);
            grid.family = fam.family;
            Ok(grid_search(ds, &grid, opts)?.best)
        }
    }
}

/// Fits one generated dataset and scores it against the truth on `eval_grid` ⊂ [0, 1].
pub fn score_fit(fit: &FttmFit, sim: &SimulatedData, eval_grid: &[f64]) -> Result<ReplicationRow> {
    let ds = &sim.dataset;
    let truth = &sim.truth;
    let beta_hat = fit.beta().to_vec();
    let sq_err_beta: Vec<f64> = beta_hat.iter().zip(&truth.beta).map(|(a, b)| (a - b).powi(2)).collect();

    let w = trapezoid_weights(eval_grid)?;
    let est_s: Vec<f64> = eval_grid
        .iter()
        .map(|&s| Ok(dot(&bernstein_vector(s, fit.spec.n1)?, fit.theta())))
        .collect::<Result<_>>()?;
    let ise_beta_s: f64 = eval_grid
        .iter()
        .zip(&est_s)
        .zip(&w)
        .map(|((&s, e), wi)| wi * (e - truth.beta_s(s)).powi(2))
        .sum();

    let (ise_h, ise_h_fy) = h_errors(fit, truth, &ds.y)?;

    let (covered_beta, coverage_beta_s) = match covariance(fit, ds) {
        Ok(cov) => {
            let covered: Vec<bool> = (0..beta_hat.len())
                .map(|j| (beta_hat[j] - truth.beta[j]).abs() <= Z_95 * cov.se(j))
                .collect();
            let block = cov.block(fit.spec.theta_range());
            let mut hits = 0usize;
            for (&s, e) in eval_grid.iter().zip(&est_s) {
                let b = nalgebra::DVector::from_vec(bernstein_vector(s, fit.spec.n1)?);
                let se = (b.transpose() * &block * &b)[(0, 0)].max(0.0).sqrt();
                if (e - truth.beta_s(s)).abs() <= Z_95 * se {
                    hits += 1;
                }
            }
            (Some(covered), Some(hits as f64 / eval_grid.len() as f64))
        }
        Err(e) => {
            log::warn!("covariance unavailable: {e}");
            (None, None)
        }
    };

    Ok(ReplicationRow {
        rep: 0,
        seed: 0,
        censoring_rate: 1.0 - ds.event_fraction(),
        error: None,
        converged: fit.converged,
        n0: fit.spec.n0,
        n1: fit.spec.n1,
        beta_hat,
        sq_err_beta,
        ise_beta_s,
        ise_h,
        ise_h_fy,
        covered_beta,
        coverage_beta_s,
    })
}

/// Mean squared error of `H` on a uniform grid spanning the observed times,
/// and averaged over the observed times themselves.
pub fn h_errors(fit: &FttmFit, truth: &Truth, y: &[f64]) -> Result<(f64, f64)> {
    if y.is_empty() {
        return Err(FttmError::domain("no observed times"));
    }
    let tau = fit.spec.tau;
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut uniform = 0.0;
    for k in 0..H_GRID_POINTS {
        let t = lo + (hi - lo) * k as f64 / (H_GRID_POINTS - 1) as f64;
        uniform += (h_eval(&fit.gamma_hat, tau, t)? - truth.h0(t)).powi(2);
    }
    uniform /= H_GRID_POINTS as f64;
    let mut fy = 0.0;
    for &t in y {
        fy += (h_eval(&fit.gamma_hat, tau, t)? - truth.h0(t)).powi(2);
    }
    fy /= y.len() as f64;
    Ok((uniform, fy))
}

/// Runs `reps` replications concurrently and aggregates in replication order.
pub fn monte_carlo(
    cfg: &ScenarioConfig,
    reps: usize,
    strategy: &FitStrategy,
    eval_grid: &[f64],
    opts: &FitOptions,
) -> Result<MonteCarloReport> {
    cfg.check()?;
    if reps < 2 {
        return Err(FttmError::domain("Monte-Carlo needs reps >= 2"));
    }
    trapezoid_weights(eval_grid)?;
    let truth = Truth::of(cfg.scenario);
    let rows: Vec<ReplicationRow> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(cfg.seed, rep);
            let rcfg = ScenarioConfig { seed, ..*cfg };
            let attempt = generate(&rcfg, &truth).and_then(|sim| {
                let censoring = 1.0 - sim.dataset.event_fraction();
                let scored = fit_replication(&sim.dataset, cfg.scenario, strategy, opts).and_then(|f| {
                    if f.converged {
                        score_fit(&f, &sim, eval_grid)
                    } else {
                        Err(FttmError::domain("fit did not converge"))
                    }
                });
                Ok((censoring, scored))
            });
            match attempt {
                Ok((_, Ok(mut row))) => {
                    row.rep = rep;
                    row.seed = seed;
                    row
                }
                Ok((censoring, Err(e))) => failed_row(rep, seed, censoring, e),
                Err(e) => failed_row(rep, seed, f64::NAN, e),
            }
        })
        .collect();
    aggregate(cfg, reps, strategy, rows)
}

fn failed_row(rep: usize, seed: u64, censoring_rate: f64, e: FttmError) -> ReplicationRow {
    ReplicationRow {
        rep,
        seed,
        censoring_rate,
        error: Some(e.to_string()),
        converged: false,
        n0: 0,
        n1: 0,
        beta_hat: vec![],
        sq_err_beta: vec![],
        ise_beta_s: f64::NAN,
        ise_h: f64::NAN,
        ise_h_fy: f64::NAN,
        covered_beta: None,
        coverage_beta_s: None,
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

fn aggregate(cfg: &ScenarioConfig, reps: usize, strategy: &FitStrategy, rows: Vec<ReplicationRow>) -> Result<MonteCarloReport> {
    let ok: Vec<&ReplicationRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let failures = reps - ok.len();
    if failures as f64 > MAX_FAILURE_FRACTION * reps as f64 {
        return Err(FttmError::TooManyFailures { failed: failures, reps });
    }
    if failures > 0 {
        log::warn!("{failures} of {reps} replications failed and were excluded");
    }
    let p = 2;
    let covered: Vec<&ReplicationRow> = ok.iter().copied().filter(|r| r.covered_beta.is_some()).collect();
    Ok(MonteCarloReport {
        scenario: cfg.scenario,
        n: cfg.n,
        reps,
        seed: cfg.seed,
        strategy: strategy.clone(),
        failures,
        mse_beta: (0..p).map(|j| mean(ok.iter().map(|r| r.sq_err_beta[j]))).collect(),
        mise_beta_s: mean(ok.iter().map(|r| r.ise_beta_s)),
        mise_h: mean(ok.iter().map(|r| r.ise_h)),
        mise_h_fy: mean(ok.iter().map(|r| r.ise_h_fy)),
        coverage_beta: (0..p)
            .map(|j| mean(covered.iter().map(|r| f64::from(u8::from(r.covered_beta.as_ref().unwrap()[j])))))
            .collect(),
        coverage_beta_s: mean(covered.iter().filter_map(|r| r.coverage_beta_s)),
        coverage_reps: covered.len(),
        censoring_rate_mean: mean(rows.iter().map(|r| r.censoring_rate).filter(|c| c.is_finite())),
        replications: rows,
    })
}

//! Harrell's C-index and K-fold cross-validated concordance.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::FunctionalQuadrature;
use crate::data::{default_tau, SurvivalDataset};
use crate::error::{FttmError, Result};
use crate::family::ErrorFamily;
use crate::likelihood::linear_predictor;
use crate::optimize::{fit, FitOptions, FttmFit};
use crate::params::FttmSpec;
use crate::select::{grid_search, GridSpec};

/// Harrell's C over usable pairs: `Y_i < Y_j` with `delta_i`, or `Y_i = Y_j` with `delta_i` and not `delta_j`.
///
/// Higher risk should mean shorter survival. Tied risks score one half.
pub fn c_index(risk: &[f64], times: &[f64], delta: &[bool]) -> Result<f64> {
    let n = risk.len();
    if times.len() != n || delta.len() != n {
        return Err(FttmError::domain("risk, times and delta differ in length"));
    }
    let mut score = 0.0;
    let mut usable = 0u64;
    for i in 0..n {
        if !delta[i] {
            continue;
        }
        for j in 0..n {
            let is_pair = times[i] < times[j] || (times[i] == times[j] && !delta[j]);
            if i == j || !is_pair {
                continue;
            }
            usable += 1;
            score += match risk[i].partial_cmp(&risk[j]) {
                Some(Ordering::Greater) => 1.0,
                Some(Ordering::Equal) => 0.5,
                _ => 0.0,
            };
        }
    }
    if usable == 0 {
        return Err(FttmError::ConcordanceUndefined);
    }
    Ok(score / usable as f64)
}

/// Linear predictor of every subject of `ds` under `fit`.
pub fn risk_scores(fit: &FttmFit, ds: &SurvivalDataset) -> Result<Vec<f64>> {
    let quad = FunctionalQuadrature::new(&ds.grid, fit.spec.n1)?;
    (0..ds.n())
        .map(|i| {
            let z = quad.design(&ds.xf_row(i))?;
            linear_predictor(fit.beta(), fit.theta(), &ds.x_row(i), z.as_slice())
        })
        .collect()
}

/// Model refit on each training fold; `tau` always comes from the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvModel {
    Fixed { n0: usize, n1: usize, error: ErrorFamily },
    Grid(GridSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// `None` when the fold was excluded.
    pub c: Option<f64>,
    #[serde(default)]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub seed: u64,
    pub mean_c: f64,
    pub folds: Vec<FoldResult>,
}

fn content_cmp(ds: &SurvivalDataset, a: usize, b: usize) -> Ordering {
    ds.y[a]
        .total_cmp(&ds.y[b])
        .then_with(|| {
            let (xa, xb) = (ds.x.row(a), ds.x.row(b));
            xa.iter().zip(xb.iter()).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
        .then_with(|| {
            let (xa, xb) = (ds.xf.row(a), ds.xf.row(b));
            xa.iter().zip(xb.iter()).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
}

/// Fold label of each subject, stratified by event status.
///
/// Each stratum is sorted by subject content (time, then covariates) and cut
/// into consecutive blocks of `k`; every block receives a seeded random
/// permutation of the fold labels. Labels depend only on content and seed.
pub fn stratified_folds(ds: &SurvivalDataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(FttmError::domain("K must be >= 2"));
    }
    if ds.events() < k {
        return Err(FttmError::domain(format!(
            "{} events cannot give each of {k} folds an event",
            ds.events()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![0; ds.n()];
    for stratum in [true, false] {
        let mut idx: Vec<usize> = (0..ds.n()).filter(|&i| ds.delta[i] == stratum).collect();
        idx.sort_by(|&a, &b| content_cmp(ds, a, b));
        for block in idx.chunks(k) {
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut rng);
            for (&i, &f) in block.iter().zip(&perm) {
                labels[i] = f;
            }
        }
    }
    Ok(labels)
}

fn fit_model(model: &CvModel, ds: &SurvivalDataset, opts: &FitOptions) -> Result<FttmFit> {
    match model {
        CvModel::Fixed { n0, n1, error } => {
            let spec = FttmSpec::new(*n0, *n1, *error, default_tau(ds)?, ds.p())?;
            fit(&spec, ds, opts)
        }
        CvModel::Grid(grid) => {
            let mut g = grid.clone();
            g.tau = None;
            Ok(grid_search(ds, &g, opts)?.best)
        }
    }
}

/// K-fold cross-validated C-index; folds are fit concurrently.
///
/// Folds without usable pairs or whose fit fails are excluded with a warning.
pub fn cv_c_index(ds: &SurvivalDataset, model: &CvModel, k: usize, seed: u64, opts: &FitOptions) -> Result<CvResult> {
    let labels = stratified_folds(ds, k, seed)?;
    let mut sorted: Vec<usize> = (0..ds.n()).collect();
    sorted.sort_by(|&a, &b| content_cmp(ds, a, b));

    let folds: Vec<FoldResult> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = sorted.iter().copied().filter(|&i| labels[i] != f).collect();
            let test: Vec<usize> = sorted.iter().copied().filter(|&i| labels[i] == f).collect();
            let (tr, te) = (ds.subset(&train), ds.subset(&test));
            let c = fit_model(model, &tr, opts)
                .and_then(|m| risk_scores(&m, &te))
                .and_then(|risk| c_index(&risk, &te.y, &te.delta));
            let (c, warning) = match c {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(format!("fold {f} excluded: {e}"))),
            };
            FoldResult {
                fold: f,
                n_train: train.len(),
                n_test: test.len(),
                c,
                warning,
            }
        })
        .collect();

    for w in folds.iter().filter_map(|f| f.warning.as_ref()) {
        log::warn!("{w}");
    }
    let used: Vec<f64> = folds.iter().filter_map(|f| f.c).collect();
    if used.is_empty() {
        return Err(FttmError::ConcordanceUndefined);
    }
    Ok(CvResult {
        k,
        seed,
        mean_c: used.iter().sum::<f64>() / used.len() as f64,
        folds,
    })
}

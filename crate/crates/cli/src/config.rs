//! Settings merged from flags, an optional JSON config file, and defaults (in that order).

use std::path::Path;

use fttm::family::FamilyKind;
use fttm::FitOptions;
use serde::Deserialize;

use crate::CliError;

/// Every field is optional; absent fields fall through to the defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub threads: Option<usize>,
    pub n0: Option<usize>,
    pub n1: Option<usize>,
    pub r: Option<f64>,
    pub family: Option<FamilyKind>,
    pub tau: Option<f64>,
    pub grid_n0: Option<Vec<usize>>,
    pub grid_n1: Option<Vec<usize>>,
    pub grid_r: Option<Vec<f64>>,
    pub k: Option<usize>,
    pub reps: Option<usize>,
    pub n: Option<usize>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub step_tol: Option<f64>,
    pub n_restarts: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
    }

    pub fn fit_options(&self) -> FitOptions {
        let d = FitOptions::default();
        FitOptions {
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
            step_tol: self.step_tol.unwrap_or(d.step_tol),
            n_restarts: self.n_restarts.unwrap_or(d.n_restarts),
            seed: d.seed,
        }
    }
}

/// `flag`, else `config`, else `default`.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

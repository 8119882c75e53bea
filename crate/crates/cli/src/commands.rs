//! Subcommand bodies. Each returns the JSON document printed on stdout.

use std::path::{Path, PathBuf};

use fttm::basis::bernstein_vector;
use fttm::concordance::{cv_c_index, CvModel};
use fttm::data::{default_tau, has_errors, validate as validate_data, Finding, Severity};
use fttm::family::FamilyKind;
use fttm::gof::{gof_curve, gof_deviation};
use fttm::inference::{covariance, functional_band, h_curve_band, scalar_intervals, BandPoint};
use fttm::io::{fmt_f64, read_dataset, write_dataset, write_records, write_table, write_text};
use fttm::predict::{h_hat, pseudo_residuals, survival_curves};
use fttm::select::{grid_search, AicRow, GridSpec};
use fttm::simulate::{
    gen_scenario, monte_carlo, replication_seed, uniform_grid, FitStrategy, ReplicationRow, Scenario,
    ScenarioConfig,
};
use fttm::{ErrorFamily, FttmFit, FttmSpec, SurvivalDataset};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{pick, ConfigFile};
use crate::{CliError, DataArgs, FamilyArg, ModelArgs, Outcome, ScenarioArg, SCHEMA_VERSION};

/// Points of the exported `beta(s)` and `H(t)` curves.
const CURVE_POINTS: usize = 101;

const DEFAULT_N0: usize = 13;
const DEFAULT_N1: usize = 3;
const DEFAULT_K: usize = 10;
const DEFAULT_SIM_N: usize = 300;
const DEFAULT_REPS: usize = 100;

enum ModelChoice {
    Single { n0: usize, n1: usize, error: ErrorFamily },
    Grid(GridSpec),
}

fn family_kind(arg: Option<FamilyArg>, cfg: &ConfigFile) -> FamilyKind {
    let from_flag = arg.map(|a| match a {
        FamilyArg::Logarithmic => FamilyKind::Logarithmic,
        FamilyArg::BoxCox => FamilyKind::BoxCox,
    });
    pick(from_flag, cfg.family, FamilyKind::Logarithmic)
}

/// Any grid setting, from flags or config, selects grid search.
fn resolve_model(cfg: &ConfigFile, m: &ModelArgs) -> Result<ModelChoice, CliError> {
    let family = family_kind(m.family, cfg);
    let r = pick(m.r, cfg.r, 0.0);
    let grid_requested = m.grid_n0.is_some()
        || m.grid_n1.is_some()
        || m.grid_r.is_some()
        || cfg.grid_n0.is_some()
        || cfg.grid_n1.is_some()
        || cfg.grid_r.is_some();
    if grid_requested {
        let mut grid = GridSpec::new(
            pick(m.grid_n0.clone(), cfg.grid_n0.clone(), vec![4, 7, 10, 13]),
            pick(m.grid_n1.clone(), cfg.grid_n1.clone(), vec![3, 5, 7, 9]),
            pick(m.grid_r.clone(), cfg.grid_r.clone(), vec![r]),
        );
        grid.family = family;
        Ok(ModelChoice::Grid(grid))
    } else {
        Ok(ModelChoice::Single {
            n0: pick(m.n0, cfg.n0, DEFAULT_N0),
            n1: pick(m.n1, cfg.n1, DEFAULT_N1),
            error: ErrorFamily::new(family, r)?,
        })
    }
}

fn load_data(data: &DataArgs) -> Result<(SurvivalDataset, Vec<String>), CliError> {
    let ds = read_dataset(&data.survival, &data.functional)?;
    let findings = validate_data(&ds);
    if has_errors(&findings) {
        let msgs: Vec<String> = findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
            .map(|f| f.message.clone())
            .collect();
        return Err(CliError::new("invalid_data", msgs.join("; ")));
    }
    let warnings = findings.into_iter().map(|f| f.message).collect();
    Ok((ds, warnings))
}

fn ok_status(command: &str, outputs: &[&Path], warnings: &[String], extra: Value) -> Outcome {
    let mut doc = json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "command": command,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "warnings": warnings,
    });
    if let (Value::Object(d), Value::Object(e)) = (&mut doc, extra) {
        d.extend(e);
    }
    Outcome { json: doc, failed: false }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DataSummary {
    pub n: usize,
    pub events: usize,
    pub censoring_rate: f64,
    pub scalar_names: Vec<String>,
    pub grid_points: usize,
    pub grid_range: (f64, f64),
}

impl DataSummary {
    fn of(ds: &SurvivalDataset) -> Self {
        Self {
            n: ds.n(),
            events: ds.events(),
            censoring_rate: 1.0 - ds.event_fraction(),
            scalar_names: ds.scalar_names.clone(),
            grid_points: ds.m(),
            grid_range: ds.grid_range,
        }
    }
}

/// Contents of `fit.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitDocument {
    pub schema_version: u32,
    /// `"fixed"` or `"aic"`.
    pub selection: String,
    pub data: DataSummary,
    pub fit: FttmFit,
    pub scalar_intervals: Option<Vec<fttm::inference::ScalarInterval>>,
    pub warnings: Vec<String>,
}

fn band_rows(points: &[BandPoint]) -> Vec<Vec<f64>> {
    points.iter().map(|p| vec![p.at, p.estimate, p.se, p.lo, p.hi]).collect()
}

fn estimate_rows(at: &[f64], est: impl Fn(f64) -> Result<f64, CliError>) -> Result<Vec<Vec<f64>>, CliError> {
    at.iter()
        .map(|&a| Ok(vec![a, est(a)?, f64::NAN, f64::NAN, f64::NAN]))
        .collect()
}

fn aic_records(table: &[AicRow]) -> Vec<Vec<String>> {
    let mut out = vec![["n0", "n1", "r", "aic", "loglik", "converged", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect()];
    for row in table {
        out.push(vec![
            row.n0.to_string(),
            row.n1.to_string(),
            fmt_f64(row.r),
            fmt_f64(row.aic),
            fmt_f64(row.loglik),
            row.converged.to_string(),
            row.error.clone().unwrap_or_default(),
        ]);
    }
    out
}

pub fn fit(cfg: &ConfigFile, data: &DataArgs, model: &ModelArgs, out: &Path, inference: bool) -> Result<Outcome, CliError> {
    let (ds, mut warnings) = load_data(data)?;
    let opts = cfg.fit_options();
    let tau = match model.tau.or(cfg.tau) {
        Some(t) => t,
        None => default_tau(&ds)?,
    };
    let (mut f, table, selection) = match resolve_model(cfg, model)? {
        ModelChoice::Single { n0, n1, error } => {
            let spec = FttmSpec::new(n0, n1, error, tau, ds.p())?;
            (fttm::fit(&spec, &ds, &opts)?, None, "fixed")
        }
        ModelChoice::Grid(mut grid) => {
            grid.tau = Some(tau);
            let res = grid_search(&ds, &grid, &opts)?;
            (res.best, Some(res.table), "aic")
        }
    };
    warnings.extend(f.warnings.iter().cloned());

    std::fs::create_dir_all(out)?;
    let s_grid = uniform_grid(CURVE_POINTS);
    let t_grid: Vec<f64> = uniform_grid(CURVE_POINTS).iter().map(|u| u * f.spec.tau).collect();
    let cov = if inference {
        match covariance(&f, &ds) {
            Ok(c) => Some(c),
            Err(e) => {
                warnings.push(format!("no standard errors: {e}"));
                None
            }
        }
    } else {
        None
    };
    let (beta_rows, h_rows, intervals) = match &cov {
        Some(c) => (
            band_rows(&functional_band(&f, c, &s_grid)?),
            band_rows(&h_curve_band(&f, c, &t_grid)?),
            Some(scalar_intervals(&f, c, &ds.scalar_names)?),
        ),
        None => {
            let theta = f.theta().to_vec();
            let n1 = f.spec.n1;
            let beta_s = |s: f64| -> Result<f64, CliError> {
                Ok(bernstein_vector(s, n1)?.iter().zip(&theta).map(|(b, t)| b * t).sum())
            };
            (
                estimate_rows(&s_grid, beta_s)?,
                estimate_rows(&t_grid, |t| Ok(h_hat(&f, t)?))?,
                None,
            )
        }
    };
    f.covariance = cov;

    let beta_path = out.join("beta_s.csv");
    write_table(&beta_path, &["s", "est", "se", "lo", "hi"], beta_rows)?;
    let h_path = out.join("h_curve.csv");
    write_table(&h_path, &["t", "est", "se", "lo", "hi"], h_rows)?;
    let mut outputs: Vec<PathBuf> = vec![];
    if let Some(table) = &table {
        let p = out.join("aic_table.csv");
        write_records(&p, &aic_records(table))?;
        outputs.push(p);
    }
    let doc = FitDocument {
        schema_version: SCHEMA_VERSION,
        selection: selection.into(),
        data: DataSummary::of(&ds),
        scalar_intervals: intervals,
        warnings: warnings.clone(),
        fit: f,
    };
    let fit_path = out.join("fit.json");
    write_text(&fit_path, &serde_json::to_string_pretty(&doc)?)?;
    outputs.splice(0..0, [fit_path, beta_path, h_path]);
    let paths: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    Ok(ok_status(
        "fit",
        &paths,
        &warnings,
        json!({
            "converged": doc.fit.converged,
            "n0": doc.fit.spec.n0,
            "n1": doc.fit.spec.n1,
            "error": doc.fit.spec.error,
            "loglik": doc.fit.loglik,
            "aic": doc.fit.aic,
        }),
    ))
}

fn load_fit(path: &Path) -> Result<FitDocument, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new("io", format!("cannot read {}: {e}", path.display())))?;
    let doc: FitDocument = serde_json::from_str(&text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(CliError::new(
            "schema",
            format!("fit file has schema_version {}, expected {SCHEMA_VERSION}", doc.schema_version),
        ));
    }
    Ok(doc)
}

/// Data for an existing fit must carry the same scalar covariates in the same order.
fn load_matching(doc: &FitDocument, data: &DataArgs) -> Result<(SurvivalDataset, Vec<String>), CliError> {
    let (ds, warnings) = load_data(data)?;
    if ds.scalar_names != doc.data.scalar_names {
        return Err(CliError::new(
            "invalid_data",
            format!(
                "scalar columns {:?} differ from the fitted model's {:?}",
                ds.scalar_names, doc.data.scalar_names
            ),
        ));
    }
    Ok((ds, warnings))
}

pub fn predict(fit_path: &Path, data: &DataArgs, out: &Path, times: Option<Vec<f64>>, n_times: usize) -> Result<Outcome, CliError> {
    let doc = load_fit(fit_path)?;
    let (ds, warnings) = load_matching(&doc, data)?;
    let tau = doc.fit.spec.tau;
    let times = match times {
        Some(t) => t,
        None if n_times >= 2 => uniform_grid(n_times).iter().map(|u| u * tau).collect(),
        None => return Err(CliError::new("usage", "--n-times must be >= 2")),
    };
    let curves = survival_curves(&doc.fit, &ds, &times)?;
    let mut header = vec!["t".to_string()];
    header.extend(ds.ids.iter().map(|id| format!("S_hat_{id}")));
    let mut records = vec![header];
    for (i, t) in times.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        row.extend(curves.iter().map(|c| fmt_f64(c[i])));
        records.push(row);
    }
    write_records(out, &records)?;
    Ok(ok_status(
        "predict",
        &[out],
        &warnings,
        json!({ "profiles": ds.n(), "times": times.len() }),
    ))
}

pub fn gof(fit_path: &Path, data: &DataArgs, out: &Path) -> Result<Outcome, CliError> {
    let doc = load_fit(fit_path)?;
    let (ds, mut warnings) = load_matching(&doc, data)?;
    let rows = gof_curve(&doc.fit, &ds)?;
    let res = pseudo_residuals(&doc.fit, &ds)?;
    if res.capped > 0 {
        warnings.push(format!("{} pseudo residuals capped", res.capped));
    }
    write_table(
        out,
        &["u", "lambda_hat", "lo", "hi", "identity"],
        rows.iter().map(|r| vec![r.u, r.lambda_hat, r.lo, r.hi, r.u]),
    )?;
    let dev = gof_deviation(&rows, &res.u);
    Ok(ok_status("gof", &[out], &warnings, json!({ "deviation": dev })))
}

fn emit(doc: Value, out: Option<&Path>, command: &str) -> Result<Outcome, CliError> {
    match out {
        Some(p) => {
            write_text(p, &serde_json::to_string_pretty(&doc)?)?;
            Ok(ok_status(command, &[p], &[], json!({})))
        }
        None => Ok(Outcome { json: doc, failed: false }),
    }
}

fn versioned<T: Serialize>(body: &T) -> Result<Value, CliError> {
    let mut v = serde_json::to_value(body)?;
    if let Value::Object(m) = &mut v {
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    Ok(v)
}

pub fn cv(
    cfg: &ConfigFile,
    data: &DataArgs,
    model: &ModelArgs,
    k: Option<usize>,
    seed: u64,
    out: Option<&Path>,
) -> Result<Outcome, CliError> {
    let (ds, _) = load_data(data)?;
    let k = pick(k, cfg.k, DEFAULT_K);
    if model.tau.or(cfg.tau).is_some() {
        log::warn!("tau is taken from each training fold; the tau setting is ignored");
    }
    let cv_model = match resolve_model(cfg, model)? {
        ModelChoice::Single { n0, n1, error } => CvModel::Fixed { n0, n1, error },
        ModelChoice::Grid(g) => CvModel::Grid(g),
    };
    let result = cv_c_index(&ds, &cv_model, k, seed, &cfg.fit_options())?;
    emit(versioned(&result)?, out, "cv")
}

pub struct SimulateArgs {
    pub scenario: ScenarioArg,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub seed: u64,
    pub fixed: Option<(usize, usize)>,
    pub out: Option<PathBuf>,
    pub replications_out: Option<PathBuf>,
    pub dataset_out: Option<PathBuf>,
}

fn replication_records(rows: &[ReplicationRow]) -> Vec<Vec<String>> {
    let header = [
        "rep",
        "seed",
        "censoring_rate",
        "converged",
        "n0",
        "n1",
        "beta1_hat",
        "beta2_hat",
        "sq_err_beta1",
        "sq_err_beta2",
        "ise_beta_s",
        "ise_h",
        "ise_h_fy",
        "covered_beta1",
        "covered_beta2",
        "coverage_beta_s",
        "error",
    ];
    let num = |v: Option<&f64>| v.map(|x| fmt_f64(*x)).unwrap_or_default();
    let flag = |r: &ReplicationRow, j: usize| {
        r.covered_beta
            .as_ref()
            .and_then(|c| c.get(j))
            .map(|b| b.to_string())
            .unwrap_or_default()
    };
    let mut out = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        out.push(vec![
            r.rep.to_string(),
            r.seed.to_string(),
            fmt_f64(r.censoring_rate),
            r.converged.to_string(),
            r.n0.to_string(),
            r.n1.to_string(),
            num(r.beta_hat.first()),
            num(r.beta_hat.get(1)),
            num(r.sq_err_beta.first()),
            num(r.sq_err_beta.get(1)),
            fmt_f64(r.ise_beta_s),
            fmt_f64(r.ise_h),
            fmt_f64(r.ise_h_fy),
            flag(r, 0),
            flag(r, 1),
            num(r.coverage_beta_s.as_ref()),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    out
}

pub fn simulate(cfg: &ConfigFile, args: SimulateArgs) -> Result<Outcome, CliError> {
    let scenario = match args.scenario {
        ScenarioArg::A1 => Scenario::A1,
        ScenarioArg::A2 => Scenario::A2,
    };
    let n = pick(args.n, cfg.n, DEFAULT_SIM_N);
    let reps = pick(args.reps, cfg.reps, DEFAULT_REPS);
    let strategy = match args.fixed {
        Some((n0, n1)) => FitStrategy::Fixed { n0, n1 },
        None => FitStrategy::simulation_grid(),
    };
    let scfg = ScenarioConfig::new(scenario, n, args.seed);
    let mut written: Vec<PathBuf> = vec![];
    if let Some(dir) = &args.dataset_out {
        std::fs::create_dir_all(dir)?;
        let first = ScenarioConfig::new(scenario, n, replication_seed(args.seed, 0));
        let sim = gen_scenario(&first)?;
        let (s, f) = (dir.join("survival.csv"), dir.join("functional.csv"));
        write_dataset(&sim.dataset, &s, &f)?;
        written.extend([s, f]);
    }
    let report = monte_carlo(&scfg, reps, &strategy, &uniform_grid(CURVE_POINTS), &cfg.fit_options())?;
    if let Some(p) = &args.replications_out {
        write_records(p, &replication_records(&report.replications))?;
        written.push(p.clone());
    }
    let doc = versioned(&report)?;
    match &args.out {
        Some(p) => {
            write_text(p, &serde_json::to_string_pretty(&doc)?)?;
            written.push(p.clone());
            let paths: Vec<&Path> = written.iter().map(|p| p.as_path()).collect();
            Ok(ok_status("simulate", &paths, &[], json!({})))
        }
        None => Ok(Outcome { json: doc, failed: false }),
    }
}

pub fn validate(data: &DataArgs) -> Result<Outcome, CliError> {
    let ds = read_dataset(&data.survival, &data.functional)?;
    let findings: Vec<Finding> = validate_data(&ds);
    let failed = has_errors(&findings);
    Ok(Outcome {
        json: json!({
            "schema_version": SCHEMA_VERSION,
            "status": if failed { "invalid" } else { "ok" },
            "command": "validate",
            "data": DataSummary::of(&ds),
            "findings": findings,
        }),
        failed,
    })
}

//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use fttm::SurvivalDataset;

fn binom(n: usize, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

fn bern(k: usize, n: usize, x: f64) -> f64 {
    binom(n, k) * x.powi(k as i32) * (1.0 - x).powi((n - k) as i32)
}

/// Direct transcription of the sieve log-likelihood for the logarithmic family.
pub fn naive_loglik(
    ds: &SurvivalDataset,
    r: f64,
    tau: f64,
    beta: &[f64],
    gamma: &[f64],
    theta: &[f64],
) -> f64 {
    let n0 = gamma.len() - 1;
    let n1 = theta.len() - 1;
    let m = ds.grid.len();
    let mut ll = 0.0;
    for i in 0..ds.n() {
        let x = ds.y[i] / tau;
        let h: f64 = (0..=n0).map(|k| gamma[k] * bern(k, n0, x)).sum();
        let hp: f64 = (0..n0)
            .map(|k| (gamma[k + 1] - gamma[k]) * bern(k, n0 - 1, x))
            .sum::<f64>()
            * n0 as f64
            / tau;
        let mut func = 0.0;
        for k in 0..=n1 {
            let mut z = 0.0;
            for j in 0..m - 1 {
                let (s0, s1) = (ds.grid[j], ds.grid[j + 1]);
                let f0 = ds.xf[(i, j)] * bern(k, n1, s0);
                let f1 = ds.xf[(i, j + 1)] * bern(k, n1, s1);
                z += 0.5 * (s1 - s0) * (f0 + f1);
            }
            func += theta[k] * z;
        }
        let lin: f64 = (0..beta.len()).map(|j| beta[j] * ds.x[(i, j)]).sum::<f64>() + func;
        let u = h + lin;
        let v = u.exp();
        let (g, dg) = if r == 0.0 {
            (v, 1.0)
        } else {
            ((1.0 + r * v).ln() / r, 1.0 / (1.0 + r * v))
        };
        let log_s = -g;
        let log_f = dg.ln() + u - g;
        ll += if ds.delta[i] { hp.ln() + log_f } else { log_s };
    }
    ll
}

/// Kaplan–Meier survival as (distinct event time, S just after it).
pub fn kaplan_meier(times: &[f64], delta: &[bool]) -> Vec<(f64, f64)> {
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());
    let mut at_risk = times.len() as f64;
    let mut s = 1.0;
    let mut out = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let t = times[idx[i]];
        let (mut d, mut c) = (0.0, 0.0);
        while i < idx.len() && times[idx[i]] == t {
            if delta[idx[i]] {
                d += 1.0;
            } else {
                c += 1.0;
            }
            i += 1;
        }
        if d > 0.0 {
            s *= 1.0 - d / at_risk;
            out.push((t, s));
        }
        at_risk -= d + c;
    }
    out
}

//! Dense BFGS on the inverse Hessian with a strong-Wolfe line search.

/// Objective returning `(value, gradient)`, or `None` where it is undefined.
pub(crate) trait Objective {
    fn eval(&self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    fn eval(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsSettings {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LS_EVALS: usize = 40;

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

struct Trial {
    alpha: f64,
    value: f64,
    slope: f64,
    grad: Vec<f64>,
}

struct LineSearch<'a, O: Objective> {
    obj: &'a O,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    slope0: f64,
}

impl<O: Objective> LineSearch<'_, O> {
    fn trial(&self, alpha: f64) -> Option<Trial> {
        let xa = axpy(self.x, alpha, self.d);
        let (value, grad) = self.obj.eval(&xa)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let slope = dot(&grad, self.d);
        Some(Trial {
            alpha,
            value,
            slope,
            grad,
        })
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.value <= self.f0 + C1 * t.alpha * self.slope0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= -C2 * self.slope0
    }

    /// Returns the accepted trial; falls back to the best sufficient-decrease point.
    fn run(&self, alpha0: f64) -> Option<Trial> {
        let mut evals = 0;
        let mut prev: Option<Trial> = None;
        let mut alpha = alpha0;
        let mut best: Option<Trial> = None;
        loop {
            evals += 1;
            let t = self.trial(alpha);
            match t {
                None => {
                    // undefined region: shrink toward the last good point
                    let lo = prev.as_ref().map_or(0.0, |p| p.alpha);
                    if evals >= MAX_LS_EVALS {
                        return best;
                    }
                    alpha = lo + 0.25 * (alpha - lo);
                    continue;
                }
                Some(t) => {
                    let ok = self.armijo(&t);
                    if ok && best.as_ref().is_none_or(|b| t.value < b.value) {
                        best = Some(Trial {
                            grad: t.grad.clone(),
                            ..t
                        });
                    }
                    let worse_than_prev = prev.as_ref().is_some_and(|p| t.value >= p.value);
                    if !ok || worse_than_prev {
                        return self.zoom(prev, t, evals, best);
                    }
                    if self.curvature(&t) {
                        return Some(t);
                    }
                    if t.slope >= 0.0 {
                        return self.zoom(Some(t), prev.unwrap_or(self.origin()), evals, best);
                    }
                    if evals >= MAX_LS_EVALS {
                        return best;
                    }
                    alpha = t.alpha * 2.0;
                    prev = Some(t);
                }
            }
        }
    }

    fn origin(&self) -> Trial {
        Trial {
            alpha: 0.0,
            value: self.f0,
            slope: self.slope0,
            grad: Vec::new(),
        }
    }

    fn zoom(
        &self,
        lo: Option<Trial>,
        hi: Trial,
        mut evals: usize,
        mut best: Option<Trial>,
    ) -> Option<Trial> {
        let mut lo = lo.unwrap_or_else(|| self.origin());
        let mut hi = hi;
        while evals < MAX_LS_EVALS {
            evals += 1;
            let alpha = interpolate(&lo, &hi);
            let Some(t) = self.trial(alpha) else {
                hi = Trial {
                    alpha,
                    value: f64::INFINITY,
                    slope: f64::NAN,
                    grad: Vec::new(),
                };
                continue;
            };
            if self.armijo(&t) && best.as_ref().is_none_or(|b| t.value < b.value) {
                best = Some(Trial {
                    grad: t.grad.clone(),
                    ..t
                });
            }
            if !self.armijo(&t) || t.value >= lo.value {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Some(t);
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
            if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
                break;
            }
        }
        best
    }
}

/// Safeguarded quadratic interpolation on `[lo, hi]`, falling back to bisection.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !hi.value.is_finite() || !lo.slope.is_finite() {
        return mid;
    }
    let da = b - a;
    let denom = 2.0 * (hi.value - lo.value - lo.slope * da);
    if denom <= 0.0 {
        return mid;
    }
    let cand = a - lo.slope * da * da / denom;
    let (l, h) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (h - l);
    if cand.is_finite() && cand > l + margin && cand < h - margin {
        cand
    } else {
        mid
    }
}

/// Minimizes `obj` from `x0`. `x0` must be a point where `obj` is defined.
pub(crate) fn minimize<O: Objective>(obj: &O, x0: &[f64], cfg: BfgsSettings) -> Option<BfgsOutcome> {
    let n = x0.len();
    let (mut f, mut g) = obj.eval(x0)?;
    if !f.is_finite() {
        return None;
    }
    let mut x = x0.to_vec();
    // row-major inverse Hessian approximation
    let mut hinv = identity(n, 1.0);
    let mut scaled = false;
    let mut iterations = 0;
    let mut converged = false;
    let mut resets = 0;

    while iterations < cfg.max_iters {
        let gnorm = max_norm(&g);
        if gnorm <= cfg.grad_tol {
            converged = true;
            break;
        }
        let mut d = matvec(&hinv, &g, n);
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope0 = dot(&g, &d);
        if !(slope0 < 0.0) {
            hinv = identity(n, 1.0 / gnorm.max(1.0));
            d = g.iter().map(|v| -v / gnorm.max(1.0)).collect();
            slope0 = dot(&g, &d);
            scaled = false;
        }
        let alpha0 = if scaled {
            1.0
        } else {
            1.0 / max_norm(&d).max(1.0)
        };
        let ls = LineSearch {
            obj,
            x: &x,
            d: &d,
            f0: f,
            slope0,
        };
        let Some(t) = ls.run(alpha0) else {
            // No sufficient decrease along d: retry once from a fresh metric.
            if resets < 2 && scaled {
                hinv = identity(n, 1.0);
                scaled = false;
                resets += 1;
                continue;
            }
            converged = gnorm <= 100.0 * cfg.grad_tol;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = d.iter().map(|di| t.alpha * di).collect();
        let y: Vec<f64> = t.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let x_new = axpy(&x, t.alpha, &d);
        let rel_step = max_norm(&s) / max_norm(&x_new).max(1.0);
        x = x_new;
        f = t.value;
        g = t.grad;

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                hinv = identity(n, gamma);
                scaled = true;
            }
            bfgs_update(&mut hinv, &s, &y, sy, n);
        }
        if rel_step <= cfg.step_tol {
            converged = max_norm(&g) <= 100.0 * cfg.grad_tol;
            break;
        }
    }
    if !converged && max_norm(&g) <= cfg.grad_tol {
        converged = true;
    }
    Some(BfgsOutcome {
        x,
        value: f,
        grad: g,
        iterations,
        converged,
    })
}

fn identity(n: usize, scale: f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = scale;
    }
    m
}

fn matvec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

/// `H <- (I - rho s y') H (I - rho y s') + rho s s'`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let rho = 1.0 / sy;
    let hy = matvec(h, y, n);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> BfgsSettings {
        BfgsSettings {
            max_iters: 500,
            grad_tol: 1e-8,
            step_tol: 1e-14,
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            Some((v, g))
        };
        let out = minimize(&f, &[-1.2, 1.0], settings()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_is_exact() {
        // f = 0.5 x' A x - b' x, A = [[4,1],[1,3]]
        let f = |x: &[f64]| {
            let ax = [4.0 * x[0] + x[1], x[0] + 3.0 * x[1]];
            let v = 0.5 * (x[0] * ax[0] + x[1] * ax[1]) - (x[0] + 2.0 * x[1]);
            Some((v, vec![ax[0] - 1.0, ax[1] - 2.0]))
        };
        let out = minimize(&f, &[5.0, -7.0], settings()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0 / 11.0).abs() < 1e-8);
        assert!((out.x[1] - 7.0 / 11.0).abs() < 1e-8);
    }

    #[test]
    fn respects_undefined_region() {
        // -log(x) + x, minimum at 1, undefined for x <= 0
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                None
            } else {
                Some((-x[0].ln() + x[0], vec![-1.0 / x[0] + 1.0]))
            }
        };
        let out = minimize(&f, &[0.01], settings()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-7);
    }
}

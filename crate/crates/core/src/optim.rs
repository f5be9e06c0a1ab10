//! Unconstrained minimizers: BFGS with backtracking line search and a
//! Nelder-Mead simplex fallback.

use serde::{Deserialize, Serialize};

pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;

    /// Returns the value and writes the gradient into `grad`.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    /// Converged once `max |g_i| <= grad_tol`.
    pub grad_tol: f64,
    /// Converged once an accepted step changes the value by less than `f_tol * (1 + |f|)`
    /// and moves no coordinate by more than `step_tol`.
    pub f_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    /// Largest allowed change of any coordinate in a single step.
    pub max_step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-3,
            f_tol: 1e-11,
            step_tol: 1e-6,
            max_iter: 1000,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    ValueTolerance,
    /// Steps and value changes became negligible while the gradient stayed large,
    /// typically against the edge of the feasible region.
    Stalled,
    SimplexTolerance,
    LineSearchFailed,
    NonFiniteGradient,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub reason: StopReason,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central-difference gradient with a relative step.
pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &mut [f64]) {
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let dn = f(&xp);
        xp[i] = x[i];
        grad[i] = (up - dn) / (2.0 * h);
    }
}

/// BFGS on the inverse Hessian. The value never increases between iterations.
pub fn bfgs(obj: &impl Objective, x0: &[f64], settings: &OptimizerSettings) -> OptimResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.value_and_gradient(&x, &mut g);
    let mut evals = 1;
    let mut h = identity(n);
    let mut fresh_h = true;
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    let finish = |x: Vec<f64>, f: f64, g: &[f64], reason: StopReason, it: usize, evals: usize| {
        let converged = matches!(
            reason,
            StopReason::GradientTolerance | StopReason::ValueTolerance
        );
        OptimResult {
            x,
            value: f,
            converged,
            reason,
            iterations: it,
            evaluations: evals,
            gradient_norm: max_abs(g),
        }
    };

    if !f.is_finite() {
        return finish(x, f, &g, StopReason::NonFiniteGradient, 0, evals);
    }

    for it in 0..settings.max_iter {
        if g.iter().any(|v| !v.is_finite()) {
            return finish(x, f, &g, StopReason::NonFiniteGradient, it, evals);
        }
        if max_abs(&g) <= settings.grad_tol {
            return finish(x, f, &g, StopReason::GradientTolerance, it, evals);
        }

        for i in 0..n {
            d[i] = -dot(&h[i * n..(i + 1) * n], &g);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h = identity(n);
            fresh_h = true;
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = dot(&g, &d);
        }
        let mut t: f64 = 1.0;
        let biggest = max_abs(&d);
        if fresh_h {
            t = t.min(0.1 / biggest.max(1e-12)).clamp(1e-12, 1.0);
        }
        if biggest * t > settings.max_step {
            t = settings.max_step / biggest;
        }

        // backtracking with safeguarded quadratic interpolation
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + t * d[i];
            }
            let f_try = obj.value(&x_new);
            evals += 1;
            if f_try.is_finite() && f_try <= f + 1e-4 * t * slope {
                accepted = Some(f_try);
                break;
            }
            let t_q = if f_try.is_finite() {
                -slope * t * t / (2.0 * (f_try - f - slope * t))
            } else {
                0.1 * t
            };
            t = t_q.clamp(0.1 * t, 0.5 * t);
        }
        let Some(_) = accepted else {
            if !fresh_h {
                // curvature model went stale; retry once along steepest descent
                h = identity(n);
                fresh_h = true;
                continue;
            }
            return finish(x, f, &g, StopReason::LineSearchFailed, it, evals);
        };

        let f_new = obj.value_and_gradient(&x_new, &mut g_new);
        evals += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let df = f - f_new;
        let step = max_abs(&s);

        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_new;

        if df.abs() <= settings.f_tol * (1.0 + f.abs()) && step <= settings.step_tol {
            let reason = if max_abs(&g) <= 100.0 * settings.grad_tol {
                StopReason::ValueTolerance
            } else {
                StopReason::Stalled
            };
            return finish(x, f, &g, reason, it + 1, evals);
        }

        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh_h {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n {
                    h[i * n + i] = scale;
                }
                fresh_h = false;
            }
            update_inverse_hessian(&mut h, &s, &y, sy);
        }
    }
    finish(x, f, &g, StopReason::MaxIterations, settings.max_iter, evals)
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn update_inverse_hessian(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coef = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Nelder-Mead with dimension-adaptive coefficients.
pub fn nelder_mead(
    obj: &impl Objective,
    x0: &[f64],
    initial_step: f64,
    settings: &OptimizerSettings,
) -> OptimResult {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, shrink) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += initial_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| sanitize(obj.value(v))).collect();
    let mut evals = n + 1;
    let max_evals = settings.max_iter * (n + 1) * 4;
    let mut reason = StopReason::MaxIterations;
    let mut it = 0;

    while evals < max_evals {
        it += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0f64, f64::max);
        if spread <= settings.f_tol.max(1e-12) * (1.0 + values[0].abs()) && size <= settings.step_tol.max(1e-8) {
            reason = StopReason::SimplexTolerance;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / nf)
            .collect();
        let along = |c: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(m, w)| m + c * (m - w))
                .collect()
        };
        let xr = along(alpha);
        let fr = sanitize(obj.value(&xr));
        evals += 1;
        if fr < values[0] {
            let xe = along(gamma);
            let fe = sanitize(obj.value(&xe));
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(rho);
                let fc = sanitize(obj.value(&xc));
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = sanitize(obj.value(&xc));
                (xc, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let best = simplex[0].clone();
                    for (v, b) in simplex[i].iter_mut().zip(&best) {
                        *v = b + shrink * (*v - b);
                    }
                    values[i] = sanitize(obj.value(&simplex[i]));
                    evals += 1;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    let mut g = vec![0.0; n];
    let value = obj.value_and_gradient(&simplex[best], &mut g);
    OptimResult {
        x: simplex[best].clone(),
        value,
        converged: reason == StopReason::SimplexTolerance,
        reason,
        iterations: it,
        evaluations: evals + 1,
        gradient_norm: max_abs(&g),
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn value(&self, x: &[f64]) -> f64 {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        }

        fn value_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
            g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            g[1] = 200.0 * (x[1] - x[0] * x[0]);
            self.value(x)
        }
    }

    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn value(&self, x: &[f64]) -> f64 {
            x.iter().zip(&self.0).enumerate().map(|(i, (a, c))| (i + 1) as f64 * (a - c).powi(2)).sum()
        }

        fn value_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
            for (i, (a, c)) in x.iter().zip(&self.0).enumerate() {
                g[i] = 2.0 * (i + 1) as f64 * (a - c);
            }
            self.value(x)
        }
    }

    #[test]
    fn bfgs_rosenbrock() {
        let settings = OptimizerSettings { grad_tol: 1e-8, ..Default::default() };
        let r = bfgs(&Rosenbrock, &[-1.2, 1.0], &settings);
        assert!(r.converged, "{:?}", r.reason);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn bfgs_quadratic_many_dims() {
        let target: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let q = Quadratic(target.clone());
        let settings = OptimizerSettings { grad_tol: 1e-9, f_tol: 1e-20, ..Default::default() };
        let r = bfgs(&q, &vec![0.0; 30], &settings);
        assert!(r.converged);
        for (a, b) in r.x.iter().zip(&target) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-8);
        }
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let settings = OptimizerSettings { f_tol: 1e-14, step_tol: 1e-8, max_iter: 2000, ..Default::default() };
        let r = nelder_mead(&Rosenbrock, &[-1.2, 1.0], 0.5, &settings);
        assert!(r.converged);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn numerical_gradient_matches() {
        let x = [0.3, -0.7];
        let mut g = [0.0; 2];
        let mut gn = [0.0; 2];
        Rosenbrock.value_and_gradient(&x, &mut g);
        numerical_gradient(|v| Rosenbrock.value(v), &x, &mut gn);
        for i in 0..2 {
            assert_abs_diff_eq!(g[i], gn[i], epsilon = 1e-5);
        }
    }

    #[test]
    fn bfgs_never_increases_value() {
        struct Bumpy;
        impl Objective for Bumpy {
            fn value(&self, x: &[f64]) -> f64 {
                if x[0] > 3.0 {
                    f64::INFINITY
                } else {
                    (x[0] - 2.9).powi(2) + x[1].powi(2)
                }
            }
            fn value_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 2.0 * (x[0] - 2.9);
                g[1] = 2.0 * x[1];
                self.value(x)
            }
        }
        let start = [0.0, 1.0];
        let r = bfgs(&Bumpy, &start, &OptimizerSettings::default());
        assert!(r.value <= Bumpy.value(&start));
        assert!(r.converged);
    }
}

//! Box-projected Levenberg-Marquardt for small least-squares problems.

use nalgebra::{DMatrix, DVector};

pub(crate) trait LeastSquares {
    fn dim(&self) -> usize;
    fn residual_count(&self) -> usize;
    /// Writes residuals; returns false if any is non-finite.
    fn residuals(&self, beta: &[f64], out: &mut [f64]) -> bool;
    /// `residual_count x dim` Jacobian of the residuals.
    fn jacobian(&self, beta: &[f64], out: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmSettings {
    pub max_iter: usize,
    pub ftol: f64,
    pub xtol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn project(beta: &mut [f64], bounds: &[(f64, f64)]) {
    for (b, (lo, hi)) in beta.iter_mut().zip(bounds) {
        *b = b.clamp(*lo, *hi);
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn minimize<P: LeastSquares + ?Sized>(
    problem: &P,
    start: &[f64],
    bounds: &[(f64, f64)],
    settings: LmSettings,
) -> LmOutcome {
    let p = problem.dim();
    let m = problem.residual_count();
    let mut beta = start.to_vec();
    project(&mut beta, bounds);
    let mut r = vec![0.0; m];
    if !problem.residuals(&beta, &mut r) {
        return LmOutcome { beta, converged: false, iterations: 0 };
    }
    let mut cost = r.iter().map(|v| v * v).sum::<f64>();
    let mut jac = DMatrix::zeros(m, p);
    let mut trial = vec![0.0; p];
    let mut r_trial = vec![0.0; m];
    let mut lambda = 1e-3;

    for iter in 1..=settings.max_iter {
        problem.jacobian(&beta, &mut jac);
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let max_diag = (0..p).map(|j| a[(j, j)]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);

        // coordinates pinned at a bound with the descent direction pointing outward
        let free: Vec<usize> = (0..p)
            .filter(|&j| {
                let (lo, hi) = bounds[j];
                !((beta[j] <= lo && g[j] > 0.0) || (beta[j] >= hi && g[j] < 0.0))
            })
            .collect();
        if free.is_empty() {
            return LmOutcome { beta, converged: true, iterations: iter };
        }
        let nf = free.len();
        let tol = settings.xtol * (1.0 + norm(&beta));

        loop {
            let mut sys = DMatrix::zeros(nf, nf);
            let mut rhs = DVector::zeros(nf);
            for (u, &i) in free.iter().enumerate() {
                rhs[u] = -g[i];
                for (v, &j) in free.iter().enumerate() {
                    sys[(u, v)] = a[(i, j)];
                }
                sys[(u, u)] += lambda * a[(i, i)].max(1e-12 * max_diag);
            }
            let step = match sys.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => match sys.lu().solve(&rhs) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        if lambda > 1e16 {
                            return LmOutcome { beta, converged: true, iterations: iter };
                        }
                        continue;
                    }
                },
            };
            trial.copy_from_slice(&beta);
            for (u, &i) in free.iter().enumerate() {
                trial[i] += step[u];
            }
            project(&mut trial, bounds);
            let step_norm = trial.iter().zip(&beta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let ok = problem.residuals(&trial, &mut r_trial);
            let new_cost = if ok { r_trial.iter().map(|v| v * v).sum::<f64>() } else { f64::INFINITY };
            if new_cost < cost {
                let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                beta.copy_from_slice(&trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                if rel < settings.ftol && step_norm < tol {
                    return LmOutcome { beta, converged: true, iterations: iter };
                }
                break;
            }
            lambda *= 10.0;
            if step_norm < tol || lambda > 1e16 {
                // no descent is available within the step tolerance: stationary
                return LmOutcome { beta, converged: true, iterations: iter };
            }
        }
    }
    LmOutcome { beta, converged: false, iterations: settings.max_iter }
}

/// Nelder-Mead on a box, with vertices projected back into the box.
pub(crate) fn nelder_mead<F>(f: F, start: &[f64], bounds: &[(f64, f64)], max_evals: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut x0 = start.to_vec();
    project(&mut x0, bounds);
    let mut simplex = vec![x0.clone()];
    for j in 0..n {
        let mut v = x0.clone();
        let width = bounds[j].1 - bounds[j].0;
        let h = (0.05 * v[j].abs()).max(1e-3 * width).max(1e-6);
        v[j] = if v[j] + h <= bounds[j].1 { v[j] + h } else { v[j] - h };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut evals = n + 1;
    let point = |c: &[f64], w: &[f64], t: f64| {
        let mut out: Vec<f64> = c.iter().zip(w).map(|(c, w)| c + t * (w - c)).collect();
        project(&mut out, bounds);
        out
    };
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = (values[n] - values[0]).abs();
        if spread <= 1e-14 * (1.0 + values[0].abs()) {
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let reflected = point(&centroid, &simplex[n], -1.0);
        let fr = eval(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = point(&centroid, &simplex[n], -2.0);
            let fe = eval(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] {
                point(&centroid, &reflected, 0.5)
            } else {
                point(&centroid, &simplex[n], 0.5)
            };
            let fc = eval(&contracted);
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = point(&best, &simplex[i], 0.5);
                    values[i] = eval(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[best].clone(), values[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as least squares: r = (10 (y - x^2), 1 - x).
    struct Rosenbrock;

    impl LeastSquares for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn residual_count(&self) -> usize {
            2
        }
        fn residuals(&self, b: &[f64], out: &mut [f64]) -> bool {
            out[0] = 10.0 * (b[1] - b[0] * b[0]);
            out[1] = 1.0 - b[0];
            true
        }
        fn jacobian(&self, b: &[f64], out: &mut DMatrix<f64>) {
            out[(0, 0)] = -20.0 * b[0];
            out[(0, 1)] = 10.0;
            out[(1, 0)] = -1.0;
            out[(1, 1)] = 0.0;
        }
    }

    const SETTINGS: LmSettings = LmSettings { max_iter: 200, ftol: 1e-10, xtol: 1e-8 };

    #[test]
    fn lm_solves_rosenbrock() {
        let out = minimize(&Rosenbrock, &[-1.2, 1.0], &[(-5.0, 5.0), (-5.0, 5.0)], SETTINGS);
        assert!(out.converged);
        assert!((out.beta[0] - 1.0).abs() < 1e-8 && (out.beta[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn lm_respects_active_bounds() {
        let out = minimize(&Rosenbrock, &[0.0, 0.0], &[(-5.0, 0.5), (-5.0, 5.0)], SETTINGS);
        assert!(out.converged);
        assert_eq!(out.beta[0], 0.5);
        assert!((out.beta[1] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
        let (x, v) = nelder_mead(f, &[4.0, 4.0], &[(-10.0, 10.0), (-10.0, 10.0)], 5000);
        assert!(v < 1e-12, "{v}");
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] + 2.0).abs() < 1e-5);
        let (x, _) = nelder_mead(f, &[4.0, 4.0], &[(2.0, 10.0), (-10.0, 10.0)], 5000);
        assert!((x[0] - 2.0).abs() < 1e-6);
    }
}

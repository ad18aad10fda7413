//! Joint least squares under the equality constraint `d1(beta1, beta2) = eps`.
//!
//! Augmented Lagrangian on the relative constraint `c = d1 / eps - 1`. Each inner
//! problem is itself a least-squares problem: the group residuals scaled by
//! `1 / sqrt(n_l)` stacked with one penalty residual `sqrt(mu / 2) (c + lambda / mu)`,
//! solved by projected Levenberg-Marquardt with a Nelder-Mead polish on failure.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lm::{self, LeastSquares};
use super::{sse, FitOptions, FittedGroup, FittedPair, GroupProblem};
use crate::data::TwoGroupData;
use crate::distance::{self, DiffCurve};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParameterVector};
use crate::rng;

/// Constraint tolerance relative to `eps`.
pub const CONSTRAINT_RTOL: f64 = 1e-4;
const OUTER_ROUNDS: usize = 8;
const PENALTY_GROWTH: f64 = 10.0;
const RESTARTS: usize = 6;

/// Result of the constrained fit with its constraint diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedFit {
    pub pair: FittedPair,
    /// `d1` at the returned parameters.
    pub d1: f64,
    /// `|d1 - eps|`.
    pub violation: f64,
    pub tolerance: f64,
    /// `SSE1 / n1 + SSE2 / n2`.
    pub objective: f64,
    pub outer_rounds: usize,
}

struct AlProblem<'a> {
    spec1: &'a ModelSpec,
    spec2: &'a ModelSpec,
    g1: GroupProblem<'a>,
    g2: GroupProblem<'a>,
    eps: f64,
    lambda: f64,
    mu: f64,
}

impl AlProblem<'_> {
    fn split<'b>(&self, beta: &'b [f64]) -> (&'b [f64], &'b [f64]) {
        beta.split_at(self.spec1.dim())
    }

    fn constraint(&self, beta: &[f64]) -> Option<f64> {
        let (b1, b2) = self.split(beta);
        let c = DiffCurve::new(self.spec1, self.spec2, b1, b2).ok()?;
        distance::l1_distance(&c).ok().map(|d| d / self.eps - 1.0)
    }

    fn merit(&self, beta: &[f64]) -> f64 {
        let mut r = vec![0.0; self.residual_count()];
        if self.residuals(beta, &mut r) {
            r.iter().map(|v| v * v).sum()
        } else {
            f64::INFINITY
        }
    }
}

impl LeastSquares for AlProblem<'_> {
    fn dim(&self) -> usize {
        self.spec1.dim() + self.spec2.dim()
    }

    fn residual_count(&self) -> usize {
        self.g1.levels.len() + self.g2.levels.len() + 1
    }

    fn residuals(&self, beta: &[f64], out: &mut [f64]) -> bool {
        let (b1, b2) = self.split(beta);
        let k1 = self.g1.levels.len();
        let k2 = self.g2.levels.len();
        let ok1 = self.g1.write_residuals(b1, &mut out[..k1]);
        let ok2 = self.g2.write_residuals(b2, &mut out[k1..k1 + k2]);
        match self.constraint(beta) {
            Some(c) if ok1 && ok2 => {
                out[k1 + k2] = (0.5 * self.mu).sqrt() * (c + self.lambda / self.mu);
                out[k1 + k2].is_finite()
            }
            _ => false,
        }
    }

    fn jacobian(&self, beta: &[f64], out: &mut DMatrix<f64>) {
        let (b1, b2) = self.split(beta);
        let p1 = self.spec1.dim();
        let k1 = self.g1.levels.len();
        let k2 = self.g2.levels.len();
        out.fill(0.0);
        self.g1.write_jacobian(b1, out, 0, 0);
        self.g2.write_jacobian(b2, out, k1, p1);
        if let Ok(c) = DiffCurve::new(self.spec1, self.spec2, b1, b2) {
            let (d1, d2) = distance::l1_gradient(&c);
            let s = (0.5 * self.mu).sqrt() / self.eps;
            for (j, v) in d1.iter().chain(&d2).enumerate() {
                out[(k1 + k2, j)] = s * v;
            }
        }
    }
}

struct Attempt {
    beta: Vec<f64>,
    violation: f64,
    objective: f64,
    rounds: usize,
}

fn objective(spec1: &ModelSpec, spec2: &ModelSpec, data: &TwoGroupData, b1: &[f64], b2: &[f64]) -> f64 {
    sse(spec1, &data.group1, b1) / data.group1.n() as f64 + sse(spec2, &data.group2, b2) / data.group2.n() as f64
}

/// Minimises `SSE1/n1 + SSE2/n2` subject to `|d1 - eps| <= 1e-4 eps`, within the boxes.
///
/// The supplied pair (usually the unconstrained fit) is the first start; if the
/// augmented Lagrangian does not reach the constraint from it, seeded restarts
/// from the parameter boxes are tried and the best feasible point is kept.
pub fn constrained_fit(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    eps: f64,
    start: &FittedPair,
    opts: &FitOptions,
) -> Result<ConstrainedFit> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("equivalence margin must be positive, got {eps}")));
    }
    let tolerance = CONSTRAINT_RTOL * eps;
    let b1: &[f64] = &start.g1.beta_hat;
    let b2: &[f64] = &start.g2.beta_hat;
    let d_start = distance::d1(spec1, spec2, b1, b2)?;
    if (d_start - eps).abs() <= tolerance {
        return Ok(ConstrainedFit {
            pair: start.clone(),
            d1: d_start,
            violation: (d_start - eps).abs(),
            tolerance,
            objective: objective(spec1, spec2, data, b1, b2),
            outer_rounds: 0,
        });
    }

    let bounds: Vec<(f64, f64)> = spec1.bounds().iter().chain(spec2.bounds()).copied().collect();
    let mut rng = rng::substream(opts.seed, rng::domain::CONSTRAINED_RESTART, 0);
    let mut first: Vec<f64> = b1.iter().chain(b2).copied().collect();
    if d_start < 1e-8 * eps {
        // the constraint gradient vanishes on coincident curves; nudge them apart
        for (v, (lo, hi)) in first.iter_mut().zip(&bounds) {
            *v = (*v + 1e-3 * (hi - lo) * (rng.random::<f64>() - 0.5)).clamp(*lo, *hi);
        }
    }
    let mut starts = vec![first];
    for _ in 0..RESTARTS {
        let r1 = spec1.latin_hypercube(1, &mut rng).remove(0);
        let r2 = spec2.latin_hypercube(1, &mut rng).remove(0);
        starts.push(r1.iter().chain(r2.iter()).copied().collect());
    }

    let mut best: Option<Attempt> = None;
    for s in &starts {
        let attempt = augmented_lagrangian(spec1, spec2, data, eps, s, &bounds, opts);
        let feasible = attempt.violation <= tolerance;
        let better = match &best {
            None => true,
            Some(b) => {
                let b_feasible = b.violation <= tolerance;
                (feasible && !b_feasible)
                    || (feasible && b_feasible && attempt.objective < b.objective)
                    || (!feasible && !b_feasible && attempt.violation < b.violation)
            }
        };
        if better {
            best = Some(attempt);
        }
        // the first feasible local solution from the supplied start is accepted
        if best.as_ref().is_some_and(|b| b.violation <= tolerance) {
            break;
        }
    }
    let best = best.expect("at least one start");
    if best.violation > tolerance {
        return Err(Error::ConstrainedFit { violation: best.violation, tolerance });
    }
    let (t1, t2) = best.beta.split_at(spec1.dim());
    let group = |spec: &ModelSpec, g: &crate::data::GroupSample, b: &[f64]| {
        let s = sse(spec, g, b);
        FittedGroup {
            beta_hat: ParameterVector::from(b),
            sigma2_hat: s / g.n() as f64,
            sse: s,
            converged: true,
            iterations: best.rounds,
        }
    };
    let d = distance::d1(spec1, spec2, t1, t2)?;
    Ok(ConstrainedFit {
        pair: FittedPair {
            g1: group(spec1, &data.group1, t1),
            g2: group(spec2, &data.group2, t2),
            kappa_hat: start.kappa_hat,
        },
        d1: d,
        violation: (d - eps).abs(),
        tolerance,
        objective: best.objective,
        outer_rounds: best.rounds,
    })
}

fn augmented_lagrangian(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    eps: f64,
    start: &[f64],
    bounds: &[(f64, f64)],
    opts: &FitOptions,
) -> Attempt {
    let n1 = data.group1.n() as f64;
    let n2 = data.group2.n() as f64;
    let (s1, s2) = start.split_at(spec1.dim());
    let f0 = objective(spec1, spec2, data, s1, s2);
    let mut problem = AlProblem {
        spec1,
        spec2,
        g1: GroupProblem::new(spec1, &data.group1, 1.0 / n1.sqrt()),
        g2: GroupProblem::new(spec2, &data.group2, 1.0 / n2.sqrt()),
        eps,
        lambda: 0.0,
        mu: 100.0 * f0.max(1e-2),
    };
    let mut beta = start.to_vec();
    let mut violation = f64::INFINITY;
    let mut rounds = 0;
    for round in 1..=OUTER_ROUNDS {
        rounds = round;
        let out = lm::minimize(&problem, &beta, bounds, opts.lm());
        beta = out.beta;
        if !out.converged {
            let (nm, _) = lm::nelder_mead(|b| problem.merit(b), &beta, bounds, 4000);
            if problem.merit(&nm) < problem.merit(&beta) {
                beta = nm;
            }
        }
        let Some(c) = problem.constraint(&beta) else {
            break;
        };
        violation = c.abs() * eps;
        if violation <= CONSTRAINT_RTOL * eps {
            break;
        }
        problem.lambda += problem.mu * c;
        problem.mu *= PENALTY_GROWTH;
    }
    let (b1, b2) = beta.split_at(spec1.dim());
    Attempt { objective: objective(spec1, spec2, data, b1, b2), beta, violation, rounds }
}

//! Least-squares fits per group and the equality-constrained joint fit.
//!
//! Sums of squares are minimised through level-aggregated residuals
//! `sqrt(n_i) (mean_i - m(x_i, b))`, which differ from the raw sum of squared
//! errors only by the constant within-level sum of squares.

mod constrained;
pub(crate) mod lm;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{GroupSample, TwoGroupData};
use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec, ParameterVector};
use crate::rng;

pub use constrained::{constrained_fit, ConstrainedFit, CONSTRAINT_RTOL};
use lm::{LeastSquares, LmSettings};

/// Optimiser settings shared by all fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Number of starts: the supplied start plus `n_starts - 1` Latin-hypercube draws.
    pub n_starts: usize,
    /// Relative change of the objective below which an accepted step counts as converged.
    pub ftol: f64,
    /// Step norm (relative to `1 + |beta|`) below which an accepted step counts as converged.
    pub xtol: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 200, n_starts: 10, ftol: 1e-10, xtol: 1e-8, seed: 0 }
    }
}

impl FitOptions {
    pub(crate) fn lm(&self) -> LmSettings {
        LmSettings { max_iter: self.max_iter, ftol: self.ftol, xtol: self.xtol }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Least-squares fit of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedGroup {
    pub beta_hat: ParameterVector,
    /// `sse / n`, without a degrees-of-freedom correction.
    pub sigma2_hat: f64,
    pub sse: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Fits of both groups together with `kappa_hat = n / n1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPair {
    pub g1: FittedGroup,
    pub g2: FittedGroup,
    pub kappa_hat: f64,
}

impl FittedPair {
    pub fn converged(&self) -> bool {
        self.g1.converged && self.g2.converged
    }

    pub fn group(&self, index: usize) -> &FittedGroup {
        match index {
            0 => &self.g1,
            _ => &self.g2,
        }
    }
}

/// Level-aggregated residuals of one group, optionally scaled.
pub(crate) struct GroupProblem<'a> {
    pub spec: &'a ModelSpec,
    pub levels: &'a [f64],
    pub means: Vec<f64>,
    pub root_counts: Vec<f64>,
}

impl<'a> GroupProblem<'a> {
    pub fn new(spec: &'a ModelSpec, g: &'a GroupSample, scale: f64) -> Self {
        Self {
            spec,
            levels: g.levels(),
            means: g.level_means(),
            root_counts: g.counts().iter().map(|&c| (c as f64).sqrt() * scale).collect(),
        }
    }

    pub fn write_residuals(&self, beta: &[f64], out: &mut [f64]) -> bool {
        let mut ok = true;
        for (i, r) in out.iter_mut().enumerate().take(self.levels.len()) {
            *r = self.root_counts[i] * (self.means[i] - self.spec.value(beta, self.levels[i]));
            ok &= r.is_finite();
        }
        ok
    }

    pub fn write_jacobian(&self, beta: &[f64], out: &mut DMatrix<f64>, row0: usize, col0: usize) {
        let mut g = vec![0.0; self.spec.dim()];
        for i in 0..self.levels.len() {
            self.spec.gradient_into(beta, self.levels[i], &mut g);
            for (j, gj) in g.iter().enumerate() {
                out[(row0 + i, col0 + j)] = -self.root_counts[i] * gj;
            }
        }
    }
}

impl LeastSquares for GroupProblem<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn residual_count(&self) -> usize {
        self.levels.len()
    }

    fn residuals(&self, beta: &[f64], out: &mut [f64]) -> bool {
        self.write_residuals(beta, out)
    }

    fn jacobian(&self, beta: &[f64], out: &mut DMatrix<f64>) {
        self.write_jacobian(beta, out, 0, 0)
    }
}

/// Raw sum of squared errors `sum_ij (Y_ij - m(x_i, beta))^2`.
pub fn sse(spec: &ModelSpec, g: &GroupSample, beta: &[f64]) -> f64 {
    g.levels()
        .iter()
        .zip(g.obs())
        .map(|(&x, ys)| {
            let m = spec.value(beta, x);
            ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>()
        })
        .sum()
}

fn validate(spec: &ModelSpec, g: &GroupSample, start: &[f64]) -> Result<()> {
    if start.len() != spec.dim() {
        return Err(Error::Dimension { expected: spec.dim(), actual: start.len() });
    }
    let (lo, hi) = spec.domain();
    if let Some(&x) = g.levels().iter().find(|&&x| x < lo || x > hi) {
        return Err(Error::Domain { x, lo, hi });
    }
    Ok(())
}

fn finish(spec: &ModelSpec, g: &GroupSample, out: lm::LmOutcome) -> FittedGroup {
    let sse = sse(spec, g, &out.beta);
    FittedGroup {
        sigma2_hat: sse / g.n() as f64,
        sse,
        beta_hat: ParameterVector(out.beta),
        converged: out.converged && sse.is_finite(),
        iterations: out.iterations,
    }
}

/// Single-start projected Levenberg-Marquardt fit.
pub fn ls_fit_local(spec: &ModelSpec, g: &GroupSample, start: &[f64], opts: &FitOptions) -> Result<FittedGroup> {
    validate(spec, g, start)?;
    let problem = GroupProblem::new(spec, g, 1.0);
    Ok(finish(spec, g, lm::minimize(&problem, start, spec.bounds(), opts.lm())))
}

/// Multi-start least-squares fit: the supplied start plus Latin-hypercube draws; best SSE wins.
pub fn ls_fit(spec: &ModelSpec, g: &GroupSample, start: &[f64], opts: &FitOptions) -> Result<FittedGroup> {
    validate(spec, g, start)?;
    if g.n() <= spec.dim() {
        log::warn!(
            "under-determined fit: {} observations for {} parameters",
            g.n(),
            spec.dim()
        );
    }
    let mut starts = vec![ParameterVector::from(start)];
    if opts.n_starts > 1 {
        let mut rng = rng::substream(opts.seed, rng::domain::MULTISTART, 0);
        starts.extend(spec.latin_hypercube(opts.n_starts - 1, &mut rng));
    }
    let problem = GroupProblem::new(spec, g, 1.0);
    let mut best: Option<FittedGroup> = None;
    let mut total_iterations = 0;
    for s in &starts {
        let fit = finish(spec, g, lm::minimize(&problem, s, spec.bounds(), opts.lm()));
        total_iterations += fit.iterations;
        // strict improvement keeps the earliest start on ties
        let better = match &best {
            None => true,
            Some(b) => (fit.converged && !b.converged) || (fit.converged == b.converged && fit.sse < b.sse),
        };
        if better {
            best = Some(fit);
        }
    }
    let mut best = best.expect("at least one start");
    best.iterations = total_iterations;
    Ok(best)
}

/// Warm-started fit that falls back to the full multi-start search if it does not converge.
pub fn ls_fit_warm(spec: &ModelSpec, g: &GroupSample, start: &[f64], opts: &FitOptions) -> Result<FittedGroup> {
    let local = ls_fit_local(spec, g, start, opts)?;
    if local.converged {
        return Ok(local);
    }
    let global = ls_fit(spec, g, start, opts)?;
    Ok(if global.converged || global.sse < local.sse { global } else { local })
}

/// A data-driven starting point for the built-in families.
pub fn default_start(spec: &ModelSpec, g: &GroupSample) -> ParameterVector {
    let means = g.level_means();
    let levels = g.levels();
    let (y0, yk) = (means[0], *means.last().unwrap());
    let (x0, xk) = (levels[0], *levels.last().unwrap());
    let (lo, hi) = spec.domain();
    let mut start = match spec.family() {
        Family::Emax => {
            let b3 = 0.25 * (hi - lo);
            let span = xk / (b3 + xk) - x0 / (b3 + x0);
            let b2 = if span > 1e-12 { (yk - y0) / span } else { 0.0 };
            vec![y0 - b2 * x0 / (b3 + x0), b2, b3]
        }
        Family::Linear => {
            let slope = if xk > x0 { (yk - y0) / (xk - x0) } else { 0.0 };
            vec![y0 - slope * x0, slope]
        }
        Family::Quadratic => {
            let slope = if xk > x0 { (yk - y0) / (xk - x0) } else { 0.0 };
            vec![y0 - slope * x0, slope, 0.0]
        }
        Family::Exponential => {
            let (b_lo, b_hi) = spec.bounds()[2];
            vec![y0, 0.0, 0.5 * (b_lo + b_hi)]
        }
        Family::UserDefined { .. } => spec.bounds().iter().map(|(a, b)| 0.5 * (a + b)).collect(),
    };
    spec.project(&mut start);
    ParameterVector(start)
}

/// Fits both groups with multi-start least squares from data-driven starts.
pub fn fit_pair(spec1: &ModelSpec, spec2: &ModelSpec, data: &TwoGroupData, opts: &FitOptions) -> Result<FittedPair> {
    let s1 = default_start(spec1, &data.group1);
    let s2 = default_start(spec2, &data.group2);
    fit_pair_from(spec1, spec2, data, &s1, &s2, opts)
}

pub fn fit_pair_from(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    start1: &[f64],
    start2: &[f64],
    opts: &FitOptions,
) -> Result<FittedPair> {
    let o1 = opts.with_seed(rng::derive_seed(opts.seed, rng::domain::MULTISTART, 1));
    let o2 = opts.with_seed(rng::derive_seed(opts.seed, rng::domain::MULTISTART, 2));
    Ok(FittedPair {
        g1: ls_fit(spec1, &data.group1, start1, &o1)?,
        g2: ls_fit(spec2, &data.group2, start2, &o2)?,
        kappa_hat: data.kappa_hat()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESIGN: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 4.0];

    fn emax() -> ModelSpec {
        ModelSpec::emax((0.0, 4.0))
    }

    #[test]
    fn noise_free_emax_recovery() {
        let spec = emax();
        let g = GroupSample::replicated(&DESIGN, 4, |x| spec.value(&[5.0, 3.0, 1.0], x)).unwrap();
        let fit = ls_fit(&spec, &g, &[1.0, 1.0, 1.0], &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.sse < 1e-10, "{}", fit.sse);
        for (b, t) in fit.beta_hat.iter().zip([5.0, 3.0, 1.0]) {
            assert!((b - t).abs() < 1e-6, "{:?}", fit.beta_hat);
        }
        let local = ls_fit_local(&spec, &g, &[1.0, 1.0, 1.0], &FitOptions::default()).unwrap();
        assert!(local.converged && local.sse < 1e-10);
    }

    #[test]
    fn constant_data_linear_model() {
        let spec = ModelSpec::linear((0.0, 4.0));
        let g = GroupSample::new(DESIGN.to_vec(), DESIGN.iter().map(|_| vec![2.0, 2.5, 1.5]).collect()).unwrap();
        let fit = ls_fit(&spec, &g, &[0.0, 0.0], &FitOptions::default()).unwrap();
        assert!((fit.beta_hat[0] - 2.0).abs() < 1e-9 && fit.beta_hat[1].abs() < 1e-9);
        let var = 2.0 * 0.25 / 3.0;
        assert!((fit.sigma2_hat - var).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_matches_closed_form() {
        let spec = ModelSpec::linear((0.0, 4.0));
        let pairs: Vec<(f64, f64)> = (0..23)
            .map(|k| {
                let x = DESIGN[k % 5];
                (x, 1.5 - 0.7 * x + ((k * 37 % 11) as f64 - 5.0) * 0.13)
            })
            .collect();
        let g = GroupSample::from_pairs(pairs.clone()).unwrap();
        // normal equations on the raw observations
        let n = pairs.len() as f64;
        let (sx, sy) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (sxx, sxy) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x * x, b + x * y));
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let icpt = (sy - slope * sx) / n;
        let fit = ls_fit(&spec, &g, &[0.0, 0.0], &FitOptions::default()).unwrap();
        assert!((fit.beta_hat[0] - icpt).abs() < 1e-8);
        assert!((fit.beta_hat[1] - slope).abs() < 1e-8);
    }

    #[test]
    fn fit_is_invariant_to_observation_order() {
        let spec = emax();
        let pairs: Vec<(f64, f64)> = (0..40)
            .map(|k| {
                let x = DESIGN[k % 5];
                (x, spec.value(&[5.0, 3.0, 1.0], x) + ((k * 29 % 13) as f64 - 6.0) * 0.08)
            })
            .collect();
        let mut rev = pairs.clone();
        rev.reverse();
        let a = ls_fit(&spec, &GroupSample::from_pairs(pairs).unwrap(), &[1.0, 1.0, 1.0], &FitOptions::default())
            .unwrap();
        let b = ls_fit(&spec, &GroupSample::from_pairs(rev).unwrap(), &[1.0, 1.0, 1.0], &FitOptions::default())
            .unwrap();
        for (x, y) in a.beta_hat.iter().zip(b.beta_hat.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_stays_in_box_and_rejects_out_of_domain_levels() {
        let spec = emax();
        // decreasing-then-flat data pushes b3 toward its lower bound
        let g = GroupSample::new(DESIGN.to_vec(), vec![vec![0.0], vec![10.0], vec![10.0], vec![10.0], vec![10.0]])
            .unwrap();
        let fit = ls_fit(&spec, &g, &[1.0, 1.0, 1.0], &FitOptions::default()).unwrap();
        assert!(spec.contains(&fit.beta_hat));
        assert!(fit.converged);
        assert_eq!(fit.beta_hat[2], 0.05);

        let far = GroupSample::new(vec![5.0], vec![vec![1.0]]).unwrap();
        assert!(matches!(ls_fit(&spec, &far, &[1.0, 1.0, 1.0], &FitOptions::default()), Err(Error::Domain { .. })));
    }

    #[test]
    fn default_start_is_sensible() {
        let spec = emax();
        let g = GroupSample::replicated(&DESIGN, 2, |x| spec.value(&[5.0, 3.0, 1.0], x)).unwrap();
        let s = default_start(&spec, &g);
        assert!(spec.contains(&s));
        assert!((spec.value(&s, 0.0) - 5.0).abs() < 1e-12);
        assert!((spec.value(&s, 4.0) - spec.value(&[5.0, 3.0, 1.0], 4.0)).abs() < 1e-12);
    }
}

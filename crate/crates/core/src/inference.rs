//! Plug-in asymptotics: information matrices, simulation of the limit law of
//! `sqrt(n) (d1_hat - d1)`, quantiles, and the asymptotic interval and test.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GroupSample, TwoGroupData};
use crate::distance::{self, DiffCurve, IntervalSet};
use crate::error::{Error, Result};
use crate::fit::{FittedGroup, FittedPair};
use crate::model::ModelSpec;
use crate::quad;
use crate::rng;

/// Smallest-to-largest eigenvalue ratio below which the information matrix is singular.
pub const SINGULAR_RATIO: f64 = 1e-10;
/// Simpson nodes across the whole domain for integrating the limit process.
pub const LIMIT_GRID_PANELS: usize = 2000;

/// Inference procedure tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Asymptotic,
    BootstrapCi,
    ConstrainedBootstrap,
    DerivativeBootstrap,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Asymptotic => "asymptotic",
            Method::BootstrapCi => "bootstrap-ci",
            Method::ConstrainedBootstrap => "constrained-bootstrap",
            Method::DerivativeBootstrap => "derivative-bootstrap",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "asymptotic" => Ok(Method::Asymptotic),
            "bootstrap-ci" | "bootstrap" => Ok(Method::BootstrapCi),
            "constrained-bootstrap" => Ok(Method::ConstrainedBootstrap),
            "derivative-bootstrap" => Ok(Method::DerivativeBootstrap),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-group information matrix and its inverse square root.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    sigma: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl InfoMatrix {
    /// Validates a symmetric positive definite matrix and computes `sigma^{-1/2}`.
    pub fn from_sigma(sigma: DMatrix<f64>) -> Result<Self> {
        let p = sigma.nrows();
        if p == 0 || sigma.ncols() != p {
            return Err(Error::Dimension { expected: p.max(1), actual: sigma.ncols() });
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(max > 0.0) || !(min >= SINGULAR_RATIO * max) {
            let ratio = if max > 0.0 { min / max } else { 0.0 };
            return Err(Error::SingularInformation { ratio });
        }
        let scales = eig.eigenvalues.map(|l| l.sqrt().recip());
        let v = &eig.eigenvectors;
        let a = v * DMatrix::from_diagonal(&scales) * v.transpose();
        let inv_sqrt = (&a + a.transpose()) * 0.5;
        Ok(Self { sigma: sym, inv_sqrt })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Symmetric `A` with `A A = sigma^{-1}`.
    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }
}

/// `(1 / sigma2) sum_i (n_i / n) g_i g_i^T` with `g_i` the model gradient at the fitted parameters.
pub fn info_matrix(spec: &ModelSpec, g: &GroupSample, fit: &FittedGroup) -> Result<InfoMatrix> {
    if !(fit.sigma2_hat > 0.0) {
        return Err(Error::DegenerateDesign(format!(
            "residual variance estimate is {}, the information matrix is undefined",
            fit.sigma2_hat
        )));
    }
    let p = spec.dim();
    let mut sigma = DMatrix::zeros(p, p);
    let mut grad = vec![0.0; p];
    for (&x, w) in g.levels().iter().zip(g.weights()) {
        spec.gradient_into(&fit.beta_hat, x, &mut grad);
        let gv = DVector::from_column_slice(&grad);
        sigma += (&gv * gv.transpose()) * w;
    }
    InfoMatrix::from_sigma(sigma / fit.sigma2_hat)
}

/// Discretised limit law `T_hat`: the sign-weighted integral of the Gaussian
/// process over the complement of the estimated coincidence set plus the
/// integral of its absolute value over the set.
#[derive(Debug, Clone)]
pub struct LimitLaw {
    null_set: IntervalSet,
    /// `integral of sgn(theta) a(x) dx` over the complement, where `G(x) = a(x) . Z`.
    linear: Vec<f64>,
    /// Quadrature weights times `a(x)` at the nodes inside the coincidence set, row-wise.
    abs_rows: Vec<f64>,
    dim: usize,
}

impl LimitLaw {
    /// Builds the law at `pair`, estimating the coincidence set with constant `const_c`.
    pub fn new(
        spec1: &ModelSpec,
        spec2: &ModelSpec,
        data: &TwoGroupData,
        pair: &FittedPair,
        const_c: f64,
    ) -> Result<Self> {
        let curve = DiffCurve::new(spec1, spec2, &pair.g1.beta_hat, &pair.g2.beta_hat)?;
        let null_set = distance::estimate_null_set(&curve, data.n(), const_c)?;
        Self::with_null_set(spec1, spec2, data, pair, null_set)
    }

    /// Builds the law for a given coincidence set.
    pub fn with_null_set(
        spec1: &ModelSpec,
        spec2: &ModelSpec,
        data: &TwoGroupData,
        pair: &FittedPair,
        null_set: IntervalSet,
    ) -> Result<Self> {
        let kappa = data.kappa_hat()?;
        if !(kappa > 1.0) || !kappa.is_finite() {
            return Err(Error::DegenerateDesign(format!("kappa must exceed 1, got {kappa}")));
        }
        let a1 = info_matrix(spec1, &data.group1, &pair.g1)?.inv_sqrt * kappa.sqrt();
        let a2 = info_matrix(spec2, &data.group2, &pair.g2)?.inv_sqrt * -(kappa / (kappa - 1.0)).sqrt();
        let curve = DiffCurve::new(spec1, spec2, &pair.g1.beta_hat, &pair.g2.beta_hat)?;
        let (p1, p2) = (spec1.dim(), spec2.dim());
        let dim = p1 + p2;
        let (lo, hi) = curve.domain();

        let mut buf1 = vec![0.0; p1];
        let mut buf2 = vec![0.0; p2];
        let mut a_at = |x: f64, out: &mut [f64]| {
            spec1.gradient_into(&pair.g1.beta_hat, x, &mut buf1);
            spec2.gradient_into(&pair.g2.beta_hat, x, &mut buf2);
            for j in 0..p1 {
                out[j] = (0..p1).map(|k| buf1[k] * a1[(k, j)]).sum();
            }
            for j in 0..p2 {
                out[p1 + j] = (0..p2).map(|k| buf2[k] * a2[(k, j)]).sum();
            }
        };

        let mut linear = vec![0.0; dim];
        let mut abs_rows = Vec::new();
        let mut row = vec![0.0; dim];
        let inside = null_set.intervals().iter().map(|&iv| (iv, true));
        let outside = null_set.complement(lo, hi).intervals().to_vec().into_iter().map(|iv| (iv, false));
        for ((a, b), in_null) in inside.chain(outside) {
            if b <= a {
                continue;
            }
            let panels = ((LIMIT_GRID_PANELS as f64) * (b - a) / (hi - lo)).ceil() as usize;
            let (nodes, weights) = quad::simpson_rule(a, b, panels);
            let sign = curve.at(0.5 * (a + b)).signum();
            for (&x, &w) in nodes.iter().zip(&weights) {
                a_at(x, &mut row);
                if in_null {
                    abs_rows.extend(row.iter().map(|v| w * v));
                } else {
                    for (l, v) in linear.iter_mut().zip(&row) {
                        *l += sign * w * v;
                    }
                }
            }
        }
        Ok(Self { null_set, linear, abs_rows, dim })
    }

    pub fn null_set(&self) -> &IntervalSet {
        &self.null_set
    }

    /// One draw of `T_hat` from the standard normal vector `z`.
    pub fn evaluate(&self, z: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(z).map(|(a, b)| a * b).sum();
        let abs: f64 = self
            .abs_rows
            .chunks_exact(self.dim)
            .map(|r| r.iter().zip(z).map(|(a, b)| a * b).sum::<f64>().abs())
            .sum();
        lin + abs
    }

    /// `draws` independent realisations, draw `i` from its own substream of `seed`.
    pub fn simulate(&self, draws: usize, seed: u64) -> Vec<f64> {
        (0..draws)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::substream(seed, rng::domain::LIMIT_DRAWS, i as u64);
                let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                self.evaluate(&z)
            })
            .collect()
    }
}

/// Type-1 empirical quantile: the order statistic at index `ceil(alpha M)`.
pub fn quantile(draws: &[f64], alpha: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, alpha)
}

pub(crate) fn quantile_sorted(sorted: &[f64], alpha: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let m = sorted.len();
    let k = ((alpha * m as f64).ceil() as usize).clamp(1, m);
    sorted[k - 1]
}

/// Whether an interval is one-sided `[0, upper)` or two-sided `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    OneSided,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub method: Method,
    pub kind: IntervalKind,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub d1_hat: f64,
    /// Quantiles that produced the endpoints, in increasing probability order.
    pub quantiles: Vec<f64>,
    /// Total sample size.
    pub n: usize,
    /// Limit-law draws or bootstrap replicates actually used.
    pub replicates: usize,
    pub dropped: usize,
    pub seed: u64,
    pub null_set: Option<IntervalSet>,
}

impl CiReport {
    pub fn contains(&self, d1: f64) -> bool {
        match self.kind {
            IntervalKind::OneSided => d1 >= self.lower && d1 < self.upper,
            IntervalKind::TwoSided => d1 >= self.lower && d1 <= self.upper,
        }
    }
}

/// Which parameters generated the constrained bootstrap data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `d1_hat >= eps`: the unconstrained fit.
    Unconstrained,
    /// `d1_hat < eps`: the fit constrained to `d1 = eps`.
    Constrained,
}

/// A test decision; `reject` is `statistic < critical`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: Method,
    pub reject: bool,
    pub d1_hat: f64,
    pub eps: f64,
    pub alpha: f64,
    pub statistic: f64,
    pub critical: f64,
    /// The simulated or bootstrap quantile behind the decision.
    pub quantile: f64,
    pub n: usize,
    pub replicates: usize,
    pub dropped: usize,
    pub seed: u64,
    pub branch: Option<Branch>,
    /// `d1` at the parameters that generated the bootstrap data.
    pub generating_d1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConfig {
    pub alpha: f64,
    pub draws: usize,
    /// Constant of the coincidence-set threshold `c sqrt(log n / n)`.
    pub const_c: f64,
    pub seed: u64,
}

impl Default for AsymptoticConfig {
    fn default() -> Self {
        Self { alpha: 0.05, draws: 10_000, const_c: 1.0, seed: 0 }
    }
}

impl AsymptoticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.draws < 1000 {
            return Err(Error::Config(format!("at least 1000 limit draws are required, got {}", self.draws)));
        }
        if !(self.const_c > 0.0) {
            return Err(Error::Config(format!("null-set constant must be positive, got {}", self.const_c)));
        }
        Ok(())
    }
}

struct LimitQuantiles {
    d1_hat: f64,
    quantiles: Vec<f64>,
    null_set: IntervalSet,
}

fn limit_quantiles(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    pair: &FittedPair,
    cfg: &AsymptoticConfig,
    probs: &[f64],
) -> Result<LimitQuantiles> {
    cfg.validate()?;
    data.kappa_hat()?;
    if !pair.converged() {
        return Err(Error::FitFailed("the least-squares fit did not converge".into()));
    }
    let d1_hat = distance::d1(spec1, spec2, &pair.g1.beta_hat, &pair.g2.beta_hat)?;
    let law = LimitLaw::new(spec1, spec2, data, pair, cfg.const_c)?;
    let mut draws = law.simulate(cfg.draws, cfg.seed);
    draws.sort_by(f64::total_cmp);
    Ok(LimitQuantiles {
        d1_hat,
        quantiles: probs.iter().map(|&p| quantile_sorted(&draws, p)).collect(),
        null_set: law.null_set,
    })
}

/// One-sided interval `[0, d1_hat - q_alpha / sqrt(n))`.
pub fn asymptotic_ci(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    pair: &FittedPair,
    cfg: &AsymptoticConfig,
) -> Result<CiReport> {
    let lq = limit_quantiles(spec1, spec2, data, pair, cfg, &[cfg.alpha])?;
    let n = data.n();
    let upper = (lq.d1_hat - lq.quantiles[0] / (n as f64).sqrt()).max(0.0);
    Ok(CiReport {
        method: Method::Asymptotic,
        kind: IntervalKind::OneSided,
        lower: 0.0,
        upper,
        alpha: cfg.alpha,
        d1_hat: lq.d1_hat,
        quantiles: lq.quantiles,
        n,
        replicates: cfg.draws,
        dropped: 0,
        seed: cfg.seed,
        null_set: Some(lq.null_set),
    })
}

/// Rejects `d1 >= eps` iff the asymptotic upper bound lies below `eps`,
/// i.e. iff `d1_hat < eps + q_alpha / sqrt(n)`.
pub fn asymptotic_test(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    pair: &FittedPair,
    eps: f64,
    cfg: &AsymptoticConfig,
) -> Result<TestReport> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("equivalence margin must be positive, got {eps}")));
    }
    let ci = asymptotic_ci(spec1, spec2, data, pair, cfg)?;
    Ok(test_from_ci(&ci, eps))
}

/// The test dual to a one-sided interval: reject iff `upper < eps`.
pub fn test_from_ci(ci: &CiReport, eps: f64) -> TestReport {
    TestReport {
        method: ci.method,
        reject: ci.upper < eps,
        d1_hat: ci.d1_hat,
        eps,
        alpha: ci.alpha,
        statistic: ci.upper,
        critical: eps,
        quantile: ci.quantiles[0],
        n: ci.n,
        replicates: ci.replicates,
        dropped: ci.dropped,
        seed: ci.seed,
        branch: None,
        generating_d1: None,
    }
}

/// Two-sided interval `[d1_hat - q_{1-alpha/2} / sqrt(n), d1_hat - q_{alpha/2} / sqrt(n)]`, clipped at 0.
pub fn two_sided_ci(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    pair: &FittedPair,
    cfg: &AsymptoticConfig,
) -> Result<CiReport> {
    let half = 0.5 * cfg.alpha;
    let lq = limit_quantiles(spec1, spec2, data, pair, cfg, &[half, 1.0 - half])?;
    let n = data.n();
    let root_n = (n as f64).sqrt();
    let lower = (lq.d1_hat - lq.quantiles[1] / root_n).max(0.0);
    let upper = (lq.d1_hat - lq.quantiles[0] / root_n).max(lower);
    Ok(CiReport {
        method: Method::Asymptotic,
        kind: IntervalKind::TwoSided,
        lower,
        upper,
        alpha: cfg.alpha,
        d1_hat: lq.d1_hat,
        quantiles: lq.quantiles,
        n,
        replicates: cfg.draws,
        dropped: 0,
        seed: cfg.seed,
        null_set: Some(lq.null_set),
    })
}

//! Parametric bootstrap: the percentile interval and its dual test, the
//! constrained bootstrap test, and the derivative-estimate bootstrap test.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GroupSample, TwoGroupData};
use crate::distance::{self, DiffCurve, Roots};
use crate::error::{Error, Result};
use crate::fit::{self, constrained_fit, FitOptions, FittedPair, CONSTRAINT_RTOL};
use crate::inference::{quantile_sorted, test_from_ci, Branch, CiReport, IntervalKind, Method, TestReport};
use crate::model::ModelSpec;
use crate::quad;
use crate::rng::{self, StreamRng};

/// Largest fraction of replicates whose refit may fail before the procedure aborts.
pub const MAX_DROPPED_FRACTION: f64 = 0.1;
const PHI_TOL_REL: f64 = 1e-10;

/// Threshold rule `s_n` of the derivative estimate; points with `|theta_hat| < 1 / s_n` count as coincident.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "exponent")]
pub enum SnRule {
    /// `s_n = sqrt(n / log n)`, matching the coincidence-set threshold with `c = 1`.
    #[default]
    SqrtNOverLogN,
    /// `s_n = n^a` with `0 < a < 1/2`.
    Power(f64),
}

impl SnRule {
    pub fn s_n(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            SnRule::SqrtNOverLogN => (n / n.ln()).sqrt(),
            SnRule::Power(a) => n.powf(a),
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            SnRule::Power(a) if !(a > 0.0 && a < 0.5) => {
                Err(Error::Config(format!("s_n exponent must lie in (0, 0.5), got {a}")))
            }
            _ => Ok(()),
        }
    }

    /// Parses `sqrt-n-log` or `power:<a>`.
    pub fn parse(text: &str) -> Result<Self> {
        let rule = match text.trim() {
            "sqrt-n-log" | "sqrt-n-over-log-n" | "default" => SnRule::SqrtNOverLogN,
            other => match other.strip_prefix("power:") {
                Some(a) => SnRule::Power(
                    a.parse().map_err(|_| Error::Config(format!("invalid s_n exponent '{a}'")))?,
                ),
                None => return Err(Error::Config(format!("unknown s_n rule '{other}'"))),
            },
        };
        rule.validate()?;
        Ok(rule)
    }
}

/// Parameters that generate the derivative-bootstrap data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeGeneration {
    /// As in the constrained bootstrap: the constrained fit when `d1_hat < eps`.
    #[default]
    Constrained,
    /// Always the unconstrained fit.
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub sn_rule: SnRule,
    pub generation: DerivativeGeneration,
    pub fit: FitOptions,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 300,
            alpha: 0.05,
            seed: 0,
            sn_rule: SnRule::default(),
            generation: DerivativeGeneration::default(),
            fit: FitOptions::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 50 {
            return Err(Error::Config(format!("at least 50 bootstrap replicates are required, got {}", self.replicates)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        self.sn_rule.validate()
    }

    fn original_fit_options(&self) -> FitOptions {
        self.fit.with_seed(rng::derive_seed(self.seed, rng::domain::MULTISTART, u64::MAX))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("equivalence margin must be positive, got {eps}")))
    }
}

fn normal_sample(spec: &ModelSpec, g: &GroupSample, beta: &[f64], sigma2: f64, rng: &mut StreamRng) -> GroupSample {
    let sd = sigma2.max(0.0).sqrt();
    let means: Vec<f64> = g.levels().iter().map(|&x| spec.value(beta, x)).collect();
    g.with_responses(|i, _, _| {
        let z: f64 = StandardNormal.sample(rng);
        means[i] + sd * z
    })
}

/// Bootstrap data `m_l(x_{l,i}, beta_l) + N(0, sigma_l^2)` on the design of `data`.
pub fn resample(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    beta1: &[f64],
    beta2: &[f64],
    sigmas: (f64, f64),
    seed: u64,
) -> TwoGroupData {
    let mut rng = StreamRng::seed_from_u64(seed);
    let g1 = normal_sample(spec1, &data.group1, beta1, sigmas.0, &mut rng);
    let g2 = normal_sample(spec2, &data.group2, beta2, sigmas.1, &mut rng);
    TwoGroupData::new(g1, g2)
}

/// Sorted replicate statistics and the number of dropped replicates.
struct Replicates {
    sorted: Vec<f64>,
    dropped: usize,
}

/// Runs `cfg.replicates` bootstrap replicates generated at `(beta1, beta2)` and
/// refitted from there; `stat` maps the refitted parameters to the statistic.
#[allow(clippy::too_many_arguments)]
fn run_replicates<S>(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    beta1: &[f64],
    beta2: &[f64],
    sigmas: (f64, f64),
    cfg: &BootstrapConfig,
    stat: S,
) -> Result<Replicates>
where
    S: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    let values: Vec<Option<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let seed = rng::derive_seed(cfg.seed, rng::domain::BOOTSTRAP, b as u64);
            let star = resample(spec1, spec2, data, beta1, beta2, sigmas, seed);
            let opts = cfg.fit.with_seed(seed);
            let f1 = fit::ls_fit_warm(spec1, &star.group1, beta1, &opts).ok()?;
            let f2 = fit::ls_fit_warm(spec2, &star.group2, beta2, &opts.with_seed(seed ^ 1)).ok()?;
            if !(f1.converged && f2.converged) {
                return None;
            }
            stat(&f1.beta_hat, &f2.beta_hat).ok().filter(|v| v.is_finite())
        })
        .collect();
    let mut sorted: Vec<f64> = values.iter().flatten().copied().collect();
    let dropped = cfg.replicates - sorted.len();
    if dropped as f64 > MAX_DROPPED_FRACTION * cfg.replicates as f64 || sorted.is_empty() {
        return Err(Error::TooManyDropped { dropped, total: cfg.replicates });
    }
    if dropped > 0 {
        log::warn!("{dropped} of {} bootstrap replicates dropped after failed refits", cfg.replicates);
    }
    sorted.sort_by(f64::total_cmp);
    Ok(Replicates { sorted, dropped })
}

fn warn_zero_variance(pair: &FittedPair) {
    if pair.g1.sigma2_hat == 0.0 || pair.g2.sigma2_hat == 0.0 {
        log::warn!("zero residual variance: bootstrap replicates reproduce the fitted curves exactly");
    }
}

/// Percentile interval `[0, q*_{1-alpha})` of the bootstrap distance distribution.
pub fn bootstrap_ci(spec1: &ModelSpec, spec2: &ModelSpec, data: &TwoGroupData, cfg: &BootstrapConfig) -> Result<CiReport> {
    cfg.validate()?;
    let pair = fit::fit_pair(spec1, spec2, data, &cfg.original_fit_options())?;
    bootstrap_ci_from_fit(spec1, spec2, data, &pair, cfg)
}

/// [`bootstrap_ci`] for an existing fit of `data`.
pub fn bootstrap_ci_from_fit(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    pair: &FittedPair,
    cfg: &BootstrapConfig,
) -> Result<CiReport> {
    cfg.validate()?;
    if !pair.converged() {
        return Err(Error::FitFailed("the least-squares fit did not converge".into()));
    }
    warn_zero_variance(pair);
    let (b1, b2) = (&pair.g1.beta_hat[..], &pair.g2.beta_hat[..]);
    let d1_hat = distance::d1(spec1, spec2, b1, b2)?;
    let sigmas = (pair.g1.sigma2_hat, pair.g2.sigma2_hat);
    let reps = run_replicates(spec1, spec2, data, b1, b2, sigmas, cfg, |s1, s2| distance::d1(spec1, spec2, s1, s2))?;
    let q = quantile_sorted(&reps.sorted, 1.0 - cfg.alpha);
    Ok(CiReport {
        method: Method::BootstrapCi,
        kind: IntervalKind::OneSided,
        lower: 0.0,
        upper: q,
        alpha: cfg.alpha,
        d1_hat,
        quantiles: vec![q],
        n: data.n(),
        replicates: reps.sorted.len(),
        dropped: reps.dropped,
        seed: cfg.seed,
        null_set: None,
    })
}

/// Rejects `d1 >= eps` iff the bootstrap upper bound lies below `eps`.
pub fn bootstrap_ci_test(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    eps: f64,
    cfg: &BootstrapConfig,
) -> Result<TestReport> {
    check_eps(eps)?;
    Ok(test_from_ci(&bootstrap_ci(spec1, spec2, data, cfg)?, eps))
}

/// [`bootstrap_ci_test`] for an existing fit of `data`.
pub fn bootstrap_ci_test_from_fit(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    pair: &FittedPair,
    eps: f64,
    cfg: &BootstrapConfig,
) -> Result<TestReport> {
    check_eps(eps)?;
    Ok(test_from_ci(&bootstrap_ci_from_fit(spec1, spec2, data, pair, cfg)?, eps))
}

/// The parameters generating the constrained bootstrap data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generating {
    pub branch: Branch,
    pub pair: FittedPair,
    pub d1: f64,
}

/// The unconstrained fit if `d1_hat >= eps`, otherwise the fit constrained to `d1 = eps`.
pub fn generating_parameters(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    pair: &FittedPair,
    eps: f64,
    opts: &FitOptions,
) -> Result<Generating> {
    check_eps(eps)?;
    let d1_hat = distance::d1(spec1, spec2, &pair.g1.beta_hat, &pair.g2.beta_hat)?;
    if d1_hat >= eps {
        return Ok(Generating { branch: Branch::Unconstrained, pair: pair.clone(), d1: d1_hat });
    }
    let cf = constrained_fit(spec1, spec2, data, eps, pair, opts)?;
    debug_assert!(cf.violation <= CONSTRAINT_RTOL * eps);
    Ok(Generating { branch: Branch::Constrained, pair: cf.pair, d1: cf.d1 })
}

/// Constrained parametric bootstrap test: rejects iff `d1_hat < q*_alpha`.
pub fn constrained_bootstrap_test(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    eps: f64,
    cfg: &BootstrapConfig,
) -> Result<TestReport> {
    cfg.validate()?;
    let pair = fit::fit_pair(spec1, spec2, data, &cfg.original_fit_options())?;
    constrained_bootstrap_test_from_fit(spec1, spec2, data, &pair, eps, cfg)
}

/// [`constrained_bootstrap_test`] for an existing fit of `data`.
pub fn constrained_bootstrap_test_from_fit(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    pair: &FittedPair,
    eps: f64,
    cfg: &BootstrapConfig,
) -> Result<TestReport> {
    cfg.validate()?;
    check_eps(eps)?;
    if !pair.converged() {
        return Err(Error::FitFailed("the least-squares fit did not converge".into()));
    }
    warn_zero_variance(pair);
    let d1_hat = distance::d1(spec1, spec2, &pair.g1.beta_hat, &pair.g2.beta_hat)?;
    let gen = generating_parameters(spec1, spec2, data, pair, eps, &cfg.fit.with_seed(cfg.seed))?;
    let (b1, b2) = (&gen.pair.g1.beta_hat[..], &gen.pair.g2.beta_hat[..]);
    // the error variances are always the unconstrained estimates
    let sigmas = (pair.g1.sigma2_hat, pair.g2.sigma2_hat);
    let reps = run_replicates(spec1, spec2, data, b1, b2, sigmas, cfg, |s1, s2| distance::d1(spec1, spec2, s1, s2))?;
    let q = quantile_sorted(&reps.sorted, cfg.alpha);
    Ok(TestReport {
        method: Method::ConstrainedBootstrap,
        reject: d1_hat < q,
        d1_hat,
        eps,
        alpha: cfg.alpha,
        statistic: d1_hat,
        critical: q,
        quantile: q,
        n: data.n(),
        replicates: reps.sorted.len(),
        dropped: reps.dropped,
        seed: cfg.seed,
        branch: Some(gen.branch),
        generating_d1: Some(gen.d1),
    })
}

/// Integrates `f` (or `|f|`) over `[a, b]`, splitting at sign changes of `f` when `absolute`.
fn piece_integral<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, absolute: bool, tol: f64, width: f64) -> Result<f64> {
    let points = ((distance::ROOT_GRID as f64 * (b - a) / width).ceil() as usize).max(16);
    let tol = tol * (b - a) / width;
    if !absolute {
        return quad::adaptive_simpson(f, a, b, tol);
    }
    let mut cuts = vec![a];
    cuts.extend(quad::scan_roots(f, a, b, points, distance::ROOT_XTOL, 0.0));
    cuts.push(b);
    cuts.dedup();
    let abs_f = |x: f64| f(x).abs();
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| quad::adaptive_simpson(&abs_f, w[0], w[1], tol * (w[1] - w[0]) / (b - a)))
        .sum()
}

/// Derivative estimate `int_{|theta| >= 1/s_n} sgn(theta) f + int_{|theta| < 1/s_n} |f|`.
pub fn phi_prime_hat<F>(theta: &DiffCurve<'_>, f: &F, n: usize, rule: SnRule) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    rule.validate()?;
    let (lo, hi) = theta.domain();
    let width = hi - lo;
    let scale = quad::grid(lo, hi, distance::ROOT_GRID).into_iter().map(|x| f(x).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    if !scale.is_finite() {
        return Err(Error::Quadrature { a: lo, b: hi });
    }
    let tol = PHI_TOL_REL * width * scale;
    let small = if let Roots::IdenticallyZero = distance::roots(theta) {
        distance::IntervalSet::from_intervals(vec![(lo, hi)])
    } else {
        distance::sublevel_set(theta, rule.s_n(n).recip())
    };
    let mut total = 0.0;
    for &(a, b) in small.intervals() {
        total += piece_integral(f, a, b, true, tol, width)?;
    }
    for &(a, b) in small.complement(lo, hi).intervals() {
        let sign = theta.at(0.5 * (a + b)).signum();
        total += sign * piece_integral(f, a, b, false, tol, width)?;
    }
    Ok(total)
}

/// Derivative-estimate bootstrap test: rejects iff `d1_hat < q*_alpha + eps`, where
/// `q*_alpha` is the bootstrap quantile of `phi_prime_hat(theta* - theta_gen)`.
pub fn derivative_bootstrap_test(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    eps: f64,
    cfg: &BootstrapConfig,
) -> Result<TestReport> {
    cfg.validate()?;
    let pair = fit::fit_pair(spec1, spec2, data, &cfg.original_fit_options())?;
    derivative_bootstrap_test_from_fit(spec1, spec2, data, &pair, eps, cfg)
}

/// [`derivative_bootstrap_test`] for an existing fit of `data`.
pub fn derivative_bootstrap_test_from_fit(
    spec1: &ModelSpec,
    spec2: &ModelSpec,
    data: &TwoGroupData,
    pair: &FittedPair,
    eps: f64,
    cfg: &BootstrapConfig,
) -> Result<TestReport> {
    cfg.validate()?;
    check_eps(eps)?;
    if !pair.converged() {
        return Err(Error::FitFailed("the least-squares fit did not converge".into()));
    }
    warn_zero_variance(pair);
    let d1_hat = distance::d1(spec1, spec2, &pair.g1.beta_hat, &pair.g2.beta_hat)?;
    let gen = match cfg.generation {
        DerivativeGeneration::Constrained => {
            generating_parameters(spec1, spec2, data, pair, eps, &cfg.fit.with_seed(cfg.seed))?
        }
        DerivativeGeneration::Unconstrained => Generating { branch: Branch::Unconstrained, pair: pair.clone(), d1: d1_hat },
    };
    let (b1, b2) = (&gen.pair.g1.beta_hat[..], &gen.pair.g2.beta_hat[..]);
    let theta = DiffCurve::new(spec1, spec2, b1, b2)?;
    let n = data.n();
    let sigmas = (pair.g1.sigma2_hat, pair.g2.sigma2_hat);
    let reps = run_replicates(spec1, spec2, data, b1, b2, sigmas, cfg, |s1, s2| {
        let diff = |x: f64| spec1.value(s1, x) - spec2.value(s2, x) - theta.at(x);
        phi_prime_hat(&theta, &diff, n, cfg.sn_rule)
    })?;
    let q = quantile_sorted(&reps.sorted, cfg.alpha);
    let critical = q + eps;
    Ok(TestReport {
        method: Method::DerivativeBootstrap,
        reject: d1_hat < critical,
        d1_hat,
        eps,
        alpha: cfg.alpha,
        statistic: d1_hat,
        critical,
        quantile: q,
        n,
        replicates: reps.sorted.len(),
        dropped: reps.dropped,
        seed: cfg.seed,
        branch: Some(gen.branch),
        generating_d1: Some(gen.d1),
    })
}

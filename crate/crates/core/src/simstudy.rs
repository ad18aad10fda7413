//! Monte Carlo studies on the intersecting and parallel emax scenarios:
//! interval coverage and rejection rates with their standard errors.

use std::io::Write;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{self, BootstrapConfig, SnRule};
use crate::data::{GroupSample, TwoGroupData};
use crate::error::{Error, Result};
use crate::fit::{self, FitOptions};
use crate::inference::{self, AsymptoticConfig, Method};
use crate::model::{ModelSpec, ParameterVector};
use crate::quad;
use crate::rng;

pub const DOMAIN: (f64, f64) = (0.0, 4.0);
pub const DEFAULT_LEVELS: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    /// `beta1 = (5, 3, 1)`, `beta2 = (5, 3 + gamma, 1 + gamma)`; the curves cross at 0 and 2.
    Intersecting,
    /// `beta1 = (delta, 5, 1)`, `beta2 = (0, 5, 1)`; `d1 = 4 delta`.
    Parallel,
}

impl Shape {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "intersecting" => Ok(Shape::Intersecting),
            "parallel" => Ok(Shape::Parallel),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Intersecting => "intersecting",
            Shape::Parallel => "parallel",
        }
    }
}

/// The emax parameter pair of a scenario (`value` is gamma or delta).
pub fn make_scenario_params(shape: Shape, value: f64) -> (ParameterVector, ParameterVector) {
    match shape {
        Shape::Intersecting => (vec![5.0, 3.0, 1.0].into(), vec![5.0, 3.0 + value, 1.0 + value].into()),
        Shape::Parallel => (vec![value, 5.0, 1.0].into(), vec![0.0, 5.0, 1.0].into()),
    }
}

/// `int b2 x / (b3 + x) dx`.
fn emax_antiderivative(b2: f64, b3: f64, x: f64) -> f64 {
    b2 * (x - b3 * (b3 + x).ln())
}

/// Closed-form `d1` on `[0, 4]`.
pub fn true_d1(shape: Shape, value: f64) -> f64 {
    match shape {
        Shape::Parallel => 4.0 * value.abs(),
        Shape::Intersecting => {
            let f = |x: f64| emax_antiderivative(3.0, 1.0, x) - emax_antiderivative(3.0 + value, 1.0 + value, x);
            (f(2.0) - f(0.0)).abs() + (f(4.0) - f(2.0)).abs()
        }
    }
}

/// Scenario parameter with the given true `d1`.
pub fn value_for_distance(shape: Shape, d1: f64) -> Result<f64> {
    if !(d1 >= 0.0) {
        return Err(Error::Config(format!("target distance must be non-negative, got {d1}")));
    }
    match shape {
        Shape::Parallel => Ok(d1 / 4.0),
        Shape::Intersecting => {
            let hi = 1e6;
            if d1 >= true_d1(shape, hi) {
                return Err(Error::Config(format!("intersecting scenario cannot reach d1 = {d1}")));
            }
            if d1 == 0.0 {
                return Ok(0.0);
            }
            Ok(quad::bisect(&|g: f64| true_d1(shape, g) - d1, 0.0, hi, 1e-13))
        }
    }
}

/// One cell of a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub shape: Shape,
    /// gamma (intersecting) or delta (parallel).
    pub value: f64,
    pub n1: usize,
    pub n2: usize,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub levels: Vec<f64>,
    pub eps: f64,
    pub alpha: f64,
    pub reps: usize,
    pub replicates: usize,
    pub draws: usize,
    pub const_c: f64,
    pub sn_rule: SnRule,
    pub seed: u64,
}

impl Scenario {
    /// Five equidistant doses on `[0, 4]`, `eps = 1`, `alpha = 0.05`, 200 datasets,
    /// 300 bootstrap replicates and 10000 limit draws.
    pub fn new(shape: Shape, value: f64, n: (usize, usize), sigma_sq: (f64, f64)) -> Self {
        Self {
            shape,
            value,
            n1: n.0,
            n2: n.1,
            sigma1_sq: sigma_sq.0,
            sigma2_sq: sigma_sq.1,
            levels: DEFAULT_LEVELS.to_vec(),
            eps: 1.0,
            alpha: 0.05,
            reps: 200,
            replicates: 300,
            draws: 10_000,
            const_c: 1.0,
            sn_rule: SnRule::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::Config("at least one simulated dataset is required".into()));
        }
        if !(self.sigma1_sq > 0.0 && self.sigma2_sq > 0.0) {
            return Err(Error::Config("scenario variances must be positive".into()));
        }
        if !(self.value >= 0.0) {
            return Err(Error::Config(format!("scenario parameter must be non-negative, got {}", self.value)));
        }
        if self.levels.is_empty() || self.levels.iter().any(|x| !(*x >= DOMAIN.0 && *x <= DOMAIN.1)) {
            return Err(Error::Config(format!("dose levels must lie in [{}, {}]", DOMAIN.0, DOMAIN.1)));
        }
        if self.n1 < self.levels.len() || self.n2 < self.levels.len() {
            return Err(Error::Config("every dose level needs at least one observation per group".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> (ParameterVector, ParameterVector) {
        make_scenario_params(self.shape, self.value)
    }

    pub fn true_d1(&self) -> f64 {
        true_d1(self.shape, self.value)
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::emax(DOMAIN)
    }

    fn counts(&self, n: usize) -> Vec<usize> {
        let k = self.levels.len();
        (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
    }

    /// Simulated dataset number `rep`.
    pub fn dataset(&self, rep: usize) -> TwoGroupData {
        let spec = self.spec();
        let (b1, b2) = self.params();
        let mut rng = rng::substream(self.seed, rng::domain::SIM_DATA, rep as u64);
        let mut group = |beta: &[f64], n: usize, sigma_sq: f64| {
            let sd = sigma_sq.sqrt();
            let pairs: Vec<(f64, f64)> = self
                .levels
                .iter()
                .zip(self.counts(n))
                .flat_map(|(&x, c)| std::iter::repeat_n(x, c))
                .map(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (x, spec.value(beta, x) + sd * z)
                })
                .collect();
            GroupSample::from_pairs(pairs).expect("finite simulated data")
        };
        let g1 = group(&b1, self.n1, self.sigma1_sq);
        let g2 = group(&b2, self.n2, self.sigma2_sq);
        TwoGroupData::new(g1, g2)
    }

    fn method_seed(&self, rep: usize) -> u64 {
        rng::derive_seed(self.seed, rng::domain::SIM_METHOD, rep as u64)
    }

    fn asymptotic_config(&self, rep: usize) -> AsymptoticConfig {
        AsymptoticConfig { alpha: self.alpha, draws: self.draws, const_c: self.const_c, seed: self.method_seed(rep) }
    }

    fn bootstrap_config(&self, rep: usize) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.replicates,
            alpha: self.alpha,
            seed: self.method_seed(rep),
            sn_rule: self.sn_rule,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Coverage,
    Rejection,
}

/// Rate of one method over the simulated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Coverage or rejection rate over the datasets where the method succeeded.
    pub rate: f64,
    /// `sqrt(rate (1 - rate) / reps)`.
    pub se: f64,
    /// Datasets where the method produced a result.
    pub reps: usize,
    /// Datasets where the fit or the method failed.
    pub failures: usize,
    pub dropped_replicates: usize,
    pub mean_runtime_secs: f64,
}

impl MethodSummary {
    /// Two summaries agree up to the wall-clock runtime.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { mean_runtime_secs: 0.0, ..self.clone() } == Self { mean_runtime_secs: 0.0, ..other.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub scenario: Scenario,
    pub measure: Measure,
    pub truth_d1: f64,
    pub methods: Vec<MethodSummary>,
}

impl OperatingCharacteristics {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn same_outcome(&self, other: &Self) -> bool {
        self.scenario == other.scenario
            && self.measure == other.measure
            && self.truth_d1 == other.truth_d1
            && self.methods.len() == other.methods.len()
            && self.methods.iter().zip(&other.methods).all(|(a, b)| a.same_outcome(b))
    }
}

/// Monte Carlo standard error of a rate.
pub fn rate_se(rate: f64, reps: usize) -> f64 {
    if reps == 0 {
        return f64::NAN;
    }
    (rate * (1.0 - rate) / reps as f64).sqrt()
}

struct Outcome {
    hit: bool,
    dropped: usize,
    secs: f64,
}

fn evaluate(sc: &Scenario, measure: Measure, methods: &[Method], rep: usize, truth: f64) -> Vec<Option<Outcome>> {
    let spec = sc.spec();
    let data = sc.dataset(rep);
    let start = Instant::now();
    let fit_opts = FitOptions::default().with_seed(sc.method_seed(rep));
    let pair = match fit::fit_pair(&spec, &spec, &data, &fit_opts) {
        Ok(p) if p.converged() => p,
        _ => return methods.iter().map(|_| None).collect(),
    };
    let fit_secs = start.elapsed().as_secs_f64();
    methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let (hit, dropped) = match (measure, method) {
                (Measure::Coverage, Method::Asymptotic) => {
                    let ci = inference::asymptotic_ci(&spec, &spec, &data, &pair, &sc.asymptotic_config(rep)).ok()?;
                    (ci.contains(truth), 0)
                }
                (Measure::Coverage, Method::BootstrapCi) => {
                    let cfg = sc.bootstrap_config(rep);
                    let ci = bootstrap::bootstrap_ci_from_fit(&spec, &spec, &data, &pair, &cfg).ok()?;
                    (ci.contains(truth), ci.dropped)
                }
                (Measure::Coverage, _) => return None,
                (Measure::Rejection, Method::Asymptotic) => {
                    let cfg = sc.asymptotic_config(rep);
                    let t = inference::asymptotic_test(&spec, &spec, &data, &pair, sc.eps, &cfg).ok()?;
                    (t.reject, 0)
                }
                (Measure::Rejection, m) => {
                    let cfg = sc.bootstrap_config(rep);
                    let t = match m {
                        Method::BootstrapCi => {
                            bootstrap::bootstrap_ci_test_from_fit(&spec, &spec, &data, &pair, sc.eps, &cfg)
                        }
                        Method::ConstrainedBootstrap => {
                            bootstrap::constrained_bootstrap_test_from_fit(&spec, &spec, &data, &pair, sc.eps, &cfg)
                        }
                        _ => bootstrap::derivative_bootstrap_test_from_fit(&spec, &spec, &data, &pair, sc.eps, &cfg),
                    }
                    .ok()?;
                    (t.reject, t.dropped)
                }
            };
            Some(Outcome { hit, dropped, secs: fit_secs + start.elapsed().as_secs_f64() })
        })
        .collect()
}

fn run(sc: &Scenario, measure: Measure, methods: &[Method]) -> Result<OperatingCharacteristics> {
    sc.validate()?;
    if measure == Measure::Coverage {
        if let Some(m) = methods.iter().find(|m| !matches!(m, Method::Asymptotic | Method::BootstrapCi)) {
            return Err(Error::Config(format!("method {m} has no confidence interval")));
        }
    }
    let truth = sc.true_d1();
    let outcomes: Vec<Vec<Option<Outcome>>> =
        (0..sc.reps).into_par_iter().map(|rep| evaluate(sc, measure, methods, rep, truth)).collect();
    let methods = methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let done: Vec<&Outcome> = outcomes.iter().filter_map(|o| o[k].as_ref()).collect();
            let reps = done.len();
            let hits = done.iter().filter(|o| o.hit).count();
            let rate = if reps > 0 { hits as f64 / reps as f64 } else { f64::NAN };
            MethodSummary {
                method,
                rate,
                se: rate_se(rate, reps),
                reps,
                failures: sc.reps - reps,
                dropped_replicates: done.iter().map(|o| o.dropped).sum(),
                mean_runtime_secs: done.iter().map(|o| o.secs).sum::<f64>() / reps.max(1) as f64,
            }
        })
        .collect();
    Ok(OperatingCharacteristics { scenario: sc.clone(), measure, truth_d1: truth, methods })
}

/// Fraction of datasets whose interval contains the true `d1`, per method.
pub fn run_coverage(sc: &Scenario, methods: &[Method]) -> Result<OperatingCharacteristics> {
    run(sc, Measure::Coverage, methods)
}

/// Fraction of datasets on which `H0: d1 >= eps` is rejected, per method.
pub fn run_rejection(sc: &Scenario, methods: &[Method]) -> Result<OperatingCharacteristics> {
    run(sc, Measure::Rejection, methods)
}

/// Rejection rates of `method` across scenario parameters `values`.
pub fn run_power_curve(template: &Scenario, values: &[f64], method: Method) -> Result<Vec<OperatingCharacteristics>> {
    if values.is_empty() {
        return Err(Error::Config("power curve grid is empty".into()));
    }
    values
        .iter()
        .map(|&value| run_rejection(&Scenario { value, ..template.clone() }, &[method]))
        .collect()
}

/// One CSV row per method and cell: `d1,rate,se,method,n1,n2,sigma1,sigma2`.
///
/// The `sigma` columns hold the error variances.
pub fn write_rates_csv<W: Write>(cells: &[OperatingCharacteristics], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["d1", "rate", "se", "method", "n1", "n2", "sigma1", "sigma2"])?;
    for cell in cells {
        let sc = &cell.scenario;
        for m in &cell.methods {
            w.write_record([
                cell.truth_d1.to_string(),
                m.rate.to_string(),
                m.se.to_string(),
                m.method.to_string(),
                sc.n1.to_string(),
                sc.n2.to_string(),
                sc.sigma1_sq.to_string(),
                sc.sigma2_sq.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

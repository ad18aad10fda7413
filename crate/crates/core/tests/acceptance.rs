//! Acceptance suite: prints one PASS/FAIL line per criterion and exits non-zero on any failure.

use std::time::Instant;

use curve_equiv::bootstrap::{self, BootstrapConfig};
use curve_equiv::data::GroupSample;
use curve_equiv::distance::{self, DiffCurve};
use curve_equiv::fit::{self, FitOptions, FittedGroup, FittedPair, CONSTRAINT_RTOL};
use curve_equiv::inference::{self, AsymptoticConfig, Branch, InfoMatrix, LimitLaw, Method};
use curve_equiv::model::{Family, ModelSpec};
use curve_equiv::simstudy::{self, Scenario, Shape};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;

struct Check {
    ok: bool,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Check {
    Check { ok, detail: detail.into() }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn emax() -> ModelSpec {
    ModelSpec::emax((0.0, 4.0))
}

fn analytic_distance() -> Check {
    let m = emax();
    let mut worst: f64 = 0.0;
    for delta in [0.0, 0.1, 0.25, 0.5] {
        let (b1, b2) = simstudy::make_scenario_params(Shape::Parallel, delta);
        let d = distance::d1(&m, &m, &b1, &b2).unwrap();
        worst = worst.max((d - 4.0 * delta).abs());
    }
    check(worst <= 1e-8, format!("max |d1 - 4 delta| = {worst:.2e}"))
}

fn riemann(c: &DiffCurve<'_>, points: usize) -> f64 {
    let (lo, hi) = c.domain();
    let h = (hi - lo) / points as f64;
    (0..points).map(|k| c.at(lo + (k as f64 + 0.5) * h).abs()).sum::<f64>() * h
}

fn oracle_equivalence() -> Check {
    let m = emax();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let bounds = Family::Emax.default_box();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let mut draw = || bounds.iter().map(|&(a, b)| rng.random_range(a..b)).collect::<Vec<f64>>();
        let (b1, b2) = (draw(), draw());
        let c = DiffCurve::new(&m, &m, &b1, &b2).unwrap();
        let d = distance::l1_distance(&c).unwrap();
        worst = worst.max((d - riemann(&c, 1_000_000)).abs());
    }
    check(worst <= 1e-6, format!("max |quadrature - Riemann| over 50 pairs = {worst:.2e}"))
}

fn coverage_table() -> Check {
    let gamma = simstudy::value_for_distance(Shape::Intersecting, 1.0).unwrap();
    let cell = |n: usize, method: Method| {
        let sc = Scenario { seed: SEED, ..Scenario::new(Shape::Intersecting, gamma, (n, n), (0.25, 0.25)) };
        let oc = simstudy::run_coverage(&sc, &[method]).unwrap();
        oc.method(method).unwrap().clone()
    };
    let a200 = cell(200, Method::Asymptotic);
    let a20 = cell(20, Method::Asymptotic);
    let b200 = cell(200, Method::BootstrapCi);
    let ok = within(a200.rate, 0.845, 0.06) && within(a20.rate, 0.640, 0.08) && within(b200.rate, 0.955, 0.04);
    check(
        ok,
        format!(
            "asymptotic (200,200) {:.3} [0.845 +- 0.06], asymptotic (20,20) {:.3} [0.640 +- 0.08], bootstrap (200,200) {:.3} [0.955 +- 0.04]; failures {}/{}/{}",
            a200.rate, a20.rate, b200.rate, a200.failures, a20.failures, b200.failures
        ),
    )
}

fn power_point() -> Check {
    let sc = Scenario { seed: SEED, ..Scenario::new(Shape::Parallel, 0.0, (50, 50), (0.25, 0.25)) };
    let oc = simstudy::run_rejection(&sc, &[Method::ConstrainedBootstrap, Method::BootstrapCi]).unwrap();
    let cb = oc.method(Method::ConstrainedBootstrap).unwrap();
    let ci = oc.method(Method::BootstrapCi).unwrap();
    check(
        within(cb.rate, 0.455, 0.07) && within(ci.rate, 0.115, 0.06),
        format!(
            "constrained {:.3} [0.455 +- 0.07], bootstrap-ci {:.3} [0.115 +- 0.06]; failures {}/{}",
            cb.rate, ci.rate, cb.failures, ci.failures
        ),
    )
}

fn boundary_level(method: Method) -> Check {
    let sc = Scenario { seed: SEED, ..Scenario::new(Shape::Parallel, 0.25, (200, 200), (0.25, 0.25)) };
    let oc = simstudy::run_rejection(&sc, &[method]).unwrap();
    let m = oc.method(method).unwrap();
    check(
        (0.02..=0.09).contains(&m.rate),
        format!("{method} rejection at d1 = eps: {:.3} [0.02, 0.09], se {:.3}, failures {}", m.rate, m.se, m.failures),
    )
}

fn limit_law() -> Check {
    let sc = Scenario { reps: 500, seed: SEED, ..Scenario::new(Shape::Parallel, 0.25, (100, 100), (0.25, 0.25)) };
    let m = sc.spec();
    let n = (sc.n1 + sc.n2) as f64;
    let opts = FitOptions::default();
    let scaled: Vec<f64> = (0..sc.reps)
        .map(|r| {
            let data = sc.dataset(r);
            let pair = fit::fit_pair(&m, &m, &data, &opts.with_seed(r as u64)).unwrap();
            n.sqrt() * (distance::d1(&m, &m, &pair.g1.beta_hat, &pair.g2.beta_hat).unwrap() - sc.true_d1())
        })
        .collect();
    let (b1, b2) = sc.params();
    let group = |beta, s2| FittedGroup { beta_hat: beta, sigma2_hat: s2, sse: 0.0, converged: true, iterations: 0 };
    let data = sc.dataset(0);
    let truth = FittedPair { g1: group(b1, sc.sigma1_sq), g2: group(b2, sc.sigma2_sq), kappa_hat: data.kappa_hat().unwrap() };
    let law = LimitLaw::new(&m, &m, &data, &truth, 1.0).unwrap();
    let draws = law.simulate(10_000, SEED);
    let sd = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let (emp, sim) = (sd(&scaled), sd(&draws));
    check(
        (emp / sim - 1.0).abs() <= 0.15,
        format!("empirical sd {emp:.4}, limit sd {sim:.4}, ratio {:.3} [0.85, 1.15]", emp / sim),
    )
}

fn property_suite() -> Check {
    let m = emax();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    // gradients against central differences
    let mut worst_fd: f64 = 0.0;
    for family in [Family::Emax, Family::Linear, Family::Exponential, Family::Quadratic] {
        let spec = ModelSpec::with_default_box(family, (0.0, 4.0)).unwrap();
        for _ in 0..100 {
            let beta: Vec<f64> =
                spec.bounds().iter().map(|&(a, b)| rng.random_range(a.max(-10.0)..b.min(10.0))).collect();
            let x = rng.random_range(0.0..4.0);
            let g = spec.grad(&beta, x).unwrap();
            for j in 0..beta.len() {
                let h = 1e-6 * (1.0 + beta[j].abs());
                let (mut up, mut down) = (beta.clone(), beta.clone());
                up[j] += h;
                down[j] -= h;
                let fd = (spec.eval(&up, x).unwrap() - spec.eval(&down, x).unwrap()) / (2.0 * h);
                worst_fd = worst_fd.max((fd - g[j]).abs() / (1.0 + g[j].abs()));
            }
        }
    }
    if worst_fd > 1e-5 {
        failures.push(format!("gradient error {worst_fd:.2e}"));
    }

    // information matrices
    let levels = [0.0, 1.0, 2.0, 3.0, 4.0];
    let g = GroupSample::replicated(&levels, 3, |_| 0.0).unwrap();
    for _ in 0..50 {
        let beta: Vec<f64> = vec![rng.random_range(-5.0..5.0), rng.random_range(0.5..10.0), rng.random_range(0.2..5.0)];
        let fit = FittedGroup { beta_hat: beta.into(), sigma2_hat: 0.25, sse: 0.0, converged: true, iterations: 0 };
        let info = inference::info_matrix(&m, &g, &fit).unwrap();
        let s = info.sigma();
        let eig = SymmetricEigen::new(s.clone()).eigenvalues;
        let residual = (info.inv_sqrt() * info.inv_sqrt() * s - DMatrix::identity(3, 3)).amax();
        if (s - s.transpose()).amax() > 1e-12 || eig.min() < -1e-10 * s.trace() || residual > 1e-8 {
            failures.push(format!("information matrix check failed (residual {residual:.2e})"));
            break;
        }
    }
    let diag = InfoMatrix::from_sigma(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]))).unwrap();
    if (diag.inv_sqrt()[(0, 0)] - 0.5).abs() > 1e-14 {
        failures.push("diag(4,1) inverse square root".into());
    }

    // quantile monotonicity
    let draws: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..3.0)).collect();
    let qs: Vec<f64> = (1..100).map(|k| inference::quantile(&draws, k as f64 / 100.0)).collect();
    if qs.windows(2).any(|w| w[0] > w[1]) {
        failures.push("quantile not monotone".into());
    }

    // interval / test duality
    let sc = Scenario { seed: SEED, ..Scenario::new(Shape::Parallel, 0.15, (50, 50), (0.25, 0.25)) };
    let data = sc.dataset(0);
    let pair = fit::fit_pair(&m, &m, &data, &FitOptions::default()).unwrap();
    let acfg = AsymptoticConfig { seed: SEED, ..Default::default() };
    let ci = inference::asymptotic_ci(&m, &m, &data, &pair, &acfg).unwrap();
    let bcfg = BootstrapConfig { replicates: 100, seed: SEED, ..Default::default() };
    let bci = bootstrap::bootstrap_ci(&m, &m, &data, &bcfg).unwrap();
    for eps in [0.3, 0.6, ci.upper, bci.upper, 1.0, 2.0] {
        let t = inference::asymptotic_test(&m, &m, &data, &pair, eps, &acfg).unwrap();
        let bt = bootstrap::bootstrap_ci_test(&m, &m, &data, eps, &bcfg).unwrap();
        if t.reject != (ci.upper < eps) || bt.reject != (bci.upper < eps) {
            failures.push(format!("duality broken at eps = {eps}"));
        }
    }

    // positive homogeneity of the derivative estimate
    let theta = DiffCurve::new(&m, &m, &[5.0, 3.0, 1.0], &[5.0, 5.7, 3.7]).unwrap();
    let f = |x: f64| (x - 1.7).sin() + 0.3;
    let base = bootstrap::phi_prime_hat(&theta, &f, 400, Default::default()).unwrap();
    for c in [0.01, 0.5, 3.0, 250.0] {
        let cf = |x: f64| c * f(x);
        let v = bootstrap::phi_prime_hat(&theta, &cf, 400, Default::default()).unwrap();
        if (v - c * base).abs() > 1e-9 * (1.0 + c * base.abs()) {
            failures.push(format!("homogeneity off by {:.2e} at c = {c}", (v - c * base).abs()));
        }
    }

    // constrained bootstrap branch invariant, and seed determinism
    for (delta, expect) in [(0.05, Branch::Constrained), (0.4, Branch::Unconstrained)] {
        let sc = Scenario { seed: SEED, ..Scenario::new(Shape::Parallel, delta, (50, 50), (0.25, 0.25)) };
        let data = sc.dataset(1);
        let t = bootstrap::constrained_bootstrap_test(&m, &m, &data, 1.0, &bcfg).unwrap();
        let gen = t.generating_d1.unwrap();
        let ok = match t.branch {
            Some(Branch::Constrained) => t.d1_hat < 1.0 && (gen - 1.0).abs() <= CONSTRAINT_RTOL,
            Some(Branch::Unconstrained) => t.d1_hat >= 1.0 && gen == t.d1_hat,
            None => false,
        };
        if !ok || t.branch != Some(expect) {
            failures.push(format!("branch invariant failed at delta = {delta}"));
        }
        if bootstrap::constrained_bootstrap_test(&m, &m, &data, 1.0, &bcfg).unwrap() != t {
            failures.push("constrained bootstrap not deterministic".into());
        }
    }
    if inference::asymptotic_ci(&m, &m, &data, &pair, &acfg).unwrap() != ci {
        failures.push("asymptotic interval not deterministic".into());
    }
    check(failures.is_empty(), if failures.is_empty() { "all properties hold".to_string() } else { failures.join("; ") })
}

fn main() {
    let mut all_ok = true;
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("1 analytic distance", Box::new(analytic_distance)),
        ("2 quadrature vs Riemann oracle", Box::new(oracle_equivalence)),
        ("3 coverage of the interval procedures", Box::new(coverage_table)),
        ("4 power at d1 = 0", Box::new(power_point)),
        ("5 constrained bootstrap level at d1 = eps", Box::new(|| boundary_level(Method::ConstrainedBootstrap))),
        ("6 limit-law spread", Box::new(limit_law)),
        ("7 property suite", Box::new(property_suite)),
        ("8 derivative bootstrap level at d1 = eps", Box::new(|| boundary_level(Method::DerivativeBootstrap))),
    ];
    for (name, run) in criteria {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        all_ok &= result.ok;
        println!("{} criterion {name}: {} ({secs:.1} s)", if result.ok { "PASS" } else { "FAIL" }, result.detail);
    }
    if !all_ok {
        std::process::exit(1);
    }
}

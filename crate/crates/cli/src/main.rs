//! `curve-equiv`: fit two dose-response curves, bound the area between them,
//! test their equivalence, and run simulation studies.

mod settings;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use curve_equiv::bootstrap::{self, BootstrapConfig, DerivativeGeneration, SnRule};
use curve_equiv::distance::{self, DiffCurve};
use curve_equiv::fit::{self, FitOptions, FittedPair};
use curve_equiv::inference::{self, AsymptoticConfig, Method};
use curve_equiv::simstudy::{self, Scenario, Shape};
use curve_equiv::{Family, ModelSpec, TwoGroupData};

use settings::{parse_box, parse_list, parse_pair, Settings};

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Procedure(String),
}

impl From<curve_equiv::Error> for Failure {
    fn from(e: curve_equiv::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Procedure(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "curve-equiv", version, about = "Similarity of two regression curves by the area between them")]
struct Cli {
    /// Config file: JSON object, key = value lines, or a previous JSON report.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (overrides the config file and CURVE_EQUIV_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report destination; standard output if absent.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Least-squares fits of both groups and the estimated distance.
    Fit(DataFlags),
    /// Confidence interval for the distance.
    Ci {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        inference: InferenceFlags,
    },
    /// Equivalence test of H0: d1 >= eps.
    Test {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        inference: InferenceFlags,
    },
    /// Coverage or rejection rates on a built-in scenario.
    Simulate {
        #[command(flatten)]
        sim: SimFlags,
        #[command(flatten)]
        inference: InferenceFlags,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Ci { .. } => "ci",
            Command::Test { .. } => "test",
            Command::Simulate { .. } => "simulate",
        }
    }
}

#[derive(Args, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
struct DataFlags {
    /// CSV with columns group, dose, response.
    data: Option<PathBuf>,
    /// Model of group 1: emax, linear, exponential, quadratic.
    #[arg(long)]
    model1: Option<String>,
    #[arg(long)]
    model2: Option<String>,
    /// Parameter box of group 1 as lo:hi,lo:hi,...
    #[arg(long, allow_hyphen_values = true)]
    box1: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    box2: Option<String>,
    /// Covariate interval lo,hi; defaults to the observed dose range.
    #[arg(long, allow_hyphen_values = true)]
    domain: Option<String>,
}

#[derive(Args, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
struct InferenceFlags {
    /// asymptotic, bootstrap-ci, constrained-bootstrap or derivative-bootstrap
    /// (a comma-separated list for simulate).
    #[arg(long)]
    method: Option<String>,
    /// Equivalence margin.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Bootstrap replicates B.
    #[arg(long)]
    replicates: Option<usize>,
    /// Limit-law draws M.
    #[arg(long)]
    draws: Option<usize>,
    /// Constant c of the coincidence-set threshold.
    #[arg(long)]
    c: Option<f64>,
    /// sqrt-n-log or power:<a>.
    #[arg(long)]
    sn_rule: Option<String>,
    /// Derivative-bootstrap generating parameters: constrained or unconstrained.
    #[arg(long)]
    generation: Option<String>,
    /// Two-sided asymptotic interval.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    two_sided: Option<bool>,
}

#[derive(Args, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
struct SimFlags {
    /// parallel or intersecting.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Target distance, converted to delta or gamma.
    #[arg(long)]
    d1: Option<f64>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    /// Error variance of group 1.
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Simulated datasets.
    #[arg(long)]
    reps: Option<usize>,
    /// coverage or rejection.
    #[arg(long)]
    measure: Option<String>,
    /// Comma-separated scenario values for a rejection-rate curve.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Also write a JSON summary with the scenario echo here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn flag_settings<T: Serialize>(flags: &T) -> Result<Settings, Failure> {
    serde_json::to_value(flags)
        .and_then(serde_json::from_value)
        .map_err(|e| Failure::Input(e.to_string()))
}

fn resolve(cli: &Cli) -> Result<Settings, Failure> {
    let mut layered = Settings { seed: settings::env_seed()?, ..Default::default() };
    if let Some(path) = &cli.config {
        layered = layered.overlay(settings::load_config(path)?)?;
    }
    let flags = match &cli.command {
        Command::Fit(d) => flag_settings(d)?,
        Command::Ci { data, inference } | Command::Test { data, inference } => {
            flag_settings(data)?.overlay(flag_settings(inference)?)?
        }
        Command::Simulate { sim, inference } => flag_settings(sim)?.overlay(flag_settings(inference)?)?,
    };
    let mut s = layered.overlay(flags)?;
    if cli.seed.is_some() {
        s.seed = cli.seed;
    }
    Ok(s)
}

/// Fills defaults so the echoed settings reproduce the run on their own.
fn with_defaults(mut s: Settings, command: &str) -> Settings {
    s.seed.get_or_insert(0);
    s.alpha.get_or_insert(0.05);
    if command != "fit" {
        s.replicates.get_or_insert(300);
        s.draws.get_or_insert(10_000);
        s.c.get_or_insert(1.0);
        s.sn_rule.get_or_insert_with(|| "sqrt-n-log".into());
        s.generation.get_or_insert_with(|| "constrained".into());
    }
    if command == "simulate" {
        s.n1.get_or_insert(50);
        s.n2.get_or_insert(50);
        s.sigma1.get_or_insert(0.25);
        s.sigma2.get_or_insert(0.25);
        s.reps.get_or_insert(200);
        s.eps.get_or_insert(1.0);
        let measure = s.measure.get_or_insert_with(|| if s.grid.is_some() { "rejection" } else { "coverage" }.into());
        let default_method = if measure == "coverage" { "asymptotic" } else { "constrained-bootstrap" };
        s.method.get_or_insert_with(|| default_method.into());
    } else {
        s.model1.get_or_insert_with(|| "emax".into());
        s.model2.get_or_insert_with(|| "emax".into());
        if command != "fit" {
            s.method.get_or_insert_with(|| "asymptotic".into());
            s.two_sided.get_or_insert(false);
        }
    }
    s
}

struct Problem {
    spec1: ModelSpec,
    spec2: ModelSpec,
    data: TwoGroupData,
}

fn load_problem(s: &mut Settings) -> Result<Problem, Failure> {
    let path = s.data.clone().ok_or_else(|| Failure::Input("a data file is required".into()))?;
    let data = TwoGroupData::load_csv(&path)?;
    let domain = match &s.domain {
        Some(d) => parse_pair(d, "domain")?,
        None => {
            let doses = data.group1.levels().iter().chain(data.group2.levels());
            let lo = doses.clone().copied().fold(f64::INFINITY, f64::min);
            let hi = doses.copied().fold(f64::NEG_INFINITY, f64::max);
            s.domain = Some(format!("{lo},{hi}"));
            (lo, hi)
        }
    };
    if !(domain.1 > domain.0) {
        return Err(Failure::Input(format!("domain [{}, {}] is empty", domain.0, domain.1)));
    }
    let spec = |name: &Option<String>, bounds: &Option<String>| -> Result<ModelSpec, Failure> {
        let family = Family::from_name(name.as_deref().unwrap_or("emax"))?;
        let bounds = match bounds {
            Some(b) => parse_box(b)?,
            None => family.default_box(),
        };
        Ok(ModelSpec::new(family, bounds, domain)?)
    };
    Ok(Problem { spec1: spec(&s.model1, &s.box1)?, spec2: spec(&s.model2, &s.box2)?, data })
}

fn fit_problem(p: &Problem, seed: u64) -> Result<FittedPair, Failure> {
    let pair = fit::fit_pair(&p.spec1, &p.spec2, &p.data, &FitOptions::default().with_seed(seed))?;
    if !pair.converged() {
        return Err(Failure::Procedure("least-squares fit did not converge".into()));
    }
    Ok(pair)
}

fn method(s: &Settings) -> Result<Method, Failure> {
    Ok(Method::from_name(s.method.as_deref().unwrap_or("asymptotic"))?)
}

fn asymptotic_config(s: &Settings) -> AsymptoticConfig {
    AsymptoticConfig {
        alpha: s.alpha.unwrap_or(0.05),
        draws: s.draws.unwrap_or(10_000),
        const_c: s.c.unwrap_or(1.0),
        seed: s.seed.unwrap_or(0),
    }
}

fn bootstrap_config(s: &Settings) -> Result<BootstrapConfig, Failure> {
    let generation = match s.generation.as_deref().unwrap_or("constrained") {
        "constrained" => DerivativeGeneration::Constrained,
        "unconstrained" => DerivativeGeneration::Unconstrained,
        other => return Err(Failure::Input(format!("unknown generation '{other}'"))),
    };
    Ok(BootstrapConfig {
        replicates: s.replicates.unwrap_or(300),
        alpha: s.alpha.unwrap_or(0.05),
        seed: s.seed.unwrap_or(0),
        sn_rule: SnRule::parse(s.sn_rule.as_deref().unwrap_or("sqrt-n-log"))?,
        generation,
        fit: FitOptions::default(),
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<Value, Failure> {
    serde_json::to_value(value).map_err(|e| Failure::Procedure(e.to_string()))
}

fn run_fit(s: &mut Settings) -> Result<Value, Failure> {
    let p = load_problem(s)?;
    let seed = s.seed.unwrap_or(0);
    let pair = fit_problem(&p, seed)?;
    let curve = DiffCurve::new(&p.spec1, &p.spec2, &pair.g1.beta_hat, &pair.g2.beta_hat)?;
    let d1_hat = distance::l1_distance(&curve)?;
    let null_set = distance::estimate_null_set(&curve, p.data.n(), s.c.unwrap_or(1.0))?;
    Ok(json!({ "fit": to_json(&pair)?, "d1_hat": d1_hat, "null_set": to_json(&null_set)? }))
}

fn run_ci(s: &mut Settings) -> Result<Value, Failure> {
    let p = load_problem(s)?;
    let m = method(s)?;
    let two_sided = s.two_sided.unwrap_or(false);
    if two_sided && m != Method::Asymptotic {
        return Err(Failure::Input("two-sided intervals are only available for the asymptotic method".into()));
    }
    let pair = fit_problem(&p, s.seed.unwrap_or(0))?;
    let report = match m {
        Method::Asymptotic if two_sided => {
            inference::two_sided_ci(&p.spec1, &p.spec2, &p.data, &pair, &asymptotic_config(s))?
        }
        Method::Asymptotic => inference::asymptotic_ci(&p.spec1, &p.spec2, &p.data, &pair, &asymptotic_config(s))?,
        Method::BootstrapCi => {
            bootstrap::bootstrap_ci_from_fit(&p.spec1, &p.spec2, &p.data, &pair, &bootstrap_config(s)?)?
        }
        other => return Err(Failure::Input(format!("method {other} does not produce an interval"))),
    };
    Ok(json!({ "fit": to_json(&pair)?, "interval": to_json(&report)? }))
}

fn run_test(s: &mut Settings) -> Result<Value, Failure> {
    let eps = s.eps.ok_or_else(|| Failure::Input("test requires --eps".into()))?;
    let p = load_problem(s)?;
    let m = method(s)?;
    let pair = fit_problem(&p, s.seed.unwrap_or(0))?;
    let (s1, s2, data) = (&p.spec1, &p.spec2, &p.data);
    let report = match m {
        Method::Asymptotic => inference::asymptotic_test(s1, s2, data, &pair, eps, &asymptotic_config(s))?,
        Method::BootstrapCi => bootstrap::bootstrap_ci_test_from_fit(s1, s2, data, &pair, eps, &bootstrap_config(s)?)?,
        Method::ConstrainedBootstrap => {
            bootstrap::constrained_bootstrap_test_from_fit(s1, s2, data, &pair, eps, &bootstrap_config(s)?)?
        }
        Method::DerivativeBootstrap => {
            bootstrap::derivative_bootstrap_test_from_fit(s1, s2, data, &pair, eps, &bootstrap_config(s)?)?
        }
    };
    Ok(json!({ "fit": to_json(&pair)?, "test": to_json(&report)? }))
}

/// Returns the JSON summary and the CSV table.
fn run_simulate(s: &mut Settings) -> Result<(Value, Vec<u8>), Failure> {
    let shape = Shape::from_name(s.scenario.as_deref().ok_or_else(|| Failure::Input("simulate requires --scenario".into()))?)?;
    let grid = s.grid.as_deref().map(parse_list).transpose()?;
    let value = match (shape, s.delta, s.gamma, s.d1) {
        (_, _, _, Some(d)) => simstudy::value_for_distance(shape, d)?,
        (Shape::Parallel, Some(v), _, _) | (Shape::Intersecting, _, Some(v), _) => v,
        // each grid cell sets its own value
        _ if grid.is_some() => 0.0,
        (Shape::Parallel, None, _, _) => return Err(Failure::Input("parallel scenario requires --delta or --d1".into())),
        (Shape::Intersecting, _, None, _) => {
            return Err(Failure::Input("intersecting scenario requires --gamma or --d1".into()))
        }
    };
    let methods = s
        .method
        .as_deref()
        .unwrap_or("asymptotic")
        .split(',')
        .map(|m| Method::from_name(m.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let sc = Scenario {
        eps: s.eps.unwrap_or(1.0),
        alpha: s.alpha.unwrap_or(0.05),
        reps: s.reps.unwrap_or(200),
        replicates: s.replicates.unwrap_or(300),
        draws: s.draws.unwrap_or(10_000),
        const_c: s.c.unwrap_or(1.0),
        sn_rule: SnRule::parse(s.sn_rule.as_deref().unwrap_or("sqrt-n-log"))?,
        seed: s.seed.unwrap_or(0),
        ..Scenario::new(
            shape,
            value,
            (s.n1.unwrap_or(50), s.n2.unwrap_or(50)),
            (s.sigma1.unwrap_or(0.25), s.sigma2.unwrap_or(0.25)),
        )
    };
    let cells = match (s.measure.as_deref().unwrap_or("coverage"), grid) {
        ("coverage", None) => vec![simstudy::run_coverage(&sc, &methods)?],
        ("coverage", Some(_)) => return Err(Failure::Input("--grid produces rejection rates, not coverage".into())),
        ("rejection", None) => vec![simstudy::run_rejection(&sc, &methods)?],
        ("rejection", Some(values)) => {
            let mut cells = Vec::new();
            for m in &methods {
                cells.extend(simstudy::run_power_curve(&sc, &values, *m)?);
            }
            cells
        }
        (other, _) => return Err(Failure::Input(format!("unknown measure '{other}'"))),
    };
    let mut csv = Vec::new();
    simstudy::write_rates_csv(&cells, &mut csv)?;
    Ok((to_json(&cells)?, csv))
}

fn write_output(path: &Option<PathBuf>, bytes: &[u8]) -> Result<(), Failure> {
    let result = match path {
        Some(p) => std::fs::write(p, bytes),
        None => std::io::stdout().write_all(bytes),
    };
    result.map_err(|e| Failure::Input(format!("cannot write output: {e}")))
}

fn report_bytes(command: &str, config: &Settings, result: Value) -> Result<Vec<u8>, Failure> {
    let report = json!({ "command": command, "config": to_json(config)?, "result": result });
    let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| Failure::Procedure(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Input(format!("cannot configure {threads} threads: {e}")))?;
    }
    let command = cli.command.name();
    let mut s = with_defaults(resolve(cli)?, command);
    log::info!("running {command} with seed {}", s.seed.unwrap_or(0));
    match command {
        "simulate" => {
            let (summary, csv) = run_simulate(&mut s)?;
            if let Some(path) = &s.summary {
                let bytes = report_bytes(command, &s, summary)?;
                std::fs::write(path, bytes)
                    .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
            }
            write_output(&cli.output, &csv)
        }
        _ => {
            let result = match command {
                "fit" => run_fit(&mut s)?,
                "ci" => run_ci(&mut s)?,
                _ => run_test(&mut s)?,
            };
            write_output(&cli.output, &report_bytes(command, &s, result)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Procedure(msg)) => {
            eprintln!("procedure failed: {msg}");
            ExitCode::from(2)
        }
    }
}

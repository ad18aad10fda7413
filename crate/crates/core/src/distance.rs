//! The L1 distance between two regression curves and the estimated coincidence set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::quad;

/// Grid used to bracket sign changes of a difference curve.
pub const ROOT_GRID: usize = 512;
/// Bisection tolerance for roots of the difference curve.
pub const ROOT_XTOL: f64 = 1e-10;
/// Bisection tolerance for boundaries of the estimated coincidence set.
pub const SET_XTOL: f64 = 1e-8;
/// Relative quadrature tolerance (scaled by domain length and curve magnitude).
pub const QTOL_REL: f64 = 1e-9;

/// The difference curve `theta(x) = m1(x, beta1) - m2(x, beta2)`.
#[derive(Debug, Clone, Copy)]
pub struct DiffCurve<'a> {
    spec1: &'a ModelSpec,
    spec2: &'a ModelSpec,
    beta1: &'a [f64],
    beta2: &'a [f64],
}

impl<'a> DiffCurve<'a> {
    pub fn new(spec1: &'a ModelSpec, spec2: &'a ModelSpec, beta1: &'a [f64], beta2: &'a [f64]) -> Result<Self> {
        if spec1.domain() != spec2.domain() {
            return Err(Error::InvalidModel(format!(
                "models live on different domains {:?} and {:?}",
                spec1.domain(),
                spec2.domain()
            )));
        }
        for (spec, beta) in [(spec1, beta1), (spec2, beta2)] {
            if beta.len() != spec.dim() {
                return Err(Error::Dimension { expected: spec.dim(), actual: beta.len() });
            }
        }
        Ok(Self { spec1, spec2, beta1, beta2 })
    }

    #[inline]
    pub fn at(&self, x: f64) -> f64 {
        self.spec1.value(self.beta1, x) - self.spec2.value(self.beta2, x)
    }

    pub fn domain(&self) -> (f64, f64) {
        self.spec1.domain()
    }

    pub fn specs(&self) -> (&'a ModelSpec, &'a ModelSpec) {
        (self.spec1, self.spec2)
    }

    pub fn betas(&self) -> (&'a [f64], &'a [f64]) {
        (self.beta1, self.beta2)
    }

    /// `max |theta|` over the root grid, floored at one.
    pub fn scale(&self) -> f64 {
        let (lo, hi) = self.domain();
        quad::grid(lo, hi, ROOT_GRID).into_iter().fold(1.0f64, |m, x| m.max(self.at(x).abs()))
    }

    pub fn qtol(&self) -> f64 {
        let (lo, hi) = self.domain();
        QTOL_REL * (hi - lo) * self.scale()
    }
}

/// Zeros of a difference curve.
#[derive(Debug, Clone, PartialEq)]
pub enum Roots {
    /// `|theta|` stays within the quadrature tolerance on the whole grid.
    IdenticallyZero,
    Discrete(Vec<f64>),
}

/// Sign changes of `theta`, bracketed on a 512-point grid and refined by bisection.
///
/// Tangential zeros without a sign change are only found if they hit a grid node.
pub fn roots(c: &DiffCurve<'_>) -> Roots {
    let (lo, hi) = c.domain();
    let qtol = c.qtol();
    let on_grid = quad::grid(lo, hi, ROOT_GRID);
    if on_grid.iter().all(|&x| c.at(x).abs() <= qtol) {
        return Roots::IdenticallyZero;
    }
    let zero_tol = 1e-14 * c.scale();
    Roots::Discrete(quad::scan_roots(&|x| c.at(x), lo, hi, ROOT_GRID, ROOT_XTOL, zero_tol))
}

/// Splits `[lo, hi]` at the given interior points.
fn pieces(lo: f64, hi: f64, cuts: &[f64]) -> Vec<(f64, f64)> {
    let mut points = vec![lo];
    points.extend(cuts.iter().copied().filter(|&r| r > lo && r < hi));
    points.push(hi);
    points.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[0], w[1])).collect()
}

/// `integral over the domain of |theta(x)| dx`.
pub fn l1_distance(c: &DiffCurve<'_>) -> Result<f64> {
    let (lo, hi) = c.domain();
    let qtol = c.qtol();
    let cuts = match roots(c) {
        Roots::IdenticallyZero => Vec::new(),
        Roots::Discrete(r) => r,
    };
    let f = |x: f64| c.at(x).abs();
    pieces(lo, hi, &cuts)
        .into_iter()
        .map(|(a, b)| quad::adaptive_simpson(&f, a, b, qtol * (b - a) / (hi - lo)))
        .sum()
}

/// `d1(beta1, beta2)` without constructing a curve by hand.
pub fn d1(spec1: &ModelSpec, spec2: &ModelSpec, beta1: &[f64], beta2: &[f64]) -> Result<f64> {
    l1_distance(&DiffCurve::new(spec1, spec2, beta1, beta2)?)
}

/// Gradient of `d1` with respect to `(beta1, beta2)`, valid where the zero set has measure zero.
pub(crate) fn l1_gradient(c: &DiffCurve<'_>) -> (Vec<f64>, Vec<f64>) {
    let (spec1, spec2) = c.specs();
    let (beta1, beta2) = c.betas();
    let (lo, hi) = c.domain();
    let cuts = match roots(c) {
        Roots::IdenticallyZero => Vec::new(),
        Roots::Discrete(r) => r,
    };
    let mut g1 = vec![0.0; spec1.dim()];
    let mut g2 = vec![0.0; spec2.dim()];
    let mut buf1 = vec![0.0; spec1.dim()];
    let mut buf2 = vec![0.0; spec2.dim()];
    for (a, b) in pieces(lo, hi, &cuts) {
        let sign = c.at(0.5 * (a + b)).signum();
        if sign == 0.0 {
            continue;
        }
        let (nodes, weights) = quad::simpson_rule(a, b, 64);
        for (x, w) in nodes.into_iter().zip(weights) {
            spec1.gradient_into(beta1, x, &mut buf1);
            spec2.gradient_into(beta2, x, &mut buf2);
            for (g, v) in g1.iter_mut().zip(&buf1) {
                *g += sign * w * v;
            }
            for (g, v) in g2.iter_mut().zip(&buf2) {
                *g -= sign * w * v;
            }
        }
    }
    (g1, g2)
}

/// A finite union of disjoint closed subintervals, in increasing order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Sorts and merges overlapping or touching intervals; drops inverted ones.
    pub fn from_intervals(mut intervals: Vec<(f64, f64)>) -> Self {
        intervals.retain(|(a, b)| a <= b);
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (a, b) in intervals {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        Self { intervals: merged }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| x >= a && x <= b)
    }

    /// Closure of the complement within `[lo, hi]`; zero-length gaps are dropped.
    pub fn complement(&self, lo: f64, hi: f64) -> IntervalSet {
        let mut out = Vec::new();
        let mut cursor = lo;
        for &(a, b) in &self.intervals {
            if a > cursor {
                out.push((cursor, a.min(hi)));
            }
            cursor = cursor.max(b);
        }
        if hi > cursor {
            out.push((cursor, hi));
        }
        IntervalSet { intervals: out }
    }
}

/// `{x : |theta(x)| < threshold}`, with boundaries located by bisection.
pub fn sublevel_set(c: &DiffCurve<'_>, threshold: f64) -> IntervalSet {
    let (lo, hi) = c.domain();
    if threshold.is_infinite() && threshold > 0.0 {
        return IntervalSet::from_intervals(vec![(lo, hi)]);
    }
    let mut points = quad::grid(lo, hi, ROOT_GRID);
    if let Roots::Discrete(r) = roots(c) {
        points.extend(r);
        points.sort_by(f64::total_cmp);
        points.dedup();
    }
    let g = |x: f64| c.at(x).abs() - threshold;
    let inside: Vec<bool> = points.iter().map(|&x| g(x) < 0.0).collect();
    let mut intervals = Vec::new();
    let mut start = if inside[0] { Some(lo) } else { None };
    for k in 1..points.len() {
        match (inside[k - 1], inside[k]) {
            (false, true) => start = Some(quad::bisect(&g, points[k - 1], points[k], SET_XTOL)),
            (true, false) => {
                let end = quad::bisect(&g, points[k - 1], points[k], SET_XTOL);
                intervals.push((start.take().unwrap_or(lo), end));
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        intervals.push((s, hi));
    }
    IntervalSet::from_intervals(intervals)
}

/// Threshold `c * sqrt(log n / n)` of the coincidence-set estimate.
pub fn null_set_threshold(n: usize, const_c: f64) -> f64 {
    let n = n as f64;
    const_c * (n.ln() / n).sqrt()
}

/// Estimated coincidence set `{x : |theta_hat(x)| < c sqrt(log n / n)}`.
pub fn estimate_null_set(c: &DiffCurve<'_>, n: usize, const_c: f64) -> Result<IntervalSet> {
    if n < 2 {
        return Err(Error::Config(format!("null-set estimate needs n >= 2, got {n}")));
    }
    if !(const_c > 0.0) {
        return Err(Error::Config(format!("null-set constant must be positive, got {const_c}")));
    }
    Ok(sublevel_set(c, null_set_threshold(n, const_c)))
}

//! Parametric regression families `m(x, beta)` with analytic parameter gradients.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A parameter vector of a regression family.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for ParameterVector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for ParameterVector {
    fn from(v: [f64; N]) -> Self {
        Self(v.to_vec())
    }
}

pub type EvalFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
pub type GradFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Regression family. User-defined families carry their own callbacks.
#[derive(Clone)]
pub enum Family {
    /// `b1 + b2 x / (b3 + x)`
    Emax,
    /// `b1 + b2 x`
    Linear,
    /// `b1 + b2 exp(x / b3)`
    Exponential,
    /// `b1 + b2 x + b3 x^2`
    Quadratic,
    UserDefined {
        name: String,
        dim: usize,
        eval: Arc<EvalFn>,
        grad: Arc<GradFn>,
    },
}

impl Family {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "emax" | "e-max" => Ok(Family::Emax),
            "linear" => Ok(Family::Linear),
            "exponential" | "exp" => Ok(Family::Exponential),
            "quadratic" => Ok(Family::Quadratic),
            other => Err(Error::InvalidModel(format!("unknown model name '{other}'"))),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Family::Emax => "emax",
            Family::Linear => "linear",
            Family::Exponential => "exponential",
            Family::Quadratic => "quadratic",
            Family::UserDefined { name, .. } => name,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Family::Linear => 2,
            Family::Emax | Family::Exponential | Family::Quadratic => 3,
            Family::UserDefined { dim, .. } => *dim,
        }
    }

    /// Default parameter box; the E-max scale parameter stays away from the pole at `-x`.
    pub fn default_box(&self) -> Vec<(f64, f64)> {
        let wide = (-100.0, 100.0);
        match self {
            Family::Emax => vec![wide, wide, (0.05, 100.0)],
            Family::Linear => vec![wide, wide],
            Family::Exponential => vec![wide, wide, (0.5, 100.0)],
            Family::Quadratic => vec![wide, wide, wide],
            Family::UserDefined { dim, .. } => vec![wide; *dim],
        }
    }
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::UserDefined { name, dim, .. } => f
                .debug_struct("UserDefined")
                .field("name", name)
                .field("dim", dim)
                .finish_non_exhaustive(),
            other => f.write_str(other.name()),
        }
    }
}

/// A regression family together with its parameter box and covariate interval.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    family: Family,
    bounds: Vec<(f64, f64)>,
    domain: (f64, f64),
}

impl ModelSpec {
    pub fn new(family: Family, bounds: Vec<(f64, f64)>, domain: (f64, f64)) -> Result<Self> {
        let p = family.dim();
        if p == 0 {
            return Err(Error::InvalidModel("parameter dimension must be positive".into()));
        }
        if bounds.len() != p {
            return Err(Error::InvalidModel(format!(
                "box has {} coordinates, family '{}' has {p} parameters",
                bounds.len(),
                family.name()
            )));
        }
        if let Some((i, _)) = bounds
            .iter()
            .enumerate()
            .find(|(_, (lo, hi))| !(lo.is_finite() && hi.is_finite() && lo <= hi))
        {
            return Err(Error::InvalidModel(format!("box coordinate {i} is not a finite interval")));
        }
        if !(domain.0.is_finite() && domain.1.is_finite() && domain.0 < domain.1) {
            return Err(Error::InvalidModel(format!(
                "domain [{}, {}] is not a proper interval",
                domain.0, domain.1
            )));
        }
        if matches!(family, Family::Emax) && bounds[2].0 <= -domain.0 && bounds[2].1 >= -domain.1 {
            return Err(Error::InvalidModel(
                "E-max box admits b3 = -x for some x in the domain".into(),
            ));
        }
        Ok(Self { family, bounds, domain })
    }

    /// Built-in family with its default box.
    pub fn with_default_box(family: Family, domain: (f64, f64)) -> Result<Self> {
        let bounds = family.default_box();
        Self::new(family, bounds, domain)
    }

    pub fn emax(domain: (f64, f64)) -> Self {
        Self::with_default_box(Family::Emax, domain).expect("default E-max box is valid")
    }

    pub fn linear(domain: (f64, f64)) -> Self {
        Self::with_default_box(Family::Linear, domain).expect("default linear box is valid")
    }

    pub fn user_defined<E, G>(
        name: &str,
        dim: usize,
        eval: E,
        grad: G,
        bounds: Vec<(f64, f64)>,
        domain: (f64, f64),
    ) -> Result<Self>
    where
        E: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let family = Family::UserDefined {
            name: name.to_string(),
            dim,
            eval: Arc::new(eval),
            grad: Arc::new(grad),
        };
        Self::new(family, bounds, domain)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn domain_length(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    fn check(&self, beta: &[f64], x: f64) -> Result<()> {
        if beta.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), actual: beta.len() });
        }
        let (lo, hi) = self.domain;
        if !(x >= lo && x <= hi) {
            return Err(Error::Domain { x, lo, hi });
        }
        if matches!(self.family, Family::Emax) && beta[2] + x == 0.0 {
            return Err(Error::Singularity { x });
        }
        Ok(())
    }

    /// `m(x, beta)`.
    pub fn eval(&self, beta: &[f64], x: f64) -> Result<f64> {
        self.check(beta, x)?;
        let v = self.value(beta, x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Singularity { x })
        }
    }

    /// `d m(x, beta) / d beta`.
    pub fn grad(&self, beta: &[f64], x: f64) -> Result<Vec<f64>> {
        self.check(beta, x)?;
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(beta, x, &mut out);
        if out.iter().all(|g| g.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Singularity { x })
        }
    }

    /// Unchecked evaluation for inner loops; callers guarantee `x` and `beta` are valid.
    #[inline]
    pub(crate) fn value(&self, beta: &[f64], x: f64) -> f64 {
        match &self.family {
            Family::Emax => beta[0] + beta[1] * x / (beta[2] + x),
            Family::Linear => beta[0] + beta[1] * x,
            Family::Exponential => beta[0] + beta[1] * (x / beta[2]).exp(),
            Family::Quadratic => beta[0] + x * (beta[1] + beta[2] * x),
            Family::UserDefined { eval, .. } => eval(x, beta),
        }
    }

    #[inline]
    pub(crate) fn gradient_into(&self, beta: &[f64], x: f64, out: &mut [f64]) {
        match &self.family {
            Family::Emax => {
                let d = beta[2] + x;
                out[0] = 1.0;
                out[1] = x / d;
                out[2] = -beta[1] * x / (d * d);
            }
            Family::Linear => {
                out[0] = 1.0;
                out[1] = x;
            }
            Family::Exponential => {
                let e = (x / beta[2]).exp();
                out[0] = 1.0;
                out[1] = e;
                out[2] = -beta[1] * x * e / (beta[2] * beta[2]);
            }
            Family::Quadratic => {
                out[0] = 1.0;
                out[1] = x;
                out[2] = x * x;
            }
            Family::UserDefined { grad, .. } => grad(x, beta, out),
        }
    }

    pub fn contains(&self, beta: &[f64]) -> bool {
        beta.len() == self.dim()
            && beta.iter().zip(&self.bounds).all(|(b, (lo, hi))| b >= lo && b <= hi)
    }

    pub fn project(&self, beta: &mut [f64]) {
        for (b, (lo, hi)) in beta.iter_mut().zip(&self.bounds) {
            *b = b.clamp(*lo, *hi);
        }
    }

    /// `count` Latin-hypercube points in the parameter box.
    pub fn latin_hypercube<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<ParameterVector> {
        let p = self.dim();
        let mut points = vec![vec![0.0; p]; count];
        let mut strata: Vec<usize> = (0..count).collect();
        for (j, (lo, hi)) in self.bounds.iter().enumerate() {
            strata.shuffle(rng);
            for (point, &s) in points.iter_mut().zip(&strata) {
                let u = (s as f64 + rng.random::<f64>()) / count as f64;
                point[j] = lo + u * (hi - lo);
            }
        }
        points.into_iter().map(ParameterVector).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn emax() -> ModelSpec {
        ModelSpec::emax((0.0, 4.0))
    }

    #[test]
    fn emax_values() {
        let m = emax();
        assert_eq!(m.eval(&[5.0, 3.0, 1.0], 1.0).unwrap(), 6.5);
        assert_eq!(m.eval(&[5.0, 3.0, 1.0], 0.0).unwrap(), 5.0);
        for x in [0.0, 0.7, 2.0, 4.0] {
            let a = m.eval(&[0.3, 5.0, 1.0], x).unwrap();
            let b = m.eval(&[0.0, 5.0, 1.0], x).unwrap();
            assert!((a - b - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn emax_gradients() {
        let m = emax();
        assert_eq!(m.grad(&[5.0, 3.0, 1.0], 1.0).unwrap(), vec![1.0, 0.5, -0.75]);
        assert_eq!(m.grad(&[-2.0, 7.0, 0.3], 0.0).unwrap(), vec![1.0, 0.0, 0.0]);
        // finite-difference oracle at x = 4
        let beta = [5.0, 3.0, 1.0];
        let g = m.grad(&beta, 4.0).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut up = beta;
            let mut dn = beta;
            up[j] += h;
            dn[j] -= h;
            let fd = (m.eval(&up, 4.0).unwrap() - m.eval(&dn, 4.0).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6);
        }
        assert!((g[1] - 0.8).abs() < 1e-15 && (g[2] + 0.48).abs() < 1e-15);
    }

    #[test]
    fn domain_and_singularity_errors() {
        let m = emax();
        assert!(matches!(m.eval(&[5.0, 3.0, 1.0], 4.5), Err(Error::Domain { .. })));
        assert!(matches!(m.eval(&[5.0, 3.0], 1.0), Err(Error::Dimension { .. })));
        let wide = ModelSpec::new(Family::Emax, vec![(-1.0, 1.0), (-1.0, 1.0), (-5.0, -2.0)], (0.0, 4.0));
        assert!(wide.is_err());
        // the box excludes the pole, but eval still guards parameters supplied from outside it
        assert!(matches!(m.eval(&[0.0, 1.0, -1.0], 1.0), Err(Error::Singularity { .. })));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ModelSpec::with_default_box(Family::Emax, (1.0, 1.0)).is_err());
        assert!(ModelSpec::new(Family::Linear, vec![(0.0, 1.0)], (0.0, 1.0)).is_err());
        assert!(ModelSpec::new(Family::Linear, vec![(0.0, 1.0), (0.0, f64::INFINITY)], (0.0, 1.0)).is_err());
        assert!(Family::from_name("logistic").is_err());
        assert_eq!(Family::from_name("EMAX").unwrap().name(), "emax");
    }

    #[test]
    fn gradients_match_finite_differences_for_all_families() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for family in [Family::Emax, Family::Linear, Family::Exponential, Family::Quadratic] {
            let spec = ModelSpec::new(
                family.clone(),
                match family {
                    Family::Emax => vec![(-5.0, 5.0), (-5.0, 5.0), (0.2, 5.0)],
                    Family::Exponential => vec![(-5.0, 5.0), (-5.0, 5.0), (1.0, 5.0)],
                    _ => vec![(-5.0, 5.0); family.dim()],
                },
                (0.0, 4.0),
            )
            .unwrap();
            let betas = spec.latin_hypercube(20, &mut rng);
            for beta in &betas {
                for x in crate::quad::grid(0.0, 4.0, 20) {
                    let g = spec.grad(beta, x).unwrap();
                    for j in 0..spec.dim() {
                        let h = 1e-6 * beta[j].abs().max(1.0);
                        let mut up = beta.clone();
                        let mut dn = beta.clone();
                        up[j] += h;
                        dn[j] -= h;
                        let fd = (spec.value(&up, x) - spec.value(&dn, x)) / (2.0 * h);
                        let scale = g[j].abs().max(1.0);
                        assert!(
                            (fd - g[j]).abs() / scale <= 1e-5,
                            "{family:?} j={j} x={x} fd={fd} g={}",
                            g[j]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn lipschitz_difference_quotients_are_bounded() {
        let spec = emax();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts = spec.latin_hypercube(200, &mut rng);
        // sup of |grad| over the box bounds the quotient: |b2| x/(b3+x)^2 <= 100 * 4 / 0.05^2
        let lipschitz = 1.0 + 1.0 + 100.0 * 4.0 / (0.05f64 * 0.05);
        for w in pts.windows(2) {
            let d: f64 = w[0].iter().zip(w[1].iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            for x in [0.0, 1.0, 4.0] {
                let dv = (spec.value(&w[0], x) - spec.value(&w[1], x)).abs();
                assert!(dv <= lipschitz * d);
            }
        }
    }

    #[test]
    fn user_defined_family() {
        let spec = ModelSpec::user_defined(
            "logistic",
            2,
            |x, b| b[0] / (1.0 + (-b[1] * x).exp()),
            |x, b, g| {
                let e = (-b[1] * x).exp();
                g[0] = 1.0 / (1.0 + e);
                g[1] = b[0] * x * e / ((1.0 + e) * (1.0 + e));
            },
            vec![(-10.0, 10.0), (-10.0, 10.0)],
            (0.0, 1.0),
        )
        .unwrap();
        assert_eq!(spec.dim(), 2);
        assert!((spec.eval(&[2.0, 0.0], 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(spec.family().name(), "logistic");
    }

    #[test]
    fn latin_hypercube_stays_in_box() {
        let spec = emax();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts = spec.latin_hypercube(9, &mut rng);
        assert_eq!(pts.len(), 9);
        assert!(pts.iter().all(|p| spec.contains(p)));
        // one point per stratum in every coordinate
        for j in 0..3 {
            let (lo, hi) = spec.bounds()[j];
            let mut strata: Vec<usize> =
                pts.iter().map(|p| (((p[j] - lo) / (hi - lo)) * 9.0).floor() as usize).collect();
            strata.sort();
            assert_eq!(strata, (0..9).collect::<Vec<_>>());
        }
    }
}

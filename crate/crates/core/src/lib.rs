//! Equivalence of two parametric regression curves measured by the area between them.
//!
//! The crate fits two nonlinear regression models, estimates the L1 distance
//! `d1 = integral |m1(x, b1) - m2(x, b2)| dx` over the covariate interval and
//! provides confidence intervals and tests for `H0: d1 >= eps` against
//! `H1: d1 < eps`:
//!
//! * an asymptotic interval and test driven by a simulated limit law ([`inference`]),
//! * a parametric bootstrap interval and its dual test ([`bootstrap`]),
//! * a constrained parametric bootstrap test that resamples on the null boundary,
//! * a bootstrap test built on a thresholded directional-derivative estimate.
//!
//! [`simstudy`] reproduces coverage and power experiments for E-max curves.

pub mod bootstrap;
pub mod data;
pub mod distance;
pub mod error;
pub mod fit;
pub mod inference;
pub mod model;
pub mod quad;
pub mod rng;
pub mod simstudy;

pub use data::{GroupSample, TwoGroupData};
pub use distance::{DiffCurve, IntervalSet};
pub use error::{Error, Result};
pub use fit::{FitOptions, FittedGroup, FittedPair};
pub use model::{Family, ModelSpec, ParameterVector};

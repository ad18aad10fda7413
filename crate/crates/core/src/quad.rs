//! One-dimensional quadrature and root bracketing.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64 + ?Sized,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64>
where
    F: Fn(f64) -> f64 + ?Sized,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // roundoff floor: tolerances below a few ulps of the partial sums are unattainable
    let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
    if delta.abs() <= 15.0 * tol.max(floor) {
        return Ok(left + right + delta / 15.0);
    }
    if !delta.is_finite() || depth == 0 {
        return Err(Error::Quadrature { a, b });
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Bisection on a sign-changing bracket until its width is below `xtol`.
pub fn bisect<F>(f: &F, mut lo: f64, mut hi: f64, xtol: f64) -> f64
where
    F: Fn(f64) -> f64 + ?Sized,
{
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    if f(hi) == 0.0 {
        return hi;
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 {
            return mid;
        }
        if (fmid < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Equispaced grid of `points` nodes on `[a, b]`, endpoints included.
pub fn grid(a: f64, b: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    let h = (b - a) / (points - 1) as f64;
    (0..points)
        .map(|k| if k == points - 1 { b } else { a + k as f64 * h })
        .collect()
}

/// All sign changes of `f` bracketed on a `points`-node grid, refined to `xtol`.
///
/// Grid nodes where `|f| <= zero_tol` are reported as roots themselves.
/// Tangential zeros between grid nodes are not detected.
pub fn scan_roots<F>(f: &F, a: f64, b: f64, points: usize, xtol: f64, zero_tol: f64) -> Vec<f64>
where
    F: Fn(f64) -> f64 + ?Sized,
{
    let xs = grid(a, b, points);
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut roots = Vec::new();
    for k in 0..xs.len() {
        if fs[k].abs() <= zero_tol {
            roots.push(xs[k]);
            continue;
        }
        if k + 1 < xs.len() && fs[k + 1].abs() > zero_tol && (fs[k] < 0.0) != (fs[k + 1] < 0.0) {
            roots.push(bisect(f, xs[k], xs[k + 1], xtol));
        }
    }
    roots
}

/// Composite Simpson nodes and weights with `panels` (rounded up to even) subintervals.
pub fn simpson_rule(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = (panels.max(2) + 1) & !1;
    let h = (b - a) / panels as f64;
    let nodes = grid(a, b, panels + 1);
    let weights = (0..=panels)
        .map(|k| {
            let c = if k == 0 || k == panels {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-11);
        let v = adaptive_simpson(&|x: f64| 1.0 / (1.0 + x), 0.0, 4.0, 1e-12).unwrap();
        assert!((v - 5f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn simpson_reports_non_finite_integrand() {
        assert!(adaptive_simpson(&|_x: f64| f64::NAN, 0.0, 1.0, 1e-9).is_err());
    }

    #[test]
    fn roots_include_grid_zeros_and_sign_changes() {
        let f = |x: f64| x * (x - 2.0) * (x - 3.3);
        let r = scan_roots(&f, 0.0, 4.0, 512, 1e-12, 0.0);
        assert_eq!(r.len(), 3);
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 2.0).abs() < 1e-11);
        assert!((r[2] - 3.3).abs() < 1e-11);
    }

    #[test]
    fn simpson_rule_is_exact_for_cubics() {
        let (x, w) = simpson_rule(0.0, 4.0, 7);
        assert_eq!(x.len(), 9);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(3)).sum();
        assert!((v - 64.0).abs() < 1e-12);
    }
}

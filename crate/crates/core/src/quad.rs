//! One-dimensional quadrature used throughout the crate.
//!
//! Two families are provided: adaptive Simpson for integrands with unknown
//! structure (kinks, user-supplied rates) and fixed Gauss–Legendre panels for
//! smooth integrands where the caller controls the panel length.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;
const MAX_INTERVALS: usize = 2_000_000;

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
///
/// Non-finite integrand values abort with [`Error::NonFinite`] carrying the
/// offending abscissa.
pub fn adaptive_simpson<F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) || tol <= 0.0 {
        return Err(Error::Quadrature { a, b, reason: "bounds must be finite and tol positive".into() });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { t: x })
        }
    };

    struct Seg {
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    }

    let fa = eval(lo)?;
    let fb = eval(hi)?;
    let fm = eval(0.5 * (lo + hi))?;
    let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    let mut stack = vec![Seg { a: lo, b: hi, fa, fm, fb, whole, tol, depth: 0 }];
    let mut total = 0.0;
    let mut visited = 0usize;

    while let Some(seg) = stack.pop() {
        visited += 1;
        if visited > MAX_INTERVALS {
            return Err(Error::Quadrature { a, b, reason: "interval budget exhausted".into() });
        }
        let m = 0.5 * (seg.a + seg.b);
        let lm = 0.5 * (seg.a + m);
        let rm = 0.5 * (m + seg.b);
        let flm = eval(lm)?;
        let frm = eval(rm)?;
        let left = (m - seg.a) / 6.0 * (seg.fa + 4.0 * flm + seg.fm);
        let right = (seg.b - m) / 6.0 * (seg.fm + 4.0 * frm + seg.fb);
        let delta = left + right - seg.whole;
        if seg.depth >= MAX_DEPTH || delta.abs() <= 15.0 * seg.tol {
            total += left + right + delta / 15.0;
        } else {
            let half = 0.5 * seg.tol;
            stack.push(Seg { a: seg.a, b: m, fa: seg.fa, fm: flm, fb: seg.fm, whole: left, tol: half, depth: seg.depth + 1 });
            stack.push(Seg { a: m, b: seg.b, fa: seg.fm, fm: frm, fb: seg.fb, whole: right, tol: half, depth: seg.depth + 1 });
        }
    }
    Ok(sign * total)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Shared 16-point rule.
    pub fn sixteen() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(16))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over [a, b] with a single panel.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
    }

    /// Composite rule on `panels` equal panels.
    pub fn composite<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64, panels: usize) -> f64 {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + h * k as f64;
                self.integrate(&mut f, lo, lo + h)
            })
            .sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// 16-point Gauss–Legendre on panels no longer than `max_panel`.
pub fn gl_panels<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, max_panel: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let panels = ((b - a).abs() / max_panel).ceil().max(1.0) as usize;
    GaussLegendre::sixteen().composite(f, a, b, panels)
}

/// Trapezoid rule on the nodes `a + k (b-a)/n`, k = 0..=n.
pub fn trapezoid<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n.max(1);
    let h = (b - a) / n as f64;
    let mut acc = 0.5 * (f(a) + f(b));
    for k in 1..n {
        acc += f(a + h * k as f64);
    }
    acc * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomials_and_exponential() {
        let v = adaptive_simpson(|x| x * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        let v = adaptive_simpson(|x| (-x).exp(), 0.0, 30.0, 1e-12).unwrap();
        assert!((v - (1.0 - (-30.0f64).exp())).abs() < 1e-10);
        let v = adaptive_simpson(|x| x, 1.0, 0.0, 1e-12).unwrap();
        assert!((v + 0.5).abs() < 1e-14);
    }

    #[test]
    fn simpson_reports_non_finite() {
        let err = adaptive_simpson(|x| if x > 0.5 { f64::NAN } else { 1.0 }, 0.0, 1.0, 1e-8).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn simpson_handles_kinks() {
        let v = adaptive_simpson(|x: f64| x.abs(), -1.0, 2.0, 1e-10).unwrap();
        assert!((v - 2.5).abs() < 1e-9);
    }

    #[test]
    fn gauss_legendre_weights_and_exactness() {
        for n in [1, 2, 5, 8, 16] {
            let rule = GaussLegendre::new(n);
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 2.0).abs() < 1e-13, "n={n}");
            // exact for degree 2n-1
            let deg = 2 * n - 1;
            let v = rule.integrate(|x| x.powi(deg as i32) + 1.0, 0.0, 1.0);
            assert!((v - (1.0 / (deg as f64 + 1.0) + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn trapezoid_is_second_order() {
        let e1 = (trapezoid(|x| x.sin(), 0.0, 1.0, 10) - (1.0 - 1f64.cos())).abs();
        let e2 = (trapezoid(|x| x.sin(), 0.0, 1.0, 20) - (1.0 - 1f64.cos())).abs();
        assert!((e1 / e2 - 4.0).abs() < 0.05);
    }
}

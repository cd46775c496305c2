//! The dissipation rate α(t) and the functionals built from it.
//!
//! α is defined on [0, ∞) and extended to negative times by reflection,
//! α(t) = α(|t|), so that evolution families can be started before time 0.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, GaussLegendre};

/// Hard cap on the number of panels used when truncating Λ_γ.
pub const LAMBDA_MAX_STEPS: usize = 1_000_000;

pub type RateEvaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum RateKind {
    Constant {
        c: f64,
    },
    /// α(t) = c0 (1 + t)^β.
    Power {
        c0: f64,
        beta: f64,
    },
    Custom(RateEvaluator),
}

impl fmt::Debug for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateKind::Constant { c } => f.debug_struct("Constant").field("c", c).finish(),
            RateKind::Power { c0, beta } => f.debug_struct("Power").field("c0", c0).field("beta", beta).finish(),
            RateKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateFunction {
    kind: RateKind,
    tol: f64,
}

impl RateFunction {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!("constant rate must be positive, got {c}")));
        }
        Ok(Self { kind: RateKind::Constant { c }, tol: 1e-10 })
    }

    pub fn power(c0: f64, beta: f64) -> Result<Self> {
        if !(c0.is_finite() && c0 > 0.0) {
            return Err(Error::InvalidArgument(format!("c0 must be positive, got {c0}")));
        }
        if !(beta.is_finite() && beta > -1.0) {
            return Err(Error::InvalidArgument(format!("power rate needs β > -1, got {beta}")));
        }
        Ok(Self { kind: RateKind::Power { c0, beta }, tol: 1e-10 })
    }

    /// User-supplied α evaluated on [0, ∞); integrals use adaptive Simpson
    /// with absolute tolerance `tol / 10`.
    pub fn custom(f: RateEvaluator, tol: f64) -> Result<Self> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::InvalidArgument(format!("quadrature tolerance must be positive, got {tol}")));
        }
        Ok(Self { kind: RateKind::Custom(f), tol })
    }

    pub fn kind(&self) -> &RateKind {
        &self.kind
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, RateKind::Constant { .. })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let u = t.abs();
        match &self.kind {
            RateKind::Constant { c } => *c,
            RateKind::Power { c0, beta } => c0 * (1.0 + u).powf(*beta),
            RateKind::Custom(f) => f(u),
        }
    }

    fn checked_eval(&self, t: f64) -> Result<f64> {
        let v = self.eval(t);
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(Error::NonFinite { t })
        }
    }

    /// A(s, t) = ∫ₛᵗ α(u) du for s ≤ t.
    pub fn integral(&self, s: f64, t: f64) -> Result<f64> {
        if !(s.is_finite() && t.is_finite()) {
            return Err(Error::NonFinite { t: if s.is_finite() { t } else { s } });
        }
        if s > t {
            return Err(Error::InvalidArgument(format!("alpha_integral needs s <= t, got s={s}, t={t}")));
        }
        if s == t {
            return Ok(0.0);
        }
        match &self.kind {
            RateKind::Constant { c } => Ok(c * (t - s)),
            RateKind::Power { c0, beta } => Ok(power_integral(*c0, *beta, s, t)),
            RateKind::Custom(_) => {
                self.checked_eval(s)?;
                self.checked_eval(t)?;
                let tol = self.tol / 10.0;
                let eval = |u: f64| {
                    let v = self.eval(u);
                    if v > 0.0 {
                        v
                    } else {
                        f64::NAN
                    }
                };
                if s < 0.0 && t > 0.0 {
                    Ok(adaptive_simpson(eval, s, 0.0, tol / 2.0)? + adaptive_simpson(eval, 0.0, t, tol / 2.0)?)
                } else {
                    adaptive_simpson(eval, s, t, tol)
                }
            }
        }
    }

    /// Smallest t ≥ s with A(s, t) = amount.
    pub fn advance(&self, s: f64, amount: f64) -> Result<f64> {
        if amount < 0.0 || !amount.is_finite() {
            return Err(Error::InvalidArgument(format!("advance amount must be finite and >= 0, got {amount}")));
        }
        match &self.kind {
            RateKind::Constant { c } => Ok(s + amount / c),
            RateKind::Power { c0, beta } => Ok(power_antiderivative_inv(*c0, *beta, power_antiderivative(*c0, *beta, s) + amount)),
            RateKind::Custom(_) => self.solve(s, amount, true),
        }
    }

    /// Largest s ≤ t with A(s, t) = amount.
    pub fn retreat(&self, t: f64, amount: f64) -> Result<f64> {
        if amount < 0.0 || !amount.is_finite() {
            return Err(Error::InvalidArgument(format!("retreat amount must be finite and >= 0, got {amount}")));
        }
        match &self.kind {
            RateKind::Constant { c } => Ok(t - amount / c),
            RateKind::Power { c0, beta } => Ok(power_antiderivative_inv(*c0, *beta, power_antiderivative(*c0, *beta, t) - amount)),
            RateKind::Custom(_) => self.solve(t, amount, false),
        }
    }

    fn solve(&self, anchor: f64, amount: f64, forward: bool) -> Result<f64> {
        if amount == 0.0 {
            return Ok(anchor);
        }
        let area = |d: f64| -> Result<f64> {
            if forward {
                self.integral(anchor, anchor + d)
            } else {
                self.integral(anchor - d, anchor)
            }
        };
        let mut hi = 1.0 / self.checked_eval(anchor)?.max(1e-12) * amount;
        let mut lo = 0.0;
        let mut doublings = 0;
        while area(hi)? < amount {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > 200 || !hi.is_finite() {
                return Err(Error::Numerical(format!("∫α never reaches {amount} starting from {anchor}; α is not integrable to infinity")));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if area(mid)? < amount {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * hi.max(1.0) {
                break;
            }
        }
        let d = 0.5 * (lo + hi);
        Ok(if forward { anchor + d } else { anchor - d })
    }

    /// Upper bound of α on [a, b].
    pub fn max_on(&self, a: f64, b: f64) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        match &self.kind {
            RateKind::Constant { c } => *c,
            RateKind::Power { .. } => {
                let mut m = self.eval(a).max(self.eval(b));
                if a < 0.0 && b > 0.0 {
                    m = m.max(self.eval(0.0));
                }
                m
            }
            RateKind::Custom(_) => (0..=256).map(|k| self.eval(a + (b - a) * k as f64 / 256.0)).fold(0.0, f64::max),
        }
    }

    /// Λ_γ(t) = ∫ₜ^∞ exp(−γ A(t, r)) dr with truncation error at most `tol`.
    ///
    /// Panels have length ½/(γα) so the integrand drops by at most e^{-1/2}
    /// per panel; integration stops once γA(t, r) ≥ −ln(tol γ α(r)).
    pub fn lambda_gamma(&self, gamma: f64, t: f64, tol: f64) -> Result<f64> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("γ must lie in (0, 1], got {gamma}")));
        }
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
        }
        if let RateKind::Constant { c } = self.kind {
            return Ok(1.0 / (gamma * c));
        }
        let rule = GaussLegendre::sixteen();
        let mut r = t;
        let mut exponent = 0.0;
        let mut acc = 0.0;
        for _ in 0..LAMBDA_MAX_STEPS {
            let a_here = self.checked_eval(r)?;
            let mut h = 0.5 / (gamma * a_here);
            let a_ahead = self.checked_eval(r + h)?;
            if a_ahead > a_here {
                h = 0.5 / (gamma * a_ahead);
            }
            if !h.is_finite() || r + h == r {
                break;
            }
            let base = exponent;
            let panel_start = r;
            let mut failure = None;
            let panel = rule.integrate(
                |u| match self.integral(panel_start, u) {
                    Ok(a) => (-(base + gamma * a)).exp(),
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                },
                r,
                r + h,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            acc += panel;
            exponent += gamma * self.integral(r, r + h)?;
            r += h;
            let a_end = self.checked_eval(r)?;
            if exponent >= -(tol * gamma * a_end).ln() {
                return Ok(acc);
            }
        }
        Err(Error::NonIntegrable { t, gamma, reason: format!("exponent γ∫α reached only {exponent:.3} after {LAMBDA_MAX_STEPS} panels") })
    }

    /// Λ(t) = Λ₁(t).
    pub fn lambda(&self, t: f64, tol: f64) -> Result<f64> {
        self.lambda_gamma(1.0, t, tol)
    }
}

/// Free-function form of [`RateFunction::integral`].
pub fn alpha_integral(alpha: &RateFunction, s: f64, t: f64) -> Result<f64> {
    alpha.integral(s, t)
}

/// Free-function form of [`RateFunction::lambda_gamma`].
pub fn lambda_gamma(alpha: &RateFunction, gamma: f64, t: f64, tol: f64) -> Result<f64> {
    alpha.lambda_gamma(gamma, t, tol)
}

// P(u) = ∫₀ᵘ c0 (1+v)^β dv for u ≥ 0, extended oddly so that F(t) − F(s) = A(s, t).
fn power_antiderivative(c0: f64, beta: f64, t: f64) -> f64 {
    let p = beta + 1.0;
    let u = t.abs();
    let v = c0 / p * (p * u.ln_1p()).exp_m1();
    v.copysign(t)
}

fn power_antiderivative_inv(c0: f64, beta: f64, v: f64) -> f64 {
    let p = beta + 1.0;
    let w = v.abs();
    let u = ((w * p / c0).ln_1p() / p).exp_m1();
    u.copysign(v)
}

fn power_integral(c0: f64, beta: f64, s: f64, t: f64) -> f64 {
    if s >= 0.0 {
        // expm1 form keeps short intervals at large times accurate.
        let p = beta + 1.0;
        c0 / p * (p * s.ln_1p()).exp() * (p * ((t - s) / (1.0 + s)).ln_1p()).exp_m1()
    } else if t <= 0.0 {
        power_integral(c0, beta, -t, -s)
    } else {
        power_antiderivative(c0, beta, t) - power_antiderivative(c0, beta, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson_fine(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 1 { n + 1 } else { n };
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for k in 1..n {
            acc += f(a + h * k as f64) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn integral_closed_forms() {
        let c = RateFunction::constant(2.0).unwrap();
        assert_eq!(c.integral(0.0, 3.0).unwrap(), 6.0);
        let p = RateFunction::power(1.0, 1.0).unwrap();
        assert!((p.integral(0.0, 1.0).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn integral_power_negative_beta_matches_quadrature() {
        let p = RateFunction::power(1.0, -0.5).unwrap();
        let exact = p.integral(0.0, 3.0).unwrap();
        let oracle = adaptive_simpson(|u| (1.0 + u).powf(-0.5), 0.0, 3.0, 1e-13).unwrap();
        assert!((exact - 2.0).abs() < 1e-13);
        assert!((exact - oracle).abs() < 1e-10);
    }

    #[test]
    fn integral_rejects_reversed_bounds() {
        let c = RateFunction::constant(1.0).unwrap();
        assert!(c.integral(2.0, 1.0).is_err());
    }

    #[test]
    fn reflection_across_zero() {
        let p = RateFunction::power(1.5, 0.7).unwrap();
        let whole = p.integral(-2.0, 3.0).unwrap();
        let split = p.integral(0.0, 2.0).unwrap() + p.integral(0.0, 3.0).unwrap();
        assert!((whole - split).abs() < 1e-12);
        assert!((p.integral(-3.0, -1.0).unwrap() - p.integral(1.0, 3.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn custom_rate_matches_power_and_flags_non_finite() {
        let f: RateEvaluator = Arc::new(|t| 2.0 * (1.0 + t).powf(0.5));
        let custom = RateFunction::custom(f, 1e-9).unwrap();
        let power = RateFunction::power(2.0, 0.5).unwrap();
        let a = custom.integral(0.3, 4.0).unwrap();
        let b = power.integral(0.3, 4.0).unwrap();
        assert!((a - b).abs() < 1e-8);

        let bad: RateEvaluator = Arc::new(|t| if t > 1.0 { f64::INFINITY } else { 1.0 });
        let bad = RateFunction::custom(bad, 1e-8).unwrap();
        match bad.integral(0.0, 2.0) {
            Err(Error::NonFinite { t }) => assert!(t > 1.0),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn advance_and_retreat_invert_the_integral() {
        let rates = [
            RateFunction::constant(0.7).unwrap(),
            RateFunction::power(1.0, 0.5).unwrap(),
            RateFunction::power(2.0, -0.5).unwrap(),
            RateFunction::custom(Arc::new(|t| 1.0 + 0.5 * t.sin()), 1e-9).unwrap(),
        ];
        for rate in &rates {
            for &(s, amount) in &[(0.0, 3.0), (-2.0, 4.0), (5.0, 0.25)] {
                let t = rate.advance(s, amount).unwrap();
                assert!((rate.integral(s, t).unwrap() - amount).abs() < 1e-7, "{rate:?}");
                let back = rate.retreat(t, amount).unwrap();
                assert!((back - s).abs() < 1e-6, "{rate:?}: {back} vs {s}");
            }
        }
    }

    #[test]
    fn lambda_constant_and_unit_power() {
        let c = RateFunction::constant(3.0).unwrap();
        assert!((c.lambda_gamma(0.5, 7.0, 1e-8).unwrap() - 1.0 / 1.5).abs() < 1e-15);
        let p = RateFunction::power(1.0, 0.0).unwrap();
        assert!((p.lambda_gamma(0.5, 0.0, 1e-10).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn lambda_linear_rate_against_fine_grid() {
        // ∫₀^∞ exp(-(r + r²/2)) dr on a grid ten times finer than needed.
        let oracle = simpson_fine(|r| (-(r + 0.5 * r * r)).exp(), 0.0, 12.0, 240_000);
        let p = RateFunction::power(1.0, 1.0).unwrap();
        let v = p.lambda_gamma(1.0, 0.0, 1e-10).unwrap();
        assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
    }

    #[test]
    fn lambda_detects_non_integrable_rate() {
        // ∫α < ∞, so the exponent saturates and Λ diverges.
        let f: RateEvaluator = Arc::new(|t| (1.0 + t).powi(-2));
        let r = RateFunction::custom(f, 1e-8).unwrap();
        assert!(matches!(r.lambda_gamma(1.0, 0.0, 1e-6), Err(Error::NonIntegrable { .. }) | Err(Error::NonFinite { .. })));
    }

    #[test]
    fn power_rejects_beta_below_minus_one() {
        assert!(RateFunction::power(1.0, -1.0).is_err());
        assert!(RateFunction::constant(0.0).is_err());
    }
}

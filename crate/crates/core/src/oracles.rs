//! Closed-form references for the two linear benchmarks.
//!
//! Example 1: dY = −ε⁻¹α(t/ε)Y dt + [ε⁻¹α(t/ε)]^{1/2} dW², dX = Y dt + dW¹,
//! averaged X̄ = x + W¹.
//!
//! Example 2: dY = ε⁻¹[φ(t/ε) − Y] dt + ε^{-1/2} dW², dX = Y dt + dW¹,
//! averaged drift ψ(t/ε) (general), its period mean (periodic) or 0
//! (convergent).

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::Forcing;
use crate::quad::adaptive_simpson;
use crate::rate::RateFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Example1Params {
    pub c0: f64,
    pub beta: f64,
    pub x: f64,
    pub y: f64,
}

impl Example1Params {
    pub fn new(c0: f64, beta: f64, x: f64, y: f64) -> Result<Self> {
        RateFunction::power(c0, beta)?;
        Ok(Self { c0, beta, x, y })
    }

    pub fn alpha(&self) -> RateFunction {
        RateFunction::power(self.c0, self.beta).expect("validated on construction")
    }
}

#[derive(Debug, Clone)]
pub struct Example2Params {
    pub forcing: Forcing,
    pub x: f64,
    pub y: f64,
}

/// Which averaged equation the slow component is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ex2Variant {
    /// drift ψ(t/ε)
    General,
    /// drift (1/τ)∫₀^τ ψ
    Periodic,
    /// drift 0 (φ → 0)
    Convergent,
}

/// The two terms of E|X^ε_t − X̄_t|² / ε² for Example 1: the squared mean
/// integral ∫₀^L e^{−A(0,s)} ds and the double integral
/// ∫₀^L ∫_r^L e^{−A(r,s)} ds dr, with L = t/ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ex1Integrals {
    pub mean_integral: f64,
    pub double_integral: f64,
}

/// Largest relative change of α across one step of the exponential integrator.
const EX1_REL_STEP: f64 = 1e-3;

/// Integrates Q' = 1 − αQ, Q(0) = 0 (Q(s) = ∫₀ˢ e^{−A(r,s)} dr) with an
/// exponential integrator whose steps keep α nearly constant, accumulating
/// ∫Q and ∫e^{−A(0,·)} along the way.
pub fn ex1_integrals(alpha: &RateFunction, horizon: f64) -> Result<Ex1Integrals> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    let beta = match alpha.kind() {
        crate::rate::RateKind::Constant { .. } => 0.0,
        crate::rate::RateKind::Power { beta, .. } => *beta,
        crate::rate::RateKind::Custom(_) => return Err(Error::InvalidArgument("Example 1 oracle needs a constant or power rate".into())),
    };
    let mut s = 0.0;
    let mut q = 0.0;
    let mut a0: f64 = 0.0; // A(0, s)
    let mut mean_integral = 0.0;
    let mut double_integral = 0.0;
    while s < horizon {
        let h = if beta == 0.0 { horizon - s } else { (EX1_REL_STEP * (1.0 + s) / beta.abs()).min(horizon - s) };
        let s1 = s + h;
        let k = alpha.integral(s, s1)?;
        let abar = k / h;
        let one_minus = -(-k).exp_m1();
        // Exact for α frozen at its step mean.
        let int_exp = one_minus / abar; // ∫ e^{−ā(s1−r)} dr over the step
        double_integral += q * int_exp + (h - int_exp) / abar;
        mean_integral += (-a0).exp() * int_exp;
        q = (-k).exp() * q + int_exp;
        a0 += k;
        s = s1;
    }
    Ok(Ex1Integrals { mean_integral, double_integral })
}

/// E|X^ε_t − X̄_t|² for Example 1.
pub fn ex1_exact_strong_error(p: &Example1Params, eps: f64, t: f64) -> Result<f64> {
    check_eps_t(eps, t)?;
    let ints = ex1_integrals(&p.alpha(), t / eps)?;
    Ok(eps * eps * ((p.y * p.y - 0.5) * ints.mean_integral.powi(2) + ints.double_integral))
}

/// E Y^ε_t = e^{−A(0, t/ε)} y.
pub fn ex1_mean_y(p: &Example1Params, eps: f64, t: f64) -> Result<f64> {
    Ok((-p.alpha().integral(0.0, t / eps)?).exp() * p.y)
}

/// Exponent of sup_t E|X^ε_t − X̄_t|² in ε, and whether a log(1/ε) factor
/// accompanies it.
pub fn ex1_rate_exponent(beta: f64) -> Result<(f64, bool)> {
    if !(beta > -1.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("β must exceed -1, got {beta}")));
    }
    Ok(if beta < 1.0 {
        (1.0 + beta, false)
    } else if beta == 1.0 {
        (2.0, true)
    } else {
        (2.0, false)
    })
}

/// ψ(t) = ∫_{−∞}^t e^{−(t−r)} φ(r) dr, with φ(r) = φ(|r|) for the
/// non-periodic kinds.
pub fn ex2_psi(p: &Example2Params, t: f64) -> Result<f64> {
    psi(&p.forcing, t)
}

pub fn psi(forcing: &Forcing, t: f64) -> Result<f64> {
    match forcing {
        Forcing::Zero => Ok(0.0),
        Forcing::Constant(k) => Ok(*k),
        Forcing::Sinusoid { mean, amp, omega } => {
            let w = *omega;
            Ok(mean + amp * ((w * t).sin() - w * (w * t).cos()) / (1.0 + w * w))
        }
        _ => {
            let bound = forcing_bound(forcing, t);
            let cutoff = 40.0 + (1.0 + bound).ln();
            let f = |u: f64| (-u).exp() * forcing.eval((t - u).abs());
            if t > 0.0 && t < cutoff {
                Ok(adaptive_simpson(f, 0.0, t, 1e-14)? + adaptive_simpson(f, t, cutoff, 1e-14)?)
            } else {
                adaptive_simpson(f, 0.0, cutoff, 1e-14)
            }
        }
    }
}

/// ψ on [0, ∞) for use inside simulation loops: closed forms pass through,
/// other forcings are tabulated lazily on unit chunks (64 nodes each) and
/// interpolated by cubic Hermite with ψ' = φ − ψ.
#[derive(Clone)]
pub struct PsiTable {
    forcing: Forcing,
    chunks: Arc<Mutex<HashMap<i64, Arc<Vec<f64>>>>>,
}

const PSI_NODES: usize = 64;

impl PsiTable {
    pub fn new(forcing: Forcing) -> Self {
        Self { forcing, chunks: Arc::new(Mutex::new(HashMap::new())) }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if matches!(self.forcing, Forcing::Zero | Forcing::Constant(_) | Forcing::Sinusoid { .. }) {
            return psi(&self.forcing, t);
        }
        if !t.is_finite() {
            return Err(Error::NonFinite { t });
        }
        let chunk = t.floor() as i64;
        let table = self.chunk(chunk)?;
        let h = 1.0 / PSI_NODES as f64;
        let u = (t - chunk as f64) / h;
        let i = (u.floor() as usize).min(PSI_NODES - 1);
        let w = u - i as f64;
        let (p0, p1) = (table[i], table[i + 1]);
        let t0 = chunk as f64 + i as f64 * h;
        let d0 = self.forcing.eval(t0) - p0;
        let d1 = self.forcing.eval(t0 + h) - p1;
        let (w2, w3) = (w * w, w * w * w);
        Ok((2.0 * w3 - 3.0 * w2 + 1.0) * p0 + (w3 - 2.0 * w2 + w) * h * d0 + (-2.0 * w3 + 3.0 * w2) * p1 + (w3 - w2) * h * d1)
    }

    fn chunk(&self, k: i64) -> Result<Arc<Vec<f64>>> {
        if let Some(c) = self.chunks.lock().expect("psi table poisoned").get(&k) {
            return Ok(c.clone());
        }
        let values = (0..=PSI_NODES).map(|j| psi(&self.forcing, k as f64 + j as f64 / PSI_NODES as f64)).collect::<Result<Vec<_>>>()?;
        let values = Arc::new(values);
        self.chunks.lock().expect("psi table poisoned").entry(k).or_insert(values.clone());
        Ok(values)
    }
}

fn forcing_bound(forcing: &Forcing, t: f64) -> f64 {
    forcing.sup_abs().unwrap_or_else(|| (0..=64).map(|k| forcing.eval(t - k as f64).abs()).fold(0.0, f64::max))
}

/// E Y^ε_t = e^{−L} y + ∫₀^L e^{−(L−u)} φ(u) du, L = t/ε.
pub fn ex2_mean_y(p: &Example2Params, eps: f64, t: f64) -> Result<f64> {
    check_eps_t(eps, t)?;
    let l = t / eps;
    let conv = match &p.forcing {
        // ψ(L) − e^{−L} ψ(0) for the closed-form kinds
        Forcing::Zero | Forcing::Constant(_) | Forcing::Sinusoid { .. } => psi(&p.forcing, l)? - (-l).exp() * psi(&p.forcing, 0.0)?,
        f => {
            let g = |u: f64| (-(l - u)).exp() * f.eval(u);
            let lo = (l - 50.0).max(0.0);
            adaptive_simpson(g, lo, l, 1e-13)?
        }
    };
    Ok((-l).exp() * p.y + conv)
}

/// Drift of the averaged slow equation for the chosen variant, on the fast clock.
fn ex2_averaged_drift(p: &Example2Params, variant: Ex2Variant) -> Result<Box<dyn Fn(f64) -> Result<f64> + '_>> {
    Ok(match variant {
        Ex2Variant::General => Box::new(move |s| psi(&p.forcing, s)),
        Ex2Variant::Convergent => Box::new(|_| Ok(0.0)),
        Ex2Variant::Periodic => {
            let b = ex2_periodic_drift(p)?;
            Box::new(move |_| Ok(b))
        }
    })
}

/// b = (1/τ)∫₀^τ ψ(t) dt, which equals the period mean of φ.
pub fn ex2_periodic_drift(p: &Example2Params) -> Result<f64> {
    match &p.forcing {
        Forcing::Sinusoid { mean, .. } => Ok(*mean),
        Forcing::Constant(k) => Ok(*k),
        Forcing::Zero => Ok(0.0),
        _ => Err(Error::Config("periodic averaging needs a periodic forcing".into())),
    }
}

/// ∫₀^L (E Y(s) − d(s)) ds on the fast clock, where d is the averaged drift.
fn ex2_mean_integral(p: &Example2Params, variant: Ex2Variant, l: f64) -> Result<f64> {
    let c = psi(&p.forcing, 0.0)?;
    let transient = (p.y - c) * -(-l).exp_m1();
    let residual = match (&p.forcing, variant) {
        (_, Ex2Variant::General) => 0.0,
        (Forcing::Sinusoid { amp, omega, .. }, Ex2Variant::Periodic) => {
            let w = *omega;
            amp / (1.0 + w * w) * ((1.0 - (w * l).cos()) / w - (w * l).sin())
        }
        (Forcing::Constant(_) | Forcing::Zero, Ex2Variant::Periodic) => 0.0,
        _ => {
            let d = ex2_averaged_drift(p, variant)?;
            let mut failure = None;
            let mut f = |s: f64| match (psi(&p.forcing, s), d(s)) {
                (Ok(a), Ok(b)) => a - b,
                (Err(e), _) | (_, Err(e)) => {
                    failure.get_or_insert(e);
                    0.0
                }
            };
            let v = crate::quad::gl_panels(&mut f, 0.0, l, 0.5);
            if let Some(e) = failure {
                return Err(e);
            }
            v
        }
    };
    Ok(transient + residual)
}

/// |E X^ε_t − E X̄^ε_t| for Example 2 against the general averaged equation,
/// ε|y − c|(1 − e^{−t/ε}) with c = ψ(0).
pub fn ex2_exact_mean_gap(p: &Example2Params, eps: f64, t: f64) -> Result<f64> {
    ex2_mean_gap(p, Ex2Variant::General, eps, t)
}

pub fn ex2_mean_gap(p: &Example2Params, variant: Ex2Variant, eps: f64, t: f64) -> Result<f64> {
    check_eps_t(eps, t)?;
    Ok(eps * ex2_mean_integral(p, variant, t / eps)?.abs())
}

/// E|X^ε_t − X̄^ε_t|² for Example 2 against the general averaged equation:
/// ε²[((y−c)² − ½)(1 − e^{−L})² + L − 1 + e^{−L}].
pub fn ex2_exact_strong_error(p: &Example2Params, eps: f64, t: f64) -> Result<f64> {
    ex2_strong_error(p, Ex2Variant::General, eps, t)
}

pub fn ex2_strong_error(p: &Example2Params, variant: Ex2Variant, eps: f64, t: f64) -> Result<f64> {
    check_eps_t(eps, t)?;
    let l = t / eps;
    let decay = -(-l).exp_m1();
    let mean = ex2_mean_integral(p, variant, l)?;
    // L − 1 + e^{−L}, written to stay accurate for small L
    let ramp = l + (-l).exp_m1();
    Ok(eps * eps * (mean * mean + ramp - 0.5 * decay * decay))
}

fn check_eps_t(eps: f64, t: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("ε must be positive, got {eps}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("t must be finite and >= 0, got {t}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_exponent_table() {
        assert_eq!(ex1_rate_exponent(0.0).unwrap(), (1.0, false));
        assert_eq!(ex1_rate_exponent(-0.5).unwrap(), (0.5, false));
        assert_eq!(ex1_rate_exponent(1.0).unwrap(), (2.0, true));
        assert_eq!(ex1_rate_exponent(2.0).unwrap(), (2.0, false));
        assert!(ex1_rate_exponent(-1.0).is_err());
    }

    #[test]
    fn constant_rate_integrals_are_closed_form() {
        let alpha = RateFunction::constant(1.0).unwrap();
        let l = 7.5f64;
        let ints = ex1_integrals(&alpha, l).unwrap();
        assert!((ints.mean_integral - (1.0 - (-l).exp())).abs() < 1e-14);
        assert!((ints.double_integral - (l - 1.0 + (-l).exp())).abs() < 1e-12);
    }

    #[test]
    fn psi_of_sine_is_the_exponential_convolution() {
        let forcing = Forcing::Sinusoid { mean: 0.0, amp: 1.0, omega: 1.7 };
        let t = 0.9f64;
        let direct = adaptive_simpson(|u| (-u).exp() * (1.7 * (t - u)).sin(), 0.0, 45.0, 1e-13).unwrap();
        assert!((psi(&forcing, t).unwrap() - direct).abs() < 1e-11);
    }

    #[test]
    fn psi_table_interpolates_decaying_forcing() {
        let forcing = Forcing::Decaying { amp: 1.0, p: 1.0 };
        let table = PsiTable::new(forcing.clone());
        for t in [0.0, 0.013, 0.5, 1.0, 3.77, 12.25] {
            assert!((table.eval(t).unwrap() - psi(&forcing, t).unwrap()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn ex2_gap_constant_forcing_starting_at_level() {
        let p = Example2Params { forcing: Forcing::Constant(0.7), x: 0.0, y: 0.7 };
        assert!(ex2_exact_mean_gap(&p, 0.1, 1.0).unwrap().abs() < 1e-15);
        let p = Example2Params { forcing: Forcing::Zero, x: 0.0, y: 1.0 };
        let gap = ex2_exact_mean_gap(&p, 0.1, 1.0).unwrap();
        assert!((gap - 0.1 * (1.0 - (-10.0f64).exp())).abs() < 1e-15);
    }
}

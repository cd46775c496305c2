use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar time forcing φ(t) entering linear fast dynamics.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Constant(f64),
    /// mean + amp · sin(ω t)
    Sinusoid {
        mean: f64,
        amp: f64,
        omega: f64,
    },
    /// amp · (1 + |t|)^(−p)
    Decaying {
        amp: f64,
        p: f64,
    },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => f.write_str("Zero"),
            Forcing::Constant(k) => write!(f, "Constant({k})"),
            Forcing::Sinusoid { mean, amp, omega } => {
                write!(f, "Sinusoid {{ mean: {mean}, amp: {amp}, omega: {omega} }}")
            }
            Forcing::Decaying { amp, p } => write!(f, "Decaying {{ amp: {amp}, p: {p} }}"),
            Forcing::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Forcing {
    /// Sinusoid with period τ.
    pub fn periodic(mean: f64, amp: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("period must be positive, got {tau}")));
        }
        Ok(Forcing::Sinusoid { mean, amp, omega: 2.0 * std::f64::consts::PI / tau })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::Constant(k) => *k,
            Forcing::Sinusoid { mean, amp, omega } => mean + amp * (omega * t).sin(),
            Forcing::Decaying { amp, p } => amp * (1.0 + t.abs()).powf(-p),
            Forcing::Custom(f) => f(t),
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            Forcing::Sinusoid { omega, .. } if *omega != 0.0 => Some(2.0 * std::f64::consts::PI / omega.abs()),
            _ => None,
        }
    }

    /// sup |φ| when it is known in closed form.
    pub fn sup_abs(&self) -> Option<f64> {
        match self {
            Forcing::Zero => Some(0.0),
            Forcing::Constant(k) => Some(k.abs()),
            Forcing::Sinusoid { mean, amp, .. } => Some(mean.abs() + amp.abs()),
            Forcing::Decaying { amp, p } if *p >= 0.0 => Some(amp.abs()),
            _ => None,
        }
    }
}

/// Serializable description of the built-in forcing kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ForcingSpec {
    Zero,
    Constant { level: f64 },
    Periodic { mean: f64, amp: f64, tau: f64 },
    Decaying { amp: f64, p: f64 },
}

impl ForcingSpec {
    pub fn build(&self) -> Result<Forcing> {
        Ok(match *self {
            ForcingSpec::Zero => Forcing::Zero,
            ForcingSpec::Constant { level } => Forcing::Constant(level),
            ForcingSpec::Periodic { mean, amp, tau } => Forcing::periodic(mean, amp, tau)?,
            ForcingSpec::Decaying { amp, p } => {
                if p < 0.0 {
                    return Err(Error::InvalidArgument(format!("decay exponent must be >= 0, got {p}")));
                }
                Forcing::Decaying { amp, p }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_sinusoid_repeats() {
        let f = Forcing::periodic(1.0, 1.0, 3.0).unwrap();
        for t in [0.0, 0.4, 2.9, -1.3] {
            assert!((f.eval(t) - f.eval(t + 3.0)).abs() < 1e-12);
        }
        assert!((f.period().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn decaying_is_reflected() {
        let f = Forcing::Decaying { amp: 2.0, p: 1.0 };
        assert_eq!(f.eval(-3.0), f.eval(3.0));
        assert_eq!(f.eval(0.0), 2.0);
    }
}

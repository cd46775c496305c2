//! Simulation and averaging of time-inhomogeneous slow-fast SDEs
//!
//! ```text
//! dX = b(X, Y) dt + σ(X, Y) dW¹
//! dY = ε⁻¹ f(t/ε, X, Y) dt + ε^{-1/2} g(t/ε, X, Y) dW²
//! ```
//!
//! with a fast dissipation rate α(t) that may grow or decay in time.
//! The crate builds the averaged slow equations (general, convergent and
//! periodic), estimates the evolution system of measures μ^x_t of the frozen
//! fast equation, evaluates nonautonomous Poisson solutions by their
//! probabilistic representation and measures strong/weak averaging errors
//! over an ε grid.
//!
//! Randomness is drawn from per-path ChaCha8 streams (see [`rng`]), so every
//! result is reproducible and independent of thread scheduling.

pub mod averaging;
pub mod error;
pub mod export;
pub mod forcing;
pub mod integrate;
pub mod measures;
pub mod model;
pub mod oracles;
pub mod poisson;
pub mod quad;
pub mod rate;
pub mod registry;
pub mod rng;
pub mod stats;

pub use averaging::{build_averaged, fit_rate, strong_error, theoretical_bound, weak_error, AveragedModel, RateEstimate, RateExperiment, Variant};
pub use error::{Error, Result};
pub use integrate::{simulate_averaged, simulate_coupled, simulate_frozen, PathEnsemble, TimeGrid};
pub use measures::{estimate_mu, EmpiricalMeasure, MeasureSpec};
pub use model::{Dims, FrozenModel, SlowFastModel};
pub use rate::{alpha_integral, lambda_gamma, RateFunction};
pub use registry::{ModelSpec, RegisteredModel};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

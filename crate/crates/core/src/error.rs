use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite evaluation at t = {t}")]
    NonFinite { t: f64 },

    #[error("Λ_γ(t) is not integrable from t = {t} with γ = {gamma}: {reason}")]
    NonIntegrable { t: f64, gamma: f64, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("explicit fast step is unstable (factor {factor:.3} > 0.5); use at least {min_substeps} substeps")]
    Unstable { factor: f64, min_substeps: usize },

    #[error("path {path} blew up at t = {t}")]
    BlowUp { path: usize, t: f64 },

    #[error("burn-in {needed:.3} exceeds the configured cap {cap:.3}")]
    InfeasibleBurnIn { needed: f64, cap: f64 },

    #[error("tail bound not met before the horizon cap {cap} (remaining bound {remaining:.3e})")]
    Truncation { cap: f64, remaining: f64 },

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("quadrature failed on [{a}, {b}]: {reason}")]
    Quadrature { a: f64, b: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

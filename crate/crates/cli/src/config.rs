//! TOML experiment configuration.
//!
//! ```toml
//! id = "ex1-strong"
//! seed = 7
//!
//! [model]
//! id = "example1"
//! c0 = 1.0
//! beta = 0.5
//!
//! [experiment]
//! kind = "strong-rate"
//!
//! [experiment.grid]
//! epsilons = { from = 4, to = 8 }
//! n_paths = 2000
//! x0 = [0.0]
//! y0 = [1.0]
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slowfast::averaging::{EstimationSpec, TestFunction, WeakMode};
use slowfast::integrate::NoiseMode;
use slowfast::oracles::Ex2Variant;
use slowfast::registry::ModelSpec;
use slowfast::{Error, Result, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Prefix of every output file.
    pub id: String,
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub model: ModelSpec,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Validate,
    Simulate,
    Measure,
    Poisson,
    StrongRate,
    WeakRate,
    OracleCompare,
    LemmaChecks,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Validate => "validate",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Measure => "measure",
            ExperimentKind::Poisson => "poisson",
            ExperimentKind::StrongRate => "strong-rate",
            ExperimentKind::WeakRate => "weak-rate",
            ExperimentKind::OracleCompare => "oracle-compare",
            ExperimentKind::LemmaChecks => "lemma-checks",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Random-sample check of the dissipativity and growth conditions.
    Validate {
        #[serde(default = "defaults::sample_count")]
        count: usize,
        #[serde(default = "defaults::state_box")]
        x_box: (f64, f64),
        #[serde(default = "defaults::state_box")]
        y_box: (f64, f64),
        #[serde(default = "defaults::time_box")]
        time_box: (f64, f64),
    },
    /// Coupled paths, optionally with the averaged paths on the same noise.
    Simulate {
        eps: f64,
        #[serde(default = "defaults::one")]
        t_end: f64,
        #[serde(default = "defaults::n_steps")]
        n_steps: usize,
        /// Fast micro-steps per slow step; derived from `fast_step` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        substeps: Option<usize>,
        #[serde(default = "defaults::fast_step")]
        fast_step: f64,
        n_paths: usize,
        x0: Vec<f64>,
        y0: Vec<f64>,
        #[serde(default)]
        antithetic: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        averaging: Option<AveragingConfig>,
        /// Also write the slow ensemble in the columnar binary format.
        #[serde(default)]
        binary: bool,
    },
    /// Samples of μ^x_t at the given times.
    Measure {
        x: Vec<f64>,
        times: Vec<f64>,
        #[serde(default = "defaults::n_samples")]
        n_samples: usize,
        #[serde(default = "defaults::measure_tol")]
        tol: f64,
        #[serde(default = "defaults::measure_step")]
        step: f64,
        #[serde(default = "defaults::burn_in_cap")]
        burn_in_cap: f64,
        #[serde(default = "defaults::yes")]
        write_samples: bool,
    },
    /// Φ and the residual of its defining equation at random points.
    Poisson {
        #[serde(default)]
        source: SourceConfig,
        #[serde(default = "defaults::n_points")]
        n_points: usize,
        #[serde(default = "defaults::s_range")]
        s_range: (f64, f64),
        #[serde(default = "defaults::state_box")]
        x_box: (f64, f64),
        #[serde(default = "defaults::y_box")]
        y_box: (f64, f64),
        #[serde(default = "defaults::inner_paths")]
        inner_paths: usize,
        #[serde(default = "defaults::poisson_tol")]
        tol: f64,
        #[serde(default = "defaults::measure_step")]
        inner_step: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        averaging: Option<AveragingConfig>,
    },
    StrongRate {
        grid: RateGrid,
        #[serde(default)]
        averaging: AveragingConfig,
        #[serde(default = "defaults::noise")]
        noise: NoiseMode,
        #[serde(default)]
        rule: RateRule,
    },
    WeakRate {
        grid: RateGrid,
        #[serde(default)]
        averaging: AveragingConfig,
        tests: Vec<TestFunction>,
        #[serde(default = "defaults::weak_mode")]
        mode: WeakMode,
        #[serde(default)]
        rule: RateRule,
    },
    /// Exact errors of the closed-form examples and, optionally, a
    /// Monte-Carlo run on the same ε grid.
    OracleCompare {
        #[serde(default = "defaults::oracle_epsilons")]
        epsilons: EpsGrid,
        #[serde(default = "defaults::one")]
        t: f64,
        #[serde(default)]
        x: f64,
        #[serde(default = "defaults::oracle_y")]
        y: f64,
        #[serde(default = "defaults::ex2_variant")]
        variant: Ex2Variant,
        /// Allowed distance of the fitted slope from the declared exponent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerance: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        simulate: Option<RateGrid>,
    },
    LemmaChecks {
        #[serde(default = "defaults::gamma")]
        gamma: f64,
        #[serde(default = "defaults::one")]
        t_end: f64,
        #[serde(default = "defaults::lemma_epsilons")]
        epsilons: EpsGrid,
        /// Size of the (a, T) grid of the period-average check.
        #[serde(default = "defaults::lemma_grid")]
        grid_size: usize,
        /// Times at which the decay convolution is tabulated.
        #[serde(default = "defaults::convolution_times")]
        convolution_times: Vec<f64>,
    },
}

impl Experiment {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Experiment::Validate { .. } => ExperimentKind::Validate,
            Experiment::Simulate { .. } => ExperimentKind::Simulate,
            Experiment::Measure { .. } => ExperimentKind::Measure,
            Experiment::Poisson { .. } => ExperimentKind::Poisson,
            Experiment::StrongRate { .. } => ExperimentKind::StrongRate,
            Experiment::WeakRate { .. } => ExperimentKind::WeakRate,
            Experiment::OracleCompare { .. } => ExperimentKind::OracleCompare,
            Experiment::LemmaChecks { .. } => ExperimentKind::LemmaChecks,
        }
    }
}

/// Either an explicit strictly decreasing list or `{ from = a, to = b }`
/// for 2^-a, ..., 2^-b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsGrid {
    List(Vec<f64>),
    PowersOfTwo { from: i32, to: i32 },
}

impl EpsGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            EpsGrid::List(v) => v.clone(),
            EpsGrid::PowersOfTwo { from, to } => (*from..=*to).map(|k| 2f64.powi(-k)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateGrid {
    pub epsilons: EpsGrid,
    #[serde(default = "defaults::one")]
    pub t_end: f64,
    #[serde(default = "defaults::n_steps")]
    pub n_steps: usize,
    #[serde(default = "defaults::fast_step")]
    pub fast_step: f64,
    #[serde(default = "defaults::rate_resolution")]
    pub rate_resolution: f64,
    pub n_paths: usize,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    #[serde(default)]
    pub antithetic: bool,
}

impl RateGrid {
    pub fn experiment(&self, seed: u64) -> slowfast::RateExperiment {
        slowfast::RateExperiment {
            epsilons: self.epsilons.values(),
            t_end: self.t_end,
            n_steps: self.n_steps,
            fast_step: self.fast_step,
            rate_resolution: self.rate_resolution,
            n_paths: self.n_paths,
            seed,
            x0: self.x0.clone(),
            y0: self.y0.clone(),
            antithetic: self.antithetic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingSourceKind {
    /// Closed form when registered, estimation otherwise.
    #[default]
    Auto,
    Oracle,
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragingConfig {
    #[serde(default = "defaults::variant")]
    pub variant: Variant,
    #[serde(default)]
    pub source: AveragingSourceKind,
    #[serde(default)]
    pub estimation: EstimationSpec,
}

impl Default for AveragingConfig {
    fn default() -> Self {
        Self { variant: Variant::General, source: AveragingSourceKind::Auto, estimation: EstimationSpec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceConfig {
    /// H = b − b̄ for the configured averaging.
    #[default]
    BMinusBbar,
    /// H(y) = y₀, centred only for mean-zero fast measures.
    Identity,
}

/// Acceptance rules of the rate experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateRule {
    /// Fitted exponent must lie within `tolerance` of this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_exponent: Option<f64>,
    #[serde(default = "defaults::exponent_tolerance")]
    pub tolerance: f64,
    /// γ of the bracket the errors are checked against.
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    /// β of the ergodicity estimate used by the convergent brackets.
    #[serde(default = "defaults::half")]
    pub ergodic_beta: f64,
    /// Compare with the closed-form error where one exists.
    #[serde(default = "defaults::yes")]
    pub compare_oracle: bool,
}

impl Default for RateRule {
    fn default() -> Self {
        Self { expected_exponent: None, tolerance: 0.15, gamma: 0.9, ergodic_beta: 0.5, compare_oracle: true }
    }
}

mod defaults {
    use super::*;

    pub fn one() -> f64 {
        1.0
    }
    pub fn half() -> f64 {
        0.5
    }
    pub fn yes() -> bool {
        true
    }
    pub fn sample_count() -> usize {
        2000
    }
    pub fn state_box() -> (f64, f64) {
        (-3.0, 3.0)
    }
    pub fn y_box() -> (f64, f64) {
        (-2.0, 2.0)
    }
    pub fn time_box() -> (f64, f64) {
        (0.0, 20.0)
    }
    pub fn n_steps() -> usize {
        16
    }
    pub fn fast_step() -> f64 {
        0.05
    }
    pub fn rate_resolution() -> f64 {
        0.25
    }
    pub fn n_samples() -> usize {
        10_000
    }
    pub fn measure_tol() -> f64 {
        1e-8
    }
    pub fn measure_step() -> f64 {
        0.01
    }
    pub fn burn_in_cap() -> f64 {
        1e4
    }
    pub fn n_points() -> usize {
        20
    }
    pub fn s_range() -> (f64, f64) {
        (0.0, 5.0)
    }
    pub fn inner_paths() -> usize {
        2000
    }
    pub fn poisson_tol() -> f64 {
        1e-6
    }
    pub fn noise() -> NoiseMode {
        NoiseMode::Shared
    }
    pub fn weak_mode() -> WeakMode {
        WeakMode::Paired
    }
    pub fn oracle_epsilons() -> EpsGrid {
        EpsGrid::PowersOfTwo { from: 6, to: 14 }
    }
    pub fn oracle_y() -> f64 {
        std::f64::consts::FRAC_1_SQRT_2
    }
    pub fn ex2_variant() -> Ex2Variant {
        Ex2Variant::General
    }
    pub fn gamma() -> f64 {
        0.9
    }
    pub fn lemma_epsilons() -> EpsGrid {
        EpsGrid::PowersOfTwo { from: 2, to: 10 }
    }
    pub fn lemma_grid() -> usize {
        20
    }
    pub fn convolution_times() -> Vec<f64> {
        vec![1.0, 5.0, 10.0, 25.0, 50.0]
    }
    pub fn exponent_tolerance() -> f64 {
        0.15
    }
    pub fn variant() -> Variant {
        Variant::General
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Checks that need more than one field.
    fn check(&self) -> Result<()> {
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::Config(format!("`id` must be non-empty and use only [A-Za-z0-9_-], got {:?}", self.id)));
        }
        let grids: Vec<&EpsGrid> = match &self.experiment {
            Experiment::StrongRate { grid, .. } | Experiment::WeakRate { grid, .. } => vec![&grid.epsilons],
            Experiment::OracleCompare { epsilons, simulate, .. } => {
                let mut v = vec![epsilons];
                if let Some(g) = simulate {
                    v.push(&g.epsilons);
                }
                v
            }
            Experiment::LemmaChecks { epsilons, .. } => vec![epsilons],
            _ => vec![],
        };
        for g in grids {
            let eps = g.values();
            if eps.len() < 3 || eps.windows(2).any(|w| w[1] >= w[0]) || eps.iter().any(|e| !(*e > 0.0)) {
                return Err(Error::Config(format!("`epsilons` must hold at least 3 strictly decreasing positive values, got {eps:?}")));
            }
        }
        Ok(())
    }
}

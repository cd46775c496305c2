//! Built-in parametric model families, loadable from configuration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::averaging::{AveragedField, AveragedModel, OracleAveraging, Variant};
use crate::error::{Error, Result};
use crate::forcing::{Forcing, ForcingSpec};
use crate::model::{Dims, FastDiffusion, FastDrift, FastJacobian, FastNoiseDerivative, FastPartials, LimitData, LinearFast, SlowFastModel, TimeExtension};
use crate::oracles::{Example1Params, Example2Params, PsiTable};
use crate::rate::{RateFunction, RateKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RateSpec {
    Constant {
        c: f64,
    },
    /// c0 (1 + t)^beta
    Power {
        c0: f64,
        beta: f64,
    },
}

impl RateSpec {
    pub fn build(&self) -> Result<RateFunction> {
        match *self {
            RateSpec::Constant { c } => RateFunction::constant(c),
            RateSpec::Power { c0, beta } => RateFunction::power(c0, beta),
        }
    }
}

impl Default for RateSpec {
    fn default() -> Self {
        RateSpec::Constant { c: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}

/// Model selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// dX = Y dt + dW¹, dY = −ε⁻¹α(t/ε)Y dt + (ε⁻¹α(t/ε))^{1/2} dW², α = c0(1+t)^β.
    Example1 { c0: f64, beta: f64 },
    /// dX = Y dt + dW¹, dY = ε⁻¹[φ(t/ε) − Y] dt + ε^{-1/2} dW², φ = amp(1+|t|)^{−p}.
    Example2Decaying { amp: f64, p: f64 },
    /// As above with φ = mean + amp sin(2πt/τ).
    Example2Periodic { mean: f64, amp: f64, tau: f64 },
    /// As above with φ ≡ level; φ does not decay to the limit drift −y.
    Example2Constant { level: f64 },
    /// b = −a x + (y_{i mod m})_i, σ = s I, f = κ(t)(θ(t) + Cx − y), g = √(2vκ(t)) I.
    LinearNd {
        n: usize,
        m: usize,
        #[serde(default)]
        rate: RateSpec,
        /// Row-major m × n, zero when omitted.
        #[serde(default)]
        coupling: Option<Vec<f64>>,
        #[serde(default = "half")]
        stationary_variance: f64,
        #[serde(default = "default_forcing")]
        forcing: ForcingSpec,
        #[serde(default = "one")]
        slow_reversion: f64,
        #[serde(default = "one")]
        slow_noise: f64,
    },
    /// b = −x + cos y, σ = 1 + k tanh y, f = −α(t)(2y + ½ sin y), g = √α(t).
    #[serde(rename = "nonlinear-1d")]
    Nonlinear1d {
        #[serde(default)]
        rate: RateSpec,
        #[serde(default)]
        sigma_y_coupling: f64,
    },
    /// Coefficients supplied in code through `SlowFastModel::builder`.
    Custom,
}

fn default_forcing() -> ForcingSpec {
    ForcingSpec::Zero
}

/// A built model together with whatever closed forms are known for it.
#[derive(Clone)]
pub struct RegisteredModel {
    pub id: &'static str,
    pub model: SlowFastModel,
    pub oracle: OracleAveraging,
    pub example1: Option<(f64, f64)>,
    pub example2: Option<Forcing>,
}

impl RegisteredModel {
    pub fn example1_params(&self, x: f64, y: f64) -> Option<Example1Params> {
        self.example1.and_then(|(c0, beta)| Example1Params::new(c0, beta, x, y).ok())
    }

    pub fn example2_params(&self, x: f64, y: f64) -> Option<Example2Params> {
        self.example2.clone().map(|forcing| Example2Params { forcing, x, y })
    }
}

/// Parameter documentation for `list-models`.
#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub id: &'static str,
    pub summary: &'static str,
    pub params: Vec<ParamInfo>,
    pub loadable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamInfo {
    pub name: &'static str,
    pub kind: &'static str,
    pub default: Option<&'static str>,
    pub doc: &'static str,
}

fn param(name: &'static str, kind: &'static str, default: Option<&'static str>, doc: &'static str) -> ParamInfo {
    ParamInfo { name, kind, default, doc }
}

pub fn catalog() -> Vec<ModelInfo> {
    vec![
        ModelInfo {
            id: "example1",
            summary: "dX = Y dt + dW1, dY = -alpha(t/eps) Y dt/eps + sqrt(alpha(t/eps)/eps) dW2, alpha = c0 (1+t)^beta",
            params: vec![param("c0", "f64 > 0", None, "rate prefactor"), param("beta", "f64 > -1", None, "rate exponent")],
            loadable: true,
        },
        ModelInfo {
            id: "example2-decaying",
            summary: "dX = Y dt + dW1, dY = (phi(t/eps) - Y) dt/eps + eps^-1/2 dW2, phi = amp (1+|t|)^-p",
            params: vec![param("amp", "f64", None, "forcing amplitude"), param("p", "f64 >= 0", None, "decay exponent")],
            loadable: true,
        },
        ModelInfo {
            id: "example2-periodic",
            summary: "as example2 with phi = mean + amp sin(2 pi t / tau)",
            params: vec![param("mean", "f64", None, "forcing mean"), param("amp", "f64", None, "amplitude"), param("tau", "f64 > 0", None, "period")],
            loadable: true,
        },
        ModelInfo {
            id: "example2-constant",
            summary: "as example2 with phi = level (limit coefficients attached, decay does not vanish)",
            params: vec![param("level", "f64", None, "forcing level")],
            loadable: true,
        },
        ModelInfo {
            id: "linear-nd",
            summary: "b = -a x + y[i mod m], sigma = s I, f = kappa(t)(theta(t) + C x - y), g = sqrt(2 v kappa(t)) I",
            params: vec![
                param("n", "usize", None, "slow dimension"),
                param("m", "usize", None, "fast dimension"),
                param("rate", "{kind = constant, c} | {kind = power, c0, beta}", Some("constant c = 1"), "reversion kappa"),
                param("coupling", "[f64; m*n]", Some("zeros"), "row-major C"),
                param("stationary_variance", "f64 >= 0", Some("0.5"), "v"),
                param("forcing", "{kind = zero | constant | periodic | decaying}", Some("zero"), "theta"),
                param("slow_reversion", "f64", Some("1"), "a"),
                param("slow_noise", "f64", Some("1"), "s"),
            ],
            loadable: true,
        },
        ModelInfo {
            id: "nonlinear-1d",
            summary: "b = -x + cos y, sigma = 1 + k tanh y, f = -alpha(t)(2y + sin(y)/2), g = sqrt(alpha(t))",
            params: vec![
                param("rate", "{kind = constant, c} | {kind = power, c0, beta}", Some("constant c = 1"), "alpha"),
                param("sigma_y_coupling", "f64", Some("0"), "k; nonzero makes sigma depend on y"),
            ],
            loadable: true,
        },
        ModelInfo {
            id: "custom",
            summary: "user coefficients built in Rust with SlowFastModel::builder; not loadable from a config file",
            params: vec![],
            loadable: false,
        },
    ]
}

fn field(f: impl Fn(f64, &[f64], &mut [f64]) -> Result<()> + Send + Sync + 'static) -> AveragedField {
    Arc::new(f)
}

fn unit_diffusion() -> AveragedField {
    field(|_, _, out| {
        out[0] = 1.0;
        Ok(())
    })
}

/// dX = Y dt + dW¹ shared by both benchmarks.
fn scalar_slow(builder: crate::model::ModelBuilder) -> crate::model::ModelBuilder {
    builder.slow(Arc::new(|_x, y, out| out[0] = y[0]), Arc::new(|_x, _y, out| out[0] = 1.0)).sigma_independent_of_y(true)
}

fn example2(id: &'static str, forcing: Forcing, period: Option<f64>, limit: bool) -> Result<RegisteredModel> {
    let lf = LinearFast { reversion: RateFunction::constant(1.0)?, stationary_variance: 0.5, forcing: forcing.clone(), coupling: None };
    let mut builder = scalar_slow(SlowFastModel::builder(Dims::scalar()).name(id)).linear_fast(lf).rate(RateFunction::constant(1.0)?);
    builder = match period {
        Some(tau) => builder.period(tau).extension(TimeExtension::Natural),
        None => builder.extension(TimeExtension::Reflect),
    };
    if limit {
        let decay_forcing = forcing.clone();
        builder = builder.limit(LimitData {
            drift: Arc::new(|_t, _x, y, out| out[0] = -y[0]),
            diffusion: Arc::new(|_t, _x, _y, out| out[0] = 1.0),
            rate: 1.0,
            decay: Arc::new(move |t| decay_forcing.eval(t).abs()),
            forcing: Forcing::Zero,
        });
    }
    let model = builder.build()?;

    let table = PsiTable::new(forcing.clone());
    let general = AveragedModel::closed_form(
        Variant::General,
        1,
        1,
        true,
        field(move |tau, _x, out| {
            out[0] = table.eval(tau)?;
            Ok(())
        }),
        unit_diffusion(),
    );
    let convergent = limit.then(|| AveragedModel::closed_form(Variant::Convergent, 1, 1, true, field(|_, _, out| Ok(out[0] = 0.0)), unit_diffusion()));
    let periodic = match (period, &forcing) {
        (Some(tau), Forcing::Sinusoid { mean, .. }) => {
            let b = *mean;
            Some(AveragedModel::closed_form(Variant::Periodic { tau }, 1, 1, true, field(move |_, _, out| Ok(out[0] = b)), unit_diffusion()))
        }
        _ => None,
    };
    Ok(RegisteredModel { id, model, oracle: OracleAveraging { general: Some(general), convergent, periodic }, example1: None, example2: Some(forcing) })
}

impl ModelSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::Example1 { .. } => "example1",
            ModelSpec::Example2Decaying { .. } => "example2-decaying",
            ModelSpec::Example2Periodic { .. } => "example2-periodic",
            ModelSpec::Example2Constant { .. } => "example2-constant",
            ModelSpec::LinearNd { .. } => "linear-nd",
            ModelSpec::Nonlinear1d { .. } => "nonlinear-1d",
            ModelSpec::Custom => "custom",
        }
    }

    pub fn build(&self) -> Result<RegisteredModel> {
        match self {
            ModelSpec::Example1 { c0, beta } => {
                let alpha = RateFunction::power(*c0, *beta)?;
                let lf = LinearFast { reversion: alpha.clone(), stationary_variance: 0.5, forcing: Forcing::Zero, coupling: None };
                let model = scalar_slow(SlowFastModel::builder(Dims::scalar()).name("example1")).linear_fast(lf).rate(alpha).build()?;
                let general = AveragedModel::closed_form(Variant::General, 1, 1, true, field(|_, _, out| Ok(out[0] = 0.0)), unit_diffusion());
                Ok(RegisteredModel {
                    id: "example1",
                    model,
                    oracle: OracleAveraging { general: Some(general), ..Default::default() },
                    example1: Some((*c0, *beta)),
                    example2: None,
                })
            }
            ModelSpec::Example2Decaying { amp, p } => {
                let forcing = ForcingSpec::Decaying { amp: *amp, p: *p }.build()?;
                example2("example2-decaying", forcing, None, true)
            }
            ModelSpec::Example2Periodic { mean, amp, tau } => {
                let forcing = Forcing::periodic(*mean, *amp, *tau)?;
                example2("example2-periodic", forcing, Some(*tau), false)
            }
            ModelSpec::Example2Constant { level } => example2("example2-constant", Forcing::Constant(*level), None, true),
            ModelSpec::LinearNd { n, m, rate, coupling, stationary_variance, forcing, slow_reversion, slow_noise } => {
                linear_nd(*n, *m, rate, coupling.clone(), *stationary_variance, forcing, *slow_reversion, *slow_noise)
            }
            ModelSpec::Nonlinear1d { rate, sigma_y_coupling } => nonlinear_1d(rate, *sigma_y_coupling),
            ModelSpec::Custom => {
                Err(Error::Config("model id `custom` cannot be loaded from configuration; build it in code with SlowFastModel::builder".into()))
            }
        }
    }
}

fn linear_nd(
    n: usize,
    m: usize,
    rate: &RateSpec,
    coupling: Option<Vec<f64>>,
    stationary_variance: f64,
    forcing: &ForcingSpec,
    a: f64,
    s: f64,
) -> Result<RegisteredModel> {
    let dims = Dims::new(n, m, n, m)?;
    let alpha = rate.build()?;
    let theta = forcing.build()?;
    let lf = LinearFast { reversion: alpha.clone(), stationary_variance, forcing: theta.clone(), coupling: coupling.clone() };
    let b: crate::model::SlowDrift = Arc::new(move |x, y, out| {
        for i in 0..n {
            out[i] = -a * x[i] + y[i % m];
        }
    });
    let sigma: crate::model::SlowDiffusion = Arc::new(move |_x, _y, out| {
        out[..n * n].iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            out[i * n + i] = s;
        }
    });
    let mut builder = SlowFastModel::builder(dims).name("linear-nd").slow(b, sigma).sigma_independent_of_y(true).linear_fast(lf.clone()).rate(alpha.clone());
    if let Some(tau) = theta.period() {
        builder = builder.period(tau).extension(TimeExtension::Natural);
    }
    let constant_rate = match alpha.kind() {
        RateKind::Constant { c } => Some(*c),
        _ => None,
    };
    if let (Some(c), ForcingSpec::Zero | ForcingSpec::Constant { .. }) = (constant_rate, forcing) {
        let lf_f = lf.clone();
        builder = builder.limit(LimitData {
            drift: Arc::new(move |_t, x, y, out| {
                lf_f.coupled_target(m, x, out);
                let th = lf_f.forcing.eval(0.0);
                for i in 0..m {
                    out[i] = c * (th + out[i] - y[i]);
                }
            }),
            diffusion: {
                let scale = (2.0 * stationary_variance * c).sqrt();
                Arc::new(move |_t, _x, _y, out| {
                    out[..m * m].iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..m {
                        out[i * m + i] = scale;
                    }
                })
            },
            rate: c,
            decay: Arc::new(|_| 0.0),
            forcing: theta.clone(),
        });
    }
    let model = builder.build()?;

    // Under μ^x_t the fast mean is Cx + θ for constant forcing, so b̄ is affine.
    let oracle = match forcing {
        ForcingSpec::Zero | ForcingSpec::Constant { .. } => {
            let level = theta.eval(0.0);
            let lf_o = lf.clone();
            let drift = field(move |_, x, out| {
                let mut target = vec![0.0; m];
                lf_o.coupled_target(m, x, &mut target);
                for i in 0..n {
                    out[i] = -a * x[i] + target[i % m] + level;
                }
                Ok(())
            });
            let diffusion = field(move |_, _, out| {
                out[..n * n].iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n {
                    out[i * n + i] = s;
                }
                Ok(())
            });
            let general = AveragedModel::closed_form(Variant::General, n, n, true, drift.clone(), diffusion.clone());
            let convergent = constant_rate.map(|_| AveragedModel::closed_form(Variant::Convergent, n, n, true, drift, diffusion));
            OracleAveraging { general: Some(general), convergent, periodic: None }
        }
        _ => OracleAveraging::default(),
    };
    Ok(RegisteredModel { id: "linear-nd", model, oracle, example1: None, example2: None })
}

fn nonlinear_1d(rate: &RateSpec, k: f64) -> Result<RegisteredModel> {
    if k.abs() >= 1.0 {
        return Err(Error::InvalidArgument(format!("sigma_y_coupling must satisfy |k| < 1, got {k}")));
    }
    let alpha = rate.build()?;
    let (af, ag, aj) = (alpha.clone(), alpha.clone(), alpha.clone());
    let f: FastDrift = Arc::new(move |t, _x, y, out| out[0] = -af.eval(t) * (2.0 * y[0] + 0.5 * y[0].sin()));
    let g: FastDiffusion = Arc::new(move |t, _x, _y, out| out[0] = ag.eval(t).sqrt());
    let drift_y: FastJacobian = Arc::new(move |t, _x, y, out| out[0] = -aj.eval(t) * (2.0 + 0.5 * y[0].cos()));
    let noise_y: FastNoiseDerivative = Arc::new(|_t, _x, _y, _l, out| out[0] = 0.0);
    let model = SlowFastModel::builder(Dims::scalar())
        .name("nonlinear-1d")
        .slow(Arc::new(|x, y, out| out[0] = -x[0] + y[0].cos()), Arc::new(move |_x, y, out| out[0] = 1.0 + k * y[0].tanh()))
        .sigma_independent_of_y(k == 0.0)
        .fast(f, g)
        .partials(FastPartials { drift_y, noise_y })
        .rate(alpha)
        .build()?;
    Ok(RegisteredModel { id: "nonlinear-1d", model, oracle: OracleAveraging::default(), example1: None, example2: None })
}

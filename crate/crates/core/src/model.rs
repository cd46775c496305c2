//! Coefficient fields of the slow-fast system
//!
//! ```text
//! dX = b(X, Y) dt + σ(X, Y) dW¹
//! dY = ε⁻¹ f(t/ε, X, Y) dt + ε^{-1/2} g(t/ε, X, Y) dW²
//! ```
//!
//! together with the frozen fast equation and the dissipativity checks on
//! (f, g).

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forcing::Forcing;
use crate::quad::gl_panels;
use crate::rate::RateFunction;
use crate::rng::{substream, Channel};

/// b(x, y) written into an `n` slice.
pub type SlowDrift = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// σ(x, y) written row-major into an `n × d1` slice.
pub type SlowDiffusion = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// f(t, x, y) written into an `m` slice.
pub type FastDrift = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// g(t, x, y) written row-major into an `m × d2` slice.
pub type FastDiffusion = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// ∂_y f(t, x, y) written row-major into an `m × m` slice.
pub type FastJacobian = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// (∂_y g(t, x, y) · l) written row-major into an `m × d2` slice.
pub type FastNoiseDerivative = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    /// slow state
    pub n: usize,
    /// fast state
    pub m: usize,
    /// slow noise
    pub d1: usize,
    /// fast noise
    pub d2: usize,
}

impl Dims {
    pub fn new(n: usize, m: usize, d1: usize, d2: usize) -> Result<Self> {
        if n == 0 || m == 0 || d1 == 0 || d2 == 0 {
            return Err(Error::Dimension(format!("all dimensions must be positive, got n={n} m={m} d1={d1} d2={d2}")));
        }
        Ok(Self { n, m, d1, d2 })
    }

    pub fn scalar() -> Self {
        Self { n: 1, m: 1, d1: 1, d2: 1 }
    }
}

/// How the fast coefficients are continued to negative times (burn-in
/// starts before 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TimeExtension {
    /// f(t) = f(−t) for t < 0.
    Reflect,
    /// Coefficients are evaluated as given (periodic families).
    Natural,
}

impl TimeExtension {
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            TimeExtension::Reflect => t.abs(),
            TimeExtension::Natural => t,
        }
    }
}

#[derive(Clone)]
pub struct FastPartials {
    pub drift_y: FastJacobian,
    pub noise_y: FastNoiseDerivative,
}

/// Limit coefficients (f̄, ḡ) with decay φ of |f − f̄| + ‖g − ḡ‖.
#[derive(Clone)]
pub struct LimitData {
    pub drift: FastDrift,
    pub diffusion: FastDiffusion,
    /// lim sup α(t).
    pub rate: f64,
    pub decay: ScalarFn,
    /// Forcing of the limit equation when the fast part is linear Gaussian.
    pub forcing: Forcing,
}

/// Linear Gaussian fast dynamics
/// f(t, x, y) = κ(t) (θ(t) + C x − y), g(t) = √(2 v κ(t)) I,
/// whose transitions are sampled exactly.
#[derive(Debug, Clone)]
pub struct LinearFast {
    pub reversion: RateFunction,
    pub stationary_variance: f64,
    pub forcing: Forcing,
    /// Row-major `m × n` coupling C, absent means C = 0.
    pub coupling: Option<Vec<f64>>,
}

/// Coefficients of one exact transition of [`LinearFast`] over [t0, t1]:
/// Y(t1) = decay · Y(t0) + shift + gain · C x + std · Z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactStep {
    pub decay: f64,
    pub gain: f64,
    pub shift: f64,
    pub std: f64,
}

impl LinearFast {
    pub fn noise_scale(&self, t: f64) -> f64 {
        (2.0 * self.stationary_variance * self.reversion.eval(t)).sqrt()
    }

    pub fn step(&self, ext: TimeExtension, t0: f64, t1: f64) -> Result<ExactStep> {
        let k = self.reversion.integral(t0, t1)?;
        let decay = (-k).exp();
        let gain = -(-k).exp_m1();
        let std = (self.stationary_variance * -(-2.0 * k).exp_m1()).sqrt();
        let shift = self.forcing_shift(ext, t0, t1, decay, gain)?;
        Ok(ExactStep { decay, gain, shift, std })
    }

    /// ∫_{t0}^{t1} e^{−K(r, t1)} κ(r) θ(r) dr
    fn forcing_shift(&self, ext: TimeExtension, t0: f64, t1: f64, decay: f64, gain: f64) -> Result<f64> {
        if t0 == t1 {
            return Ok(0.0);
        }
        match (&self.forcing, self.reversion.kind()) {
            (Forcing::Zero, _) => Ok(0.0),
            (Forcing::Constant(level), _) => Ok(level * gain),
            (Forcing::Sinusoid { mean, amp, omega }, crate::rate::RateKind::Constant { c }) if ext == TimeExtension::Natural || t0 >= 0.0 => {
                let w = *omega;
                let phase = |t: f64| c * (w * t).sin() - w * (w * t).cos();
                Ok(mean * gain + amp * c / (c * c + w * w) * (phase(t1) - decay * phase(t0)))
            }
            _ => {
                let kmax = self.reversion.max_on(t0, t1).max(1e-12);
                let panel = 0.25f64.min(0.25 / kmax);
                let mut failure = None;
                let mut integrand = |r: f64| match self.reversion.integral(r, t1) {
                    Ok(a) => (-a).exp() * self.reversion.eval(r) * self.forcing.eval(ext.apply(r)),
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                };
                let v = if ext == TimeExtension::Reflect && t0 < 0.0 && t1 > 0.0 {
                    gl_panels(&mut integrand, t0, 0.0, panel) + gl_panels(&mut integrand, 0.0, t1, panel)
                } else {
                    gl_panels(&mut integrand, t0, t1, panel)
                };
                match failure {
                    Some(e) => Err(e),
                    None => Ok(v),
                }
            }
        }
    }

    /// C x for the given slow state.
    pub fn coupled_target(&self, m: usize, x: &[f64], out: &mut [f64]) {
        match &self.coupling {
            None => out[..m].iter_mut().for_each(|v| *v = 0.0),
            Some(c) => {
                let n = x.len();
                for (i, o) in out[..m].iter_mut().enumerate() {
                    *o = (0..n).map(|j| c[i * n + j] * x[j]).sum();
                }
            }
        }
    }
}

#[derive(Clone)]
pub struct SlowFastModel {
    name: String,
    dims: Dims,
    b: SlowDrift,
    sigma: SlowDiffusion,
    f: FastDrift,
    g: FastDiffusion,
    alpha: RateFunction,
    sigma_independent_of_y: bool,
    linear_fast: Option<LinearFast>,
    partials: Option<FastPartials>,
    extension: TimeExtension,
    period: Option<f64>,
    limit: Option<LimitData>,
}

impl fmt::Debug for SlowFastModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SlowFastModel")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("alpha", &self.alpha)
            .field("sigma_independent_of_y", &self.sigma_independent_of_y)
            .field("linear_fast", &self.linear_fast)
            .field("extension", &self.extension)
            .field("period", &self.period)
            .finish_non_exhaustive()
    }
}

impl SlowFastModel {
    pub fn builder(dims: Dims) -> ModelBuilder {
        ModelBuilder::new(dims)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn alpha(&self) -> &RateFunction {
        &self.alpha
    }
    pub fn sigma_independent_of_y(&self) -> bool {
        self.sigma_independent_of_y
    }
    pub fn linear_fast(&self) -> Option<&LinearFast> {
        self.linear_fast.as_ref()
    }
    /// Whether exact Gaussian transitions are available for the fast part.
    pub fn fast_linear_gaussian(&self) -> bool {
        self.linear_fast.is_some()
    }
    pub fn partials(&self) -> Option<&FastPartials> {
        self.partials.as_ref()
    }
    pub fn extension(&self) -> TimeExtension {
        self.extension
    }
    pub fn period(&self) -> Option<f64> {
        self.period
    }
    pub fn limit(&self) -> Option<&LimitData> {
        self.limit.as_ref()
    }

    #[inline]
    pub fn slow_drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.b)(x, y, out)
    }
    #[inline]
    pub fn slow_diffusion(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.sigma)(x, y, out)
    }
    #[inline]
    pub fn fast_drift(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.f)(self.extension.apply(t), x, y, out)
    }
    #[inline]
    pub fn fast_diffusion(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.g)(self.extension.apply(t), x, y, out)
    }

    pub fn slow_drift_fn(&self) -> &SlowDrift {
        &self.b
    }
    pub fn slow_diffusion_fn(&self) -> &SlowDiffusion {
        &self.sigma
    }

    /// Freezes the slow variable at `x`.
    pub fn freeze(&self, x: &[f64]) -> Result<FrozenModel> {
        FrozenModel::new(self.clone(), x)
    }

    /// The autonomous limit model built from (f̄, ḡ), if limit data is attached.
    pub fn limit_model(&self) -> Result<SlowFastModel> {
        let limit = self.limit.as_ref().ok_or_else(|| Error::Config(format!("model `{}` carries no limit coefficients (f̄, ḡ, φ)", self.name)))?;
        let mut builder = SlowFastModel::builder(self.dims)
            .name(format!("{}-limit", self.name))
            .slow(self.b.clone(), self.sigma.clone())
            .fast(limit.drift.clone(), limit.diffusion.clone())
            .rate(RateFunction::constant(limit.rate)?)
            .sigma_independent_of_y(self.sigma_independent_of_y)
            .extension(TimeExtension::Natural);
        if let Some(lf) = &self.linear_fast {
            builder = builder.linear_fast(LinearFast {
                reversion: RateFunction::constant(limit.rate)?,
                stationary_variance: lf.stationary_variance,
                forcing: limit.forcing.clone(),
                coupling: lf.coupling.clone(),
            });
        }
        builder.build()
    }

    pub(crate) fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims.n {
            return Err(Error::Dimension(format!("slow state has length {}, model expects {}", x.len(), self.dims.n)));
        }
        Ok(())
    }

    pub(crate) fn check_y(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dims.m {
            return Err(Error::Dimension(format!("fast state has length {}, model expects {}", y.len(), self.dims.m)));
        }
        Ok(())
    }
}

pub struct ModelBuilder {
    name: String,
    dims: Dims,
    b: Option<SlowDrift>,
    sigma: Option<SlowDiffusion>,
    f: Option<FastDrift>,
    g: Option<FastDiffusion>,
    alpha: Option<RateFunction>,
    sigma_independent_of_y: bool,
    linear_fast: Option<LinearFast>,
    partials: Option<FastPartials>,
    extension: TimeExtension,
    period: Option<f64>,
    limit: Option<LimitData>,
}

impl ModelBuilder {
    fn new(dims: Dims) -> Self {
        Self {
            name: "custom".into(),
            dims,
            b: None,
            sigma: None,
            f: None,
            g: None,
            alpha: None,
            sigma_independent_of_y: false,
            linear_fast: None,
            partials: None,
            extension: TimeExtension::Reflect,
            period: None,
            limit: None,
        }
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
    pub fn slow(mut self, b: SlowDrift, sigma: SlowDiffusion) -> Self {
        self.b = Some(b);
        self.sigma = Some(sigma);
        self
    }
    pub fn fast(mut self, f: FastDrift, g: FastDiffusion) -> Self {
        self.f = Some(f);
        self.g = Some(g);
        self
    }
    /// Sets f and g from a linear Gaussian description and enables exact
    /// transitions. Analytic partials in y are attached as well.
    pub fn linear_fast(mut self, lf: LinearFast) -> Self {
        let m = self.dims.m;
        let lf_f = lf.clone();
        let f: FastDrift = Arc::new(move |t, x, y, out| {
            let k = lf_f.reversion.eval(t);
            let th = lf_f.forcing.eval(t);
            lf_f.coupled_target(m, x, out);
            for i in 0..m {
                out[i] = k * (th + out[i] - y[i]);
            }
        });
        let lf_g = lf.clone();
        let d2 = self.dims.d2;
        let g: FastDiffusion = Arc::new(move |t, _x, _y, out| {
            let s = lf_g.noise_scale(t);
            out[..m * d2].iter_mut().for_each(|v| *v = 0.0);
            for i in 0..m.min(d2) {
                out[i * d2 + i] = s;
            }
        });
        let lf_j = lf.clone();
        let drift_y: FastJacobian = Arc::new(move |t, _x, _y, out| {
            let k = lf_j.reversion.eval(t);
            out[..m * m].iter_mut().for_each(|v| *v = 0.0);
            for i in 0..m {
                out[i * m + i] = -k;
            }
        });
        let noise_y: FastNoiseDerivative = Arc::new(move |_t, _x, _y, _l, out| {
            out[..m * d2].iter_mut().for_each(|v| *v = 0.0);
        });
        self.f = Some(f);
        self.g = Some(g);
        self.partials = Some(FastPartials { drift_y, noise_y });
        self.linear_fast = Some(lf);
        self
    }
    pub fn rate(mut self, alpha: RateFunction) -> Self {
        self.alpha = Some(alpha);
        self
    }
    pub fn sigma_independent_of_y(mut self, flag: bool) -> Self {
        self.sigma_independent_of_y = flag;
        self
    }
    pub fn partials(mut self, partials: FastPartials) -> Self {
        self.partials = Some(partials);
        self
    }
    pub fn extension(mut self, extension: TimeExtension) -> Self {
        self.extension = extension;
        self
    }
    pub fn period(mut self, tau: f64) -> Self {
        self.period = Some(tau);
        self
    }
    pub fn limit(mut self, limit: LimitData) -> Self {
        self.limit = Some(limit);
        self
    }

    pub fn build(self) -> Result<SlowFastModel> {
        let Dims { n, m, d1, d2 } = self.dims;
        Dims::new(n, m, d1, d2)?;
        let missing = |what: &str| Error::Config(format!("model `{}` is missing {what}", self.name));
        let b = self.b.clone().ok_or_else(|| missing("the slow coefficients (b, σ)"))?;
        let sigma = self.sigma.clone().ok_or_else(|| missing("the slow coefficients (b, σ)"))?;
        let f = self.f.clone().ok_or_else(|| missing("the fast coefficients (f, g)"))?;
        let g = self.g.clone().ok_or_else(|| missing("the fast coefficients (f, g)"))?;
        let alpha = self.alpha.clone().ok_or_else(|| missing("the rate function α"))?;

        if let Some(lf) = &self.linear_fast {
            if d2 != m {
                return Err(Error::Dimension(format!("linear Gaussian fast part needs d2 = m, got d2={d2}, m={m}")));
            }
            if let Some(c) = &lf.coupling {
                if c.len() != m * n {
                    return Err(Error::Dimension(format!("coupling matrix has {} entries, expected m·n = {}", c.len(), m * n)));
                }
            }
            if !(lf.stationary_variance >= 0.0 && lf.stationary_variance.is_finite()) {
                return Err(Error::InvalidArgument("stationary variance must be finite and >= 0".into()));
            }
        }
        if let Some(tau) = self.period {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::InvalidArgument(format!("period must be positive, got {tau}")));
            }
        }

        // Probe every field once at the origin.
        let x = vec![0.0; n];
        let y = vec![0.0; m];
        let mut bo = vec![0.0; n];
        let mut so = vec![0.0; n * d1];
        let mut fo = vec![0.0; m];
        let mut go = vec![0.0; m * d2];
        b(&x, &y, &mut bo);
        sigma(&x, &y, &mut so);
        f(0.0, &x, &y, &mut fo);
        g(0.0, &x, &y, &mut go);
        if bo.iter().chain(&so).chain(&fo).chain(&go).any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("model `{}` produces non-finite coefficients at the origin", self.name)));
        }

        if self.sigma_independent_of_y {
            let mut other = vec![0.0; n * d1];
            for probe in [-1.7, 0.5, 2.3] {
                let yp = vec![probe; m];
                sigma(&x, &yp, &mut other);
                let gap = so.iter().zip(&other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if gap > 1e-12 {
                    return Err(Error::Config(format!("model `{}` is flagged σ-independent-of-y but σ(0, {probe}) differs by {gap:.3e}", self.name)));
                }
            }
        }

        Ok(SlowFastModel {
            name: self.name,
            dims: self.dims,
            b,
            sigma,
            f,
            g,
            alpha,
            sigma_independent_of_y: self.sigma_independent_of_y,
            linear_fast: self.linear_fast,
            partials: self.partials,
            extension: self.extension,
            period: self.period,
            limit: self.limit,
        })
    }
}

/// The fast equation dY = f(t, x, Y) dt + g(t, x, Y) dW² with x held fixed.
#[derive(Clone)]
pub struct FrozenModel {
    parent: SlowFastModel,
    x: Vec<f64>,
    coupled_target: Vec<f64>,
}

impl fmt::Debug for FrozenModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrozenModel").field("model", &self.parent.name).field("x", &self.x).finish()
    }
}

impl FrozenModel {
    pub fn new(parent: SlowFastModel, x: &[f64]) -> Result<Self> {
        parent.check_x(x)?;
        let m = parent.dims.m;
        let mut coupled_target = vec![0.0; m];
        if let Some(lf) = &parent.linear_fast {
            lf.coupled_target(m, x, &mut coupled_target);
        }
        Ok(Self { parent, x: x.to_vec(), coupled_target })
    }

    pub fn parent(&self) -> &SlowFastModel {
        &self.parent
    }
    pub fn x(&self) -> &[f64] {
        &self.x
    }
    pub fn dim(&self) -> usize {
        self.parent.dims.m
    }
    pub fn noise_dim(&self) -> usize {
        self.parent.dims.d2
    }
    pub fn alpha(&self) -> &RateFunction {
        &self.parent.alpha
    }

    #[inline]
    pub fn drift(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.parent.fast_drift(t, &self.x, y, out)
    }
    #[inline]
    pub fn diffusion(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.parent.fast_diffusion(t, &self.x, y, out)
    }

    /// C x for linear models (zero otherwise).
    pub fn coupled_target(&self) -> &[f64] {
        &self.coupled_target
    }

    pub fn exact_step(&self, t0: f64, t1: f64) -> Option<Result<ExactStep>> {
        self.parent.linear_fast.as_ref().map(|lf| lf.step(self.parent.extension, t0, t1))
    }
}

/// Sampling region for [`validate_assumptions`].
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub count: usize,
    /// Bounds applied to every coordinate of x.
    pub x_box: (f64, f64),
    pub y_box: (f64, f64),
    pub time_box: (f64, f64),
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self { count: 2000, x_box: (-3.0, 3.0), y_box: (-3.0, 3.0), time_box: (0.0, 20.0), seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub t: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    /// LHS + 2α|y₁−y₂|² (positive means the contraction fails).
    pub excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub checked_points: usize,
    /// Worst LHS − RHS of the dissipativity inequality with the fitted C.
    pub dissipativity_margin: f64,
    /// Worst LHS + 2α|Δy|² over the samples with x₁ = x₂.
    pub contraction_margin: f64,
    /// Smallest C making the one-sided inequality hold over the sample.
    pub fitted_c: f64,
    /// Worst ratios |f| / (α(1+|x|+|y|)) and ‖g‖² / (α(1+|x|²+|y|²)).
    pub growth_margin: (f64, f64),
    /// Largest observed |σ(x, y₁) − σ(x, y₂)| when σ is declared y-free.
    pub sigma_y_dependence: Option<f64>,
    pub violations: Vec<Witness>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples random tuples and evaluates
/// 2⟨Δy, Δf⟩ + 3‖Δg‖² ≤ −2α|Δy|² + Cα|Δx|²
/// together with the linear-growth bounds on f and g.
pub fn validate_assumptions(model: &SlowFastModel, spec: &SampleSpec) -> Result<AssumptionReport> {
    let boxes = [spec.x_box, spec.y_box, spec.time_box];
    if boxes.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(Error::InvalidArgument("sample boxes must be bounded with lo <= hi".into()));
    }
    let Dims { n, m, d1, d2 } = model.dims;
    let mut rng = substream(spec.seed, 0, Channel::Auxiliary);
    let draw = |lo: f64, hi: f64, len: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..len).map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect()
    };

    let mut f1 = vec![0.0; m];
    let mut f2 = vec![0.0; m];
    let mut g1 = vec![0.0; m * d2];
    let mut g2 = vec![0.0; m * d2];
    let mut s1 = vec![0.0; n * d1];
    let mut s2 = vec![0.0; n * d1];

    let mut fitted_c: f64 = 0.0;
    let mut contraction_margin = f64::NEG_INFINITY;
    let mut growth: (f64, f64) = (0.0, 0.0);
    let mut sigma_dep: f64 = 0.0;
    let mut samples = Vec::with_capacity(spec.count);
    let mut violations = Vec::new();

    for k in 0..spec.count {
        let t = draw(spec.time_box.0, spec.time_box.1, 1, &mut rng)[0];
        let x1 = draw(spec.x_box.0, spec.x_box.1, n, &mut rng);
        let x2 = if k % 2 == 0 { x1.clone() } else { draw(spec.x_box.0, spec.x_box.1, n, &mut rng) };
        let y1 = draw(spec.y_box.0, spec.y_box.1, m, &mut rng);
        let y2 = draw(spec.y_box.0, spec.y_box.1, m, &mut rng);
        let alpha = model.alpha.eval(t);

        model.fast_drift(t, &x1, &y1, &mut f1);
        model.fast_drift(t, &x2, &y2, &mut f2);
        model.fast_diffusion(t, &x1, &y1, &mut g1);
        model.fast_diffusion(t, &x2, &y2, &mut g2);
        let dy2: f64 = y1.iter().zip(&y2).map(|(a, b)| (a - b).powi(2)).sum();
        let dx2: f64 = x1.iter().zip(&x2).map(|(a, b)| (a - b).powi(2)).sum();
        let inner: f64 = (0..m).map(|i| (y1[i] - y2[i]) * (f1[i] - f2[i])).sum();
        let dg2: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum();
        let lhs = 2.0 * inner + 3.0 * dg2;
        if lhs.is_nan() {
            return Err(Error::NonFinite { t });
        }
        let excess = lhs + 2.0 * alpha * dy2;
        let scale = 1e-9 * (1.0 + alpha * (dy2 + dx2));
        if dx2 == 0.0 {
            contraction_margin = contraction_margin.max(excess);
            if excess > scale {
                violations.push(Witness { t, x1: x1.clone(), x2: x2.clone(), y1: y1.clone(), y2: y2.clone(), excess });
            }
        } else if excess > 0.0 {
            fitted_c = fitted_c.max(excess / (alpha * dx2));
        }
        samples.push((lhs, alpha, dy2, dx2));

        let xn = x1.iter().map(|v| v * v).sum::<f64>();
        let yn = y1.iter().map(|v| v * v).sum::<f64>();
        let fnorm = f1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gnorm2 = g1.iter().map(|v| v * v).sum::<f64>();
        growth.0 = growth.0.max(fnorm / (alpha * (1.0 + xn.sqrt() + yn.sqrt())));
        growth.1 = growth.1.max(gnorm2 / (alpha * (1.0 + xn + yn)));

        if model.sigma_independent_of_y {
            model.slow_diffusion(&x1, &y1, &mut s1);
            model.slow_diffusion(&x1, &y2, &mut s2);
            let gap = s1.iter().zip(&s2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            sigma_dep = sigma_dep.max(gap);
            if gap > 1e-10 {
                violations.push(Witness { t, x1: x1.clone(), x2: x1.clone(), y1, y2, excess: gap });
            }
        }
    }

    let dissipativity_margin =
        samples.iter().map(|&(lhs, alpha, dy2, dx2)| lhs - (-2.0 * alpha * dy2 + fitted_c * alpha * dx2)).fold(f64::NEG_INFINITY, f64::max);

    Ok(AssumptionReport {
        checked_points: spec.count,
        dissipativity_margin,
        contraction_margin,
        fitted_c,
        growth_margin: growth,
        sigma_y_dependence: model.sigma_independent_of_y.then_some(sigma_dep),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_linear(sign: f64) -> SlowFastModel {
        let alpha = RateFunction::power(1.0, 0.5).unwrap();
        let a1 = alpha.clone();
        let a2 = alpha.clone();
        SlowFastModel::builder(Dims::scalar())
            .slow(Arc::new(|_x, y, o| o[0] = y[0]), Arc::new(|_x, _y, o| o[0] = 1.0))
            .fast(Arc::new(move |t, _x, y, o| o[0] = sign * a1.eval(t) * y[0]), Arc::new(move |t, _x, _y, o| o[0] = a2.eval(t).sqrt()))
            .rate(alpha)
            .sigma_independent_of_y(true)
            .build()
            .unwrap()
    }

    #[test]
    fn dissipative_linear_model_has_zero_margin() {
        let report = validate_assumptions(&scalar_linear(-1.0), &SampleSpec::default()).unwrap();
        assert!(report.passed());
        assert!(report.contraction_margin.abs() < 1e-9);
    }

    #[test]
    fn sign_flip_is_reported() {
        let report = validate_assumptions(&scalar_linear(1.0), &SampleSpec::default()).unwrap();
        assert!(!report.passed());
        assert!(report.violations.iter().all(|w| w.excess > 0.0));
    }

    #[test]
    fn dimension_errors_at_construction() {
        assert!(Dims::new(1, 0, 1, 1).is_err());
        let lf = LinearFast { reversion: RateFunction::constant(1.0).unwrap(), stationary_variance: 0.5, forcing: Forcing::Zero, coupling: Some(vec![1.0; 3]) };
        let err = SlowFastModel::builder(Dims::new(1, 2, 1, 2).unwrap())
            .slow(Arc::new(|_x, _y, o| o[0] = 0.0), Arc::new(|_x, _y, o| o[0] = 1.0))
            .linear_fast(lf)
            .rate(RateFunction::constant(1.0).unwrap())
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn sigma_flag_is_spot_checked() {
        let err = SlowFastModel::builder(Dims::scalar())
            .slow(Arc::new(|_x, _y, o| o[0] = 0.0), Arc::new(|_x, y, o| o[0] = 1.0 + y[0] * y[0]))
            .fast(Arc::new(|_t, _x, y, o| o[0] = -y[0]), Arc::new(|_t, _x, _y, o| o[0] = 1.0))
            .rate(RateFunction::constant(1.0).unwrap())
            .sigma_independent_of_y(true)
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn exact_step_matches_ou_law() {
        let lf = LinearFast { reversion: RateFunction::power(1.0, 0.5).unwrap(), stationary_variance: 0.5, forcing: Forcing::Zero, coupling: None };
        let (s, t) = (0.3, 1.7);
        let step = lf.step(TimeExtension::Reflect, s, t).unwrap();
        let a = lf.reversion.integral(s, t).unwrap();
        assert!((step.decay - (-a).exp()).abs() < 1e-15);
        assert!((step.std.powi(2) - 0.5 * (1.0 - (-2.0 * a).exp())).abs() < 1e-15);
    }

    #[test]
    fn sinusoid_shift_closed_form_matches_quadrature() {
        let forcing = Forcing::periodic(1.0, 0.8, 2.0).unwrap();
        let lf = LinearFast { reversion: RateFunction::constant(1.0).unwrap(), stationary_variance: 0.5, forcing: forcing.clone(), coupling: None };
        let (t0, t1) = (0.4, 1.3);
        let step = lf.step(TimeExtension::Natural, t0, t1).unwrap();
        let oracle = crate::quad::adaptive_simpson(|r| (-(t1 - r)).exp() * forcing.eval(r), t0, t1, 1e-14).unwrap();
        assert!((step.shift - oracle).abs() < 1e-12);
    }
}

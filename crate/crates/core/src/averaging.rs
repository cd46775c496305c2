//! Averaged slow equations and the ε-experiments that compare them with the
//! coupled system.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{simulate_averaged, simulate_coupled, AveragedSpec, CoupledSpec, NoiseMode, PathEnsemble, TimeGrid};
use crate::measures::{averaged_drift, estimate_mu, estimate_mu_limit, periodic_average_drift, psd_sqrt, MeasureSpec};
use crate::model::SlowFastModel;
use crate::quad::{adaptive_simpson, GaussLegendre};
use crate::rate::{RateFunction, RateKind};
use crate::rng::derive_seed;
use crate::stats::Running;

/// Coefficient of an averaged equation: (τ, x, out) with τ = t/ε.
pub type AveragedField = Arc<dyn Fn(f64, &[f64], &mut [f64]) -> Result<()> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    /// b̄(t/ε, x) from μ^x_t
    General,
    /// b̄_c(x) from the limit measure μ^x
    Convergent,
    /// b̄_p(x), the period mean of b̄(·, x)
    Periodic { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    ClosedForm,
    Estimated,
}

#[derive(Clone)]
pub struct AveragedModel {
    variant: Variant,
    provenance: Provenance,
    dim: usize,
    noise_dim: usize,
    shares_slow_noise: bool,
    drift: AveragedField,
    diffusion: AveragedField,
}

impl fmt::Debug for AveragedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AveragedModel")
            .field("variant", &self.variant)
            .field("provenance", &self.provenance)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .finish_non_exhaustive()
    }
}

impl AveragedModel {
    /// Averaged model from deterministic closed-form coefficients. With
    /// `shares_slow_noise` the diffusion is n × d1 and driven by W¹.
    pub fn closed_form(variant: Variant, dim: usize, noise_dim: usize, shares_slow_noise: bool, drift: AveragedField, diffusion: AveragedField) -> Self {
        Self { variant, provenance: Provenance::ClosedForm, dim, noise_dim, shares_slow_noise, drift, diffusion }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    pub fn shares_slow_noise(&self) -> bool {
        self.shares_slow_noise
    }

    pub fn drift(&self, tau: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.drift)(tau, x, out)
    }

    pub fn diffusion(&self, tau: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.diffusion)(tau, x, out)
    }
}

/// Closed-form averaged equations attached to a registered model.
#[derive(Debug, Clone, Default)]
pub struct OracleAveraging {
    pub general: Option<AveragedModel>,
    pub convergent: Option<AveragedModel>,
    pub periodic: Option<AveragedModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSpec {
    pub measure: MeasureSpec,
    /// Spacing of the x nodes used for interpolation.
    pub x_step: f64,
    /// Width of the fast-time buckets of the general variant.
    pub t_step: f64,
    /// Trapezoid nodes per period.
    pub periodic_nodes: usize,
}

impl Default for EstimationSpec {
    fn default() -> Self {
        Self { measure: MeasureSpec { n_samples: 4000, ..MeasureSpec::default() }, x_step: 0.25, t_step: 0.25, periodic_nodes: 64 }
    }
}

#[derive(Debug, Clone)]
pub enum AveragingSource<'a> {
    Oracle(&'a OracleAveraging),
    Estimate(EstimationSpec),
}

pub fn build_averaged(model: &SlowFastModel, variant: Variant, source: AveragingSource<'_>) -> Result<AveragedModel> {
    match (variant, model.limit(), model.period()) {
        (Variant::Convergent, None, _) => return Err(Error::Config(format!("convergent averaging of `{}` needs limit coefficients (f̄, ḡ, φ)", model.name()))),
        (Variant::Periodic { tau }, _, period) => {
            if !(tau > 0.0) {
                return Err(Error::Config(format!("periodic averaging needs τ > 0, got {tau}")));
            }
            if period.is_none() {
                return Err(Error::Config(format!("model `{}` is not declared periodic", model.name())));
            }
        }
        _ => {}
    }
    match source {
        AveragingSource::Oracle(o) => {
            let found = match variant {
                Variant::General => o.general.clone(),
                Variant::Convergent => o.convergent.clone(),
                Variant::Periodic { .. } => o.periodic.clone(),
            };
            found.ok_or_else(|| Error::Config(format!("no closed-form {variant:?} averaging registered for `{}`", model.name())))
        }
        AveragingSource::Estimate(spec) => estimated(model, variant, spec),
    }
}

/// Node cache key: fast-time bucket (0 when t is averaged out) and x node.
type NodeKey = (i64, Vec<i64>);

struct NodeTable {
    model: SlowFastModel,
    variant: Variant,
    spec: EstimationSpec,
    limit: Option<SlowFastModel>,
    cache: Mutex<HashMap<NodeKey, Arc<NodeValue>>>,
}

struct NodeValue {
    drift: Vec<f64>,
    /// ∫σσ* dμ, present only when σ depends on y.
    second_moment: Option<Vec<f64>>,
}

impl NodeTable {
    fn node(&self, key: &NodeKey) -> Result<Arc<NodeValue>> {
        if let Some(v) = self.cache.lock().expect("cache poisoned").get(key) {
            return Ok(v.clone());
        }
        let value = Arc::new(self.compute(key)?);
        self.cache.lock().expect("cache poisoned").entry(key.clone()).or_insert(value.clone());
        Ok(value)
    }

    fn compute(&self, key: &NodeKey) -> Result<NodeValue> {
        let dims = self.model.dims();
        let x: Vec<f64> = key.1.iter().map(|&i| i as f64 * self.spec.x_step).collect();
        let mut seed = derive_seed(self.spec.measure.seed, key.0 as u64);
        for &i in &key.1 {
            seed = derive_seed(seed, i as u64);
        }
        let mspec = MeasureSpec { seed, ..self.spec.measure };
        let frozen = self.model.freeze(&x)?;
        let mu = match self.variant {
            Variant::General => Some(estimate_mu(&frozen, key.0 as f64 * self.spec.t_step, &mspec)?),
            Variant::Convergent => {
                let limit = self.limit.as_ref().expect("limit model prepared for the convergent variant");
                Some(estimate_mu_limit(&limit.freeze(&x)?, &mspec)?)
            }
            Variant::Periodic { .. } => None,
        };
        let drift = match (&mu, self.variant) {
            (Some(mu), _) => averaged_drift(self.model.slow_drift_fn(), dims.n, mu, &x)?,
            (None, Variant::Periodic { tau }) => periodic_average_drift(self.model.slow_drift_fn(), dims.n, &frozen, tau, self.spec.periodic_nodes, &mspec)?,
            (None, _) => unreachable!("only the periodic variant skips μ"),
        }
        .iter()
        .map(|e| e.value)
        .collect();
        let second_moment = if self.model.sigma_independent_of_y() {
            None
        } else {
            let mut m = vec![0.0; dims.n * dims.n];
            let mut s = vec![0.0; dims.n * dims.d1];
            let samples: Vec<Vec<f64>> = match &mu {
                Some(mu) => (0..mu.len()).map(|k| mu.sample(k).to_vec()).collect(),
                None => {
                    let Variant::Periodic { tau } = self.variant else { unreachable!() };
                    let k = self.spec.periodic_nodes;
                    let mut all = Vec::new();
                    for j in 0..k {
                        let node = MeasureSpec { seed: derive_seed(seed, j as u64), ..mspec };
                        let mu = estimate_mu(&frozen, tau * j as f64 / k as f64, &node)?;
                        all.extend((0..mu.len()).map(|i| mu.sample(i).to_vec()));
                    }
                    all
                }
            };
            for y in &samples {
                self.model.slow_diffusion(&x, y, &mut s);
                crate::measures::accumulate_outer(&s, dims.n, dims.d1, &mut m);
            }
            let inv = 1.0 / samples.len() as f64;
            m.iter_mut().for_each(|v| *v *= inv);
            Some(m)
        };
        Ok(NodeValue { drift, second_moment })
    }

    /// Multilinear interpolation weights over the 2^(n+1) surrounding nodes.
    fn corners(&self, tau: f64, x: &[f64]) -> Vec<(NodeKey, f64)> {
        let (tb, tw) = match self.variant {
            Variant::General => {
                let u = tau / self.spec.t_step;
                let f = u.floor();
                (f as i64, u - f)
            }
            _ => (0, 0.0),
        };
        let t_corners: &[(i64, f64)] = if tw > 0.0 { &[(0, 1.0), (1, 0.0)] } else { &[(0, 1.0)] };
        let mut out: Vec<(NodeKey, f64)> = Vec::new();
        for &(dt, _) in t_corners {
            let wt = if dt == 0 { 1.0 - tw } else { tw };
            out.push(((tb + dt, Vec::new()), wt));
        }
        for &xi in x {
            let u = xi / self.spec.x_step;
            let f = u.floor();
            let w = u - f;
            let mut next = Vec::with_capacity(out.len() * 2);
            for (key, weight) in out {
                let mut lo = key.clone();
                lo.1.push(f as i64);
                next.push((lo, weight * (1.0 - w)));
                if w > 0.0 {
                    let mut hi = key;
                    hi.1.push(f as i64 + 1);
                    next.push((hi, weight * w));
                }
            }
            out = next;
        }
        out
    }
}

fn estimated(model: &SlowFastModel, variant: Variant, spec: EstimationSpec) -> Result<AveragedModel> {
    if !(spec.x_step > 0.0 && spec.t_step > 0.0) {
        return Err(Error::InvalidArgument("estimation grid steps must be positive".into()));
    }
    let dims = model.dims();
    let limit = match variant {
        Variant::Convergent => Some(model.limit_model()?),
        _ => None,
    };
    let table = Arc::new(NodeTable { model: model.clone(), variant, spec, limit, cache: Mutex::new(HashMap::new()) });
    let n = dims.n;

    let t_drift = table.clone();
    let drift: AveragedField = Arc::new(move |tau, x, out| {
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        for (key, w) in t_drift.corners(tau, x) {
            if w == 0.0 {
                continue;
            }
            let v = t_drift.node(&key)?;
            for (o, d) in out.iter_mut().zip(&v.drift) {
                *o += w * d;
            }
        }
        Ok(())
    });

    let shares = model.sigma_independent_of_y();
    let (noise_dim, diffusion): (usize, AveragedField) = if shares {
        let m = model.clone();
        let y0 = vec![0.0; dims.m];
        (
            dims.d1,
            Arc::new(move |_tau, x, out| {
                m.slow_diffusion(x, &y0, out);
                Ok(())
            }),
        )
    } else {
        let t_diff = table.clone();
        (
            n,
            Arc::new(move |tau, x, out| {
                let mut m = vec![0.0; n * n];
                for (key, w) in t_diff.corners(tau, x) {
                    if w == 0.0 {
                        continue;
                    }
                    let v = t_diff.node(&key)?;
                    let sm = v.second_moment.as_ref().expect("second moments are tabulated when σ depends on y");
                    for (o, d) in m.iter_mut().zip(sm) {
                        *o += w * d;
                    }
                }
                out[..n * n].copy_from_slice(&psd_sqrt(&m, n)?.sqrt);
                Ok(())
            }),
        )
    };
    Ok(AveragedModel { variant, provenance: Provenance::Estimated, dim: n, noise_dim, shares_slow_noise: shares, drift, diffusion })
}

/// Settings shared by the strong and weak ε-experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateExperiment {
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    pub t_end: f64,
    /// Slow steps on [0, T].
    pub n_steps: usize,
    /// Largest fast micro-step on the fast clock.
    pub fast_step: f64,
    /// Largest product (fast micro-step)·α over the horizon.
    #[serde(default = "default_rate_resolution")]
    pub rate_resolution: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    #[serde(default)]
    pub antithetic: bool,
}

fn default_rate_resolution() -> f64 {
    0.25
}

impl RateExperiment {
    fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::InvalidArgument("the ε grid is empty".into()));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument("every ε must be positive".into()));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("the ε grid must be strictly decreasing".into()));
        }
        if self.n_paths == 0 || (self.antithetic && self.n_paths % 2 == 1) {
            return Err(Error::InvalidArgument("need a positive number of paths (even with antithetic pairs)".into()));
        }
        if !(self.fast_step > 0.0 && self.rate_resolution > 0.0) {
            return Err(Error::InvalidArgument("fast_step and rate_resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.t_end, self.n_steps)
    }

    /// Micro-steps per slow step for a given ε: the fast step is at most
    /// `fast_step` and at most `rate_resolution / max α` on the fast clock.
    pub fn substeps(&self, alpha: &RateFunction, eps: f64) -> Result<usize> {
        let grid = self.grid()?;
        let amax = alpha.max_on(0.0, self.t_end / eps);
        let h = self.fast_step.min(self.rate_resolution / amax);
        Ok(((grid.dt() / eps) / h).ceil().max(1.0) as usize)
    }

    fn runs(&self, model: &SlowFastModel, eps: f64, index: usize, noise: NoiseMode) -> Result<(CoupledSpec, AveragedSpec)> {
        let grid = self.grid()?;
        let substeps = self.substeps(model.alpha(), eps)?;
        let seed = derive_seed(self.seed, index as u64);
        let coupled = CoupledSpec { eps, x0: self.x0.clone(), y0: self.y0.clone(), grid, substeps, n_paths: self.n_paths, seed, antithetic: self.antithetic };
        let averaged = AveragedSpec { eps, x0: self.x0.clone(), grid, substeps, n_paths: self.n_paths, seed, noise, antithetic: self.antithetic };
        Ok((coupled, averaged))
    }
}

/// Error curve over the slow grid for one ε.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorCurve {
    pub eps: f64,
    pub times: Vec<f64>,
    pub error: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl ErrorCurve {
    /// sup over grid times t > t0 and the standard error at the maximizer.
    pub fn sup(&self) -> (f64, f64) {
        let mut best = (0.0, 0.0);
        let mut found = false;
        for k in 1..self.error.len() {
            if !found || self.error[k] > best.0 {
                best = (self.error[k], self.stderr[k]);
                found = true;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Two standard errors of the exponent.
    pub half_width: f64,
    /// Quadratic coefficient of a log-log fit, when it can be computed.
    pub curvature: Option<f64>,
    /// The log-log data bend significantly (e.g. a log(1/ε) factor).
    pub log_correction: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateEstimate {
    pub label: String,
    pub epsilons: Vec<f64>,
    pub errors: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub fit: Option<RateFit>,
    /// Why no fit is available, if so.
    pub diagnostic: Option<String>,
    /// Some ε has MC stderr above half the measured error.
    pub inconclusive: bool,
    pub curves: Vec<ErrorCurve>,
}

impl RateEstimate {
    fn assemble(label: String, curves: Vec<ErrorCurve>) -> Self {
        let epsilons: Vec<f64> = curves.iter().map(|c| c.eps).collect();
        let (errors, stderrs): (Vec<f64>, Vec<f64>) = curves.iter().map(|c| c.sup()).unzip();
        let inconclusive = errors.iter().zip(&stderrs).any(|(e, s)| *s > 0.5 * e);
        let (fit, diagnostic) = match fit_rate(&epsilons, &errors, Some(&stderrs)) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self { label, epsilons, errors, stderrs, fit, diagnostic, inconclusive, curves }
    }

    pub fn exponent(&self) -> Option<f64> {
        self.fit.map(|f| f.exponent)
    }
}

fn require_strong_preconditions(model: &SlowFastModel) -> Result<()> {
    if !model.sigma_independent_of_y() {
        return Err(Error::Precondition(format!(
            "strong averaging needs σ independent of y (model `{}`); the strong averaging principle may fail if the diffusion coefficient depends on the fast variable",
            model.name()
        )));
    }
    Ok(())
}

fn check_coupling(a: &PathEnsemble, b: &PathEnsemble) -> Result<()> {
    if a.grid() != b.grid() || a.n_paths() != b.n_paths() || a.dim() != b.dim() || a.seed() != b.seed() {
        return Err(Error::Numerical("coupled ensembles disagree on grid, paths, dimension or seed".into()));
    }
    Ok(())
}

/// sup_t E|X^ε_t − X̄^ε_t|² per ε with the averaged run driven by the same W¹
/// (or by an independent stream with [`NoiseMode::Independent`]).
pub fn strong_error(model: &SlowFastModel, averaged: &AveragedModel, exp: &RateExperiment, noise: NoiseMode) -> Result<RateEstimate> {
    require_strong_preconditions(model)?;
    exp.validate()?;
    let mut curves = Vec::with_capacity(exp.epsilons.len());
    for (i, &eps) in exp.epsilons.iter().enumerate() {
        let (cs, avs) = exp.runs(model, eps, i, noise)?;
        let slow = simulate_coupled(model, &cs)?.slow;
        let bar = simulate_averaged(averaged, &avs)?;
        check_coupling(&slow, &bar)?;
        let len = slow.grid().len();
        let mut error = Vec::with_capacity(len);
        let mut stderr = Vec::with_capacity(len);
        for k in 0..len {
            let r = paired(&slow, &bar, k, exp.antithetic, |a, b| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum());
            error.push(r.mean());
            stderr.push(r.stderr());
        }
        curves.push(ErrorCurve { eps, times: slow.grid().times(), error, stderr });
    }
    Ok(RateEstimate::assemble("strong".into(), curves))
}

/// Per-path values of `f(X_p, X̄_p)`; antithetic pairs are averaged first so
/// that the standard error counts independent pairs.
fn paired<F: Fn(&[f64], &[f64]) -> f64>(a: &PathEnsemble, b: &PathEnsemble, k: usize, antithetic: bool, f: F) -> Running {
    let mut r = Running::default();
    if antithetic {
        for p in (0..a.n_paths()).step_by(2) {
            r.push(0.5 * (f(a.state(p, k), b.state(p, k)) + f(a.state(p + 1, k), b.state(p + 1, k))));
        }
    } else {
        for p in 0..a.n_paths() {
            r.push(f(a.state(p, k), b.state(p, k)));
        }
    }
    r
}

/// Smooth test functions for weak errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestFunction {
    /// z ↦ z_i; unbounded, so outside C⁴_b. Used where mean gaps are closed-form.
    Identity { component: usize },
    /// z ↦ tanh(⟨w, z⟩ + c)
    Tanh { weights: Vec<f64>, offset: f64 },
    /// z ↦ exp(−|z − center|² / (2 width²))
    Bump { center: Vec<f64>, width: f64 },
}

impl TestFunction {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            TestFunction::Identity { component } => z[*component],
            TestFunction::Tanh { weights, offset } => (weights.iter().zip(z).map(|(w, v)| w * v).sum::<f64>() + offset).tanh(),
            TestFunction::Bump { center, width } => {
                let d2: f64 = center.iter().zip(z).map(|(c, v)| (v - c).powi(2)).sum();
                (-d2 / (2.0 * width * width)).exp()
            }
        }
    }

    /// Whether the function has four bounded derivatives.
    pub fn in_c4b(&self) -> bool {
        !matches!(self, TestFunction::Identity { .. })
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::Identity { component } => format!("identity[{component}]"),
            TestFunction::Tanh { .. } => "tanh".into(),
            TestFunction::Bump { .. } => "bump".into(),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        let ok = match self {
            TestFunction::Identity { component } => *component < n,
            TestFunction::Tanh { weights, .. } => weights.len() == n,
            TestFunction::Bump { center, width } => center.len() == n && *width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("test function {} does not fit dimension {n}", self.label())))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeakMode {
    /// Shared W¹ and per-path differences (common random numbers).
    Paired,
    /// Independent streams; errors of the two means add in quadrature.
    Independent,
}

/// sup_t |E φ(X^ε_t) − E φ(X̄^ε_t)| per ε and test function.
pub fn weak_error(model: &SlowFastModel, averaged: &AveragedModel, tests: &[TestFunction], exp: &RateExperiment, mode: WeakMode) -> Result<Vec<RateEstimate>> {
    exp.validate()?;
    let n = model.dims().n;
    for tf in tests {
        tf.check_dim(n)?;
    }
    let noise = match mode {
        WeakMode::Paired if averaged.shares_slow_noise() => NoiseMode::Shared,
        WeakMode::Paired => return Err(Error::Precondition("paired weak errors need an averaged model driven by W¹".into())),
        WeakMode::Independent => NoiseMode::Independent,
    };
    let mut curves: Vec<Vec<ErrorCurve>> = vec![Vec::new(); tests.len()];
    for (i, &eps) in exp.epsilons.iter().enumerate() {
        let (cs, avs) = exp.runs(model, eps, i, noise)?;
        let slow = simulate_coupled(model, &cs)?.slow;
        let bar = simulate_averaged(averaged, &avs)?;
        check_coupling(&slow, &bar)?;
        let len = slow.grid().len();
        for (j, tf) in tests.iter().enumerate() {
            let mut error = Vec::with_capacity(len);
            let mut stderr = Vec::with_capacity(len);
            for k in 0..len {
                let (gap, se) = match mode {
                    WeakMode::Paired => {
                        let r = paired(&slow, &bar, k, exp.antithetic, |a, b| tf.eval(a) - tf.eval(b));
                        (r.mean(), r.stderr())
                    }
                    WeakMode::Independent => {
                        let ra = paired(&slow, &slow, k, exp.antithetic, |a, _| tf.eval(a));
                        let rb = paired(&bar, &bar, k, exp.antithetic, |a, _| tf.eval(a));
                        (ra.mean() - rb.mean(), ra.stderr().hypot(rb.stderr()))
                    }
                };
                error.push(gap.abs());
                stderr.push(se);
            }
            curves[j].push(ErrorCurve { eps, times: slow.grid().times(), error, stderr });
        }
    }
    Ok(tests.iter().zip(curves).map(|(tf, c)| RateEstimate::assemble(format!("weak:{}", tf.label()), c)).collect())
}

/// Weighted least squares of log(error) on log(ε).
///
/// Weights are (error/stderr)² when every stderr is positive, else uniform.
/// A quadratic fit flags curvature in log-log coordinates, which is how a
/// log(1/ε) factor shows up on a finite grid.
pub fn fit_rate(epsilons: &[f64], errors: &[f64], stderrs: Option<&[f64]>) -> Result<RateFit> {
    let n = epsilons.len();
    if n != errors.len() || stderrs.is_some_and(|s| s.len() != n) {
        return Err(Error::DegenerateRegression("ε, error and stderr lists differ in length".into()));
    }
    if n < 3 {
        return Err(Error::DegenerateRegression(format!("need at least 3 points, got {n}")));
    }
    if errors.iter().chain(epsilons).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateRegression("ε and errors must be positive and finite".into()));
    }
    let x: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let weighted = stderrs.filter(|s| s.iter().all(|v| *v > 0.0 && v.is_finite()));
    let w: Vec<f64> = match weighted {
        Some(s) => errors.iter().zip(s).map(|(e, s)| (e / s).powi(2)).collect(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateRegression("all ε coincide".into()));
    }
    let sxy: f64 = (0..n).map(|i| w[i] * (x[i] - mx) * (y[i] - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = (0..n).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let sst: f64 = (0..n).map(|i| w[i] * (y[i] - my).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let half_width = 2.0 * (ssr / (n as f64 - 2.0) / sxx).sqrt();

    let (curvature, log_correction) = match quadratic_fit(&x, &y, &w) {
        Some((c, c_se, ssr_q)) => {
            let explained = ssr > 1e-24 * n as f64 && ssr_q < 0.1 * ssr && c.abs() > 0.01;
            let significant = weighted.is_some() && c_se.is_finite() && c.abs() > 3.0 * c_se;
            (Some(c), explained || significant)
        }
        None => (None, false),
    };
    Ok(RateFit { exponent: slope, intercept, r_squared, half_width, curvature, log_correction })
}

/// Weighted fit y = a + b x + c x²; returns (c, se(c), weighted SSR).
fn quadratic_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 4 {
        return None;
    }
    let design = nalgebra::DMatrix::from_fn(n, 3, |i, j| w[i].sqrt() * x[i].powi(j as i32));
    let rhs = nalgebra::DVector::from_fn(n, |i, _| w[i].sqrt() * y[i]);
    let normal = design.transpose() * &design;
    let inv = normal.clone().try_inverse()?;
    let coef = &inv * design.transpose() * &rhs;
    let resid = &rhs - &design * &coef;
    let ssr = resid.norm_squared();
    let sigma2 = ssr / (n as f64 - 3.0);
    Some((coef[2], (sigma2 * inv[(2, 2)]).sqrt(), ssr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// ε²[sup Λ_γ(t/ε)² + ∫₀^{T/ε} αΛ²]
    Strong,
    /// ε sup Λ_γ(t/ε)
    Weak,
    /// ε²{[∫₀^{T/ε} c(s)^{1/2} ds]² + sup Λ_γ² + ∫αΛ²}, c(s) = ∫₀^s e^{−2βᾱ(s−r)}φ²(r) dr
    ConvergentStrong,
    /// ε{∫₀^{T/ε} c(s)^{1/2} ds + sup Λ_γ}
    ConvergentWeak,
    /// ε²[ε^{−4/3} + sup Λ_γ² + ∫αΛ²]
    PeriodicStrong,
    /// ε[sup Λ_γ + ε^{−2/3}]
    PeriodicWeak,
}

/// Data needed by the convergent brackets.
#[derive(Clone, Default)]
pub struct BoundExtras {
    /// Decay φ of |f − f̄| + ‖g − ḡ‖.
    pub decay: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    /// β ∈ (0, 1) of the ergodicity estimate.
    pub beta: Option<f64>,
    /// Constant rate of the limit equation.
    pub limit_rate: Option<f64>,
}

impl fmt::Debug for BoundExtras {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundExtras").field("beta", &self.beta).field("limit_rate", &self.limit_rate).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEvaluation {
    pub kind: BoundKind,
    pub eps: f64,
    pub value: f64,
    pub sup_lambda_gamma: f64,
    pub alpha_lambda_sq: f64,
    pub convolution: Option<f64>,
}

/// The ε-dependent bracket of the named estimate; constants are not included.
pub fn theoretical_bound(kind: BoundKind, alpha: &RateFunction, gamma: f64, t_end: f64, eps: f64, extras: &BoundExtras) -> Result<BoundEvaluation> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("γ must lie in (0, 1], got {gamma}")));
    }
    if !(eps > 0.0 && t_end > 0.0) {
        return Err(Error::InvalidArgument("ε and T must be positive".into()));
    }
    let horizon = t_end / eps;
    let tol = 1e-10;
    let sup = sup_lambda_gamma(alpha, gamma, 0.0, horizon, tol)?;
    let needs_integral = matches!(kind, BoundKind::Strong | BoundKind::ConvergentStrong | BoundKind::PeriodicStrong);
    let integral = if needs_integral { alpha_lambda_sq_integral(alpha, horizon, tol)? } else { 0.0 };
    let convolution = match kind {
        BoundKind::ConvergentStrong | BoundKind::ConvergentWeak => {
            let decay = extras.decay.as_ref().ok_or_else(|| Error::Config("convergent bounds need the decay φ".into()))?;
            let beta = extras.beta.ok_or_else(|| Error::Config("convergent bounds need β".into()))?;
            let rate = extras.limit_rate.ok_or_else(|| Error::Config("convergent bounds need the limit rate".into()))?;
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::InvalidArgument(format!("β must lie in (0, 1), got {beta}")));
            }
            Some(sqrt_convolution_integral(decay.as_ref(), 2.0 * beta * rate, horizon))
        }
        _ => None,
    };
    let e2 = eps * eps;
    let value = match kind {
        BoundKind::Strong => e2 * (sup * sup + integral),
        BoundKind::Weak => eps * sup,
        BoundKind::ConvergentStrong => e2 * (convolution.unwrap().powi(2) + sup * sup + integral),
        BoundKind::ConvergentWeak => eps * (convolution.unwrap() + sup),
        BoundKind::PeriodicStrong => e2 * (eps.powf(-4.0 / 3.0) + sup * sup + integral),
        BoundKind::PeriodicWeak => eps * (sup + eps.powf(-2.0 / 3.0)),
    };
    Ok(BoundEvaluation { kind, eps, value, sup_lambda_gamma: sup, alpha_lambda_sq: integral, convolution })
}

/// sup of Λ_γ over [a, b]. Monotone for the power family (non-increasing for
/// β ≥ 0, non-decreasing for β < 0); sampled on 129 points otherwise.
pub fn sup_lambda_gamma(alpha: &RateFunction, gamma: f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    match alpha.kind() {
        RateKind::Constant { c } => Ok(1.0 / (gamma * c)),
        RateKind::Power { beta, .. } if *beta >= 0.0 => alpha.lambda_gamma(gamma, a, tol),
        RateKind::Power { .. } => alpha.lambda_gamma(gamma, b, tol),
        RateKind::Custom(_) => {
            let mut best: f64 = 0.0;
            for k in 0..=128 {
                best = best.max(alpha.lambda_gamma(gamma, a + (b - a) * k as f64 / 128.0, tol)?);
            }
            Ok(best)
        }
    }
}

/// ∫₀^L α(s)Λ(s)² ds with 16-point Gauss–Legendre on panels [a, 2a + 1].
pub fn alpha_lambda_sq_integral(alpha: &RateFunction, horizon: f64, tol: f64) -> Result<f64> {
    if let RateKind::Constant { c } = alpha.kind() {
        return Ok(horizon / c);
    }
    let rule = GaussLegendre::sixteen();
    let mut failure = None;
    let mut f = |s: f64| match alpha.lambda(s, tol) {
        Ok(l) => alpha.eval(s) * l * l,
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    };
    let mut total = 0.0;
    let mut a = 0.0;
    while a < horizon {
        let b = (2.0 * a + 1.0).min(horizon);
        total += rule.composite(&mut f, a, b, 2);
        a = b;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// ∫₀^L [∫₀^s e^{−η(s−r)} φ²(r) dr]^{1/2} ds. The inner convolution is
/// advanced with an exponential integrator and 4-point Gauss–Legendre per step.
pub fn sqrt_convolution_integral(decay: &(dyn Fn(f64) -> f64 + Send + Sync), eta: f64, horizon: f64) -> f64 {
    let rule = GaussLegendre::new(4);
    let h = 0.05f64.min(0.1 / eta.max(1e-12));
    let n = (horizon / h).ceil().max(1.0) as usize;
    let h = horizon / n as f64;
    let mut c = 0.0;
    let mut prev = 0.0;
    let mut total = 0.0;
    for k in 0..n {
        let s1 = (k + 1) as f64 * h;
        c = (-eta * h).exp() * c + rule.integrate(|r| (-eta * (s1 - r)).exp() * decay(r).powi(2), s1 - h, s1);
        let cur = c.max(0.0).sqrt();
        total += 0.5 * h * (prev + cur);
        prev = cur;
    }
    total
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRatioRow {
    pub eps: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRatioReport {
    pub rows: Vec<LambdaRatioRow>,
    pub max_ratio: f64,
    /// max ratio over the grid extended by two halvings of ε
    pub extended_max_ratio: f64,
    pub bounded: bool,
}

/// sup_{t≤T} Λ_γ(t/ε)² against ∫₀^{T/ε} αΛ² over the ε grid; the ratio is
/// bounded when extending the grid to smaller ε does not raise its maximum
/// by more than a factor 2.
pub fn check_lambda_ratio(alpha: &RateFunction, gamma: f64, t_end: f64, epsilons: &[f64]) -> Result<LambdaRatioReport> {
    if epsilons.is_empty() {
        return Err(Error::InvalidArgument("empty ε grid".into()));
    }
    let tol = 1e-10;
    let row = |eps: f64| -> Result<LambdaRatioRow> {
        let sup = sup_lambda_gamma(alpha, gamma, 0.0, t_end / eps, tol)?;
        let rhs = alpha_lambda_sq_integral(alpha, t_end / eps, tol)?;
        Ok(LambdaRatioRow { eps, lhs: sup * sup, rhs, ratio: sup * sup / rhs })
    };
    let rows: Vec<LambdaRatioRow> = epsilons.iter().map(|&e| row(e)).collect::<Result<_>>()?;
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let smallest = epsilons.iter().copied().fold(f64::INFINITY, f64::min);
    let extended_max_ratio =
        [smallest / 2.0, smallest / 4.0].iter().map(|&e| row(e).map(|r| r.ratio)).collect::<Result<Vec<_>>>()?.into_iter().fold(max_ratio, f64::max);
    let bounded = extended_max_ratio.is_finite() && extended_max_ratio <= 2.0 * max_ratio;
    Ok(LambdaRatioReport { rows, max_ratio, extended_max_ratio, bounded })
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodAverageRow {
    pub a: f64,
    pub t: f64,
    pub lhs: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodAverageReport {
    pub sup_abs: f64,
    pub rows: Vec<PeriodAverageRow>,
    pub passed: bool,
}

/// |T⁻¹∫_a^{a+T} h − τ⁻¹∫₀^τ h| ≤ 2τM/T over the (a, T) grid.
///
/// `antiderivative`, when given, replaces quadrature by exact differences.
/// `sup_abs` defaults to max |h| over 4096 points of [0, τ].
pub fn check_period_average(
    h: &dyn Fn(f64) -> f64,
    tau: f64,
    sup_abs: Option<f64>,
    a_grid: &[f64],
    t_grid: &[f64],
    antiderivative: Option<&dyn Fn(f64) -> f64>,
) -> Result<PeriodAverageReport> {
    if !(tau > 0.0) || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("τ and every T must be positive".into()));
    }
    let m = sup_abs.unwrap_or_else(|| (0..=4096).map(|k| h(tau * k as f64 / 4096.0).abs()).fold(0.0, f64::max));
    let integral = |lo: f64, hi: f64| -> Result<f64> {
        match antiderivative {
            Some(big_h) => Ok(big_h(hi) - big_h(lo)),
            None => adaptive_simpson(h, lo, hi, 1e-11),
        }
    };
    let mean = integral(0.0, tau)? / tau;
    let mut rows = Vec::with_capacity(a_grid.len() * t_grid.len());
    let mut passed = true;
    for &a in a_grid {
        for &t in t_grid {
            let lhs = (integral(a, a + t)? / t - mean).abs();
            let bound = 2.0 * tau * m / t;
            passed &= lhs <= bound;
            rows.push(PeriodAverageRow { a, t, lhs, bound });
        }
    }
    Ok(PeriodAverageReport { sup_abs: m, rows, passed })
}

/// Fits Ĉ = error/bracket at the largest ε and checks
/// error ≤ Ĉ·bracket + 3·stderr at every ε.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub c_hat: f64,
    pub rows: Vec<BoundCheckRow>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCheckRow {
    pub eps: f64,
    pub error: f64,
    pub stderr: f64,
    pub bracket: f64,
    pub ratio: f64,
    pub ok: bool,
}

pub fn check_bound_shape(estimate: &RateEstimate, brackets: &[f64]) -> Result<BoundCheck> {
    if brackets.len() != estimate.epsilons.len() || brackets.is_empty() {
        return Err(Error::InvalidArgument("one bracket value per ε is required".into()));
    }
    let c_hat = estimate.errors[0] / brackets[0];
    let rows: Vec<BoundCheckRow> = (0..brackets.len())
        .map(|i| {
            let (error, stderr, bracket) = (estimate.errors[i], estimate.stderrs[i], brackets[i]);
            BoundCheckRow { eps: estimate.epsilons[i], error, stderr, bracket, ratio: error / bracket, ok: error <= c_hat * bracket + 3.0 * stderr }
        })
        .collect();
    let passed = rows.iter().all(|r| r.ok);
    Ok(BoundCheck { c_hat, rows, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_fit() {
        let eps: Vec<f64> = (4..=10).map(|k| 2f64.powi(-k)).collect();
        let err: Vec<f64> = eps.iter().map(|e| 3.0 * e).collect();
        let fit = fit_rate(&eps, &err, None).unwrap();
        assert!((fit.exponent - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(!fit.log_correction);
    }

    #[test]
    fn fewer_than_three_points_is_degenerate() {
        assert!(matches!(fit_rate(&[0.1, 0.05], &[1.0, 0.5], None), Err(Error::DegenerateRegression(_))));
    }

    #[test]
    fn strong_bracket_for_unit_rate() {
        let alpha = RateFunction::constant(1.0).unwrap();
        let b = theoretical_bound(BoundKind::Strong, &alpha, 0.9, 1.0, 0.01, &BoundExtras::default()).unwrap();
        let expected = 1e-4 * (1.0 / 0.81 + 100.0);
        assert!((b.value - expected).abs() < 1e-12);
    }
}

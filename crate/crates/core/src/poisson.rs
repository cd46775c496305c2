//! The nonautonomous Poisson equation ∂_sΦ + 𝓛^x(s)Φ = −H, solved through
//! Φ(s, x, y) = ∫_s^∞ E H(r, x, Y^{s,x,y}_r) dr.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::averaging::AveragedModel;
use crate::error::{Error, Result};
use crate::integrate::{for_each_path, FrozenStepper};
use crate::measures::{estimate_mu, MeasureSpec};
use crate::model::SlowFastModel;
use crate::rng::{Channel, Normals};
use crate::stats::Running;

/// H(s, x, y) → ℝⁿ, with s on the fast clock.
pub type PoissonSource = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) -> Result<()> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Construction {
    Explicit,
    /// b(x, y) − b̄(s, x)
    BMinusBbar,
}

#[derive(Clone)]
pub struct CenteredFunction {
    h: PoissonSource,
    dim: usize,
    construction: Construction,
}

impl fmt::Debug for CenteredFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CenteredFunction").field("dim", &self.dim).field("construction", &self.construction).finish_non_exhaustive()
    }
}

impl CenteredFunction {
    pub fn explicit(dim: usize, h: PoissonSource) -> Self {
        Self { h, dim, construction: Construction::Explicit }
    }

    /// H = b − b̄ for a model and one of its averaged equations.
    pub fn b_minus_bbar(model: &SlowFastModel, averaged: &AveragedModel) -> Result<Self> {
        let n = model.dims().n;
        if averaged.dim() != n {
            return Err(Error::Dimension(format!("averaged model has dimension {}, model has {n}", averaged.dim())));
        }
        let b = model.slow_drift_fn().clone();
        let avg = averaged.clone();
        let h: PoissonSource = Arc::new(move |s, x, y, out| {
            let mut bar = vec![0.0; n];
            avg.drift(s, x, &mut bar)?;
            b(x, y, out);
            for (o, v) in out.iter_mut().zip(&bar) {
                *o -= v;
            }
            Ok(())
        });
        Ok(Self { h, dim: n, construction: Construction::BMinusBbar })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    pub fn eval(&self, s: f64, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        (self.h)(s, x, y, out)
    }

    /// 2H, H₁ + H₂ and friends, for linearity checks.
    pub fn combine(a: &Self, wa: f64, b: &Self, wb: f64) -> Result<Self> {
        if a.dim != b.dim {
            return Err(Error::Dimension("cannot combine sources of different dimensions".into()));
        }
        let (ha, hb, n) = (a.h.clone(), b.h.clone(), a.dim);
        Ok(Self::explicit(
            n,
            Arc::new(move |s, x, y, out| {
                let mut tmp = vec![0.0; n];
                ha(s, x, y, out)?;
                hb(s, x, y, &mut tmp)?;
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o = wa * *o + wb * t;
                }
                Ok(())
            }),
        ))
    }
}

/// Monte-Carlo evaluator of Φ with common random numbers: inner path `p`
/// always uses the stream `(seed, p)`, indexed by inner step.
#[derive(Debug, Clone)]
pub struct PhiEvaluator {
    pub source: CenteredFunction,
    pub model: SlowFastModel,
    /// Target for the truncated tail ∫_R^∞ |E H|.
    pub tol: f64,
    pub inner_paths: usize,
    pub inner_step: f64,
    pub seed: u64,
    /// Largest admissible R − s.
    pub horizon_cap: f64,
    /// Ĉ in |E H(r, x, Y_r)| ≤ Ĉ(1 + |x| + |y|) e^{−A(s,r)}.
    pub tail_constant: f64,
}

impl PhiEvaluator {
    pub fn new(source: CenteredFunction, model: SlowFastModel) -> Result<Self> {
        if source.dim() != model.dims().n {
            return Err(Error::Dimension(format!("H has dimension {}, slow state has {}", source.dim(), model.dims().n)));
        }
        Ok(Self { source, model, tol: 1e-6, inner_paths: 2000, inner_step: 0.01, seed: 0, horizon_cap: 1e4, tail_constant: 1.0 })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiEstimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    /// |S_h − S_2h| / 15 per component.
    pub quad_error: Vec<f64>,
    pub tail_bound: f64,
    /// R − s
    pub horizon: f64,
    pub steps: usize,
}

/// Truncation horizon length for Φ(s, x, y) and the tail bound it achieves.
fn horizon(ev: &PhiEvaluator, s: f64, x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let alpha = ev.model.alpha();
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let k = ev.tail_constant * (1.0 + norm(x) + norm(y));
    if k == 0.0 {
        return Ok((ev.inner_step * 4.0, 0.0));
    }
    let mut amount = (k / ev.tol).ln().max(1.0);
    let mut bound = f64::INFINITY;
    let mut r = s;
    for _ in 0..32 {
        r = alpha.advance(s, amount)?;
        if r - s > ev.horizon_cap {
            return Err(Error::Truncation { cap: ev.horizon_cap, remaining: bound.min(k * (-amount).exp() * alpha.lambda(s, ev.tol)?) });
        }
        bound = k * (-amount).exp() * alpha.lambda(r, ev.tol * 1e-3)?;
        if bound <= ev.tol {
            return Ok((r - s, bound));
        }
        amount += (bound / ev.tol).ln() + 0.1;
    }
    Err(Error::Truncation { cap: r - s, remaining: bound })
}

/// Step count for a horizon: a multiple of 4 so that Simpson at h and 2h fit.
fn steps_for(ev: &PhiEvaluator, length: f64) -> usize {
    let n = (length / ev.inner_step).ceil().max(4.0) as usize;
    n.div_ceil(4) * 4
}

/// Per-path Simpson integrals at step h and 2h, row-major `paths × n`.
struct PathIntegrals {
    fine: Vec<f64>,
    coarse: Vec<f64>,
    n: usize,
}

fn path_integrals(ev: &PhiEvaluator, s: f64, x: &[f64], y: &[f64], length: f64, steps: usize) -> Result<PathIntegrals> {
    let frozen = ev.model.freeze(x)?;
    ev.model.check_y(y)?;
    let h = length / steps as f64;
    let stepper = FrozenStepper::new(&frozen, s, h, steps)?;
    let n = ev.source.dim();
    let mut out = vec![0.0; ev.inner_paths * 2 * n];
    for_each_path(&mut out, 2 * n, |p, o| {
        let mut yp = y.to_vec();
        let mut noise = Normals::new(ev.seed, p as u64, Channel::FastNoise);
        let mut hv = vec![0.0; n];
        let mut failure = None;
        let (fine, coarse) = o.split_at_mut(n);
        stepper.run(p, &mut yp, steps, &mut noise, |k, yk| {
            if failure.is_some() {
                return;
            }
            if let Err(e) = ev.source.eval(s + k as f64 * h, x, yk, &mut hv) {
                failure = Some(e);
                return;
            }
            let wf = simpson_weight(k, steps) * h / 3.0;
            let wc = if k % 2 == 0 { simpson_weight(k / 2, steps / 2) * 2.0 * h / 3.0 } else { 0.0 };
            for i in 0..n {
                fine[i] += wf * hv[i];
                coarse[i] += wc * hv[i];
            }
        })?;
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })?;
    let mut fine = vec![0.0; ev.inner_paths * n];
    let mut coarse = vec![0.0; ev.inner_paths * n];
    for p in 0..ev.inner_paths {
        fine[p * n..(p + 1) * n].copy_from_slice(&out[p * 2 * n..p * 2 * n + n]);
        coarse[p * n..(p + 1) * n].copy_from_slice(&out[p * 2 * n + n..(p + 1) * 2 * n]);
    }
    Ok(PathIntegrals { fine, coarse, n })
}

fn simpson_weight(k: usize, steps: usize) -> f64 {
    if k == 0 || k == steps {
        1.0
    } else if k % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

impl PathIntegrals {
    fn summary(&self, paths: usize, tail_bound: f64, horizon: f64, steps: usize) -> PhiEstimate {
        let n = self.n;
        let mut value = vec![0.0; n];
        let mut stderr = vec![0.0; n];
        let mut quad_error = vec![0.0; n];
        for i in 0..n {
            let r: Running = (0..paths).map(|p| self.fine[p * n + i]).collect();
            let c: f64 = (0..paths).map(|p| self.coarse[p * n + i]).sum::<f64>() / paths as f64;
            value[i] = r.mean();
            stderr[i] = r.stderr();
            quad_error[i] = (r.mean() - c).abs() / 15.0;
        }
        PhiEstimate { value, stderr, quad_error, tail_bound, horizon, steps }
    }
}

/// Φ(s, x, y); deterministic for a fixed evaluator.
pub fn phi(ev: &PhiEvaluator, s: f64, x: &[f64], y: &[f64]) -> Result<PhiEstimate> {
    let (length, tail) = horizon(ev, s, x, y)?;
    let steps = steps_for(ev, length);
    Ok(path_integrals(ev, s, x, y, length, steps)?.summary(ev.inner_paths, tail, length, steps))
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub s: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// ∂_sΦ + 𝓛Φ + H per component.
    pub residual: Vec<f64>,
    /// Richardson estimate |r(h) − r(2h)| / 3 plus a rounding term.
    pub fd_error: Vec<f64>,
    pub mc_stderr: Vec<f64>,
    /// Contribution of truncation and quadrature.
    pub truncation: Vec<f64>,
    /// 5 · (fd + MC + truncation)
    pub tolerance: Vec<f64>,
    pub passed: bool,
}

/// Default steps h_s = 1e−3(1 + |s|), h_y = 1e−3(1 + |y|).
pub fn default_fd_steps(s: f64, y: &[f64]) -> (f64, f64) {
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    (1e-3 * (1.0 + s.abs()), 1e-3 * (1.0 + ny))
}

/// Per-path residual samples for finite-difference steps (h_s, h_y) with
/// a shared horizon and step count.
fn residual_samples(ev: &PhiEvaluator, s: f64, x: &[f64], y: &[f64], hs: f64, hy: f64, length: f64, steps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let model = &ev.model;
    let dims = model.dims();
    let (n, m, d2) = (dims.n, dims.m, dims.d2);
    let paths = ev.inner_paths;
    let eval = |s: f64, y: &[f64]| path_integrals(ev, s, x, y, length, steps);

    let center = eval(s, y)?;
    let sp = eval(s + hs, y)?;
    let sm = eval(s - hs, y)?;
    let mut plus = Vec::with_capacity(m);
    let mut minus = Vec::with_capacity(m);
    for i in 0..m {
        let mut yp = y.to_vec();
        yp[i] += hy;
        plus.push(eval(s, &yp)?);
        let mut ym = y.to_vec();
        ym[i] -= hy;
        minus.push(eval(s, &ym)?);
    }
    // mixed second differences for i < j
    let mut mixed: Vec<Option<[PathIntegrals; 4]>> = (0..m * m).map(|_| None).collect();
    for i in 0..m {
        for j in (i + 1)..m {
            let corner = |a: f64, b: f64| {
                let mut yc = y.to_vec();
                yc[i] += a * hy;
                yc[j] += b * hy;
                eval(s, &yc)
            };
            mixed[i * m + j] = Some([corner(1.0, 1.0)?, corner(1.0, -1.0)?, corner(-1.0, 1.0)?, corner(-1.0, -1.0)?]);
        }
    }

    let mut f = vec![0.0; m];
    let mut g = vec![0.0; m * d2];
    model.fast_drift(s, x, y, &mut f);
    model.fast_diffusion(s, x, y, &mut g);
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            a[i * m + j] = (0..d2).map(|k| g[i * d2 + k] * g[j * d2 + k]).sum();
        }
    }
    let mut hval = vec![0.0; n];
    ev.source.eval(s, x, y, &mut hval)?;

    let mut samples = vec![0.0; paths * n];
    let mut center_mean = vec![0.0; n];
    for p in 0..paths {
        for c in 0..n {
            let at = |pi: &PathIntegrals| pi.fine[p * n + c];
            let ds = (at(&sp) - at(&sm)) / (2.0 * hs);
            let mut gen = 0.0;
            for i in 0..m {
                let grad = (at(&plus[i]) - at(&minus[i])) / (2.0 * hy);
                let second = (at(&plus[i]) - 2.0 * at(&center) + at(&minus[i])) / (hy * hy);
                gen += f[i] * grad + 0.5 * a[i * m + i] * second;
                for j in (i + 1)..m {
                    let q = mixed[i * m + j].as_ref().expect("computed above");
                    let cross = (at(&q[0]) - at(&q[1]) - at(&q[2]) + at(&q[3])) / (4.0 * hy * hy);
                    gen += a[i * m + j] * cross;
                }
            }
            samples[p * n + c] = ds + gen + hval[c];
            center_mean[c] += at(&center) / paths as f64;
        }
    }
    Ok((samples, center_mean))
}

/// ∂_sΦ + 𝓛^x(s)Φ + H at one point by central differences of Φ under common
/// random numbers.
pub fn residual(ev: &PhiEvaluator, s: f64, x: &[f64], y: &[f64], hs: f64, hy: f64) -> Result<ResidualReport> {
    if !(hs > 0.0 && hy > 0.0) {
        return Err(Error::InvalidArgument("finite-difference steps must be positive".into()));
    }
    let (length, tail) = horizon(ev, s, x, y)?;
    let steps = steps_for(ev, length);
    let n = ev.source.dim();
    let paths = ev.inner_paths;
    let (fine, center) = residual_samples(ev, s, x, y, hs, hy, length, steps)?;
    let (coarse, _) = residual_samples(ev, s, x, y, 2.0 * hs, 2.0 * hy, length, steps)?;
    let quad = path_integrals(ev, s, x, y, length, steps)?.summary(paths, tail, length, steps);

    let alpha = ev.model.alpha();
    let boundary = tail / alpha.lambda(s + length, ev.tol * 1e-3)?.max(f64::MIN_POSITIVE);
    let mut f = vec![0.0; ev.model.dims().m];
    ev.model.fast_drift(s, x, y, &mut f);
    let scale = 1.0 + f.iter().map(|v| v.abs()).sum::<f64>() + alpha.eval(s);

    let mut report = ResidualReport {
        s,
        x: x.to_vec(),
        y: y.to_vec(),
        residual: vec![0.0; n],
        fd_error: vec![0.0; n],
        mc_stderr: vec![0.0; n],
        truncation: vec![0.0; n],
        tolerance: vec![0.0; n],
        passed: true,
    };
    for c in 0..n {
        let rf: Running = (0..paths).map(|p| fine[p * n + c]).collect();
        let rc: f64 = (0..paths).map(|p| coarse[p * n + c]).sum::<f64>() / paths as f64;
        let rounding = 1e-13 * (1.0 + center[c].abs()) * (1.0 / (hy * hy) + 1.0 / hs);
        report.residual[c] = rf.mean();
        report.fd_error[c] = (rf.mean() - rc).abs() / 3.0 + rounding;
        report.mc_stderr[c] = rf.stderr();
        report.truncation[c] = boundary + scale * (tail + quad.quad_error[c]);
        report.tolerance[c] = 5.0 * (report.fd_error[c] + report.mc_stderr[c] + report.truncation[c]);
        report.passed &= report.residual[c].abs() <= report.tolerance[c];
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CenteringRow {
    pub s: f64,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub centered: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CenteringReport {
    pub rows: Vec<CenteringRow>,
    pub passed: bool,
}

/// ∫H(s, x, ·) dμ̂^x_s ≈ 0 within 3 standard errors at every grid point.
pub fn check_centering(source: &CenteredFunction, model: &SlowFastModel, s_grid: &[f64], x_grid: &[Vec<f64>], spec: &MeasureSpec) -> Result<CenteringReport> {
    let n = source.dim();
    let mut rows = Vec::with_capacity(s_grid.len() * x_grid.len());
    for (i, &s) in s_grid.iter().enumerate() {
        for (j, x) in x_grid.iter().enumerate() {
            let frozen = model.freeze(x)?;
            let local = MeasureSpec { seed: crate::rng::derive_seed(spec.seed, (i * x_grid.len() + j) as u64), ..*spec };
            let mu = estimate_mu(&frozen, s, &local)?;
            let mut values = vec![Running::default(); n];
            let mut h = vec![0.0; n];
            for k in 0..mu.len() {
                source.eval(s, x, mu.sample(k), &mut h)?;
                for (r, v) in values.iter_mut().zip(&h) {
                    r.push(*v);
                }
            }
            let mean: Vec<f64> = values.iter().map(|r| r.mean()).collect();
            let stderr: Vec<f64> = values.iter().map(|r| r.stderr()).collect();
            let centered = mean.iter().zip(&stderr).all(|(m, se)| m.abs() <= 3.0 * se + 1e-12);
            rows.push(CenteringRow { s, x: x.clone(), mean, stderr, centered });
        }
    }
    let passed = rows.iter().all(|r| r.centered);
    Ok(CenteringReport { rows, passed })
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthRow {
    pub s: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub phi_norm: f64,
    pub lambda: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub rows: Vec<GrowthRow>,
    pub max_ratio: f64,
}

/// |Φ(s, x, y)| / ((1 + |x| + |y|) Λ(s)) over the given points.
pub fn check_growth(ev: &PhiEvaluator, points: &[(f64, Vec<f64>, Vec<f64>)]) -> Result<GrowthReport> {
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let mut rows = Vec::with_capacity(points.len());
    for (s, x, y) in points {
        let est = phi(ev, *s, x, y)?;
        let lambda = ev.model.alpha().lambda(*s, 1e-10)?;
        let phi_norm = norm(&est.value);
        let ratio = phi_norm / ((1.0 + norm(x) + norm(y)) * lambda);
        rows.push(GrowthRow { s: *s, x: x.clone(), y: y.clone(), phi_norm, lambda, ratio });
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(GrowthReport { rows, max_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::Forcing;
    use crate::model::{Dims, LinearFast};
    use crate::rate::RateFunction;

    fn ou(c: f64) -> SlowFastModel {
        SlowFastModel::builder(Dims::scalar())
            .slow(Arc::new(|_x, y, o| o[0] = y[0]), Arc::new(|_x, _y, o| o[0] = 1.0))
            .linear_fast(LinearFast { reversion: RateFunction::constant(c).unwrap(), stationary_variance: 0.5, forcing: Forcing::Zero, coupling: None })
            .rate(RateFunction::constant(c).unwrap())
            .sigma_independent_of_y(true)
            .build()
            .unwrap()
    }

    fn identity() -> CenteredFunction {
        CenteredFunction::explicit(1, Arc::new(|_s, _x, y, o| Ok(o[0] = y[0])))
    }

    #[test]
    fn ou_phi_is_y_over_c() {
        let mut ev = PhiEvaluator::new(identity(), ou(2.0)).unwrap();
        ev.inner_paths = 200;
        let est = phi(&ev, 0.3, &[0.0], &[1.5]).unwrap();
        assert!((est.value[0] - 0.75).abs() < 4.0 * est.stderr[0] + est.tail_bound + 1e-4);
    }

    #[test]
    fn zero_source_gives_zero() {
        let zero = CenteredFunction::explicit(1, Arc::new(|_s, _x, _y, o| Ok(o[0] = 0.0)));
        let mut ev = PhiEvaluator::new(zero, ou(1.0)).unwrap();
        ev.inner_paths = 10;
        assert_eq!(phi(&ev, 0.0, &[0.0], &[1.0]).unwrap().value[0], 0.0);
    }
}

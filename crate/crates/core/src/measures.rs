//! Evolution systems of measures μ^x_t of the frozen equation, their limits
//! and periodic averages, and the averaged coefficients they induce.
//!
//! μ^x_t is realized as the law at time t of the frozen path started from
//! y = 0 at t − B, where the burn-in B makes the pullback contraction
//! e^{−A(t−B, t)} smaller than the requested tolerance.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::frozen_terminal;
use crate::model::{FrozenModel, SlowDiffusion, SlowDrift};
use crate::quad::adaptive_simpson;
use crate::rate::RateKind;
use crate::rng::derive_seed;
use crate::stats::{energy_distance, variance_with_stderr, Estimate, Running};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSpec {
    /// Target for e^{−A(t−B, t)}.
    pub tol: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Largest admissible burn-in B.
    pub burn_in_cap: f64,
    /// Step for explicit fast stepping (exact transitions ignore it).
    pub step: f64,
}

impl Default for MeasureSpec {
    fn default() -> Self {
        Self { tol: 1e-8, n_samples: 10_000, seed: 0, burn_in_cap: 1e4, step: 0.01 }
    }
}

impl MeasureSpec {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidArgument(format!("measure tolerance must lie in (0, 1), got {}", self.tol)));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("measure needs at least one sample".into()));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {}", self.step)));
        }
        Ok(())
    }
}

/// Uniformly weighted samples of μ^x_t (or of μ^x when `t` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    #[serde(skip)]
    samples: Vec<f64>,
    pub dim: usize,
    pub t: Option<f64>,
    pub x: Vec<f64>,
    pub burn_in: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl EmpiricalMeasure {
    pub fn new(samples: Vec<f64>, dim: usize, t: Option<f64>, x: Vec<f64>, burn_in: f64, seed: u64) -> Result<Self> {
        if dim == 0 || !samples.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!("{} sample values do not split into rows of {dim}", samples.len())));
        }
        let n_samples = samples.len() / dim;
        Ok(Self { samples, dim, t, x, burn_in, n_samples, seed })
    }

    pub fn len(&self) -> usize {
        self.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples == 0
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        (0..self.n_samples).map(|k| self.samples[k * self.dim + i]).collect()
    }

    pub fn expect<F: Fn(&[f64]) -> f64>(&self, f: F) -> Estimate {
        Estimate::from_samples((0..self.n_samples).map(|k| f(self.sample(k))))
    }

    pub fn mean(&self) -> Vec<Estimate> {
        (0..self.dim).map(|i| self.expect(|y| y[i])).collect()
    }

    pub fn variance(&self) -> Vec<Estimate> {
        (0..self.dim).map(|i| variance_with_stderr(&self.component(i))).collect()
    }

    /// CSV sample dump preceded by a `# {json}` metadata line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", serde_json::to_string(self)?)?;
        let header: Vec<String> = (0..self.dim).map(|i| format!("y{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.n_samples {
            let row: Vec<String> = self.sample(k).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Samples μ^x_t by burn-in from y = 0.
pub fn estimate_mu(frozen: &FrozenModel, t: f64, spec: &MeasureSpec) -> Result<EmpiricalMeasure> {
    spec.validate()?;
    let alpha = frozen.alpha();
    let start = alpha.retreat(t, (1.0 / spec.tol).ln())?;
    let burn_in = t - start;
    if burn_in > spec.burn_in_cap {
        return Err(Error::InfeasibleBurnIn { needed: burn_in, cap: spec.burn_in_cap });
    }
    let samples = burn_in_samples(frozen, start, burn_in, spec)?;
    EmpiricalMeasure::new(samples, frozen.dim(), Some(t), frozen.x().to_vec(), burn_in, spec.seed)
}

fn burn_in_samples(frozen: &FrozenModel, start: f64, burn_in: f64, spec: &MeasureSpec) -> Result<Vec<f64>> {
    let y0 = vec![0.0; frozen.dim()];
    let (h, n) = if frozen.parent().fast_linear_gaussian() {
        (burn_in, 1)
    } else {
        let amax = frozen.alpha().max_on(start, start + burn_in);
        let h_max = spec.step.min(0.25 / amax);
        let n = (burn_in / h_max).ceil().max(1.0) as usize;
        (burn_in / n as f64, n)
    };
    frozen_terminal(frozen, start, &y0, h, n, spec.n_samples, spec.seed)
}

/// Invariant measure μ^x of an autonomous frozen equation with constant rate.
pub fn estimate_mu_limit(bar_frozen: &FrozenModel, spec: &MeasureSpec) -> Result<EmpiricalMeasure> {
    spec.validate()?;
    let c = match bar_frozen.alpha().kind() {
        RateKind::Constant { c } => *c,
        _ => return Err(Error::Config("the limit equation must have a constant rate".into())),
    };
    let burn_in = (1.0 / spec.tol).ln() / c;
    if burn_in > spec.burn_in_cap {
        return Err(Error::InfeasibleBurnIn { needed: burn_in, cap: spec.burn_in_cap });
    }
    let samples = burn_in_samples(bar_frozen, 0.0, burn_in, spec)?;
    EmpiricalMeasure::new(samples, bar_frozen.dim(), None, bar_frozen.x().to_vec(), burn_in, spec.seed)
}

fn check_label(measure: &EmpiricalMeasure, x: &[f64]) -> Result<()> {
    if measure.is_empty() {
        return Err(Error::InvalidArgument("empty measure".into()));
    }
    if measure.x != x {
        return Err(Error::Precondition(format!("measure is labelled x = {:?}, requested x = {x:?}", measure.x)));
    }
    Ok(())
}

/// b̄(t, x) = ∫ b(x, y) μ^x_t(dy) as a sample average, per component.
pub fn averaged_drift(b: &SlowDrift, n: usize, measure: &EmpiricalMeasure, x: &[f64]) -> Result<Vec<Estimate>> {
    check_label(measure, x)?;
    let mut out = vec![Running::default(); n];
    let mut buf = vec![0.0; n];
    for k in 0..measure.len() {
        b(x, measure.sample(k), &mut buf);
        for (r, v) in out.iter_mut().zip(&buf) {
            r.push(*v);
        }
    }
    Ok(out.iter().map(|r| Estimate { value: r.mean(), stderr: r.stderr() }).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffusionEstimate {
    /// σ̄, row-major n × n.
    pub sqrt: Vec<f64>,
    /// M = ∫ σσ* dμ, row-major n × n.
    pub second_moment: Vec<f64>,
    /// max |σ̄σ̄* − M|
    pub reconstruction_error: f64,
}

/// σ̄(t, x) = [∫ σσ*(x, y) μ^x_t(dy)]^{1/2}.
pub fn averaged_diffusion(sigma: &SlowDiffusion, n: usize, d1: usize, measure: &EmpiricalMeasure, x: &[f64]) -> Result<DiffusionEstimate> {
    check_label(measure, x)?;
    let mut m = vec![0.0; n * n];
    let mut s = vec![0.0; n * d1];
    for k in 0..measure.len() {
        sigma(x, measure.sample(k), &mut s);
        accumulate_outer(&s, n, d1, &mut m);
    }
    let inv = 1.0 / measure.len() as f64;
    m.iter_mut().for_each(|v| *v *= inv);
    psd_sqrt(&m, n)
}

pub(crate) fn accumulate_outer(s: &[f64], n: usize, d1: usize, m: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..d1 {
                acc += s[i * d1 + k] * s[j * d1 + k];
            }
            m[i * n + j] += acc;
        }
    }
}

/// Symmetric PSD square root by eigendecomposition, negative eigenvalues
/// clipped at 0.
pub fn psd_sqrt(m: &[f64], n: usize) -> Result<DiffusionEstimate> {
    if m.len() != n * n {
        return Err(Error::Dimension(format!("matrix has {} entries, expected {}", m.len(), n * n)));
    }
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (m[i * n + j] - m[j * n + i]).abs() > 1e-10 * scale {
                return Err(Error::Numerical(format!("averaged σσ* is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mat = DMatrix::from_row_slice(n, n, m);
    let sym = (&mat + mat.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    let root = (&root + root.transpose()) * 0.5;
    let recon = &root * &root;
    let reconstruction_error = (&recon - &mat).amax();
    let sqrt = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| root[(i, j)]).collect();
    Ok(DiffusionEstimate { sqrt, second_moment: m.to_vec(), reconstruction_error })
}

/// b̄_p(x) = (1/τ)∫₀^τ b̄(t, x) dt with the trapezoid rule on K equal
/// subintervals (the endpoint values coincide by periodicity).
pub fn periodic_average_drift(b: &SlowDrift, n: usize, frozen: &FrozenModel, tau: f64, nodes: usize, spec: &MeasureSpec) -> Result<Vec<Estimate>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("period must be positive, got {tau}")));
    }
    if nodes < 2 {
        return Err(Error::InvalidArgument("periodic averaging needs at least 2 nodes".into()));
    }
    let mut sum = vec![0.0; n];
    let mut var = vec![0.0; n];
    for j in 0..nodes {
        let node_spec = MeasureSpec { seed: derive_seed(spec.seed, j as u64), ..*spec };
        let mu = estimate_mu(frozen, tau * j as f64 / nodes as f64, &node_spec)?;
        for (i, e) in averaged_drift(b, n, &mu, frozen.x())?.iter().enumerate() {
            sum[i] += e.value;
            var[i] += e.stderr * e.stderr;
        }
    }
    let k = nodes as f64;
    Ok(sum.iter().zip(&var).map(|(s, v)| Estimate { value: s / k, stderr: v.sqrt() / k }).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicityReport {
    pub t: f64,
    pub tau: f64,
    pub mean_diff: Vec<f64>,
    pub mean_stderr: Vec<f64>,
    pub var_diff: Vec<f64>,
    pub var_stderr: Vec<f64>,
    pub energy_distance: f64,
    pub passed: bool,
}

/// Up to this many samples enter the O(n²) energy distance in dimension > 1.
const ENERGY_SUBSAMPLE: usize = 2000;

/// Compares μ̂_t with μ̂_{t+τ} (independent streams) by first two moments and
/// energy distance; passes when every moment difference is within 3σ.
pub fn check_mu_periodicity(frozen: &FrozenModel, t: f64, tau: f64, spec: &MeasureSpec) -> Result<PeriodicityReport> {
    let a = estimate_mu(frozen, t, &MeasureSpec { seed: derive_seed(spec.seed, 1), ..*spec })?;
    let b = estimate_mu(frozen, t + tau, &MeasureSpec { seed: derive_seed(spec.seed, 2), ..*spec })?;
    let (ma, mb) = (a.mean(), b.mean());
    let (va, vb) = (a.variance(), b.variance());
    let mean_diff: Vec<f64> = ma.iter().zip(&mb).map(|(p, q)| q.value - p.value).collect();
    let mean_stderr: Vec<f64> = ma.iter().zip(&mb).map(|(p, q)| p.stderr.hypot(q.stderr)).collect();
    let var_diff: Vec<f64> = va.iter().zip(&vb).map(|(p, q)| q.value - p.value).collect();
    let var_stderr: Vec<f64> = va.iter().zip(&vb).map(|(p, q)| p.stderr.hypot(q.stderr)).collect();
    let within = |d: &[f64], s: &[f64]| d.iter().zip(s).all(|(d, s)| d.abs() <= 3.0 * s + 1e-12);
    let passed = within(&mean_diff, &mean_stderr) && within(&var_diff, &var_stderr);
    let dim = a.dim;
    let cut = |m: &EmpiricalMeasure| -> Vec<f64> {
        if dim == 1 {
            m.samples().to_vec()
        } else {
            m.samples()[..m.len().min(ENERGY_SUBSAMPLE) * dim].to_vec()
        }
    };
    let energy = energy_distance(&cut(&a), &cut(&b), dim);
    Ok(PeriodicityReport { t, tau, mean_diff, mean_stderr, var_diff, var_stderr, energy_distance: energy, passed })
}

/// ∫₀^t e^{−η(t−r)} g(r) dr by adaptive quadrature.
pub fn exp_convolution<G: Fn(f64) -> f64>(g: G, eta: f64, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    adaptive_simpson(|r| (-eta * (t - r)).exp() * g(r), 0.0, t, 1e-12)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub t: f64,
    /// |E_{μ_t} y − E_{μ} y| (Euclidean norm over components).
    pub identity_gap: f64,
    /// |E_{μ_t}|y| − E_{μ}|y||
    pub norm_gap: f64,
    pub stderr: f64,
    /// e^{−βᾱt} + [∫₀^t e^{−2βᾱ(t−r)} φ²(r) dr]^{1/2}
    pub bound_shape: f64,
    /// ∫₀^t e^{−(t−r)} φ²(r) dr
    pub remark_convolution: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Largest gap/shape ratio over the earlier half of `times`.
    pub fitted_c: f64,
    /// Every later gap stays below 2·Ĉ·shape + 3σ.
    pub bound_holds: bool,
    /// The discrepancy stays significantly positive without decaying.
    pub limit_failure: bool,
}

/// Tracks μ̂_t against the limit μ̂^x along `times` for the identity and
/// Euclidean-norm test functions (both 1-Lipschitz).
///
/// The bound's constant is not known, so it is fitted on the earlier half
/// of the times and the later half may exceed it by at most a factor 2.
pub fn check_mu_convergence(
    frozen: &FrozenModel,
    limit: &FrozenModel,
    times: &[f64],
    decay: &dyn Fn(f64) -> f64,
    beta: f64,
    spec: &MeasureSpec,
) -> Result<ConvergenceReport> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("convergence check needs at least one time".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("β must lie in (0, 1), got {beta}")));
    }
    let rate = match limit.alpha().kind() {
        RateKind::Constant { c } => *c,
        _ => return Err(Error::Config("the limit equation must have a constant rate".into())),
    };
    let mu = estimate_mu_limit(limit, &MeasureSpec { seed: derive_seed(spec.seed, u64::MAX), ..*spec })?;
    let norm = |y: &[f64]| y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mu_mean = mu.mean();
    let mu_norm = mu.expect(norm);
    let mut rows = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let mt = estimate_mu(frozen, t, &MeasureSpec { seed: derive_seed(spec.seed, k as u64), ..*spec })?;
        let mean = mt.mean();
        let identity_gap = mean.iter().zip(&mu_mean).map(|(a, b)| (a.value - b.value).powi(2)).sum::<f64>().sqrt();
        let se = mean.iter().zip(&mu_mean).map(|(a, b)| a.stderr.powi(2) + b.stderr.powi(2)).sum::<f64>().sqrt();
        let nt = mt.expect(norm);
        let phi2 = |r: f64| decay(r).powi(2);
        let conv = exp_convolution(phi2, 2.0 * beta * rate, t)?;
        rows.push(ConvergenceRow {
            t,
            identity_gap,
            norm_gap: (nt.value - mu_norm.value).abs(),
            stderr: se.max(nt.stderr.hypot(mu_norm.stderr)),
            bound_shape: (-beta * rate * t).exp() + conv.sqrt(),
            remark_convolution: exp_convolution(phi2, 1.0, t)?,
        });
    }
    let first = &rows[0];
    let split = rows.len().div_ceil(2);
    let fitted_c = rows[..split].iter().map(|r| r.identity_gap.max(r.norm_gap) / r.bound_shape).fold(0.0, f64::max);
    let bound_holds = rows[split..].iter().all(|r| r.identity_gap.max(r.norm_gap) <= 2.0 * fitted_c * r.bound_shape + 3.0 * r.stderr);
    let last = rows.last().unwrap();
    let limit_failure = last.identity_gap > 3.0 * last.stderr && last.identity_gap > 0.5 * first.identity_gap;
    Ok(ConvergenceReport { rows, fitted_c, bound_holds, limit_failure })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_reconstructs_and_clips() {
        let m = [2.0, 0.5, 0.5, 1.0];
        let r = psd_sqrt(&m, 2).unwrap();
        assert!(r.reconstruction_error < 1e-12);
        let neg = [1.0, 0.0, 0.0, -1e-14];
        let r = psd_sqrt(&neg, 2).unwrap();
        assert!(r.sqrt[3] == 0.0 && (r.sqrt[0] - 1.0).abs() < 1e-15);
        assert!(psd_sqrt(&[1.0, 0.2, 0.1, 1.0], 2).is_err());
    }

    #[test]
    fn convolution_of_constant() {
        let v = exp_convolution(|_| 1.0, 2.0, 3.0).unwrap();
        assert!((v - (1.0 - (-6.0f64).exp()) / 2.0).abs() < 1e-12);
    }
}

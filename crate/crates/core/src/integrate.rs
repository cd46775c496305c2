//! Time stepping for the coupled system, the frozen fast equation and the
//! first-order variational flow in y.
//!
//! The fast variable is advanced on its own clock τ = t/ε, where the
//! equation reads dY = f(τ, x, Y) dτ + g(τ, x, Y) dW̃ with W̃ a standard
//! Brownian motion. Linear Gaussian fast parts use exact transitions.

use std::io::{Read, Write};

use serde::Serialize;

use crate::averaging::AveragedModel;
use crate::error::{Error, Result};
use crate::model::{ExactStep, FrozenModel, SlowFastModel};
use crate::rng::{Channel, Normals, SCHEME};
use crate::stats::{Estimate, Running};

/// Coordinates beyond this magnitude abort the path.
pub const BLOW_UP: f64 = 1e12;
/// Largest admissible explicit contraction factor h·α on the fast clock.
pub const STABILITY_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || !(t0.is_finite() && t_end.is_finite()) || t_end <= t0 {
            return Err(Error::InvalidArgument(format!("time grid needs t0 < T and at least one step, got [{t0}, {t_end}] with {n_steps} steps")));
        }
        Ok(Self { t0, t_end, n_steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    /// Number of grid points (steps + 1).
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }
}

/// Sample paths stored path-major: `states[(p * len + k) * dim + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    n_paths: usize,
    dim: usize,
    seed: u64,
    scheme: String,
    states: Vec<f64>,
}

const BINARY_MAGIC: &[u8; 8] = b"SFPATHS\0";
const BINARY_VERSION: u32 = 1;

impl PathEnsemble {
    pub fn from_parts(grid: TimeGrid, n_paths: usize, dim: usize, seed: u64, scheme: String, states: Vec<f64>) -> Result<Self> {
        if states.len() != n_paths * grid.len() * dim {
            return Err(Error::Dimension(format!(
                "ensemble buffer has {} values, expected {} paths × {} times × {} components",
                states.len(),
                n_paths,
                grid.len(),
                dim
            )));
        }
        Ok(Self { grid, n_paths, dim, seed, scheme, states })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn scheme(&self) -> &str {
        &self.scheme
    }
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let stride = self.grid.len() * self.dim;
        &self.states[p * stride..(p + 1) * stride]
    }

    pub fn state(&self, p: usize, k: usize) -> &[f64] {
        let base = (p * self.grid.len() + k) * self.dim;
        &self.states[base..base + self.dim]
    }

    /// Mean and standard error of `f(state)` across paths at grid index `k`.
    pub fn mean_of<F: Fn(&[f64]) -> f64>(&self, k: usize, f: F) -> Estimate {
        Estimate::from_samples((0..self.n_paths).map(|p| f(self.state(p, k))))
    }

    pub fn component_mean(&self, k: usize, i: usize) -> Estimate {
        self.mean_of(k, |s| s[i])
    }

    /// Terminal states, row-major `n_paths × dim`.
    pub fn terminal(&self) -> Vec<f64> {
        let k = self.grid.n_steps;
        (0..self.n_paths).flat_map(|p| self.state(p, k).to_vec()).collect()
    }

    /// CSV with header `path,time,x0,..`, one row per (path, time index).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "path,time")?;
        for i in 0..self.dim {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for p in 0..self.n_paths {
            for k in 0..self.grid.len() {
                write!(w, "{p},{}", self.grid.time(k))?;
                for v in self.state(p, k) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Columnar little-endian dump: header, time column, then one column per
    /// component holding all paths back to back.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for v in [self.n_paths as u64, self.grid.n_steps as u64, self.dim as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.grid.t0.to_le_bytes())?;
        w.write_all(&self.grid.t_end.to_le_bytes())?;
        w.write_all(&(self.scheme.len() as u64).to_le_bytes())?;
        w.write_all(self.scheme.as_bytes())?;
        for t in self.grid.times() {
            w.write_all(&t.to_le_bytes())?;
        }
        for i in 0..self.dim {
            for p in 0..self.n_paths {
                for k in 0..self.grid.len() {
                    w.write_all(&self.state(p, k)[i].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::InvalidArgument("not a path ensemble dump (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != BINARY_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported ensemble dump version {version}")));
        }
        read_u32(&mut r)?;
        let n_paths = read_u64(&mut r)? as usize;
        let n_steps = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let t0 = read_f64(&mut r)?;
        let t_end = read_f64(&mut r)?;
        let scheme_len = read_u64(&mut r)? as usize;
        if scheme_len > 4096 {
            return Err(Error::InvalidArgument("scheme identifier too long".into()));
        }
        let mut scheme = vec![0u8; scheme_len];
        r.read_exact(&mut scheme)?;
        let scheme = String::from_utf8(scheme).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let grid = TimeGrid::new(t0, t_end, n_steps)?;
        for _ in 0..grid.len() {
            read_f64(&mut r)?;
        }
        let len = grid.len();
        let mut states = vec![0.0; n_paths * len * dim];
        for i in 0..dim {
            for p in 0..n_paths {
                for k in 0..len {
                    states[(p * len + k) * dim + i] = read_f64(&mut r)?;
                }
            }
        }
        Self::from_parts(grid, n_paths, dim, seed, scheme, states)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Slow and fast ensembles of one coupled run.
#[derive(Debug, Clone)]
pub struct CoupledOutput {
    pub slow: PathEnsemble,
    pub fast: PathEnsemble,
}

#[derive(Debug, Clone)]
pub struct CoupledSpec {
    pub eps: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub grid: TimeGrid,
    /// Fast micro-steps per slow step.
    pub substeps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Odd paths reuse the noise of their even partner with flipped sign.
    pub antithetic: bool,
}

/// Source of the slow increments for an averaged run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// The exact W¹ increments of the coupled run with the same seed.
    Shared,
    /// An independent stream.
    Independent,
}

#[derive(Debug, Clone)]
pub struct AveragedSpec {
    pub eps: f64,
    pub x0: Vec<f64>,
    pub grid: TimeGrid,
    /// Drift evaluations per slow step (left points on the fast clock).
    pub substeps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub noise: NoiseMode,
    pub antithetic: bool,
}

/// Brownian increments of the slow equation, shared by the coupled and the
/// averaged engines so that both consume identical arrays.
#[derive(Debug, Clone)]
pub struct SlowIncrements {
    normals: Normals,
    sqrt_dt: f64,
}

impl SlowIncrements {
    pub fn new(seed: u64, path: usize, channel: Channel, dt: f64, antithetic: bool) -> Self {
        let normals = if antithetic { Normals::antithetic(seed, path as u64, channel) } else { Normals::new(seed, path as u64, channel) };
        Self { normals, sqrt_dt: dt.sqrt() }
    }

    pub fn next(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.sqrt_dt * self.normals.draw();
        }
    }

    /// All increments of one path, `n_steps × d` row-major.
    pub fn collect(mut self, n_steps: usize, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_steps * d];
        for chunk in out.chunks_mut(d) {
            self.next(chunk);
        }
        out
    }
}

/// Runs `f(path, chunk)` over disjoint per-path chunks, in parallel when the
/// `parallel` feature is on. Results do not depend on scheduling.
pub(crate) fn for_each_path<F>(buf: &mut [f64], stride: usize, f: F) -> Result<()>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Send + Sync,
{
    if stride == 0 {
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        buf.par_chunks_mut(stride).enumerate().try_for_each(|(p, c)| f(p, c))
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(stride).enumerate().try_for_each(|(p, c)| f(p, c))
    }
}

fn for_each_path_pair<F>(a: &mut [f64], sa: usize, b: &mut [f64], sb: usize, f: F) -> Result<()>
where
    F: Fn(usize, &mut [f64], &mut [f64]) -> Result<()> + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        a.par_chunks_mut(sa).zip(b.par_chunks_mut(sb)).enumerate().try_for_each(|(p, (ca, cb))| f(p, ca, cb))
    }
    #[cfg(not(feature = "parallel"))]
    {
        a.chunks_mut(sa).zip(b.chunks_mut(sb)).enumerate().try_for_each(|(p, (ca, cb))| f(p, ca, cb))
    }
}

/// Maps `f` over `0..n`, in parallel when enabled, preserving order.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[inline]
fn guard(path: usize, t: f64, state: &[f64]) -> Result<()> {
    if state.iter().any(|v| !(v.abs() <= BLOW_UP)) {
        return Err(Error::BlowUp { path, t });
    }
    Ok(())
}

/// Scratch buffers for one explicit fast step.
struct FastScratch {
    f: Vec<f64>,
    g: Vec<f64>,
    z: Vec<f64>,
}

impl FastScratch {
    fn new(m: usize, d2: usize) -> Self {
        Self { f: vec![0.0; m], g: vec![0.0; m * d2], z: vec![0.0; d2] }
    }
}

/// One Euler–Maruyama step of the fast equation on its own clock.
#[inline]
fn fast_em_step(model: &SlowFastModel, tau: f64, dtau: f64, x: &[f64], y: &mut [f64], noise: &mut Normals, s: &mut FastScratch) {
    let d2 = model.dims().d2;
    model.fast_drift(tau, x, y, &mut s.f);
    model.fast_diffusion(tau, x, y, &mut s.g);
    noise.fill(&mut s.z);
    let sq = dtau.sqrt();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut dw = 0.0;
        for j in 0..d2 {
            dw += s.g[i * d2 + j] * s.z[j];
        }
        *yi += s.f[i] * dtau + sq * dw;
    }
}

#[inline]
fn exact_apply(step: &ExactStep, target: &[f64], y: &mut [f64], noise: &mut Normals) {
    for (yi, ci) in y.iter_mut().zip(target) {
        *yi = step.decay * *yi + step.shift + step.gain * ci + step.std * noise.draw();
    }
}

/// Exact transition coefficients on the fast clock nodes `tau0 + j·dtau`.
fn exact_table(model: &SlowFastModel, tau0: f64, dtau: f64, n: usize) -> Result<Option<Vec<ExactStep>>> {
    let Some(lf) = model.linear_fast() else { return Ok(None) };
    let ext = model.extension();
    let table = map_indices(n, |j| lf.step(ext, tau0 + j as f64 * dtau, tau0 + (j + 1) as f64 * dtau))?;
    Ok(Some(table))
}

/// Checks h·α ≤ 0.5 on [tau0, tau1] for explicit fast steps of length `dtau`
/// and reports the number of substeps that would be needed otherwise.
fn check_stability(model: &SlowFastModel, tau0: f64, tau1: f64, dtau: f64, substeps: usize) -> Result<()> {
    if model.fast_linear_gaussian() {
        return Ok(());
    }
    let amax = model.alpha().max_on(tau0.min(tau1), tau0.max(tau1));
    let factor = dtau * amax;
    if factor > STABILITY_FACTOR {
        let min_substeps = ((factor / STABILITY_FACTOR) * substeps as f64).ceil() as usize;
        return Err(Error::Unstable { factor, min_substeps });
    }
    Ok(())
}

/// Simulates (X^ε, Y^ε) from (x0, y0) on the slow grid.
///
/// X is held at the left endpoint of each slow step while Y takes
/// `substeps` micro-steps; the slow drift is averaged over the micro-step
/// left points and the slow noise σ(X, Y)ΔW¹ uses the state at the start of
/// the step.
pub fn simulate_coupled(model: &SlowFastModel, spec: &CoupledSpec) -> Result<CoupledOutput> {
    let dims = model.dims();
    model.check_x(&spec.x0)?;
    model.check_y(&spec.y0)?;
    if !(spec.eps > 0.0 && spec.eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("ε must be positive, got {}", spec.eps)));
    }
    if spec.substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    let grid = spec.grid;
    let eps = spec.eps;
    let q = spec.substeps;
    let h = grid.dt() / q as f64;
    let dtau = h / eps;
    let tau0 = grid.t0 / eps;
    check_stability(model, tau0, grid.t_end / eps, dtau, q)?;
    let table = exact_table(model, tau0, dtau, grid.n_steps * q)?;
    let lf = model.linear_fast();

    let len = grid.len();
    let (n, m, d1) = (dims.n, dims.m, dims.d1);
    let mut xs = vec![0.0; spec.n_paths * len * n];
    let mut ys = vec![0.0; spec.n_paths * len * m];

    for_each_path_pair(&mut xs, len * n, &mut ys, len * m, |p, xp, yp| {
        let mut x = spec.x0.clone();
        let mut y = spec.y0.clone();
        xp[..n].copy_from_slice(&x);
        yp[..m].copy_from_slice(&y);
        let mut w1 = SlowIncrements::new(spec.seed, p, Channel::SlowNoise, grid.dt(), spec.antithetic);
        let mut w2 =
            if spec.antithetic { Normals::antithetic(spec.seed, p as u64, Channel::FastNoise) } else { Normals::new(spec.seed, p as u64, Channel::FastNoise) };
        let mut dw1 = vec![0.0; d1];
        let mut drift = vec![0.0; n];
        let mut acc = vec![0.0; n];
        let mut sig = vec![0.0; n * d1];
        let mut target = vec![0.0; m];
        let mut scratch = FastScratch::new(m, dims.d2);
        for k in 0..grid.n_steps {
            w1.next(&mut dw1);
            model.slow_diffusion(&x, &y, &mut sig);
            if let Some(lf) = lf {
                lf.coupled_target(m, &x, &mut target);
            }
            acc.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..q {
                model.slow_drift(&x, &y, &mut drift);
                for (a, d) in acc.iter_mut().zip(&drift) {
                    *a += d;
                }
                let idx = k * q + j;
                match &table {
                    Some(t) => exact_apply(&t[idx], &target, &mut y, &mut w2),
                    None => fast_em_step(model, tau0 + idx as f64 * dtau, dtau, &x, &mut y, &mut w2, &mut scratch),
                }
            }
            let dt = grid.dt();
            for i in 0..n {
                let mut noise = 0.0;
                for j in 0..d1 {
                    noise += sig[i * d1 + j] * dw1[j];
                }
                x[i] += acc[i] / q as f64 * dt + noise;
            }
            let t = grid.time(k + 1);
            guard(p, t, &x)?;
            guard(p, t, &y)?;
            xp[(k + 1) * n..(k + 2) * n].copy_from_slice(&x);
            yp[(k + 1) * m..(k + 2) * m].copy_from_slice(&y);
        }
        Ok(())
    })?;

    let slow = PathEnsemble::from_parts(grid, spec.n_paths, n, spec.seed, SCHEME.into(), xs)?;
    let fast = PathEnsemble::from_parts(grid, spec.n_paths, m, spec.seed, SCHEME.into(), ys)?;
    Ok(CoupledOutput { slow, fast })
}

/// Euler–Maruyama for the averaged slow equation. Drift evaluations use the
/// fast clock τ = t/ε at `substeps` left points per slow step, matching the
/// coupled engine.
pub fn simulate_averaged(avg: &AveragedModel, spec: &AveragedSpec) -> Result<PathEnsemble> {
    let n = avg.dim();
    if spec.x0.len() != n {
        return Err(Error::Dimension(format!("initial state has length {}, averaged model expects {n}", spec.x0.len())));
    }
    if !(spec.eps > 0.0 && spec.eps.is_finite()) || spec.substeps == 0 {
        return Err(Error::InvalidArgument("averaged run needs ε > 0 and at least one substep".into()));
    }
    let nd = avg.noise_dim();
    let channel = match spec.noise {
        NoiseMode::Shared => {
            if !avg.shares_slow_noise() {
                return Err(Error::Precondition("shared slow noise needs σ independent of y; this averaged model carries its own noise dimension".into()));
            }
            Channel::SlowNoise
        }
        NoiseMode::Independent => Channel::AveragedNoise,
    };
    let grid = spec.grid;
    let q = spec.substeps;
    let dt = grid.dt();
    let dtau = dt / q as f64 / spec.eps;
    let tau0 = grid.t0 / spec.eps;
    let len = grid.len();
    let mut xs = vec![0.0; spec.n_paths * len * n];

    for_each_path(&mut xs, len * n, |p, xp| {
        let mut x = spec.x0.clone();
        xp[..n].copy_from_slice(&x);
        let mut w = SlowIncrements::new(spec.seed, p, channel, dt, spec.antithetic);
        let mut dw = vec![0.0; nd];
        let mut drift = vec![0.0; n];
        let mut acc = vec![0.0; n];
        let mut sig = vec![0.0; n * nd];
        for k in 0..grid.n_steps {
            w.next(&mut dw);
            let tau_k = tau0 + (k * q) as f64 * dtau;
            avg.diffusion(tau_k, &x, &mut sig)?;
            acc.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..q {
                avg.drift(tau_k + j as f64 * dtau, &x, &mut drift)?;
                for (a, d) in acc.iter_mut().zip(&drift) {
                    *a += d;
                }
            }
            for i in 0..n {
                let mut noise = 0.0;
                for j in 0..nd {
                    noise += sig[i * nd + j] * dw[j];
                }
                x[i] += acc[i] / q as f64 * dt + noise;
            }
            guard(p, grid.time(k + 1), &x)?;
            xp[(k + 1) * n..(k + 2) * n].copy_from_slice(&x);
        }
        Ok(())
    })?;
    PathEnsemble::from_parts(grid, spec.n_paths, n, spec.seed, SCHEME.into(), xs)
}

/// Fast-equation stepping with x frozen on the uniform grid s + k·h.
pub(crate) struct FrozenStepper<'a> {
    frozen: &'a FrozenModel,
    s: f64,
    h: f64,
    table: Option<Vec<ExactStep>>,
}

impl<'a> FrozenStepper<'a> {
    pub(crate) fn new(frozen: &'a FrozenModel, s: f64, h: f64, n_steps: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
        }
        let model = frozen.parent();
        check_stability(model, s, s + h * n_steps as f64, h, 1)?;
        let table = exact_table(model, s, h, n_steps)?;
        Ok(Self { frozen, s, h, table })
    }

    pub(crate) fn decay(&self, k: usize) -> Option<f64> {
        self.table.as_ref().map(|t| t[k].decay)
    }

    fn scratch(&self) -> FastScratch {
        let d = self.frozen.parent().dims();
        FastScratch::new(d.m, d.d2)
    }

    #[inline]
    fn step(&self, k: usize, y: &mut [f64], noise: &mut Normals, scratch: &mut FastScratch) {
        match &self.table {
            Some(t) => exact_apply(&t[k], self.frozen.coupled_target(), y, noise),
            None => fast_em_step(self.frozen.parent(), self.s + k as f64 * self.h, self.h, self.frozen.x(), y, noise, scratch),
        }
    }

    /// Runs `n` steps from y, calling `visit(k, y)` at every grid index
    /// (including 0). Returns an error if the state leaves the guard box.
    pub(crate) fn run<F: FnMut(usize, &[f64])>(&self, path: usize, y: &mut [f64], n: usize, noise: &mut Normals, mut visit: F) -> Result<()> {
        let mut scratch = self.scratch();
        visit(0, y);
        for k in 0..n {
            self.step(k, y, noise, &mut scratch);
            guard(path, self.s + (k + 1) as f64 * self.h, y)?;
            visit(k + 1, y);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FrozenSpec {
    pub s: f64,
    pub y0: Vec<f64>,
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

/// Ensemble of Y^{s,x,y} on [s, s + horizon] for the frozen equation.
pub fn simulate_frozen(frozen: &FrozenModel, spec: &FrozenSpec) -> Result<PathEnsemble> {
    frozen.parent().check_y(&spec.y0)?;
    if !(spec.horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", spec.horizon)));
    }
    let grid = TimeGrid::new(spec.s, spec.s + spec.horizon, spec.n_steps)?;
    let stepper = FrozenStepper::new(frozen, spec.s, grid.dt(), spec.n_steps)?;
    let m = frozen.dim();
    let len = grid.len();
    let mut ys = vec![0.0; spec.n_paths * len * m];
    for_each_path(&mut ys, len * m, |p, yp| {
        let mut y = spec.y0.clone();
        let mut noise = Normals::new(spec.seed, p as u64, Channel::FastNoise);
        stepper.run(p, &mut y, spec.n_steps, &mut noise, |k, y| yp[k * m..(k + 1) * m].copy_from_slice(y))
    })?;
    PathEnsemble::from_parts(grid, spec.n_paths, m, spec.seed, SCHEME.into(), ys)
}

/// t ↦ E|∂_yY_t · l|⁴ with Monte-Carlo standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct MomentCurve {
    pub times: Vec<f64>,
    pub moment: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Integrates (Y, ∂_yY·l) jointly. With exact transitions the derivative of
/// the transition map is used, otherwise Euler–Maruyama on the variational
/// equation driven by the same increments as Y.
pub fn simulate_y_variational(frozen: &FrozenModel, spec: &FrozenSpec, direction: &[f64]) -> Result<MomentCurve> {
    let model = frozen.parent();
    let dims = model.dims();
    model.check_y(&spec.y0)?;
    if direction.len() != dims.m {
        return Err(Error::Dimension(format!("direction has length {}, expected {}", direction.len(), dims.m)));
    }
    let partials = model.partials().ok_or_else(|| Error::Config(format!("model `{}` has no analytic partials in y", model.name())))?;
    let grid = TimeGrid::new(spec.s, spec.s + spec.horizon, spec.n_steps)?;
    let h = grid.dt();
    let stepper = FrozenStepper::new(frozen, spec.s, h, spec.n_steps)?;
    let (m, d2) = (dims.m, dims.d2);
    let len = grid.len();

    let mut norms = vec![0.0; spec.n_paths * len];
    for_each_path(&mut norms, len, |p, out| {
        let mut y = spec.y0.clone();
        let mut l = direction.to_vec();
        let mut noise = Normals::new(spec.seed, p as u64, Channel::FastNoise);
        let mut jac = vec![0.0; m * m];
        let mut gl = vec![0.0; m * d2];
        let mut z = vec![0.0; d2];
        let mut scratch = FastScratch::new(m, d2);
        let x = frozen.x();
        out[0] = l.iter().map(|v| v * v).sum::<f64>().powi(2);
        for k in 0..spec.n_steps {
            let t = spec.s + k as f64 * h;
            match stepper.decay(k) {
                Some(decay) => {
                    stepper.step(k, &mut y, &mut noise, &mut scratch);
                    l.iter_mut().for_each(|v| *v *= decay);
                }
                None => {
                    (partials.drift_y)(model.extension().apply(t), x, &y, &mut jac);
                    (partials.noise_y)(model.extension().apply(t), x, &y, &l, &mut gl);
                    model.fast_drift(t, x, &y, &mut scratch.f);
                    model.fast_diffusion(t, x, &y, &mut scratch.g);
                    for v in z.iter_mut() {
                        *v = noise.draw();
                    }
                    let sq = h.sqrt();
                    let l_old = l.clone();
                    for i in 0..m {
                        let mut dy = scratch.f[i] * h;
                        let mut dl = 0.0;
                        for j in 0..m {
                            dl += jac[i * m + j] * l_old[j] * h;
                        }
                        for j in 0..d2 {
                            dy += scratch.g[i * d2 + j] * z[j] * sq;
                            dl += gl[i * d2 + j] * z[j] * sq;
                        }
                        y[i] += dy;
                        l[i] += dl;
                    }
                }
            }
            guard(p, t + h, &y)?;
            out[k + 1] = l.iter().map(|v| v * v).sum::<f64>().powi(2);
        }
        Ok(())
    })?;

    let mut moment = Vec::with_capacity(len);
    let mut stderr = Vec::with_capacity(len);
    for k in 0..len {
        let r: Running = (0..spec.n_paths).map(|p| norms[p * len + k]).collect();
        moment.push(r.mean());
        stderr.push(r.stderr());
    }
    Ok(MomentCurve { times: grid.times(), moment, stderr })
}

/// Terminal states of frozen paths from (s, y0) after `n` steps of length `h`,
/// row-major `n_paths × m`. Path `p` uses the stream `(seed, p)`.
pub(crate) fn frozen_terminal(frozen: &FrozenModel, s: f64, y0: &[f64], h: f64, n: usize, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    let stepper = FrozenStepper::new(frozen, s, h, n)?;
    let m = frozen.dim();
    let mut out = vec![0.0; n_paths * m];
    for_each_path(&mut out, m, |p, o| {
        let mut y = y0.to_vec();
        let mut noise = Normals::new(seed, p as u64, Channel::FastNoise);
        stepper.run(p, &mut y, n, &mut noise, |_, _| {})?;
        o.copy_from_slice(&y);
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::Forcing;
    use crate::model::{Dims, LinearFast};
    use crate::rate::RateFunction;
    use std::sync::Arc;

    fn ou(c: f64) -> SlowFastModel {
        SlowFastModel::builder(Dims::scalar())
            .slow(Arc::new(|_x, y, o| o[0] = y[0]), Arc::new(|_x, _y, o| o[0] = 1.0))
            .linear_fast(LinearFast { reversion: RateFunction::constant(c).unwrap(), stationary_variance: 0.5, forcing: Forcing::Zero, coupling: None })
            .rate(RateFunction::constant(c).unwrap())
            .sigma_independent_of_y(true)
            .build()
            .unwrap()
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = TimeGrid::new(0.0, 1.0, 3).unwrap();
        assert_eq!(g.time(3), 1.0);
        assert_eq!(g.times().len(), 4);
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let model = ou(1.0);
        let frozen = model.freeze(&[0.0]).unwrap();
        let spec = FrozenSpec { s: 0.0, y0: vec![1.0], horizon: 1.0, n_steps: 5, n_paths: 3, seed: 4 };
        let e = simulate_frozen(&frozen, &spec).unwrap();
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        let back = PathEnsemble::read_binary(buf.as_slice()).unwrap();
        assert_eq!(e, back);
    }

    #[test]
    fn unstable_explicit_step_is_refused() {
        let alpha = RateFunction::constant(4.0).unwrap();
        let a = alpha.clone();
        let model = SlowFastModel::builder(Dims::scalar())
            .slow(Arc::new(|_x, _y, o| o[0] = 0.0), Arc::new(|_x, _y, o| o[0] = 0.0))
            .fast(Arc::new(move |t, _x, y, o| o[0] = -a.eval(t) * y[0]), Arc::new(|_t, _x, _y, o| o[0] = 1.0))
            .rate(alpha)
            .build()
            .unwrap();
        let spec = CoupledSpec {
            eps: 0.1,
            x0: vec![0.0],
            y0: vec![0.0],
            grid: TimeGrid::new(0.0, 1.0, 10).unwrap(),
            substeps: 1,
            n_paths: 2,
            seed: 0,
            antithetic: false,
        };
        match simulate_coupled(&model, &spec).unwrap_err() {
            Error::Unstable { min_substeps, .. } => assert_eq!(min_substeps, 8),
            e => panic!("unexpected {e}"),
        }
    }
}

//! Browser bindings. Every export takes plain numbers (and a model spec as
//! JSON where a model is needed) and returns a JSON string.

use serde::Serialize;
use slowfast::averaging::AveragingSource;
use slowfast::integrate::{simulate_averaged, simulate_coupled, AveragedSpec, CoupledSpec, NoiseMode, TimeGrid};
use slowfast::measures::{estimate_mu, MeasureSpec};
use slowfast::oracles::{ex1_exact_strong_error, ex1_rate_exponent, Example1Params};
use slowfast::registry::ModelSpec;
use slowfast::{build_averaged, fit_rate, Variant};
use wasm_bindgen::prelude::*;

type Out = Result<String, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct RateTable {
    epsilons: Vec<f64>,
    errors: Vec<f64>,
    fitted_exponent: f64,
    intercept: f64,
    declared_exponent: f64,
    log_correction: bool,
}

/// Exact strong error of Example 1 at time `t` for ε = 2^-from..2^-to.
pub fn rate_table_json(c0: f64, beta: f64, from: i32, to: i32, t: f64) -> Out {
    if to - from < 2 {
        return Err("need at least three values of ε".into());
    }
    let p = Example1Params::new(c0, beta, 0.0, 1.0).map_err(err)?;
    let epsilons: Vec<f64> = (from..=to).map(|k| 2f64.powi(-k)).collect();
    let errors: Vec<f64> = epsilons.iter().map(|&e| ex1_exact_strong_error(&p, e, t)).collect::<Result<_, _>>().map_err(err)?;
    let fit = fit_rate(&epsilons, &errors, None).map_err(err)?;
    let (declared_exponent, _) = ex1_rate_exponent(beta).map_err(err)?;
    let table = RateTable { epsilons, errors, fitted_exponent: fit.exponent, intercept: fit.intercept, declared_exponent, log_correction: fit.log_correction };
    serde_json::to_string(&table).map_err(err)
}

#[derive(Serialize)]
struct Paths {
    times: Vec<f64>,
    /// One row per path, first slow component.
    coupled: Vec<Vec<f64>>,
    averaged: Vec<Vec<f64>>,
    substeps: usize,
}

/// Coupled X^ε and averaged paths on the same slow noise.
pub fn paths_json(model: &str, eps: f64, t_end: f64, n_steps: usize, n_paths: usize, seed: u64) -> Out {
    let spec: ModelSpec = serde_json::from_str(model).map_err(err)?;
    let reg = spec.build().map_err(err)?;
    let avg = build_averaged(&reg.model, Variant::General, AveragingSource::Oracle(&reg.oracle))
        .map_err(|_| format!("model `{}` has no closed-form averaged drift", reg.id))?;
    let dims = reg.model.dims();
    let grid = TimeGrid::new(0.0, t_end, n_steps).map_err(err)?;
    let amax = reg.model.alpha().max_on(0.0, t_end / eps);
    let substeps = ((grid.dt() / eps) / (0.05f64).min(0.25 / amax)).ceil().max(1.0) as usize;
    let (x0, y0) = (vec![0.0; dims.n], vec![0.0; dims.m]);
    let coupled = simulate_coupled(&reg.model, &CoupledSpec { eps, x0: x0.clone(), y0, grid, substeps, n_paths, seed, antithetic: false }).map_err(err)?;
    let noise = if avg.shares_slow_noise() { NoiseMode::Shared } else { NoiseMode::Independent };
    let bar = simulate_averaged(&avg, &AveragedSpec { eps, x0, grid, substeps, n_paths, seed, noise, antithetic: false }).map_err(err)?;
    let first = |e: &slowfast::PathEnsemble| (0..n_paths).map(|p| (0..grid.len()).map(|k| e.state(p, k)[0]).collect()).collect();
    serde_json::to_string(&Paths { times: grid.times(), coupled: first(&coupled.slow), averaged: first(&bar), substeps }).map_err(err)
}

#[derive(Serialize)]
struct Histogram {
    edges: Vec<f64>,
    density: Vec<f64>,
    mean: f64,
    variance: f64,
    burn_in: f64,
}

/// Histogram of the first fast component under μ^x_t.
pub fn measure_histogram_json(model: &str, x: f64, t: f64, n_samples: usize, bins: usize, seed: u64) -> Out {
    let spec: ModelSpec = serde_json::from_str(model).map_err(err)?;
    let reg = spec.build().map_err(err)?;
    let xs = vec![x; reg.model.dims().n];
    let frozen = reg.model.freeze(&xs).map_err(err)?;
    let mu = estimate_mu(&frozen, t, &MeasureSpec { n_samples, seed, ..MeasureSpec::default() }).map_err(err)?;
    let ys = mu.component(0);
    let bins = bins.max(1);
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let width = ((hi - lo) / bins as f64).max(1e-12);
    let mut counts = vec![0usize; bins];
    for v in &ys {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let scale = 1.0 / (ys.len() as f64 * width);
    let hist = Histogram {
        edges: (0..=bins).map(|i| lo + i as f64 * width).collect(),
        density: counts.iter().map(|&c| c as f64 * scale).collect(),
        mean: mu.mean()[0].value,
        variance: mu.variance()[0].value,
        burn_in: mu.burn_in,
    };
    serde_json::to_string(&hist).map_err(err)
}

fn js(r: Out) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = rateTable)]
pub fn rate_table(c0: f64, beta: f64, from: i32, to: i32, t: f64) -> Result<String, JsValue> {
    js(rate_table_json(c0, beta, from, to, t))
}

#[wasm_bindgen(js_name = coupledPaths)]
pub fn coupled_paths(model: &str, eps: f64, t_end: f64, n_steps: usize, n_paths: usize, seed: u64) -> Result<String, JsValue> {
    js(paths_json(model, eps, t_end, n_steps, n_paths, seed))
}

#[wasm_bindgen(js_name = measureHistogram)]
pub fn measure_histogram(model: &str, x: f64, t: f64, n_samples: usize, bins: usize, seed: u64) -> Result<String, JsValue> {
    js(measure_histogram_json(model, x, t, n_samples, bins, seed))
}

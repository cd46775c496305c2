use std::sync::Arc;

use slowfast::integrate::{
    simulate_averaged, simulate_coupled, simulate_frozen, simulate_y_variational, AveragedSpec, CoupledSpec, FrozenSpec, NoiseMode, PathEnsemble,
    SlowIncrements, TimeGrid,
};
use slowfast::oracles::{ex1_mean_y, ex2_mean_y, psi, Example1Params};
use slowfast::quad::adaptive_simpson;
use slowfast::registry::{ModelSpec, RegisteredModel};
use slowfast::rng::Channel;
use slowfast::stats::Running;
use slowfast::{Dims, RateFunction, SlowFastModel};

fn registered(spec: ModelSpec) -> RegisteredModel {
    spec.build().unwrap()
}

fn coupled(eps: f64, y0: f64, n_paths: usize, seed: u64) -> CoupledSpec {
    CoupledSpec { eps, x0: vec![0.0], y0: vec![y0], grid: TimeGrid::new(0.0, 1.0, 10).unwrap(), substeps: 40, n_paths, seed, antithetic: false }
}

fn terminal_stats(e: &PathEnsemble) -> Running {
    let k = e.grid().len() - 1;
    (0..e.n_paths()).map(|p| e.state(p, k)[0]).collect()
}

#[test]
fn averaged_example1_is_brownian_motion_from_x() {
    let reg = registered(ModelSpec::Example1 { c0: 1.0, beta: 0.5 });
    let avg = reg.oracle.general.unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
    let spec = AveragedSpec { eps: 0.1, x0: vec![0.3], grid, substeps: 3, n_paths: 8, seed: 9, noise: NoiseMode::Shared, antithetic: false };
    let bar = simulate_averaged(&avg, &spec).unwrap();
    for p in 0..8 {
        let dw = SlowIncrements::new(9, p, Channel::SlowNoise, grid.dt(), false).collect(16, 1);
        let mut w = 0.3;
        for (k, inc) in dw.iter().enumerate() {
            assert!((bar.state(p, k)[0] - w).abs() < 1e-12);
            w += inc;
        }
        assert!((bar.state(p, 16)[0] - w).abs() < 1e-12);
    }
}

#[test]
fn antithetic_partners_mirror_the_averaged_path() {
    let reg = registered(ModelSpec::Example1 { c0: 1.0, beta: 0.0 });
    let avg = reg.oracle.general.unwrap();
    let spec = AveragedSpec {
        eps: 0.1,
        x0: vec![1.0],
        grid: TimeGrid::new(0.0, 1.0, 8).unwrap(),
        substeps: 2,
        n_paths: 6,
        seed: 4,
        noise: NoiseMode::Shared,
        antithetic: true,
    };
    let bar = simulate_averaged(&avg, &spec).unwrap();
    for p in [0, 2, 4] {
        for k in 0..9 {
            assert!((bar.state(p, k)[0] + bar.state(p + 1, k)[0] - 2.0).abs() < 1e-12);
        }
    }
}

#[test]
fn example1_fast_mean_matches_exponential_decay() {
    let reg = registered(ModelSpec::Example1 { c0: 1.0, beta: 0.5 });
    let eps = 0.1;
    let out = simulate_coupled(&reg.model, &coupled(eps, 1.5, 20_000, 3)).unwrap();
    let r = terminal_stats(&out.fast);
    let p = Example1Params::new(1.0, 0.5, 0.0, 1.5).unwrap();
    let exact = ex1_mean_y(&p, eps, 1.0).unwrap();
    assert!((r.mean() - exact).abs() < 4.0 * r.stderr(), "{} vs {exact}", r.mean());
    // stationary variance ½ is reached well before t = 1
    assert!((r.variance() - 0.5).abs() < 0.03);
}

#[test]
fn example2_fast_mean_matches_the_convolution() {
    let reg = registered(ModelSpec::Example2Periodic { mean: 0.5, amp: 1.0, tau: 1.0 });
    let eps = 0.05;
    let out = simulate_coupled(&reg.model, &coupled(eps, 2.0, 20_000, 5)).unwrap();
    let r = terminal_stats(&out.fast);
    let exact = ex2_mean_y(&reg.example2_params(0.0, 2.0).unwrap(), eps, 1.0).unwrap();
    assert!((r.mean() - exact).abs() < 4.0 * r.stderr(), "{} vs {exact}", r.mean());
}

#[test]
fn averaged_example2_drift_integrates_psi() {
    let reg = registered(ModelSpec::Example2Decaying { amp: 1.0, p: 1.0 });
    let avg = reg.oracle.general.unwrap();
    let forcing = reg.example2.unwrap();
    let (eps, n, q) = (0.05, 20, 200);
    let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
    let spec = AveragedSpec { eps, x0: vec![0.0], grid, substeps: q, n_paths: 1, seed: 2, noise: NoiseMode::Shared, antithetic: false };
    let bar = simulate_averaged(&avg, &spec).unwrap();
    let w: f64 = SlowIncrements::new(2, 0, Channel::SlowNoise, grid.dt(), false).collect(n, 1).iter().sum();
    let drift_part = bar.state(0, n)[0] - w;
    let exact = adaptive_simpson(|s| psi(&forcing, s / eps).unwrap(), 0.0, 1.0, 1e-10).unwrap();
    // left-point sums with micro-step 1/(n q) in slow time
    assert!((drift_part - exact).abs() < 2e-3, "{drift_part} vs {exact}");
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let reg = registered(ModelSpec::Nonlinear1d { rate: slowfast::registry::RateSpec::Power { c0: 1.0, beta: 0.5 }, sigma_y_coupling: 0.3 });
    let a = simulate_coupled(&reg.model, &coupled(0.1, 0.5, 32, 11)).unwrap();
    let b = simulate_coupled(&reg.model, &coupled(0.1, 0.5, 32, 11)).unwrap();
    let c = simulate_coupled(&reg.model, &coupled(0.1, 0.5, 32, 12)).unwrap();
    assert_eq!(a.slow.states(), b.slow.states());
    assert_eq!(a.fast.states(), b.fast.states());
    assert_ne!(a.slow.states(), c.slow.states());
}

#[test]
fn explicit_steps_beyond_the_stability_limit_are_refused() {
    let reg = registered(ModelSpec::Nonlinear1d { rate: slowfast::registry::RateSpec::Power { c0: 1.0, beta: 1.0 }, sigma_y_coupling: 0.0 });
    let mut spec = coupled(0.01, 0.0, 4, 1);
    spec.substeps = 2;
    match simulate_coupled(&reg.model, &spec) {
        Err(slowfast::Error::Unstable { min_substeps, .. }) => assert!(min_substeps > 2),
        other => panic!("expected an instability error, got {other:?}"),
    }
}

#[test]
fn zero_dynamics_keep_the_initial_state() {
    let zero2: Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync> = Arc::new(|_, _, o| o.fill(0.0));
    let zero3: Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync> = Arc::new(|_, _, _, o| o.fill(0.0));
    let model = SlowFastModel::builder(Dims::scalar())
        .slow(zero2.clone(), zero2)
        .fast(zero3.clone(), zero3)
        .rate(RateFunction::constant(1.0).unwrap())
        .sigma_independent_of_y(true)
        .build()
        .unwrap();
    let out = simulate_coupled(&model, &CoupledSpec { x0: vec![0.7], ..coupled(0.3, -1.2, 3, 1) }).unwrap();
    assert!(out.slow.states().iter().all(|v| *v == 0.7));
    assert!(out.fast.states().iter().all(|v| *v == -1.2));
}

#[test]
fn frozen_constant_rate_law() {
    let reg = registered(ModelSpec::Example1 { c0: 2.0, beta: 0.0 });
    let frozen = reg.model.freeze(&[0.0]).unwrap();
    let spec = FrozenSpec { s: 1.0, y0: vec![1.0], horizon: 0.4, n_steps: 4, n_paths: 40_000, seed: 8 };
    let ens = simulate_frozen(&frozen, &spec).unwrap();
    let r = terminal_stats(&ens);
    let decay = (-2.0f64 * 0.4).exp();
    assert!((r.mean() - decay).abs() < 4.0 * r.stderr());
    let var = 0.5 * (1.0 - decay * decay);
    assert!((r.variance() - var).abs() < 4.0 * var * (2.0 / 40_000f64).sqrt());
}

#[test]
fn variational_flow_of_example1_is_deterministic() {
    let reg = registered(ModelSpec::Example1 { c0: 1.0, beta: 0.5 });
    let frozen = reg.model.freeze(&[0.0]).unwrap();
    let spec = FrozenSpec { s: 0.5, y0: vec![0.2], horizon: 2.0, n_steps: 8, n_paths: 16, seed: 1 };
    let curve = simulate_y_variational(&frozen, &spec, &[0.8]).unwrap();
    for (k, t) in curve.times.iter().enumerate() {
        let exact = (-4.0 * reg.model.alpha().integral(0.5, *t).unwrap()).exp() * 0.8f64.powi(4);
        assert!((curve.moment[k] - exact).abs() < 1e-12 * (1.0 + exact));
        assert!(curve.stderr[k] < 1e-12);
    }
    let zero = simulate_y_variational(&frozen, &spec, &[0.0]).unwrap();
    assert!(zero.moment.iter().all(|m| *m == 0.0));
}

#[test]
fn ensembles_survive_binary_and_csv_output() {
    let reg = registered(ModelSpec::Example1 { c0: 1.0, beta: 0.0 });
    let out = simulate_coupled(&reg.model, &coupled(0.2, 0.0, 5, 21)).unwrap();
    let mut file = tempfile::tempfile().unwrap();
    out.slow.write_binary(&mut file).unwrap();
    use std::io::{Seek, SeekFrom};
    file.seek(SeekFrom::Start(0)).unwrap();
    let back = PathEnsemble::read_binary(&mut file).unwrap();
    assert_eq!(back.states(), out.slow.states());
    assert_eq!(back.seed(), 21);

    let mut csv = Vec::new();
    out.slow.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 11);
    let last: f64 = text.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(last, out.slow.state(4, 10)[0]);
}

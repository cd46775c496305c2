use std::sync::Arc;

use slowfast::forcing::ForcingSpec;
use slowfast::measures::{
    averaged_diffusion, averaged_drift, check_mu_convergence, check_mu_periodicity, estimate_mu, estimate_mu_limit, periodic_average_drift, MeasureSpec,
};
use slowfast::oracles::{ex2_periodic_drift, psi};
use slowfast::registry::{ModelSpec, RateSpec, RegisteredModel};

fn registered(spec: ModelSpec) -> RegisteredModel {
    spec.build().unwrap()
}

fn spec(n: usize, seed: u64) -> MeasureSpec {
    MeasureSpec { n_samples: n, seed, ..MeasureSpec::default() }
}

#[test]
fn gaussian_moments_under_example1_measure() {
    let reg = registered(ModelSpec::Example1 { c0: 1.0, beta: 0.5 });
    let mu = estimate_mu(&reg.model.freeze(&[0.4]).unwrap(), 1.7, &spec(40_000, 1)).unwrap();

    let y: slowfast::model::SlowDrift = Arc::new(|_, y, o| o[0] = y[0]);
    assert!(averaged_drift(&y, 1, &mu, &[0.4]).unwrap()[0].agrees_with(0.0, 3.0, 0.0));
    let y2: slowfast::model::SlowDrift = Arc::new(|_, y, o| o[0] = y[0] * y[0]);
    assert!(averaged_drift(&y2, 1, &mu, &[0.4]).unwrap()[0].agrees_with(0.5, 3.0, 0.0));
    let x: slowfast::model::SlowDrift = Arc::new(|x, _, o| o[0] = x[0]);
    let bx = averaged_drift(&x, 1, &mu, &[0.4]).unwrap()[0];
    assert_eq!((bx.value, bx.stderr), (0.4, 0.0));

    // E(1 + y²)² = 1 + 2·½ + 3·¼ under N(0, ½)
    let sigma: slowfast::model::SlowDiffusion = Arc::new(|_, y, o| o[0] = 1.0 + y[0] * y[0]);
    let d = averaged_diffusion(&sigma, 1, 1, &mu, &[0.4]).unwrap();
    assert!((d.second_moment[0] - 2.75).abs() < 0.05, "{}", d.second_moment[0]);
    assert!((d.sqrt[0] * d.sqrt[0] - d.second_moment[0]).abs() < 1e-8);

    assert!(averaged_drift(&y, 1, &mu, &[0.0]).is_err());
}

#[test]
fn example2_measure_is_centred_at_psi() {
    let reg = registered(ModelSpec::Example2Decaying { amp: 2.0, p: 1.0 });
    let forcing = reg.example2.clone().unwrap();
    for (i, t) in [0.0, 1.0, 6.0].into_iter().enumerate() {
        let mu = estimate_mu(&reg.model.freeze(&[0.0]).unwrap(), t, &spec(20_000, 10 + i as u64)).unwrap();
        assert!(mu.mean()[0].agrees_with(psi(&forcing, t).unwrap(), 4.0, 0.0));
    }
}

#[test]
fn limit_measure_of_a_forced_ou_process() {
    let reg = registered(ModelSpec::LinearNd {
        n: 1,
        m: 1,
        rate: RateSpec::Constant { c: 3.0 },
        coupling: Some(vec![0.5]),
        stationary_variance: 0.8,
        forcing: ForcingSpec::Constant { level: 1.0 },
        slow_reversion: 1.0,
        slow_noise: 1.0,
    });
    let limit = reg.model.limit_model().unwrap().freeze(&[2.0]).unwrap();
    let mu = estimate_mu_limit(&limit, &spec(40_000, 2)).unwrap();
    // N(θ + C x, v)
    assert!(mu.mean()[0].agrees_with(2.0, 4.0, 0.0));
    assert!(mu.variance()[0].agrees_with(0.8, 4.0, 0.0));
}

#[test]
fn periodicity_holds_for_periodic_forcing_only() {
    let periodic = registered(ModelSpec::Example2Periodic { mean: 0.5, amp: 1.0, tau: 2.0 });
    let report = check_mu_periodicity(&periodic.model.freeze(&[0.0]).unwrap(), 0.3, 2.0, &spec(20_000, 3)).unwrap();
    assert!(report.passed, "{report:?}");

    let decaying = registered(ModelSpec::Example2Decaying { amp: 3.0, p: 1.0 });
    let report = check_mu_periodicity(&decaying.model.freeze(&[0.0]).unwrap(), 0.3, 2.0, &spec(20_000, 4)).unwrap();
    assert!(!report.passed);
    assert!(report.mean_diff[0].abs() > 10.0 * report.mean_stderr[0]);
}

#[test]
fn period_average_of_drift_matches_forcing_mean() {
    let reg = registered(ModelSpec::Example2Periodic { mean: 0.5, amp: 1.0, tau: 1.0 });
    let b = reg.model.slow_drift_fn().clone();
    let est = periodic_average_drift(&b, 1, &reg.model.freeze(&[0.0]).unwrap(), 1.0, 32, &spec(4_000, 5)).unwrap();
    let exact = ex2_periodic_drift(&reg.example2_params(0.0, 0.0).unwrap()).unwrap();
    assert!((exact - 0.5).abs() < 1e-10);
    assert!(est[0].agrees_with(exact, 4.0, 1e-3));
}

#[test]
fn convergence_to_the_limit_measure() {
    let reg = registered(ModelSpec::Example2Decaying { amp: 1.0, p: 1.0 });
    let limit = reg.model.limit_model().unwrap().freeze(&[0.0]).unwrap();
    let frozen = reg.model.freeze(&[0.0]).unwrap();
    let decay = |t: f64| 1.0 / (1.0 + t.abs());
    let report = check_mu_convergence(&frozen, &limit, &[0.5, 2.0, 8.0, 32.0], &decay, 0.5, &spec(20_000, 6)).unwrap();
    assert!(report.bound_holds, "{report:?}");
    assert!(!report.limit_failure);

    // constant forcing never decays to the −y limit
    let constant = registered(ModelSpec::Example2Constant { level: 1.0 });
    let limit = constant.model.limit_model().unwrap().freeze(&[0.0]).unwrap();
    let frozen = constant.model.freeze(&[0.0]).unwrap();
    let report = check_mu_convergence(&frozen, &limit, &[0.5, 8.0, 32.0], &|_| 1.0, 0.5, &spec(20_000, 7)).unwrap();
    assert!(report.limit_failure);
    assert!((report.rows.last().unwrap().identity_gap - 1.0).abs() < 0.05);
}

use rand::Rng;
use slowfast::averaging::{
    check_bound_shape, check_lambda_ratio, fit_rate, strong_error, theoretical_bound, weak_error, BoundExtras, BoundKind, RateExperiment, TestFunction,
    WeakMode,
};
use slowfast::integrate::NoiseMode;
use slowfast::oracles::{ex1_exact_strong_error, Example1Params};
use slowfast::registry::{ModelSpec, RateSpec};
use slowfast::rng::{substream, Channel};
use slowfast::RateFunction;

fn powers(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(-k)).collect()
}

#[test]
fn log_corrected_square_law_is_flagged() {
    let eps = powers(4, 10);
    let errors: Vec<f64> = eps.iter().map(|e| e * e * (1.0 / e).ln()).collect();
    let fit = fit_rate(&eps, &errors, None).unwrap();
    // plain least squares of ln(ε² ln 1/ε) on ln ε over this grid
    assert!((fit.exponent - 1.782_970_871_533_898).abs() < 1e-9, "{}", fit.exponent);
    assert!(fit.log_correction);
    assert!(fit.r_squared < 1.0);
}

#[test]
fn noisy_power_law_is_recovered() {
    let mut rng = substream(17, 0, Channel::Auxiliary);
    let eps = powers(3, 10);
    for p in [0.5, 1.0, 1.5, 2.0] {
        let errors: Vec<f64> = eps.iter().map(|e| 2.0 * e.powf(p) * (1.0 + rng.random_range(-0.05..0.05))).collect();
        let stderrs: Vec<f64> = errors.iter().map(|e| 0.03 * e).collect();
        let fit = fit_rate(&eps, &errors, Some(&stderrs)).unwrap();
        assert!((fit.exponent - p).abs() < 0.1, "{p}: {}", fit.exponent);
    }
}

#[test]
fn non_positive_errors_are_refused() {
    assert!(fit_rate(&[0.1, 0.05, 0.02], &[1.0, 0.0, 0.1], None).is_err());
    assert!(fit_rate(&[0.1, 0.05, 0.02], &[1.0, 0.5], None).is_err());
}

#[test]
fn brackets_shrink_with_eps_for_growing_rates() {
    let alpha = RateFunction::power(1.0, 0.5).unwrap();
    for kind in [BoundKind::Strong, BoundKind::Weak, BoundKind::PeriodicStrong, BoundKind::PeriodicWeak] {
        let values: Vec<f64> = powers(2, 10).iter().map(|&e| theoretical_bound(kind, &alpha, 0.9, 1.0, e, &BoundExtras::default()).unwrap().value).collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{kind:?}: {values:?}");
    }
}

#[test]
fn periodic_bracket_is_dominated_by_two_thirds_power() {
    let alpha = RateFunction::constant(1.0).unwrap();
    let eps = 1e-9;
    let b = theoretical_bound(BoundKind::PeriodicStrong, &alpha, 0.9, 1.0, eps, &BoundExtras::default()).unwrap();
    assert!((b.value / eps.powf(2.0 / 3.0) - 1.0).abs() < 0.01);
}

#[test]
fn convergent_brackets_need_their_extras() {
    let alpha = RateFunction::constant(1.0).unwrap();
    assert!(theoretical_bound(BoundKind::ConvergentWeak, &alpha, 0.9, 1.0, 0.1, &BoundExtras::default()).is_err());
    let extras = BoundExtras { decay: Some(std::sync::Arc::new(|t: f64| 1.0 / (1.0 + t))), beta: Some(0.5), limit_rate: Some(1.0) };
    let b = theoretical_bound(BoundKind::ConvergentWeak, &alpha, 0.9, 1.0, 0.1, &extras).unwrap();
    assert!(b.convolution.unwrap() > 0.0 && b.value > 0.1 / 0.9);
}

#[test]
fn lambda_ratio_vanishes_for_constant_rate() {
    let report = check_lambda_ratio(&RateFunction::constant(1.0).unwrap(), 0.9, 1.0, &powers(2, 8)).unwrap();
    assert!(report.rows.windows(2).all(|w| w[1].ratio < w[0].ratio));
    assert!(report.bounded);
}

#[test]
fn weak_tanh_error_respects_the_lambda_bracket() {
    let reg = ModelSpec::Example1 { c0: 1.0, beta: 0.5 }.build().unwrap();
    let avg = reg.oracle.general.clone().unwrap();
    let exp = RateExperiment {
        epsilons: powers(3, 6),
        t_end: 1.0,
        n_steps: 8,
        fast_step: 0.1,
        rate_resolution: 0.25,
        n_paths: 2000,
        seed: 3,
        x0: vec![0.0],
        y0: vec![1.0],
        antithetic: false,
    };
    let tf = TestFunction::Tanh { weights: vec![1.0], offset: 0.3 };
    assert!(tf.in_c4b());
    let est = weak_error(&reg.model, &avg, &[tf], &exp, WeakMode::Paired).unwrap().remove(0);
    let brackets: Vec<f64> =
        est.epsilons.iter().map(|&e| theoretical_bound(BoundKind::Weak, reg.model.alpha(), 0.9, 1.0, e, &BoundExtras::default()).unwrap().value).collect();
    assert!(check_bound_shape(&est, &brackets).unwrap().passed);
}

#[test]
fn strong_error_refuses_y_dependent_noise() {
    let reg = ModelSpec::Nonlinear1d { rate: RateSpec::Constant { c: 1.0 }, sigma_y_coupling: 0.5 }.build().unwrap();
    let avg = slowfast::build_averaged(
        &reg.model,
        slowfast::Variant::General,
        slowfast::averaging::AveragingSource::Estimate(slowfast::averaging::EstimationSpec::default()),
    )
    .unwrap();
    let exp = RateExperiment {
        epsilons: powers(3, 5),
        t_end: 1.0,
        n_steps: 4,
        fast_step: 0.1,
        rate_resolution: 0.25,
        n_paths: 10,
        seed: 1,
        x0: vec![0.0],
        y0: vec![0.0],
        antithetic: false,
    };
    assert!(matches!(strong_error(&reg.model, &avg, &exp, NoiseMode::Shared), Err(slowfast::Error::Precondition(_))));
}

#[test]
fn exact_strong_errors_sit_below_the_bracket_with_unit_constant() {
    for beta in [-0.5, 0.0, 0.5, 1.0, 2.0] {
        let alpha = RateFunction::power(1.0, beta).unwrap();
        let p = Example1Params::new(1.0, beta, 0.0, 1.0).unwrap();
        let ratios: Vec<f64> = powers(4, 10)
            .iter()
            .map(|&e| {
                let sup = (1..=64).map(|i| ex1_exact_strong_error(&p, e, i as f64 / 64.0).unwrap()).fold(0.0, f64::max);
                sup / theoretical_bound(BoundKind::Strong, &alpha, 0.9, 1.0, e, &BoundExtras::default()).unwrap().value
            })
            .collect();
        assert!(ratios.iter().all(|r| *r < 1.0), "β={beta}: {ratios:?}");
        // the ratio creeps up as ε shrinks, so a constant read off the
        // largest ε alone undershoots at the small end
        assert!(ratios.windows(2).all(|w| w[1] >= w[0]), "β={beta}: {ratios:?}");
    }
}

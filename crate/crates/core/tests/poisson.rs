use std::sync::Arc;

use slowfast::forcing::ForcingSpec;
use slowfast::measures::MeasureSpec;
use slowfast::poisson::{check_centering, check_growth, default_fd_steps, phi, residual, CenteredFunction, PhiEvaluator};
use slowfast::registry::{ModelSpec, RateSpec, RegisteredModel};

fn ou(c: f64) -> RegisteredModel {
    ModelSpec::LinearNd {
        n: 1,
        m: 1,
        rate: RateSpec::Constant { c },
        coupling: None,
        stationary_variance: 0.5,
        forcing: ForcingSpec::Zero,
        slow_reversion: 1.0,
        slow_noise: 1.0,
    }
    .build()
    .unwrap()
}

fn identity() -> CenteredFunction {
    CenteredFunction::explicit(1, Arc::new(|_s, _x, y, o| Ok(o[0] = y[0])))
}

fn evaluator(model: &RegisteredModel, source: CenteredFunction, paths: usize) -> PhiEvaluator {
    let mut ev = PhiEvaluator::new(source, model.model.clone()).unwrap();
    ev.inner_paths = paths;
    ev
}

#[test]
fn example1_solution_is_y_times_lambda() {
    let reg = ModelSpec::Example1 { c0: 1.0, beta: 0.5 }.build().unwrap();
    let ev = evaluator(&reg, identity(), 400);
    for (s, y) in [(0.0, 1.0), (3.0, -0.5), (20.0, 2.0)] {
        let est = phi(&ev, s, &[0.0], &[y]).unwrap();
        let exact = y * reg.model.alpha().lambda(s, 1e-12).unwrap();
        let slack = 3.0 * est.stderr[0] + est.tail_bound + 5.0 * est.quad_error[0] + 1e-9;
        assert!((est.value[0] - exact).abs() <= slack, "s={s}: {} vs {exact}", est.value[0]);
    }
    let (hs, hy) = default_fd_steps(0.0, &[1.0]);
    assert!(residual(&ev, 0.0, &[0.0], &[1.0], hs, hy).unwrap().passed);
}

#[test]
fn solution_is_linear_in_the_source() {
    let reg = ou(1.5);
    let cube = CenteredFunction::explicit(1, Arc::new(|_s, _x, y, o| Ok(o[0] = y[0].powi(3) - 1.5 * y[0])));
    let combo = CenteredFunction::combine(&identity(), 2.0, &cube, -0.5).unwrap();
    let (a, b, c) = (evaluator(&reg, identity(), 300), evaluator(&reg, cube, 300), evaluator(&reg, combo, 300));
    let (pa, pb, pc) = (phi(&a, 0.0, &[0.0], &[0.8]).unwrap(), phi(&b, 0.0, &[0.0], &[0.8]).unwrap(), phi(&c, 0.0, &[0.0], &[0.8]).unwrap());
    // common random numbers make the combination exact up to quadrature
    assert!((pc.value[0] - (2.0 * pa.value[0] - 0.5 * pb.value[0])).abs() < 1e-9);
}

#[test]
fn uncentered_source_is_flagged() {
    let reg = ModelSpec::Example1 { c0: 1.0, beta: 0.0 }.build().unwrap();
    let spec = MeasureSpec { n_samples: 20_000, seed: 4, ..MeasureSpec::default() };
    let centred = check_centering(&identity(), &reg.model, &[0.0, 2.0], &[vec![0.0]], &spec).unwrap();
    assert!(centred.passed);
    let square = CenteredFunction::explicit(1, Arc::new(|_s, _x, y, o| Ok(o[0] = y[0] * y[0])));
    let report = check_centering(&square, &reg.model, &[0.0, 2.0], &[vec![0.0]], &spec).unwrap();
    assert!(!report.passed);
    assert!(report.rows.iter().all(|r| (r.mean[0] - 0.5).abs() < 0.03));
}

#[test]
fn growth_ratio_of_the_ou_benchmark_stays_below_one() {
    let reg = ou(2.0);
    let ev = evaluator(&reg, identity(), 200);
    let points: Vec<(f64, Vec<f64>, Vec<f64>)> = [-3.0, -0.5, 0.0, 1.0, 4.0].iter().map(|&y| (1.0, vec![0.0], vec![y])).collect();
    let report = check_growth(&ev, &points).unwrap();
    assert!(report.max_ratio < 1.0, "{}", report.max_ratio);

    let zero = CenteredFunction::explicit(1, Arc::new(|_s, _x, _y, o| Ok(o[0] = 0.0)));
    let report = check_growth(&evaluator(&reg, zero, 50), &points).unwrap();
    assert_eq!(report.max_ratio, 0.0);
}

#[test]
fn b_minus_bbar_for_example2_subtracts_psi() {
    let reg = ModelSpec::Example2Decaying { amp: 1.0, p: 1.0 }.build().unwrap();
    let avg = reg.oracle.general.clone().unwrap();
    let h = CenteredFunction::b_minus_bbar(&reg.model, &avg).unwrap();
    let forcing = reg.example2.clone().unwrap();
    let mut out = [0.0];
    h.eval(2.0, &[0.3], &[1.1], &mut out).unwrap();
    assert!((out[0] - (1.1 - slowfast::oracles::psi(&forcing, 2.0).unwrap())).abs() < 1e-9);
}

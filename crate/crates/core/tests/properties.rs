use proptest::prelude::*;
use slowfast::averaging::{check_period_average, fit_rate};
use slowfast::measures::psd_sqrt;
use slowfast::oracles::{ex1_exact_strong_error, Example1Params};
use slowfast::quad::adaptive_simpson;
use slowfast::rate::RateFunction;
use slowfast::stats::energy_distance_1d;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integral_is_additive(c0 in 0.1f64..5.0, beta in -0.9f64..2.0, s in -5.0f64..5.0, d1 in 0.0f64..5.0, d2 in 0.0f64..5.0) {
        let a = RateFunction::power(c0, beta).unwrap();
        let (u, t) = (s + d1, s + d1 + d2);
        let whole = a.integral(s, t).unwrap();
        let split = a.integral(s, u).unwrap() + a.integral(u, t).unwrap();
        prop_assert!((whole - split).abs() <= 1e-10 * (1.0 + whole.abs()));
        prop_assert!(whole >= 0.0);
    }

    #[test]
    fn integral_matches_quadrature(c0 in 0.1f64..3.0, beta in -0.9f64..2.0, s in 0.0f64..4.0, d in 0.0f64..4.0) {
        let a = RateFunction::power(c0, beta).unwrap();
        let quad = adaptive_simpson(|u| a.eval(u), s, s + d, 1e-12).unwrap();
        prop_assert!((a.integral(s, s + d).unwrap() - quad).abs() <= 1e-8 * (1.0 + quad));
    }

    #[test]
    fn lambda_is_decreasing_in_gamma(c0 in 0.2f64..3.0, beta in -0.5f64..1.5, t in 0.0f64..10.0, g in 0.2f64..0.9) {
        let a = RateFunction::power(c0, beta).unwrap();
        let lo = a.lambda_gamma(g, t, 1e-10).unwrap();
        let hi = a.lambda_gamma(g + 0.1, t, 1e-10).unwrap();
        prop_assert!(lo >= hi - 1e-9);
    }

    #[test]
    fn lambda_is_non_increasing_in_time_for_growing_rates(c0 in 0.2f64..3.0, beta in 0.0f64..2.0, t in 0.0f64..20.0, dt in 0.0f64..5.0) {
        let a = RateFunction::power(c0, beta).unwrap();
        let early = a.lambda(t, 1e-10).unwrap();
        let late = a.lambda(t + dt, 1e-10).unwrap();
        prop_assert!(late <= early + 1e-8);
    }

    #[test]
    fn flat_power_rate_equals_constant(c in 0.1f64..5.0, s in 0.0f64..5.0, d in 0.0f64..5.0, g in 0.1f64..1.0) {
        let p = RateFunction::power(c, 0.0).unwrap();
        let k = RateFunction::constant(c).unwrap();
        prop_assert!((p.integral(s, s + d).unwrap() - k.integral(s, s + d).unwrap()).abs() < 1e-10);
        prop_assert!((p.lambda_gamma(g, s, 1e-12).unwrap() - 1.0 / (g * c)).abs() < 1e-8 / (g * c));
    }

    #[test]
    fn advance_inverts_the_integral(c0 in 0.1f64..3.0, beta in -0.9f64..2.0, s in 0.0f64..10.0, amount in 0.0f64..20.0) {
        let a = RateFunction::power(c0, beta).unwrap();
        let t = a.advance(s, amount).unwrap();
        prop_assert!((a.integral(s, t).unwrap() - amount).abs() <= 1e-8 * (1.0 + amount));
    }

    #[test]
    fn fit_recovers_power_laws(c in 0.01f64..100.0, p in 0.2f64..3.0) {
        let eps: Vec<f64> = (3..=9).map(|k| 2f64.powi(-k)).collect();
        let errors: Vec<f64> = eps.iter().map(|e| c * e.powf(p)).collect();
        let fit = fit_rate(&eps, &errors, None).unwrap();
        prop_assert!((fit.exponent - p).abs() < 1e-9);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-8);
    }

    #[test]
    fn sine_average_is_within_tau_over_pi_t(tau in 0.2f64..5.0, a in 0.0f64..20.0, t in 0.5f64..50.0) {
        let w = 2.0 * std::f64::consts::PI / tau;
        let report = check_period_average(&|s| (w * s).sin(), tau, Some(1.0), &[a], &[t], Some(&|s| (1.0 - (w * s).cos()) / w)).unwrap();
        prop_assert!(report.passed);
        prop_assert!(report.rows[0].lhs <= tau / (std::f64::consts::PI * t) + 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        // M = L Lᵀ is positive semi-definite by construction
        let m = [a * a, a * b, a * b, b * b + c * c];
        let d = psd_sqrt(&m, 2).unwrap();
        let s = &d.sqrt;
        for i in 0..2 {
            for j in 0..2 {
                let v: f64 = (0..2).map(|k| s[i * 2 + k] * s[j * 2 + k]).sum();
                prop_assert!((v - m[i * 2 + j]).abs() < 1e-8 * (1.0 + m[0] + m[3]));
            }
        }
    }

    #[test]
    fn energy_distance_is_symmetric_and_nonnegative(a in prop::collection::vec(-5.0f64..5.0, 1..40), b in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let ab = energy_distance_1d(&a, &b);
        prop_assert!(ab >= -1e-12);
        prop_assert!((ab - energy_distance_1d(&b, &a)).abs() < 1e-9);
        prop_assert!(energy_distance_1d(&a, &a).abs() < 1e-9);
    }

    #[test]
    fn ex1_error_is_monotone_in_eps(beta in -0.5f64..2.0, t in 0.2f64..2.0) {
        let p = Example1Params::new(1.0, beta, 0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        let coarse = ex1_exact_strong_error(&p, 2f64.powi(-5), t).unwrap();
        let fine = ex1_exact_strong_error(&p, 2f64.powi(-7), t).unwrap();
        prop_assert!(fine > 0.0 && fine < coarse);
    }
}

//! Strong averaging error of Example 1 on a short ε grid.

use slowfast::averaging::AveragingSource;
use slowfast::integrate::NoiseMode;
use slowfast::registry::ModelSpec;
use slowfast::{build_averaged, strong_error, RateExperiment, Variant};

fn main() -> slowfast::Result<()> {
    let reg = ModelSpec::Example1 { c0: 1.0, beta: 0.5 }.build()?;
    let avg = build_averaged(&reg.model, Variant::General, AveragingSource::Oracle(&reg.oracle))?;
    let exp = RateExperiment {
        epsilons: vec![0.0625, 0.03125, 0.015625],
        t_end: 1.0,
        n_steps: 16,
        fast_step: 0.05,
        rate_resolution: 0.25,
        n_paths: 2000,
        seed: 1,
        x0: vec![0.0],
        y0: vec![1.0],
        antithetic: false,
    };
    let est = strong_error(&reg.model, &avg, &exp, NoiseMode::Shared)?;
    for (e, (err, se)) in est.epsilons.iter().zip(est.errors.iter().zip(&est.stderrs)) {
        println!("eps = {e:<10} error = {err:.6} ± {se:.6}");
    }
    println!("fitted exponent: {:?}", est.exponent());
    Ok(())
}

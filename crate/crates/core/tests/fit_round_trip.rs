use std::thread;

use emitterlab::correlator::{full_correlation_histogram, normalize, G2Curve};
use emitterlab::inference::{fit_long, fit_short, CurveFitOptions, FitError, FitResult, Irf};
use emitterlab::mcsim::{simulate_acquisition, DetectorConfig, SimConfig};
use emitterlab::model::{G2Params, RateParams};

fn published(power: f64) -> RateParams {
    RateParams::new(0.0518877 * power, 0.47, 2.75e-3, 1.71e-3 * (1.0 + 0.102 * power)).unwrap()
}

fn detector(efficiency: f64) -> DetectorConfig {
    DetectorConfig {
        efficiency,
        jitter_fwhm: DetectorConfig::jitter_for_pair_irf(1.2),
        ..DetectorConfig::default()
    }
}

/// Short (0.17 ns / 20 ns) and long (2.3 ns / 2000 ns) curves of one run.
fn curves(rates: RateParams, efficiency: f64, duration: f64, seed: u64) -> (G2Curve, G2Curve) {
    let cfg = SimConfig {
        rates,
        quantum_yield: 0.524,
        duration,
        seed,
    };
    let (a, b) = simulate_acquisition(&cfg, &detector(efficiency)).unwrap();
    let short = normalize(&full_correlation_histogram(&a, &b, 0.17, 20.0).unwrap()).unwrap();
    let long = normalize(&full_correlation_histogram(&a, &b, 2.3, 2000.0).unwrap()).unwrap();
    (short, long)
}

/// Long fit, then the short fit with the fitted λ₂ held fixed.
fn fit_both(short: &G2Curve, long: &G2Curve) -> (FitResult, FitResult) {
    let irf = Irf::new(1.2);
    let l = fit_long(long, &irf, &CurveFitOptions::default()).unwrap();
    let opts = CurveFitOptions {
        lambda2: Some(l.value("lambda2").unwrap()),
        ..CurveFitOptions::default()
    };
    (fit_short(short, &irf, &opts).unwrap(), l)
}

fn z(fit: &FitResult, name: &str, truth: f64) -> f64 {
    (fit.value(name).unwrap() - truth) / fit.stderr(name).unwrap()
}

#[test]
fn published_rates_long_acquisition_recovers_both_rates() {
    let rates = published(9.0);
    let truth = rates.g2_params().unwrap();
    let (short, long) = curves(rates, 8.008e-4, 600.0, 18);
    let (s, l) = fit_both(&short, &long);
    assert!(z(&s, "lambda1", truth.lambda1).abs() <= 2.0, "{}", s.report());
    assert!(z(&l, "lambda2", truth.lambda2).abs() <= 2.0, "{}", l.report());
    assert!(z(&l, "a", truth.a).abs() <= 3.0, "{}", l.report());
}

#[test]
fn two_level_emitter_shows_no_bunching() {
    let rates = RateParams::new(0.3, 0.47, 0.0, 1e-3).unwrap();
    let (short, _) = curves(rates, 0.01, 5.0, 4);
    let fit = fit_short(&short, &Irf::new(1.2), &CurveFitOptions::default()).unwrap();
    assert!(z(&fit, "a", 0.0).abs() <= 3.0, "{}", fit.report());
    assert!(z(&fit, "lambda1", 0.77).abs() <= 3.0, "{}", fit.report());
}

#[test]
fn fixed_lambda2_must_be_positive() {
    let (short, _) = curves(published(5.0), 4e-3, 5.0, 8);
    let opts = CurveFitOptions {
        lambda2: Some(0.0),
        ..CurveFitOptions::default()
    };
    assert!(matches!(
        fit_short(&short, &Irf::new(1.2), &opts),
        Err(FitError::Degenerate(_))
    ));
}

#[test]
fn fixed_lambda2_removes_plateau_bias() {
    // A long window on a strongly bunched curve: the flat-plateau model has to
    // absorb the slow decay, the model with λ₂ held at its true value does not.
    let rates = published(9.0);
    let truth: G2Params = rates.g2_params().unwrap();
    let (short, _) = curves(rates, 4e-3, 60.0, 12);
    let irf = Irf::new(1.2);
    let fixed = fit_short(
        &short,
        &irf,
        &CurveFitOptions {
            lambda2: Some(truth.lambda2),
            ..CurveFitOptions::default()
        },
    )
    .unwrap();
    assert!(z(&fixed, "lambda1", truth.lambda1).abs() <= 3.0, "{}", fixed.report());
    assert!(z(&fixed, "a", truth.a).abs() <= 3.0, "{}", fixed.report());
}

#[test]
fn two_standard_error_intervals_cover() {
    let rates = published(9.0);
    let truth = rates.g2_params().unwrap();
    let runs = 50u64;
    let threads = thread::available_parallelism().map_or(4, |n| n.get()).min(8) as u64;
    let hits: Vec<(bool, bool)> = thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|k| {
                s.spawn(move || {
                    (k..runs)
                        .step_by(threads as usize)
                        .map(|seed| {
                            let (short, long) = curves(rates, 4e-3, 15.0, 1000 + seed);
                            let (sf, lf) = fit_both(&short, &long);
                            (
                                z(&sf, "lambda1", truth.lambda1).abs() <= 2.0,
                                z(&lf, "lambda2", truth.lambda2).abs() <= 2.0,
                            )
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let l1 = hits.iter().filter(|h| h.0).count();
    let l2 = hits.iter().filter(|h| h.1).count();
    assert!(l1 as f64 >= 0.8 * runs as f64, "lambda1 covered {l1}/{runs}");
    assert!(l2 as f64 >= 0.8 * runs as f64, "lambda2 covered {l2}/{runs}");
}

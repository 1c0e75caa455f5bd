use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emitterlab::correlator::{full_correlation_histogram, normalize};
use emitterlab::inference::{fit_saturation, quantum_yield_estimate, G2Model, Irf, RatePoint, SaturationModel, ShortStageRates};
use emitterlab::mcsim::{eta_det, poisson_stream, simulate_acquisition, DetectorConfig, SimConfig};
use emitterlab::model::{g2_analytic, g2_ode_oracle, r12_from_power, RateParams};
use emitterlab::timetags::TimeTagStream;
use emitterlab_validation::{all_pairs_histogram, Outcome, Runner};
use emitterlab_cli::commands::cmd_pipeline;
use emitterlab_cli::RunConfig;

const EXAMPLE: &str = include_str!("../../cli/configs/example.toml");

const R21: f64 = 0.47;
const R23_US: f64 = 2.75;
const R31_0_US: f64 = 1.71;
const BETA: f64 = 0.102;
const SIGMA: f64 = 1.7e-16;

fn example() -> RunConfig {
    RunConfig::parse(EXAMPLE).expect("example config parses")
}

/// Max |analytic − ODE| over [0, 20/λ₂] for 100 uniformly drawn rate sets
/// with r23, r31 ≤ 0.01 r21.
fn oracle_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = (0.0f64, None);
    let mut failing = 0;
    for _ in 0..100 {
        let r21 = rng.random_range(0.2..1.0);
        let r12 = r21 * rng.random_range(0.05..2.0);
        let r23 = 0.01 * r21 * (1.0 - rng.random::<f64>());
        let r31 = 0.01 * r21 * (1.0 - rng.random::<f64>());
        let p = RateParams::new(r12, r21, r23, r31).unwrap();
        let gp = p.g2_params().unwrap();
        let mut grid: Vec<f64> = (0..=400).map(|i| i as f64 * 10.0 / gp.lambda1 / 400.0).collect();
        grid.extend((0..=2000).map(|i| i as f64 * 20.0 / gp.lambda2 / 2000.0));
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let exact = g2_ode_oracle(&p, &grid).expect("oracle integrates");
        let err = grid
            .iter()
            .zip(&exact)
            .map(|(&t, e)| (g2_analytic(&gp, t) - e).abs())
            .fold(0.0, f64::max);
        if err > 0.02 {
            failing += 1;
        }
        if err > worst.0 {
            worst = (err, Some(gp.a));
        }
    }
    Outcome::new(
        failing == 0,
        format!(
            "max error {:.4} (a = {:.2}); {failing} of 100 sets above 0.02",
            worst.0,
            worst.1.unwrap_or(0.0)
        ),
    )
}

fn published_rates(power: f64) -> RateParams {
    example().rates_at(power).unwrap()
}

fn published_detector() -> DetectorConfig {
    example().detector_config()
}

/// Bins with ≥ 100 counts against the convolved, bin-averaged analytic g².
fn monte_carlo_fidelity() -> Outcome {
    let rates = published_rates(9.0);
    let cfg = SimConfig {
        rates,
        quantum_yield: 0.524,
        duration: 60.0,
        seed: 2,
    };
    let (a, b) = simulate_acquisition(&cfg, &published_detector()).unwrap();
    let model = G2Model::Full(rates.g2_params().unwrap());
    let irf = Irf::new(1.2);
    let (mut used, mut inside) = (0usize, 0usize);
    for (w, window) in [(0.17, 20.0), (2.3, 2000.0)] {
        let h = full_correlation_histogram(&a, &b, w, window).unwrap();
        let curve = normalize(&h).unwrap();
        for i in 0..curve.len() {
            if curve.counts[i] < 100 {
                continue;
            }
            used += 1;
            let expected = model.bin_average(&irf, curve.t[i], curve.bin_width) * curve.norm;
            if (curve.counts[i] as f64 - expected).abs() <= 3.0 * expected.sqrt() {
                inside += 1;
            }
        }
    }
    let frac = inside as f64 / used.max(1) as f64;
    Outcome::new(
        used > 0 && frac >= 0.95,
        format!("{inside} of {used} bins within 3 sigma ({:.2} %)", 100.0 * frac),
    )
}

fn poisson_normalisation() -> Outcome {
    let (r1, r2, t, w) = (37_000.0, 48_700.0, 590.0, 0.17);
    let s1 = poisson_stream(r1, t, 0, 31).unwrap();
    let s2 = poisson_stream(r2, t, 1, 32).unwrap();
    let h = full_correlation_histogram(&s1, &s2, w, 20.0).unwrap();
    let level = r1 * r2 * t * w * 1e-9;
    let mean = h.total() as f64 / h.counts.len() as f64;
    let g = normalize(&h).unwrap();
    let n = g.g2.len() as f64;
    let g_mean = g.g2.iter().sum::<f64>() / n;
    let sd = (g.g2.iter().map(|x| (x - g_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sem = sd / n.sqrt();
    let rel = (mean / level - 1.0).abs();
    let z = (g_mean - 1.0).abs() / sem;
    Outcome::new(
        rel <= 0.02 && z <= 3.0,
        format!(
            "mean {mean:.2} vs {level:.2} ({:.2} %); g2 mean {g_mean:.5}, {z:.2} sampling sigma from 1",
            100.0 * rel
        ),
    )
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = example();
    // Collection five times the published budget: the λ₁ slope then carries
    // a few per cent error instead of ~13 %, so the 15 % bound on σ tests
    // the estimator rather than the seed.
    cfg.detector.efficiency = Some(4.0e-3);
    cfg.duration = 120.0;
    cfg.pipeline.write_streams = false;
    let report = cmd_pipeline(&cfg, dir.path(), 1).unwrap();
    let checks = [
        ("r21", R21, 0.10),
        ("sigma", SIGMA, 0.15),
        ("r23", R23_US, 0.20),
        ("r31_0", R31_0_US, 0.20),
        ("beta", BETA, 0.20),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, truth, tol) in checks {
        let (value, se) = report
            .estimate(name)
            .map_or((f64::NAN, f64::NAN), |e| (e.value, e.stderr));
        let rel = (value / truth - 1.0).abs();
        ok &= rel <= tol;
        parts.push(format!("{name} {value:.4e}+/-{se:.1e} ({:+.1} %)", 100.0 * (value / truth - 1.0)));
    }
    Outcome::new(ok, parts.join(", "))
}

fn efficiency_budget() -> Outcome {
    let budget = example().budget;
    let det = eta_det(&budget);
    let q = quantum_yield_estimate(4.2e-4, 0.0, &budget).unwrap();
    Outcome::new(
        (det - 8.008e-4).abs() <= 1e-12 && (0.50..=0.55).contains(&q.value),
        format!("eta_det {det:.6e}, eta_Q {:.4}", q.value),
    )
}

fn saturation() -> Outcome {
    let cfg = example();
    let model = SaturationModel {
        short: ShortStageRates {
            r21: R21,
            r12_per_mw: r12_from_power(&cfg.excitation_at(1.0)),
        },
        r23: R23_US * 1e-3,
        deshelving: cfg.deshelving,
    };
    let powers = [1.5, 3.0, 4.5, 6.0, 7.5, 9.0];

    let eta = 4.2e-4;
    let exact: Vec<RatePoint> = powers
        .iter()
        .map(|&p| {
            let rate = eta * model.unit_rate(p).unwrap();
            RatePoint {
                power: p,
                rate,
                stderr: rate.sqrt(),
            }
        })
        .collect();
    let fit = fit_saturation(&exact, &model).unwrap();
    let self_rel = (fit.value("eta_product").unwrap() / eta - 1.0).abs();

    let det = published_detector();
    let generating = det.efficiency * cfg.emitter.quantum_yield;
    let duration = 20.0;
    let simulated: Vec<RatePoint> = powers
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let sim = SimConfig {
                rates: published_rates(p),
                quantum_yield: cfg.emitter.quantum_yield,
                duration,
                seed: 100 + i as u64,
            };
            let (a, b) = simulate_acquisition(&sim, &det).unwrap();
            let n = (a.len() + b.len()) as f64;
            RatePoint {
                power: p,
                rate: n / duration,
                stderr: n.sqrt() / duration,
            }
        })
        .collect();
    let mc = fit_saturation(&simulated, &model).unwrap().value("eta_product").unwrap();
    let mc_rel = (mc / generating - 1.0).abs();
    Outcome::new(
        self_rel <= 1e-6 && mc_rel <= 0.10,
        format!(
            "self-fit error {self_rel:.1e}; Monte Carlo eta {mc:.4e} vs {generating:.4e} ({:+.2} %)",
            100.0 * (mc / generating - 1.0)
        ),
    )
}

fn correlator_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut total_pairs = 0u64;
    for case in 0..200 {
        let n = rng.random_range(0..=10_000usize);
        let span: u64 = rng.random_range(1_000..50_000_000);
        let mut times: Vec<(u64, u8)> = (0..n)
            .map(|_| (rng.random_range(0..=span), rng.random_range(0..2u8)))
            .collect();
        // Some cases with heavy ties.
        if case % 10 == 0 {
            for t in &mut times {
                t.0 -= t.0 % 1000;
            }
        }
        times.sort_unstable();
        let split = |ch: u8| -> Vec<u64> { times.iter().filter(|t| t.1 == ch).map(|t| t.0).collect() };
        let (t1, t2) = (split(0), split(1));
        let w_ns = rng.random_range(1..5_000u64) as f64 * 1e-3;
        let window_ns = w_ns * rng.random_range(1..400u64) as f64 + rng.random_range(0.0..w_ns);
        let s1 = TimeTagStream::from_times(t1.clone(), 0, span).unwrap();
        let s2 = TimeTagStream::from_times(t2.clone(), 1, span).unwrap();
        let h = full_correlation_histogram(&s1, &s2, w_ns, window_ns).unwrap();
        let oracle = all_pairs_histogram(&t1, &t2, h.binning.width_ps, h.binning.bins_per_side);
        total_pairs += oracle.iter().sum::<u64>();
        if h.counts != oracle {
            mismatches += 1;
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("{mismatches} of 200 streams differ; {total_pairs} pairs compared"),
    )
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = example();
    cfg.duration = 20.0;
    cfg.powers = vec![3.0, 6.0, 9.0];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_pipeline(&cfg, &a, 1).unwrap();
    cmd_pipeline(&cfg, &b, 2).unwrap();
    let (fa, fb) = (files(&a), files(&b));
    let differing: Vec<&String> = fa
        .iter()
        .filter(|(k, v)| fb.get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    Outcome::new(
        fa.len() == fb.len() && differing.is_empty() && fa.contains_key("report.json"),
        format!("{} files compared, {} differ", fa.len(), differing.len()),
    )
}

fn main() -> ExitCode {
    let mut runner = Runner::default();
    runner.criterion(
        "1",
        "analytic g2 within 0.02 of the ODE solution",
        Some(Duration::from_secs(10)),
        oracle_agreement,
    );
    runner.criterion(
        "2",
        "Monte Carlo histogram matches the convolved model at 9 mW",
        Some(Duration::from_secs(120)),
        monte_carlo_fidelity,
    );
    runner.criterion("3", "Poisson normalisation", None, poisson_normalisation);
    runner.criterion(
        "4",
        "end-to-end rate recovery over 1-9 mW",
        Some(Duration::from_secs(600)),
        end_to_end,
    );
    runner.criterion("5", "efficiency budget and quantum yield", None, efficiency_budget);
    runner.criterion("6", "saturation fit", None, saturation);
    runner.criterion("7", "correlator equals all-pairs oracle", None, correlator_exactness);
    runner.criterion("8", "pipeline output is byte-identical across runs", None, determinism);
    if runner.finish() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

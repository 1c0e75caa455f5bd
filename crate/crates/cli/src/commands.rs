//! The six subcommands as library functions.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use emitterlab::correlator::{
    histogram, normalize, read_histogram, write_histogram, CoincidenceHistogram, HistogramMode,
};
use emitterlab::inference::{
    fit_lambda1_vs_power, fit_lambda2_vs_power, fit_long, fit_saturation, fit_short,
    quantum_yield_estimate, CurveFitOptions, Estimate, FitResult, Irf, PowerPoint, PowerSeries,
    QuantumYield, RatePoint, SaturationModel, ShortStageRates,
};
use emitterlab::mcsim::{eta_det, simulate_acquisition, EfficiencyBudget};
use emitterlab::model::{
    detected_rate, per_us_to_per_ns, DeshelvingModel, G2Params, RateParams, SaturationForm,
};
use emitterlab::timetags::{read_stream, write_stream, TimeTagStream};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{parallel_map, write_atomic, write_json, write_text};

/// Metadata written next to the two channel files of an acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    pub config_digest: String,
    pub seed: u64,
    /// mW
    pub power: f64,
    /// s
    pub duration: f64,
    /// Generating rates (ns⁻¹).
    pub rates: RateParams,
    pub detection_efficiency: f64,
    pub counts: [u64; 2],
    /// counts/s per channel
    pub realized_rates: [f64; 2],
    /// Expected summed rate from the exact steady state (counts/s).
    pub expected_total_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acquired {
    pub meta: AcquisitionMeta,
    pub ch0: TimeTagStream,
    pub ch1: TimeTagStream,
}

/// Label used in file and directory names, e.g. `9mW`.
pub fn power_label(power: f64) -> String {
    format!("{power}mW")
}

/// Simulate one acquisition at `power`.
pub fn acquire(cfg: &RunConfig, power: f64) -> Result<Acquired, CliError> {
    let sim = cfg.sim_config(power)?;
    let det = cfg.detector_config();
    let (ch0, ch1) = simulate_acquisition(&sim, &det)?;
    let counts = [ch0.len() as u64, ch1.len() as u64];
    let eta = sim.quantum_yield * det.efficiency;
    let expected_total_rate = detected_rate(&sim.rates, eta, SaturationForm::Exact)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let meta = AcquisitionMeta {
        config_digest: cfg.digest(),
        seed: sim.seed,
        power,
        duration: sim.duration,
        rates: sim.rates,
        detection_efficiency: det.efficiency,
        counts,
        realized_rates: counts.map(|c| c as f64 / sim.duration),
        expected_total_rate,
    };
    Ok(Acquired { meta, ch0, ch1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub ch0: PathBuf,
    pub ch1: PathBuf,
    pub meta: PathBuf,
}

fn write_acquisition(acq: &Acquired, dir: &Path) -> Result<SimulateOutput, CliError> {
    let out = SimulateOutput {
        ch0: dir.join("ch0.ptt"),
        ch1: dir.join("ch1.ptt"),
        meta: dir.join("meta.json"),
    };
    for (stream, path) in [(&acq.ch0, &out.ch0), (&acq.ch1, &out.ch1)] {
        write_atomic(path, |w| Ok(write_stream(stream, w)?))?;
    }
    write_json(&out.meta, &acq.meta)?;
    Ok(out)
}

/// `simulate`: two channel files and a metadata sidecar in `out/<power>mW/`.
pub fn cmd_simulate(cfg: &RunConfig, power: f64, out: &Path) -> Result<SimulateOutput, CliError> {
    if !(power.is_finite() && power > 0.0) {
        return Err(CliError::Config(format!("power {power} must be > 0")));
    }
    let acq = acquire(cfg, power).map_err(|e| e.at("simulate"))?;
    write_acquisition(&acq, &out.join(power_label(power)))
}

pub fn read_stream_file(path: &Path) -> Result<TimeTagStream, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    read_stream(BufReader::new(file))
        .map_err(|e| CliError::from(e).at(format!("reading {}", path.display())))
}

/// Channel 0 and channel 1 of the union of `streams`.
fn split_channels(streams: &[TimeTagStream]) -> Result<(TimeTagStream, TimeTagStream), CliError> {
    let duration = streams.iter().map(|s| s.duration_ps()).max().unwrap_or(0);
    let mut per = [Vec::new(), Vec::new()];
    for s in streams {
        for (ch, times) in per.iter_mut().enumerate() {
            times.extend(s.channel_times(ch as u8));
        }
    }
    let [a, b] = per.map(|mut t| {
        t.sort_unstable();
        t
    });
    Ok((
        TimeTagStream::from_times(a, 0, duration)?,
        TimeTagStream::from_times(b, 1, duration)?,
    ))
}

/// `correlate`: histogram channel 1 against channel 0 of the given files.
pub fn cmd_correlate(
    inputs: &[PathBuf],
    bin: f64,
    window: f64,
    mode: HistogramMode,
) -> Result<CoincidenceHistogram, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Config("no input streams given".into()));
    }
    let streams = inputs
        .iter()
        .map(|p| read_stream_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    let (s0, s1) = split_channels(&streams)?;
    Ok(histogram(&s0, &s1, bin, window, mode)?)
}

pub fn write_histogram_file(h: &CoincidenceHistogram, path: &Path) -> Result<(), CliError> {
    write_atomic(path, |w| Ok(write_histogram(h, w)?))
}

pub fn read_histogram_file(path: &Path) -> Result<CoincidenceHistogram, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    read_histogram(BufReader::new(file))
        .map_err(|e| CliError::from(e).at(format!("reading {}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timescale {
    Short,
    Long,
}

/// `fit-short` / `fit-long` on a histogram.
pub fn cmd_fit(
    h: &CoincidenceHistogram,
    scale: Timescale,
    irf: &Irf,
    opts: &CurveFitOptions,
) -> Result<FitResult, CliError> {
    let curve = normalize(h).map_err(|e| CliError::Numerical(e.to_string()))?;
    let fit = match scale {
        Timescale::Short => fit_short(&curve, irf, opts),
        Timescale::Long => fit_long(&curve, irf, opts),
    };
    Ok(fit?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub factors: EfficiencyBudget,
    pub eta_det: f64,
    pub eta_product: Option<f64>,
    pub quantum_yield: Option<QuantumYield>,
}

/// `budget`: detection efficiency and, given η_det·η_Q, the quantum yield.
pub fn cmd_budget(
    budget: &EfficiencyBudget,
    eta_product: Option<(f64, f64)>,
) -> Result<BudgetReport, CliError> {
    budget.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let quantum_yield = eta_product
        .map(|(v, se)| quantum_yield_estimate(v, se, budget))
        .transpose()?;
    Ok(BudgetReport {
        factors: *budget,
        eta_det: eta_det(budget),
        eta_product: eta_product.map(|p| p.0),
        quantum_yield,
    })
}

impl BudgetReport {
    pub fn text(&self) -> String {
        let f = &self.factors;
        let mut s = String::new();
        for (name, v) in [
            ("collection", f.collection),
            ("aberration", f.aberration),
            ("objective_transmittance", f.objective_transmittance),
            ("optics_transmittance", f.optics_transmittance),
            ("apd_quantum_efficiency", f.apd_quantum_efficiency),
        ] {
            let _ = writeln!(s, "{name:<24} {v}");
        }
        let _ = writeln!(s, "{:<24} {:.6e}", "eta_det", self.eta_det);
        if let (Some(p), Some(q)) = (self.eta_product, &self.quantum_yield) {
            let _ = writeln!(s, "{:<24} {:.6e}", "eta_product", p);
            let _ = writeln!(
                s,
                "{:<24} {:.4} +/- {:.4}{}",
                "quantum_yield",
                q.value,
                q.stderr,
                if q.unphysical { "  UNPHYSICAL (> 1)" } else { "" }
            );
        }
        s
    }
}

/// Per-power part of the pipeline report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub power: f64,
    pub directory: String,
    pub acquisition: AcquisitionMeta,
    /// Generating g² parameters (ns⁻¹).
    pub expected_g2: G2Params,
    pub total_rate: f64,
    pub total_rate_stderr: f64,
    pub long: FitResult,
    pub short: FitResult,
    /// λ₂ held fixed in the short fit, if any.
    pub short_fixed_lambda2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub lambda1: Option<FitResult>,
    pub lambda2: Option<FitResult>,
    pub saturation: Option<FitResult>,
    pub quantum_yield: Option<QuantumYield>,
    /// Stages not run, with the reason.
    pub skipped: Vec<String>,
}

/// Generating values of the quantities the pipeline recovers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// ns⁻¹
    pub r21: f64,
    /// cm²
    pub sigma: f64,
    /// µs⁻¹
    pub r23: f64,
    /// µs⁻¹
    pub r31_0: f64,
    /// mW⁻¹
    pub beta: f64,
    pub eta_product: f64,
    pub quantum_yield: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_digest: String,
    pub seed: u64,
    pub truth: Truth,
    pub powers: Vec<PowerReport>,
    pub series: SeriesReport,
    /// Final estimates: r21, sigma, lifetime, r23, r31_0, beta, eta_product,
    /// eta_Q, whichever stages ran.
    pub summary: Vec<Estimate>,
}

impl PipelineReport {
    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.summary.iter().find(|e| e.name == name)
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config digest {}", self.config_digest);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>8} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "P (mW)", "rate (1/s)", "lambda1", "+/-", "lambda2", "+/-", "a (long)"
        );
        for p in &self.powers {
            let v = |f: &FitResult, n: &str| f.get(n).map_or(f64::NAN, |e| e.value);
            let e = |f: &FitResult, n: &str| f.get(n).map_or(f64::NAN, |e| e.stderr);
            let _ = writeln!(
                s,
                "{:>8} {:>12.1} {:>12.5} {:>12.5} {:>12.4e} {:>12.4e} {:>12.4}",
                p.power,
                p.total_rate,
                v(&p.short, "lambda1"),
                e(&p.short, "lambda1"),
                v(&p.long, "lambda2"),
                e(&p.long, "lambda2"),
                v(&p.long, "a"),
            );
        }
        let _ = writeln!(s);
        for skipped in &self.series.skipped {
            let _ = writeln!(s, "skipped: {skipped}");
        }
        let _ = writeln!(s, "{:<12} {:>14} {:>14}  unit", "quantity", "estimate", "stderr");
        for e in &self.summary {
            let _ = writeln!(s, "{:<12} {:>14.6e} {:>14.6e}  {}", e.name, e.value, e.stderr, e.unit);
        }
        s
    }
}

fn estimate(name: &str, value: f64, stderr: f64, unit: &str) -> Estimate {
    Estimate {
        name: name.into(),
        value,
        stderr,
        unit: unit.into(),
    }
}

fn curve_options(cfg: &RunConfig) -> CurveFitOptions {
    CurveFitOptions {
        boundary: cfg.fit.boundary,
        ..CurveFitOptions::default()
    }
}

fn run_power(cfg: &RunConfig, power: f64, out: &Path) -> Result<PowerReport, CliError> {
    let label = power_label(power);
    let stage = |name: &str| format!("{name} at {label}");
    let acq = acquire(cfg, power).map_err(|e| e.at(stage("simulate")))?;
    let dir = out.join(&label);
    if cfg.pipeline.write_streams {
        write_acquisition(&acq, &dir).map_err(|e| e.at(stage("write streams")))?;
    } else {
        write_json(&dir.join("meta.json"), &acq.meta).map_err(|e| e.at(stage("write streams")))?;
    }

    let mode = cfg.histogram.mode;
    let mut hists = Vec::new();
    for (name, h) in [("short", cfg.histogram.short), ("long", cfg.histogram.long)] {
        let hist = histogram(&acq.ch0, &acq.ch1, h.bin, h.window, mode)
            .map_err(|e| CliError::from(e).at(stage("correlate")))?;
        write_histogram_file(&hist, &dir.join(format!("{name}.csv")))
            .map_err(|e| e.at(stage("correlate")))?;
        hists.push(hist);
    }
    drop(acq.ch0);
    drop(acq.ch1);

    let irf = cfg.irf();
    let opts = curve_options(cfg);
    let long = cmd_fit(&hists[1], Timescale::Long, &irf, &opts).map_err(|e| e.at(stage("fit-long")))?;
    let fixed = (cfg.fit.short_uses_long_lambda2 && !long.degenerate)
        .then(|| long.value("lambda2").ok())
        .flatten();
    let short_opts = CurveFitOptions {
        lambda2: fixed,
        ..opts
    };
    let short = cmd_fit(&hists[0], Timescale::Short, &irf, &short_opts)
        .map_err(|e| e.at(stage("fit-short")))?;

    let meta = acq.meta;
    let n: u64 = meta.counts.iter().sum();
    let expected_g2 = meta.rates.g2_params().map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(PowerReport {
        power,
        directory: label,
        expected_g2,
        total_rate: n as f64 / meta.duration,
        total_rate_stderr: (n.max(1) as f64).sqrt() / meta.duration,
        acquisition: meta,
        long,
        short,
        short_fixed_lambda2: fixed,
    })
}

fn truth(cfg: &RunConfig) -> Truth {
    let det = cfg.detector_config();
    Truth {
        r21: cfg.emitter.r21,
        sigma: cfg.excitation.cross_section,
        r23: cfg.emitter.r23,
        r31_0: cfg.deshelving.r31_0,
        beta: cfg.deshelving.beta,
        eta_product: det.efficiency * cfg.emitter.quantum_yield,
        quantum_yield: cfg.emitter.quantum_yield,
    }
}

fn power_series_stages(cfg: &RunConfig, powers: &[PowerReport]) -> (SeriesReport, Vec<Estimate>) {
    let mut series = SeriesReport {
        lambda1: None,
        lambda2: None,
        saturation: None,
        quantum_yield: None,
        skipped: Vec::new(),
    };
    let mut summary = Vec::new();
    let short_series = PowerSeries::new(
        powers
            .iter()
            .map(|p| PowerPoint {
                power: p.power,
                fit: p.short.clone(),
            })
            .collect(),
    );
    let long_series = PowerSeries::new(
        powers
            .iter()
            .map(|p| PowerPoint {
                power: p.power,
                fit: p.long.clone(),
            })
            .collect(),
    );

    let lambda1 = match fit_lambda1_vs_power(&short_series, &cfg.excitation_at(1.0)) {
        Ok(f) => f,
        Err(e) => {
            series.skipped.push(format!("lambda1 vs power: {e}"));
            series.skipped.push("lambda2 vs power: needs the lambda1 stage".into());
            series.skipped.push("saturation: needs the lambda1 stage".into());
            return (series, summary);
        }
    };
    for name in ["r21", "sigma", "lifetime"] {
        if let Some(e) = lambda1.get(name) {
            summary.push(e.clone());
        }
    }
    let short_rates = match ShortStageRates::from_fit(&lambda1) {
        Ok(r) => r,
        Err(e) => {
            series.skipped.push(format!("lambda2 vs power: {e}"));
            series.lambda1 = Some(lambda1);
            return (series, summary);
        }
    };
    series.lambda1 = Some(lambda1);

    let lambda2 = match fit_lambda2_vs_power(&long_series, &short_rates, cfg.fit.fix_beta_zero) {
        Ok(f) => f,
        Err(e) => {
            series.skipped.push(format!("lambda2 vs power: {e}"));
            series.skipped.push("saturation: needs the lambda2 stage".into());
            return (series, summary);
        }
    };
    for name in ["r23", "r31_0", "beta"] {
        if let Some(e) = lambda2.get(name) {
            summary.push(e.clone());
        }
    }
    let (Ok(r23), Ok(r31_0), Ok(beta)) = (
        lambda2.value("r23"),
        lambda2.value("r31_0"),
        lambda2.value("beta"),
    ) else {
        series.skipped.push("saturation: incomplete lambda2 stage".into());
        series.lambda2 = Some(lambda2);
        return (series, summary);
    };
    series.lambda2 = Some(lambda2);

    let model = SaturationModel {
        short: short_rates,
        r23: per_us_to_per_ns(r23),
        deshelving: DeshelvingModel { r31_0, beta },
    };
    let points: Vec<RatePoint> = powers
        .iter()
        .map(|p| RatePoint {
            power: p.power,
            rate: p.total_rate,
            stderr: p.total_rate_stderr,
        })
        .collect();
    match fit_saturation(&points, &model) {
        Ok(sat) => {
            if let (Ok(v), Ok(se)) = (sat.value("eta_product"), sat.stderr("eta_product")) {
                summary.push(estimate("eta_product", v, se, "1"));
                match quantum_yield_estimate(v, se, &cfg.budget) {
                    Ok(q) => {
                        summary.push(estimate("eta_Q", q.value, q.stderr, "1"));
                        series.quantum_yield = Some(q);
                    }
                    Err(e) => series.skipped.push(format!("quantum yield: {e}")),
                }
            }
            series.saturation = Some(sat);
        }
        Err(e) => series.skipped.push(format!("saturation: {e}")),
    }
    (series, summary)
}

/// `pipeline`: simulate, correlate and fit every power, then the power-series
/// and saturation fits. Writes `report.json`, `report.txt` and one directory
/// per power under `out`.
pub fn cmd_pipeline(cfg: &RunConfig, out: &Path, threads: usize) -> Result<PipelineReport, CliError> {
    if cfg.powers.is_empty() {
        return Err(CliError::Config("pipeline needs at least one power".into()));
    }
    let mut sorted = cfg.powers.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() != cfg.powers.len() {
        return Err(CliError::Config("powers must be distinct".into()));
    }
    write_json(&out.join("config.json"), cfg)?;
    let results = parallel_map(&cfg.powers, threads, |&p| run_power(cfg, p, out));
    let powers = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (series, summary) = power_series_stages(cfg, &powers);
    let report = PipelineReport {
        config_digest: cfg.digest(),
        seed: cfg.seed,
        truth: truth(cfg),
        powers,
        series,
        summary,
    };
    write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("report.txt"), &report.text())?;
    Ok(report)
}

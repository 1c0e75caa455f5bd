//! Recovering the emitter rates from coincidence data.
//!
//! The pipeline runs in stages:
//!
//! 1. [`fit_short`] / [`fit_long`] fit the IRF-convolved short- and
//!    long-delay limits of g² to each normalised histogram, giving λ₁, λ₂
//!    and the bunching amplitude per excitation power.
//! 2. [`fit_lambda1_vs_power`] regresses λ₁ = r21 + r12(P) on power; the
//!    intercept is r21 and the slope fixes the cross-section.
//! 3. [`fit_lambda2_vs_power`] fits λ₂(P) for r23, r31⁰ and β with r12(P)
//!    and r21 held at the stage-2 values.
//! 4. [`fit_saturation`] fits the overall efficiency product to the summed
//!    count rate, every rate being fixed.

mod irf;
pub mod lm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use irf::{convolve_irf, convolved_exp, G2Model, Irf};
pub use lm::{IterationRecord, LmOptions};

use crate::correlator::G2Curve;
use crate::mcsim::{eta_det, EfficiencyBudget};
use crate::model::{
    detected_rate, per_ns_to_per_us, per_us_to_per_ns, r31_of_power, DeshelvingModel,
    ExcitationConfig, G2Params, ModelError, RateParams, SaturationForm,
};
use lm::{minimize, Problem};

/// Short/long boundary on |t| (ns).
pub const DEFAULT_BOUNDARY_NS: f64 = 20.0;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least {needed} data points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("fit did not converge after {} iterations (last chi2 {:?})", trace.len().saturating_sub(1), trace.last().map(|r| r.chi2))]
    NonConvergence { trace: Vec<IterationRecord> },
    #[error("initial guess {0:?} outside the model domain")]
    BadInitialGuess(Vec<f64>),
    #[error("degenerate design: {0}")]
    Degenerate(String),
    #[error("parameter {0} missing from fit result")]
    MissingParameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimates: Vec<Estimate>,
    pub chi2_reduced: f64,
    /// Covariance of the fitted parameters, in `estimates` order (derived
    /// quantities appended after the fitted ones are not included).
    pub covariance: Vec<Vec<f64>>,
    pub n_points: usize,
    pub iterations: usize,
    /// Set when a parameter is not identifiable from the data.
    pub degenerate: bool,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Result<f64, FitError> {
        self.get(name)
            .map(|e| e.value)
            .ok_or_else(|| FitError::MissingParameter(name.into()))
    }

    pub fn stderr(&self, name: &str) -> Result<f64, FitError> {
        self.get(name)
            .map(|e| e.stderr)
            .ok_or_else(|| FitError::MissingParameter(name.into()))
    }

    /// Plain-text table: parameter, estimate, stderr, unit.
    pub fn report(&self) -> String {
        let mut out = format!("{:<12} {:>14} {:>14}  unit\n", "parameter", "estimate", "stderr");
        for e in &self.estimates {
            out.push_str(&format!(
                "{:<12} {:>14.6e} {:>14.6e}  {}\n",
                e.name, e.value, e.stderr, e.unit
            ));
        }
        out.push_str(&format!(
            "chi2_reduced {:.6}  points {}  iterations {}{}\n",
            self.chi2_reduced,
            self.n_points,
            self.iterations,
            if self.degenerate { "  DEGENERATE" } else { "" }
        ));
        out
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

fn cov_rows(cov: &Option<nalgebra::DMatrix<f64>>, n: usize) -> Vec<Vec<f64>> {
    match cov {
        Some(c) => (0..n).map(|i| (0..n).map(|j| c[(i, j)]).collect()).collect(),
        None => vec![vec![f64::INFINITY; n]; n],
    }
}

fn std_of(cov: &Option<nalgebra::DMatrix<f64>>, j: usize) -> f64 {
    cov.as_ref().map_or(f64::INFINITY, |c| c[(j, j)].sqrt())
}

/// Options shared by the two correlation fits.
#[derive(Debug, Clone, Copy)]
pub struct CurveFitOptions {
    /// |t| boundary between the short and long domains (ns).
    pub boundary: f64,
    pub lm: LmOptions,
    /// Explicit starting point; automatic guesses otherwise.
    pub initial: Option<[f64; 2]>,
    /// Known bunching decay rate λ₂ (ns⁻¹). When set, the short fit lets
    /// the plateau decay as `a e^{−λ₂|t|}` instead of holding it flat.
    pub lambda2: Option<f64>,
    /// Refit once with Poisson errors of the fitted expected counts instead
    /// of the observed ones, which removes the low-count bias of the first
    /// pass.
    pub model_weights: bool,
}

impl Default for CurveFitOptions {
    fn default() -> Self {
        Self {
            boundary: DEFAULT_BOUNDARY_NS,
            lm: LmOptions::default(),
            initial: None,
            lambda2: None,
            model_weights: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Limit {
    Short,
    Long,
}

struct CurveProblem<'a> {
    curve: &'a G2Curve,
    irf: Irf,
    limit: Limit,
    lambda2: Option<f64>,
    sigma: Option<Vec<f64>>,
}

impl CurveProblem<'_> {
    fn g2_model(&self, p: &[f64]) -> G2Model {
        match (self.limit, self.lambda2) {
            (Limit::Short, None) => G2Model::Short {
                lambda1: p[0],
                a: p[1],
            },
            (Limit::Short, Some(lambda2)) => G2Model::Full(G2Params {
                lambda1: p[0],
                lambda2,
                a: p[1],
            }),
            (Limit::Long, _) => G2Model::Long {
                lambda2: p[0],
                a: p[1],
            },
        }
    }
}

impl Problem for CurveProblem<'_> {
    fn n_params(&self) -> usize {
        2
    }
    fn n_points(&self) -> usize {
        self.curve.len()
    }
    fn model(&self, p: &[f64], i: usize) -> f64 {
        self.g2_model(p)
            .bin_average(&self.irf, self.curve.t[i], self.curve.bin_width)
    }
    fn observed(&self, i: usize) -> f64 {
        self.curve.g2[i]
    }
    fn sigma(&self, i: usize) -> f64 {
        match &self.sigma {
            Some(s) => s[i],
            None => self.curve.weight_sigma(i),
        }
    }
    fn feasible(&self, p: &[f64]) -> bool {
        p[0] > 0.0 && p[0].is_finite() && p[1].is_finite() && p[1] > -1.0
    }
    fn scale(&self, j: usize, p: &[f64]) -> f64 {
        if j == 1 {
            p[1].abs().max(1e-3)
        } else {
            p[0].abs().max(1e-9)
        }
    }
}

/// Running mean over `2 half + 1` points of the g² values, ordered by |t|.
fn smoothed_by_abs_delay(curve: &G2Curve, half: usize) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = curve.t.iter().map(|t| t.abs()).zip(curve.g2.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let mean = pts[lo..hi].iter().map(|p| p.1).sum::<f64>() / (hi - lo) as f64;
            (pts[i].0, mean)
        })
        .collect()
}

/// λ₁ from the 1 − 1/e recovery of the dip; a from the plateau.
fn guess_short(curve: &G2Curve) -> [f64; 2] {
    let pts = smoothed_by_abs_delay(curve, 3);
    let n = pts.len();
    let tail = &pts[(n * 2 / 3).min(n - 1)..];
    let plateau = tail.iter().map(|p| p.1).sum::<f64>() / tail.len() as f64;
    let (t_min, min) = pts
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0.0, 0.0));
    let level = min + (1.0 - (-1.0f64).exp()) * (plateau - min);
    let t_e = pts
        .iter()
        .find(|p| p.0 >= t_min && p.1 >= level)
        .map_or(pts[n - 1].0 / 3.0, |p| p.0)
        .max(curve.bin_width);
    [1.0 / t_e, (plateau - 1.0).max(0.0)]
}

/// a from the peak of the smoothed curve; λ₂ from its 1/e decay.
fn guess_long(curve: &G2Curve) -> [f64; 2] {
    let pts = smoothed_by_abs_delay(curve, 5);
    let n = pts.len();
    let (t_peak, peak) = pts
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0.0, 1.0));
    let a = (peak - 1.0).max(1e-3);
    let span = pts[n - 1].0.max(curve.bin_width);
    let t_e = pts
        .iter()
        .find(|p| p.0 > t_peak && p.1 - 1.0 <= a / std::f64::consts::E)
        .map_or(span / 2.0, |p| p.0);
    [1.0 / t_e.max(curve.bin_width), a]
}

fn curve_fit(
    curve: &G2Curve,
    irf: &Irf,
    limit: Limit,
    opts: &CurveFitOptions,
) -> Result<FitResult, FitError> {
    let domain = match limit {
        Limit::Short => curve.select(|t| t.abs() <= opts.boundary),
        Limit::Long => curve.select(|t| t.abs() >= opts.boundary),
    };
    if domain.len() < 3 {
        return Err(FitError::InsufficientData {
            needed: 3,
            got: domain.len(),
        });
    }
    if let Some(l2) = opts.lambda2 {
        if !(l2.is_finite() && l2 > 0.0) {
            return Err(FitError::Degenerate(format!("fixed lambda2 {l2} must be positive")));
        }
    }
    let initial = opts.initial.unwrap_or_else(|| match limit {
        Limit::Short => guess_short(&domain),
        Limit::Long => guess_long(&domain),
    });
    let mut problem = CurveProblem {
        curve: &domain,
        irf: *irf,
        limit,
        lambda2: opts.lambda2,
        sigma: None,
    };
    let mut sol = minimize(&problem, &initial, &opts.lm)?;
    if opts.model_weights {
        let norm = domain.norm;
        problem.sigma = Some(
            (0..domain.len())
                .map(|i| (problem.model(&sol.params, i) * norm).max(1.0).sqrt() / norm)
                .collect(),
        );
        let first = sol.params.clone();
        sol = minimize(&problem, &first, &opts.lm)?;
    }
    let dof = domain.len() - 2;
    let se_rate = std_of(&sol.covariance, 0);
    let se_a = std_of(&sol.covariance, 1);
    let name = match limit {
        Limit::Short => "lambda1",
        Limit::Long => "lambda2",
    };
    let degenerate = match limit {
        Limit::Short => sol.covariance.is_none(),
        Limit::Long => sol.covariance.is_none() || sol.params[1].abs() < 2.0 * se_a,
    };
    Ok(FitResult {
        estimates: vec![
            estimate(name, sol.params[0], se_rate, "1/ns"),
            estimate("a", sol.params[1], se_a, "1"),
        ],
        chi2_reduced: sol.chi2 / dof as f64,
        covariance: cov_rows(&sol.covariance, 2),
        n_points: domain.len(),
        iterations: sol.iterations,
        degenerate,
    })
}

/// Fit `(1+a)(1 − e^{−λ₁|t|})` ⊗ IRF to bins with |t| ≤ boundary, or the
/// full curve with λ₂ held at `opts.lambda2` when that is known.
pub fn fit_short(curve: &G2Curve, irf: &Irf, opts: &CurveFitOptions) -> Result<FitResult, FitError> {
    curve_fit(curve, irf, Limit::Short, opts)
}

/// Fit `1 + a e^{−λ₂|t|}` ⊗ IRF to bins with |t| ≥ boundary. A curve with
/// no significant bunching is flagged `degenerate` (λ₂ unidentifiable).
pub fn fit_long(curve: &G2Curve, irf: &Irf, opts: &CurveFitOptions) -> Result<FitResult, FitError> {
    curve_fit(curve, irf, Limit::Long, opts)
}

/// Per-power correlation fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    /// Excitation power (mW).
    pub power: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerSeries {
    pub points: Vec<PowerPoint>,
}

impl PowerSeries {
    pub fn new(points: Vec<PowerPoint>) -> Self {
        Self { points }
    }

    fn column(&self, name: &str) -> Result<Vec<(f64, f64, f64)>, FitError> {
        self.points
            .iter()
            .map(|p| Ok((p.power, p.fit.value(name)?, p.fit.stderr(name)?)))
            .collect()
    }

    fn check_powers(&self, needed: usize) -> Result<(), FitError> {
        let powers: Vec<f64> = self.points.iter().map(|p| p.power).collect();
        check_powers(&powers, needed)
    }
}

fn check_powers(powers: &[f64], needed: usize) -> Result<(), FitError> {
        let n = powers.len();
        let mut powers = powers.to_vec();
        powers.sort_by(f64::total_cmp);
        powers.dedup();
        if powers.len() != n {
            return Err(FitError::Degenerate("powers must be distinct".into()));
        }
        if powers.iter().any(|p| p.is_nan() || *p <= 0.0) {
            return Err(FitError::Degenerate("powers must be positive".into()));
        }
        if powers.len() < needed {
            if powers.len() <= 1 {
                return Err(FitError::Degenerate(format!(
                    "{} power(s) cannot constrain a power dependence",
                    powers.len()
                )));
            }
            return Err(FitError::InsufficientData {
                needed,
                got: powers.len(),
            });
        }
        Ok(())
}

/// Weights 1/σ² when every σ is positive and finite, unit weights otherwise.
fn weights(points: &[(f64, f64, f64)]) -> (Vec<f64>, bool) {
    let usable = points.iter().all(|p| p.2.is_finite() && p.2 > 0.0);
    if usable {
        (points.iter().map(|p| 1.0 / (p.2 * p.2)).collect(), true)
    } else {
        (vec![1.0; points.len()], false)
    }
}

/// λ₁ = r21 + slope·P. The intercept is r21; `slope / r12_gain` is σ.
pub fn fit_lambda1_vs_power(
    series: &PowerSeries,
    exc: &ExcitationConfig,
) -> Result<FitResult, FitError> {
    series.check_powers(2)?;
    exc.validate()?;
    let pts = series.column("lambda1")?;
    let (w, known_errors) = weights(&pts);
    let s: f64 = w.iter().sum();
    let sx: f64 = pts.iter().zip(&w).map(|(p, w)| w * p.0).sum();
    let sxx: f64 = pts.iter().zip(&w).map(|(p, w)| w * p.0 * p.0).sum();
    let sy: f64 = pts.iter().zip(&w).map(|(p, w)| w * p.1).sum();
    let sxy: f64 = pts.iter().zip(&w).map(|(p, w)| w * p.0 * p.1).sum();
    let det = s * sxx - sx * sx;
    if det.abs() <= f64::EPSILON * s * sxx {
        return Err(FitError::Degenerate("powers do not span a line".into()));
    }
    let intercept = (sxx * sy - sx * sxy) / det;
    let slope = (s * sxy - sx * sy) / det;
    let chi2: f64 = pts
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let dof = pts.len().saturating_sub(2);
    // Unknown point errors: scale by the residual variance.
    let scale = if known_errors {
        1.0
    } else if dof > 0 {
        chi2 / dof as f64
    } else {
        0.0
    };
    let var_i = scale * sxx / det;
    let var_s = scale * s / det;
    let cov_is = -scale * sx / det;

    let gain = exc.r12_gain();
    let r21 = intercept;
    let sigma = slope / gain;
    Ok(FitResult {
        estimates: vec![
            estimate("r21", r21, var_i.sqrt(), "1/ns"),
            estimate("sigma", sigma, var_s.sqrt() / gain, "cm^2"),
            estimate("slope", slope, var_s.sqrt(), "1/(ns mW)"),
            estimate("lifetime", 1.0 / r21, var_i.sqrt() / (r21 * r21), "ns"),
        ],
        chi2_reduced: if dof > 0 { chi2 / dof as f64 } else { 0.0 },
        covariance: vec![
            vec![var_i, cov_is / gain],
            vec![cov_is / gain, var_s / (gain * gain)],
        ],
        n_points: pts.len(),
        iterations: 0,
        degenerate: false,
    })
}

/// Short-delay rates feeding the long-delay and saturation stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortStageRates {
    /// r21 (ns⁻¹).
    pub r21: f64,
    /// dr12/dP (ns⁻¹ mW⁻¹).
    pub r12_per_mw: f64,
}

impl ShortStageRates {
    pub fn from_fit(fit: &FitResult) -> Result<Self, FitError> {
        Ok(Self {
            r21: fit.value("r21")?,
            r12_per_mw: fit.value("slope")?,
        })
    }

    pub fn r12(&self, power: f64) -> f64 {
        self.r12_per_mw * power
    }

    /// Fraction r12/(r12 + r21) entering λ₂.
    fn excited_fraction(&self, power: f64) -> f64 {
        let r12 = self.r12(power);
        r12 / (r12 + self.r21)
    }
}

struct Lambda2Problem {
    /// (power, λ₂ in µs⁻¹, stderr in µs⁻¹)
    pts: Vec<(f64, f64, f64)>,
    weighted: bool,
    known: ShortStageRates,
    fix_beta_zero: bool,
}

impl Lambda2Problem {
    fn predict(&self, p: &[f64], power: f64) -> f64 {
        let (r23, r31_0) = (p[0], p[1]);
        let beta = if self.fix_beta_zero { 0.0 } else { p[2] };
        r31_0 * (1.0 + beta * power) + r23 * self.known.excited_fraction(power)
    }
}

impl Problem for Lambda2Problem {
    fn n_params(&self) -> usize {
        if self.fix_beta_zero {
            2
        } else {
            3
        }
    }
    fn n_points(&self) -> usize {
        self.pts.len()
    }
    fn model(&self, p: &[f64], i: usize) -> f64 {
        self.predict(p, self.pts[i].0)
    }
    fn observed(&self, i: usize) -> f64 {
        self.pts[i].1
    }
    fn sigma(&self, i: usize) -> f64 {
        if self.weighted {
            self.pts[i].2
        } else {
            1.0
        }
    }
    fn feasible(&self, p: &[f64]) -> bool {
        p.iter().all(|v| v.is_finite()) && p[1] > 0.0
    }
}

/// Fit λ₂(P) = r31⁰(1 + βP) + r23 r12(P)/(r12(P) + r21) for r23, r31⁰ (µs⁻¹)
/// and β (mW⁻¹). With `fix_beta_zero`, β is held at 0.
pub fn fit_lambda2_vs_power(
    series: &PowerSeries,
    known: &ShortStageRates,
    fix_beta_zero: bool,
) -> Result<FitResult, FitError> {
    let n_params = if fix_beta_zero { 2 } else { 3 };
    series.check_powers(n_params + 1)?;
    if !(known.r21 > 0.0 && known.r12_per_mw > 0.0) {
        return Err(FitError::Degenerate(format!(
            "short-stage rates must be positive: {known:?}"
        )));
    }
    let pts: Vec<(f64, f64, f64)> = series
        .column("lambda2")?
        .into_iter()
        .map(|(p, l, s)| (p, per_ns_to_per_us(l), per_ns_to_per_us(s)))
        .collect();
    let (w, weighted) = weights(&pts);

    // Linear start: λ₂ = c0 + c1 P + r23 f(P).
    let design: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| {
            let f = known.excited_fraction(p.0);
            if fix_beta_zero {
                vec![f, 1.0]
            } else {
                vec![f, 1.0, p.0]
            }
        })
        .collect();
    let x = nalgebra::DMatrix::from_fn(pts.len(), n_params, |i, j| design[i][j] * w[i].sqrt());
    let y = nalgebra::DVector::from_fn(pts.len(), |i, _| pts[i].1 * w[i].sqrt());
    let lin = (x.transpose() * &x)
        .lu()
        .solve(&(x.transpose() * &y))
        .ok_or_else(|| FitError::Degenerate("λ₂ design matrix is singular".into()))?;
    let mut initial = vec![lin[0], lin[1].max(1e-6)];
    if !fix_beta_zero {
        initial.push(lin[2] / lin[1].max(1e-6));
    }

    let problem = Lambda2Problem {
        pts,
        weighted,
        known: *known,
        fix_beta_zero,
    };
    let sol = minimize(&problem, &initial, &LmOptions::default())?;
    let dof = problem.pts.len() - n_params;
    let chi2_reduced = sol.chi2 / dof as f64;
    let scale = if weighted { 1.0 } else { chi2_reduced };
    let cov = sol.covariance.map(|c| c * scale);
    let mut estimates = vec![
        estimate("r23", sol.params[0], std_of(&cov, 0), "1/us"),
        estimate("r31_0", sol.params[1], std_of(&cov, 1), "1/us"),
    ];
    if fix_beta_zero {
        estimates.push(estimate("beta", 0.0, 0.0, "1/mW"));
    } else {
        estimates.push(estimate("beta", sol.params[2], std_of(&cov, 2), "1/mW"));
    }
    Ok(FitResult {
        estimates,
        chi2_reduced,
        degenerate: cov.is_none(),
        covariance: cov_rows(&cov, n_params),
        n_points: problem.pts.len(),
        iterations: sol.iterations,
    })
}

/// Every rate of the saturation law as a function of power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationModel {
    pub short: ShortStageRates,
    /// r23 (ns⁻¹).
    pub r23: f64,
    /// Deshelving law with r31⁰ in µs⁻¹.
    pub deshelving: DeshelvingModel,
}

impl SaturationModel {
    pub fn rates(&self, power: f64) -> Result<RateParams, ModelError> {
        RateParams::new(
            self.short.r12(power),
            self.short.r21,
            self.r23,
            per_us_to_per_ns(r31_of_power(&self.deshelving, power)),
        )
    }

    /// Total detected rate (counts/s) at unit efficiency product.
    pub fn unit_rate(&self, power: f64) -> Result<f64, ModelError> {
        detected_rate(&self.rates(power)?, 1.0, SaturationForm::Approximate)
    }
}

/// One point of a saturation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    /// Excitation power (mW).
    pub power: f64,
    /// Summed count rate of both detectors (counts/s).
    pub rate: f64,
    /// Standard error of `rate` (counts/s).
    pub stderr: f64,
}

/// Single-parameter weighted fit of the efficiency product η_det·η_Q.
pub fn fit_saturation(points: &[RatePoint], model: &SaturationModel) -> Result<FitResult, FitError> {
    let pts: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.power, p.rate, p.stderr)).collect();
    let powers: Vec<f64> = points.iter().map(|p| p.power).collect();
    check_powers(&powers, 3)?;
    let (w, weighted) = weights(&pts);
    let basis: Vec<f64> = pts
        .iter()
        .map(|p| model.unit_rate(p.0))
        .collect::<Result<_, _>>()?;
    let smm: f64 = basis.iter().zip(&w).map(|(m, w)| w * m * m).sum();
    let smy: f64 = basis.iter().zip(&pts).zip(&w).map(|((m, p), w)| w * m * p.1).sum();
    let eta = smy / smm;
    let chi2: f64 = basis
        .iter()
        .zip(&pts)
        .zip(&w)
        .map(|((m, p), w)| w * (p.1 - eta * m).powi(2))
        .sum();
    let dof = pts.len() - 1;
    let chi2_reduced = chi2 / dof as f64;
    let var = if weighted { 1.0 / smm } else { chi2_reduced / smm };
    Ok(FitResult {
        estimates: vec![estimate("eta_product", eta, var.sqrt(), "1")],
        chi2_reduced,
        covariance: vec![vec![var]],
        n_points: pts.len(),
        iterations: 0,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumYield {
    pub value: f64,
    pub stderr: f64,
    /// Estimate above 1, which no physical emitter can reach.
    pub unphysical: bool,
}

/// η_Q = η_det·η_Q / η_det, with the product's error propagated.
pub fn quantum_yield_estimate(
    eta_product: f64,
    eta_product_stderr: f64,
    budget: &EfficiencyBudget,
) -> Result<QuantumYield, FitError> {
    let det = eta_det(budget);
    if det.is_nan() || det <= 0.0 {
        return Err(FitError::Degenerate("detection efficiency must be positive".into()));
    }
    let value = eta_product / det;
    Ok(QuantumYield {
        value,
        stderr: eta_product_stderr / det,
        unphysical: value > 1.0,
    })
}

//! Three-level emitter: ground (1), excited (2) and metastable (3) levels.
//!
//! Populations obey
//!
//! ```text
//! p1' = -r12 p1 + r21 p2 + r31 p3
//! p2' =  r12 p1 - (r21 + r23) p2
//! p3' =  r23 p2 - r31 p3
//! ```
//!
//! The analytic g²(t) below is the approximate solution valid when r23 and
//! r31 are both small against r21; [`g2_ode_oracle`] integrates the full
//! system and is the reference the approximation is checked against.

mod ode;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ode::{integrate_populations, OdeOptions};

/// Planck constant (J s).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid rate parameters: {0}")]
    InvalidRates(String),
    #[error("excitation rate r12 is zero: the emitter never leaves the ground level")]
    ZeroExcitation,
    #[error("deshelving rate r31 is zero: the metastable level never empties")]
    ZeroDeshelving,
    #[error("r12 + r21 must be positive")]
    ZeroFastRate,
    #[error("invalid excitation config: {0}")]
    InvalidExcitation(String),
    #[error("efficiency product must lie in (0, 1], got {0}")]
    InvalidEfficiency(f64),
    #[error("ODE integration failed at t = {t} ns (step {step:e} ns after {steps} steps): {reason}")]
    Integration {
        t: f64,
        step: f64,
        steps: usize,
        reason: String,
    },
}

/// Transition rates of the three-level system, all in ns⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    /// Excitation 1 → 2.
    pub r12: f64,
    /// Radiative decay 2 → 1.
    pub r21: f64,
    /// Intersystem crossing 2 → 3 (shelving).
    pub r23: f64,
    /// Return 3 → 1 (deshelving).
    pub r31: f64,
}

impl RateParams {
    pub fn new(r12: f64, r21: f64, r23: f64, r31: f64) -> Result<Self, ModelError> {
        let p = Self { r12, r21, r23, r31 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.r12, self.r21, self.r23, self.r31];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(ModelError::InvalidRates(format!(
                "rates must be finite and non-negative: {self:?}"
            )));
        }
        if self.r21 <= 0.0 {
            return Err(ModelError::InvalidRates("r21 must be positive".into()));
        }
        Ok(())
    }

    /// Rate matrix `M` with `p' = M p`, rows and columns ordered (1, 2, 3).
    pub fn rate_matrix(&self) -> [[f64; 3]; 3] {
        [
            [-self.r12, self.r21, self.r31],
            [self.r12, -(self.r21 + self.r23), 0.0],
            [0.0, self.r23, -self.r31],
        ]
    }

    /// The (λ₁, λ₂, a) triple of the analytic correlation function.
    pub fn g2_params(&self) -> Result<G2Params, ModelError> {
        Ok(G2Params {
            lambda1: lambda1(self),
            lambda2: lambda2(self)?,
            a: bunching_amplitude(self)?,
        })
    }
}

/// Level occupation probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl Populations {
    pub fn ground() -> Self {
        Self {
            p1: 1.0,
            p2: 0.0,
            p3: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.p1 + self.p2 + self.p3
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p1, self.p2, self.p3]
    }
}

/// How the focal spot converts power into intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpotProfile {
    /// Peak intensity of a circular Gaussian: `I = 4 ln2 P / (π FWHM²)`.
    #[default]
    GaussianPeak,
    /// Uniform disc of diameter FWHM: `I = 4 P / (π FWHM²)`.
    FlatTop,
}

/// cw excitation of the emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    /// Laser power at the sample (mW).
    pub power: f64,
    /// Excitation wavelength (nm).
    pub wavelength: f64,
    /// Focal spot FWHM (µm).
    pub spot_fwhm: f64,
    /// Absorption cross-section (cm²).
    pub cross_section: f64,
    #[serde(default)]
    pub profile: SpotProfile,
}

impl ExcitationConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::InvalidExcitation(what.to_string()));
        if !(self.power.is_finite() && self.power >= 0.0) {
            return bad("power must be >= 0");
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return bad("wavelength must be > 0");
        }
        if !(self.spot_fwhm.is_finite() && self.spot_fwhm > 0.0) {
            return bad("spot FWHM must be > 0");
        }
        if !(self.cross_section.is_finite() && self.cross_section > 0.0) {
            return bad("cross-section must be > 0");
        }
        Ok(())
    }

    pub fn at_power(&self, power: f64) -> Self {
        Self { power, ..*self }
    }

    /// Intensity at the emitter (W/cm²).
    pub fn intensity(&self) -> f64 {
        let watts = self.power * 1e-3;
        let fwhm_cm = self.spot_fwhm * 1e-4;
        let geometric = match self.profile {
            SpotProfile::GaussianPeak => 4.0 * std::f64::consts::LN_2,
            SpotProfile::FlatTop => 4.0,
        };
        watts * geometric / (std::f64::consts::PI * fwhm_cm * fwhm_cm)
    }

    /// Energy of one excitation photon (J).
    pub fn photon_energy(&self) -> f64 {
        PLANCK * SPEED_OF_LIGHT / (self.wavelength * 1e-9)
    }

    /// r12 produced per mW of power per cm² of cross-section, in ns⁻¹.
    ///
    /// `r12 = cross_section * power * r12_gain()`; used to convert a fitted
    /// slope dλ₁/dP back into a cross-section.
    pub fn r12_gain(&self) -> f64 {
        let unit = Self {
            power: 1.0,
            cross_section: 1.0,
            ..*self
        };
        unit.intensity() / unit.photon_energy() * 1e-9
    }
}

/// Light-induced deshelving, `r31 = r31_0 (1 + β P)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeshelvingModel {
    /// Zero-power deshelving rate (µs⁻¹).
    pub r31_0: f64,
    /// Power coefficient (mW⁻¹).
    pub beta: f64,
}

impl DeshelvingModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.r31_0.is_finite() && self.r31_0 > 0.0) {
            return Err(ModelError::InvalidRates("r31_0 must be > 0".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(ModelError::InvalidRates("beta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Parameters of `g²(t) = 1 − (1+a) e^{−λ₁t} + a e^{−λ₂t}`; rates in ns⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Params {
    pub lambda1: f64,
    pub lambda2: f64,
    pub a: f64,
}

pub fn lambda1(params: &RateParams) -> f64 {
    params.r12 + params.r21
}

pub fn lambda2(params: &RateParams) -> Result<f64, ModelError> {
    let fast = params.r12 + params.r21;
    if fast <= 0.0 {
        return Err(ModelError::ZeroFastRate);
    }
    Ok(params.r31 + params.r23 * params.r12 / fast)
}

pub fn bunching_amplitude(params: &RateParams) -> Result<f64, ModelError> {
    let fast = params.r12 + params.r21;
    if fast <= 0.0 {
        return Err(ModelError::ZeroFastRate);
    }
    if params.r31 <= 0.0 {
        return Err(ModelError::ZeroDeshelving);
    }
    Ok(params.r12 * params.r23 / (params.r31 * fast))
}

/// Analytic g² at delay `t` (ns); even in `t`.
pub fn g2_analytic(gp: &G2Params, t: f64) -> f64 {
    let t = t.abs();
    1.0 - (1.0 + gp.a) * (-gp.lambda1 * t).exp() + gp.a * (-gp.lambda2 * t).exp()
}

/// Short-delay limit: antibunching dip on a bunched plateau.
pub fn g2_short(t: f64, lambda1: f64, a: f64) -> f64 {
    1.0 - (1.0 + a) * (-lambda1 * t.abs()).exp()
}

/// Long-delay limit: bunching decay, antibunching dropped.
pub fn g2_long(t: f64, lambda2: f64, a: f64) -> f64 {
    1.0 + a * (-lambda2 * t.abs()).exp()
}

/// Exact steady state of the rate equations.
pub fn steady_state(params: &RateParams) -> Result<Populations, ModelError> {
    if params.r12 <= 0.0 {
        return Err(ModelError::ZeroExcitation);
    }
    if params.r31 <= 0.0 {
        return Err(ModelError::ZeroDeshelving);
    }
    Ok(steady_state_unchecked(params))
}

/// Closed form that also covers an unreachable metastable level
/// (`r23 = 0`, any `r31`). Requires `r12 > 0`.
fn steady_state_unchecked(params: &RateParams) -> Populations {
    let shelf = if params.r23 == 0.0 {
        0.0
    } else {
        params.r23 / params.r31
    };
    let p2 = 1.0 / ((params.r21 + params.r23) / params.r12 + shelf + 1.0);
    let p1 = p2 * (params.r21 + params.r23) / params.r12;
    let p3 = p2 * shelf;
    Populations { p1, p2, p3 }
}

/// Reference g²(t) = p₂(0;t)/p₂(∞) from direct integration of the rate
/// equations starting in the ground level. `t_grid` in ns, sorted, ≥ 0.
pub fn g2_ode_oracle(params: &RateParams, t_grid: &[f64]) -> Result<Vec<f64>, ModelError> {
    params.validate()?;
    if params.r12 <= 0.0 {
        return Err(ModelError::ZeroExcitation);
    }
    if params.r23 > 0.0 && params.r31 <= 0.0 {
        return Err(ModelError::ZeroDeshelving);
    }
    let p2_inf = steady_state_unchecked(params).p2;
    let pops = integrate_populations(params, Populations::ground(), t_grid, &OdeOptions::default())?;
    Ok(pops.iter().map(|p| p.p2 / p2_inf).collect())
}

/// Excitation rate r12 = σ I / hν (ns⁻¹).
pub fn r12_from_power(exc: &ExcitationConfig) -> f64 {
    exc.cross_section * exc.intensity() / exc.photon_energy() * 1e-9
}

/// Deshelving rate at `power` mW, in µs⁻¹.
pub fn r31_of_power(d: &DeshelvingModel, power: f64) -> f64 {
    d.r31_0 * (1.0 + d.beta * power)
}

/// Which steady-state bracket the saturation law uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaturationForm {
    /// `r21 / r12 + r23 / r31 + 1`, as used by the fitting pipeline.
    #[default]
    Approximate,
    /// `(r21 + r23) / r12 + r23 / r31 + 1`, i.e. `r21 p2(∞)`.
    Exact,
}

/// Detected count rate (counts/s) summed over both detectors.
pub fn detected_rate(
    params: &RateParams,
    eta_product: f64,
    form: SaturationForm,
) -> Result<f64, ModelError> {
    if !(eta_product > 0.0 && eta_product <= 1.0) {
        return Err(ModelError::InvalidEfficiency(eta_product));
    }
    if params.r12 <= 0.0 {
        return Err(ModelError::ZeroExcitation);
    }
    if params.r31 <= 0.0 {
        return Err(ModelError::ZeroDeshelving);
    }
    let excite = match form {
        SaturationForm::Approximate => params.r21 / params.r12,
        SaturationForm::Exact => (params.r21 + params.r23) / params.r12,
    };
    let bracket = excite + params.r23 / params.r31 + 1.0;
    Ok(eta_product * params.r21 * 1e9 / bracket)
}

/// Unit helpers: µs⁻¹ ↔ ns⁻¹.
pub fn per_us_to_per_ns(rate: f64) -> f64 {
    rate * 1e-3
}

pub fn per_ns_to_per_us(rate: f64) -> f64 {
    rate * 1e3
}

/// Rates at a given power from the excitation and deshelving laws.
pub fn rates_at_power(
    exc: &ExcitationConfig,
    deshelving: &DeshelvingModel,
    r21: f64,
    r23: f64,
    power: f64,
) -> Result<RateParams, ModelError> {
    let exc = exc.at_power(power);
    exc.validate()?;
    RateParams::new(
        r12_from_power(&exc),
        r21,
        r23,
        per_us_to_per_ns(r31_of_power(deshelving, power)),
    )
}

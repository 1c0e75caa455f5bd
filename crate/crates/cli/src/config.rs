//! Run configuration, read from a single TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use emitterlab::correlator::HistogramMode;
use emitterlab::inference::Irf;
use emitterlab::mcsim::{eta_det, DetectorConfig, EfficiencyBudget, SimConfig};
use emitterlab::model::{
    per_us_to_per_ns, rates_at_power, DeshelvingModel, RateParams, SpotProfile,
};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Excitation powers (mW).
    pub powers: Vec<f64>,
    /// Acquisition time per power (s).
    pub duration: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub excitation: Excitation,
    pub emitter: Emitter,
    pub deshelving: DeshelvingModel,
    #[serde(default)]
    pub overrides: RateOverrides,
    pub budget: EfficiencyBudget,
    pub detector: Detector,
    #[serde(default)]
    pub histogram: Histograms,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub pipeline: PipelineSettings,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Excitation laser; the power comes from `powers` or `--power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Excitation {
    /// nm
    pub wavelength: f64,
    /// µm
    pub spot_fwhm: f64,
    /// cm²
    pub cross_section: f64,
    #[serde(default)]
    pub profile: SpotProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Emitter {
    /// Radiative decay rate (ns⁻¹).
    pub r21: f64,
    /// Intersystem crossing rate into the metastable level (µs⁻¹).
    pub r23: f64,
    pub quantum_yield: f64,
}

/// Rates held fixed at every power instead of following the power laws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateOverrides {
    /// ns⁻¹
    pub r12: Option<f64>,
    /// µs⁻¹
    pub r31: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detector {
    /// Per-photon detection probability; the budget product when absent.
    pub efficiency: Option<f64>,
    #[serde(default = "half")]
    pub split_ratio: f64,
    /// Two-detector response FWHM (ns); each detector gets `irf/√2`.
    pub irf_fwhm: f64,
    #[serde(default)]
    pub dark_rate: f64,
    #[serde(default)]
    pub dead_time: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSettings {
    /// Bin width (ns).
    pub bin: f64,
    /// Half-window (ns).
    pub window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Histograms {
    #[serde(default)]
    pub mode: HistogramMode,
    pub short: HistogramSettings,
    pub long: HistogramSettings,
}

impl Default for Histograms {
    fn default() -> Self {
        Self {
            mode: HistogramMode::Full,
            short: HistogramSettings {
                bin: 0.17,
                window: 20.0,
            },
            long: HistogramSettings {
                bin: 2.3,
                window: 2000.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    /// Fit response FWHM (ns).
    pub irf_fwhm: f64,
    /// Short/long boundary on |t| (ns).
    pub boundary: f64,
    /// Hold λ₂ at the long-time estimate in the short-time fit.
    pub short_uses_long_lambda2: bool,
    /// Fix β = 0 in the λ₂(P) fit.
    pub fix_beta_zero: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            irf_fwhm: 1.2,
            boundary: 20.0,
            short_uses_long_lambda2: true,
            fix_beta_zero: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSettings {
    /// Keep the simulated time-tag files next to the histograms.
    pub write_streams: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self { write_streams: true }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration {} must be > 0", self.duration));
        }
        for &p in &self.powers {
            if !(p.is_finite() && p > 0.0) {
                return bad(format!("power {p} must be > 0"));
            }
        }
        let e = &self.emitter;
        if !(e.r21.is_finite() && e.r21 > 0.0) {
            return bad("emitter.r21 must be > 0".into());
        }
        if !(e.r23.is_finite() && e.r23 >= 0.0) {
            return bad("emitter.r23 must be >= 0".into());
        }
        if !(e.quantum_yield > 0.0 && e.quantum_yield <= 1.0) {
            return bad(format!("quantum yield {} outside (0, 1]", e.quantum_yield));
        }
        self.deshelving.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.budget.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.excitation_at(1.0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.detector_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.detector.irf_fwhm.is_finite() && self.detector.irf_fwhm >= 0.0) {
            return bad("detector.irf_fwhm must be >= 0".into());
        }
        if !(self.fit.irf_fwhm.is_finite() && self.fit.irf_fwhm >= 0.0) {
            return bad("fit.irf_fwhm must be >= 0".into());
        }
        if !(self.fit.boundary.is_finite() && self.fit.boundary > 0.0) {
            return bad("fit.boundary must be > 0".into());
        }
        for h in [self.histogram.short, self.histogram.long] {
            emitterlab::correlator::Binning::new(h.bin, h.window)
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(r) = self.overrides.r12 {
            if !(r.is_finite() && r >= 0.0) {
                return bad("overrides.r12 must be >= 0".into());
            }
        }
        if let Some(r) = self.overrides.r31 {
            if !(r.is_finite() && r >= 0.0) {
                return bad("overrides.r31 must be >= 0".into());
            }
        }
        Ok(())
    }

    pub fn excitation_at(&self, power: f64) -> emitterlab::model::ExcitationConfig {
        let x = self.excitation;
        emitterlab::model::ExcitationConfig {
            power,
            wavelength: x.wavelength,
            spot_fwhm: x.spot_fwhm,
            cross_section: x.cross_section,
            profile: x.profile,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            efficiency: self.detector.efficiency.unwrap_or_else(|| eta_det(&self.budget)),
            split_ratio: self.detector.split_ratio,
            jitter_fwhm: DetectorConfig::jitter_for_pair_irf(self.detector.irf_fwhm),
            dark_rate: self.detector.dark_rate,
            dead_time: self.detector.dead_time,
        }
    }

    pub fn irf(&self) -> Irf {
        Irf::new(self.fit.irf_fwhm)
    }

    /// Generating rates at `power`, overrides applied.
    pub fn rates_at(&self, power: f64) -> Result<RateParams, CliError> {
        let base = rates_at_power(
            &self.excitation_at(power),
            &self.deshelving,
            self.emitter.r21,
            per_us_to_per_ns(self.emitter.r23),
            power,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        let rates = RateParams {
            r12: self.overrides.r12.unwrap_or(base.r12),
            r31: self.overrides.r31.map_or(base.r31, per_us_to_per_ns),
            ..base
        };
        rates.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(rates)
    }

    /// Simulation settings at `power`; each power gets its own seed.
    pub fn sim_config(&self, power: f64) -> Result<SimConfig, CliError> {
        Ok(SimConfig {
            rates: self.rates_at(power)?,
            quantum_yield: self.emitter.quantum_yield,
            duration: self.duration,
            seed: power_seed(self.seed, power),
        })
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The output
    /// directory does not take part.
    pub fn digest(&self) -> String {
        let mut cfg = self.clone();
        cfg.output = PathBuf::new();
        let canonical = serde_json::to_vec(&cfg).expect("config serialises");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Seed for the acquisition at `power`, so a power simulated on its own
/// reproduces the same acquisition inside a pipeline run.
pub fn power_seed(seed: u64, power: f64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ power.to_bits()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = include_str!("../configs/example.toml");

    #[test]
    fn example_config_parses() {
        let cfg = RunConfig::parse(EXAMPLE).unwrap();
        assert_eq!(cfg.powers, vec![1.0, 3.0, 5.0, 7.0, 9.0]);
        let det = cfg.detector_config();
        assert!((det.efficiency - 8.008e-4).abs() < 1e-12);
        let r = cfg.rates_at(9.0).unwrap();
        assert!((r.r12 - 9.0 * 0.051_887_7).abs() < 1e-6);
        assert!((r.r31 - 1.71e-3 * (1.0 + 0.102 * 9.0)).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let text = format!("{EXAMPLE}\nbogus = 1\n");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let text = EXAMPLE.replace("duration = 120.0", "duration = -1.0");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
        let text = EXAMPLE.replace("quantum_yield = 0.524", "quantum_yield = 1.5");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_apply_at_every_power() {
        let mut cfg = RunConfig::parse(EXAMPLE).unwrap();
        cfg.overrides.r12 = Some(0.2);
        cfg.overrides.r31 = Some(2.0);
        for p in [1.0, 9.0] {
            let r = cfg.rates_at(p).unwrap();
            assert_eq!(r.r12, 0.2);
            assert!((r.r31 - 2e-3).abs() < 1e-15);
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::parse(EXAMPLE).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.digest(), b.digest());
        b.seed += 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}

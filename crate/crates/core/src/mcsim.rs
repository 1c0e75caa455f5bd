//! Kinetic Monte Carlo of the emitter and the HBT detector chain.
//!
//! Two generators share the same physics:
//!
//! * [`simulate_emissions`] + [`detect`] walk every level transition and
//!   materialise every emitted photon before thinning it. Exact and simple,
//!   but memory grows with the emission count (~10⁸ photons/s near
//!   saturation).
//! * [`simulate_acquisition`] folds the detection probability into the walk:
//!   runs of undetected 1→2→1 cycles are sampled in one draw (geometric
//!   cycle count, gamma-distributed durations), so cost scales with detected
//!   photons and shelving events only. The output has the same law as
//!   `detect(simulate_emissions(..))` with the same detector.
//!
//! Every random stream is a ChaCha8 stream keyed by `(seed, stream id)`, so
//! results depend only on the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::RateParams;
use crate::timetags::{TimeTag, TimeTagStream};
use crate::{Error, Result, PS_PER_NS, PS_PER_S};

/// FWHM of a Gaussian in units of its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

const STREAM_EMITTER: u64 = 0;
const STREAM_ROUTING: u64 = 1;
const STREAM_JITTER: u64 = 2;
const STREAM_DARK: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Per-photon detection probability after the beamsplitter.
    pub efficiency: f64,
    /// Probability that a photon is routed to channel 0.
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    /// Per-detector Gaussian timing jitter FWHM (ns).
    #[serde(default)]
    pub jitter_fwhm: f64,
    /// Dark counts per second per channel.
    #[serde(default)]
    pub dark_rate: f64,
    /// Non-paralysable dead time per channel (ns).
    #[serde(default)]
    pub dead_time: f64,
}

fn default_split() -> f64 {
    0.5
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            split_ratio: 0.5,
            jitter_fwhm: 0.0,
            dark_rate: 0.0,
            dead_time: 0.0,
        }
    }
}

impl DetectorConfig {
    /// Per-detector jitter whose two-detector convolution has `pair_fwhm`.
    pub fn jitter_for_pair_irf(pair_fwhm: f64) -> f64 {
        pair_fwhm / std::f64::consts::SQRT_2
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !unit(self.efficiency) {
            return Err(Error::Invalid(format!("efficiency {} outside [0, 1]", self.efficiency)));
        }
        if !unit(self.split_ratio) {
            return Err(Error::Invalid(format!("split ratio {} outside [0, 1]", self.split_ratio)));
        }
        if !nonneg(self.jitter_fwhm) || !nonneg(self.dark_rate) || !nonneg(self.dead_time) {
            return Err(Error::Invalid("jitter, dark rate and dead time must be >= 0".into()));
        }
        Ok(())
    }
}

/// Optical and detector efficiency factors, each in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBudget {
    pub collection: f64,
    pub aberration: f64,
    pub objective_transmittance: f64,
    pub optics_transmittance: f64,
    pub apd_quantum_efficiency: f64,
}

impl EfficiencyBudget {
    fn factors(&self) -> [f64; 5] {
        [
            self.collection,
            self.aberration,
            self.objective_transmittance,
            self.optics_transmittance,
            self.apd_quantum_efficiency,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors().iter().all(|f| *f > 0.0 && *f <= 1.0) {
            Ok(())
        } else {
            Err(Error::Invalid(format!("efficiency factors must lie in (0, 1]: {self:?}")))
        }
    }
}

pub fn eta_det(budget: &EfficiencyBudget) -> f64 {
    budget.factors().iter().product()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub rates: RateParams,
    /// Probability that a 2→1 decay emits a photon.
    pub quantum_yield: f64,
    /// Simulated acquisition time (s).
    pub duration: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        if !(self.quantum_yield > 0.0 && self.quantum_yield <= 1.0) {
            return Err(Error::Invalid(format!(
                "quantum yield {} outside (0, 1]",
                self.quantum_yield
            )));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Invalid("duration must be > 0".into()));
        }
        Ok(())
    }

    pub fn duration_ps(&self) -> u64 {
        (self.duration * PS_PER_S).round() as u64
    }
}

/// Random stream `id` derived from `seed`.
pub fn rng_stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn exp_sample<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

fn ns_to_ps(t: f64) -> u64 {
    (t * PS_PER_NS).round() as u64
}

/// Exact event-by-event trajectory from the ground level; returns the
/// emission times (ps) up to the configured duration.
pub fn simulate_emissions(cfg: &SimConfig) -> Result<Vec<u64>> {
    cfg.validate()?;
    let RateParams { r12, r21, r23, r31 } = cfg.rates;
    let horizon = cfg.duration * 1e9;
    let mut rng = rng_stream(cfg.seed, STREAM_EMITTER);
    let mut out = Vec::new();
    if r12 <= 0.0 {
        return Ok(out);
    }
    let leave_excited = r21 + r23;
    let radiative = r21 / leave_excited;
    let mut t = 0.0;
    loop {
        t += exp_sample(&mut rng, r12);
        if t > horizon {
            break;
        }
        t += exp_sample(&mut rng, leave_excited);
        if t > horizon {
            break;
        }
        if rng.random::<f64>() < radiative {
            if rng.random::<f64>() < cfg.quantum_yield {
                out.push(ns_to_ps(t));
            }
        } else {
            if r31 <= 0.0 {
                break;
            }
            t += exp_sample(&mut rng, r31);
        }
    }
    Ok(out)
}

/// Route, thin, jitter, add dark counts and apply dead time.
pub fn detect(
    emissions: &[u64],
    det: &DetectorConfig,
    duration: f64,
    seed: u64,
) -> Result<(TimeTagStream, TimeTagStream)> {
    det.validate()?;
    let mut routing = rng_stream(seed, STREAM_ROUTING);
    let mut channels: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
    for &t in emissions {
        let ch = usize::from(routing.random::<f64>() >= det.split_ratio);
        if routing.random::<f64>() < det.efficiency {
            channels[ch].push(t);
        }
    }
    finish_channels(channels, det, duration, seed)
}

/// Emitter walk with detection folded in; see the module docs.
pub fn simulate_acquisition(
    cfg: &SimConfig,
    det: &DetectorConfig,
) -> Result<(TimeTagStream, TimeTagStream)> {
    cfg.validate()?;
    det.validate()?;
    let RateParams { r12, r21, r23, r31 } = cfg.rates;
    let horizon = cfg.duration * 1e9;
    let mut rng = rng_stream(cfg.seed, STREAM_EMITTER);
    let mut routing = rng_stream(cfg.seed, STREAM_ROUTING);
    let mut channels: [Vec<u64>; 2] = [Vec::new(), Vec::new()];

    let leave_excited = r21 + r23;
    let shelve = r23 / leave_excited;
    let detected = (1.0 - shelve) * cfg.quantum_yield * det.efficiency;
    let stop = shelve + detected;
    if r12 > 0.0 && stop > 0.0 {
        let log_continue = (-stop).ln_1p();
        let p_shelve = shelve / stop;
        let mut t = 0.0;
        loop {
            // Number of visits to the excited level up to and including the
            // first one that ends in shelving or a detected photon.
            let k = geometric_trials(&mut rng, log_continue);
            t += gamma_sample(&mut rng, k, r12) + gamma_sample(&mut rng, k, leave_excited);
            if t > horizon {
                break;
            }
            if rng.random::<f64>() < p_shelve {
                if r31 <= 0.0 {
                    break;
                }
                t += exp_sample(&mut rng, r31);
                if t > horizon {
                    break;
                }
            } else {
                let ch = usize::from(routing.random::<f64>() >= det.split_ratio);
                channels[ch].push(ns_to_ps(t));
            }
        }
    }
    finish_channels(channels, det, cfg.duration, cfg.seed)
}

/// Trials up to and including the first success, by inversion;
/// `log_continue` is `ln(1 − p)`.
fn geometric_trials<R: Rng>(rng: &mut R, log_continue: f64) -> u64 {
    if log_continue == f64::NEG_INFINITY {
        return 1;
    }
    // 1 − U lies in (0, 1], so the logarithm is finite.
    let u: f64 = 1.0 - rng.random::<f64>();
    (u.ln() / log_continue).floor() as u64 + 1
}

/// Sum of `k` independent exponentials of the given rate.
fn gamma_sample<R: Rng>(rng: &mut R, k: u64, rate: f64) -> f64 {
    if k == 1 {
        exp_sample(rng, rate)
    } else {
        Gamma::new(k as f64, 1.0 / rate)
            .expect("shape and scale are positive")
            .sample(rng)
    }
}

fn finish_channels(
    channels: [Vec<u64>; 2],
    det: &DetectorConfig,
    duration: f64,
    seed: u64,
) -> Result<(TimeTagStream, TimeTagStream)> {
    let duration_ps = (duration * PS_PER_S).round() as u64;
    let [c0, c1] = channels;
    let s0 = finish_channel(c0, 0, det, duration_ps, seed)?;
    let s1 = finish_channel(c1, 1, det, duration_ps, seed)?;
    Ok((s0, s1))
}

fn finish_channel(
    mut times: Vec<u64>,
    channel: u8,
    det: &DetectorConfig,
    duration_ps: u64,
    seed: u64,
) -> Result<TimeTagStream> {
    let ch = u64::from(channel);
    if det.jitter_fwhm > 0.0 {
        let sigma_ps = det.jitter_fwhm / FWHM_PER_SIGMA * PS_PER_NS;
        let mut rng = rng_stream(seed, STREAM_JITTER + ch);
        times = times
            .into_iter()
            .filter_map(|t| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let shifted = (t as f64 + sigma_ps * z).round();
                // Jitter can push events outside the acquisition; drop them.
                (shifted >= 0.0 && shifted <= duration_ps as f64).then_some(shifted as u64)
            })
            .collect();
    } else {
        times.retain(|&t| t <= duration_ps);
    }
    if det.dark_rate > 0.0 {
        let mut rng = rng_stream(seed, STREAM_DARK + ch);
        times.extend(poisson_times(&mut rng, det.dark_rate, duration_ps));
    }
    times.sort_unstable();
    if det.dead_time > 0.0 {
        let dead_ps = ns_to_ps(det.dead_time);
        let mut last: Option<u64> = None;
        times.retain(|&t| match last {
            Some(prev) if t - prev < dead_ps => false,
            _ => {
                last = Some(t);
                true
            }
        });
    }
    let tags = times.into_iter().map(|time| TimeTag { time, channel }).collect();
    Ok(TimeTagStream::new(tags, duration_ps)?)
}

/// Homogeneous Poisson arrival times (ps) at `rate` counts/s on [0, duration].
pub fn poisson_times<R: Rng>(rng: &mut R, rate: f64, duration_ps: u64) -> Vec<u64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let rate_per_ps = rate / PS_PER_S;
    let mut t = 0.0;
    loop {
        t += exp_sample(rng, rate_per_ps);
        let tick = t.round();
        if tick > duration_ps as f64 {
            break;
        }
        out.push(tick as u64);
    }
    out
}

/// Single-channel Poisson stream; used for reference measurements.
pub fn poisson_stream(rate: f64, duration: f64, channel: u8, seed: u64) -> Result<TimeTagStream> {
    let duration_ps = (duration * PS_PER_S).round() as u64;
    let mut rng = rng_stream(seed, 16 + u64::from(channel));
    let times = poisson_times(&mut rng, rate, duration_ps);
    Ok(TimeTagStream::from_times(times, channel, duration_ps)?)
}

//! Forward and inverse toolkit for three-level single-photon emitters.
//!
//! The crate is organised along the data flow of an antibunching experiment:
//!
//! * [`model`]: rate equations, steady state and the analytic g²(t) of a
//!   ground / excited / metastable level system, plus the excitation and
//!   deshelving power laws and the saturation law.
//! * [`mcsim`]: exact stochastic trajectories of the emitter and the
//!   Hanbury Brown & Twiss detector chain that turns them into time tags.
//! * [`timetags`]: the in-memory tag stream and the `PTT1` file format.
//! * [`correlator`]: coincidence histograms and their normalisation to g².
//! * [`inference`]: IRF-convolved g² fits, power-series regressions and the
//!   saturation fit that recover the rates from coincidence data.
//!
//! Rates are carried in ns⁻¹ unless a name says otherwise; timestamps are
//! integer picoseconds.

pub mod correlator;
pub mod error;
pub mod inference;
pub mod mcsim;
pub mod model;
pub mod timetags;

pub use error::{Error, Result};

/// Picoseconds per nanosecond.
pub const PS_PER_NS: f64 = 1e3;
/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

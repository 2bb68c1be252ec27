//! Simulation laboratory for denoising ultra-short TDoA measurement windows.
//!
//! The pipeline mirrors a downlink TDoA positioning loop for an aerial UE:
//!
//! 1. [`channel`] turns UAV/gNB geometry into LoS probability, path-loss
//!    exponent, SNR and a ranging variance.
//! 2. [`measurement`] produces a `K x N` window of observed pseudo-ranges
//!    together with the per-sample quality reports.
//! 3. [`filters`] reduces every gNB column to a single latest-value estimate
//!    (exponential smoothing, Holt, median, Savitzky-Golay, AGES).
//! 4. [`localization`] solves a weighted range least-squares problem by
//!    gradient descent.
//! 5. [`sim`] sweeps window lengths over Monte-Carlo runs and reports
//!    errors normalized by the unfiltered baseline.
//!
//! [`config`] and [`cli`] wire all of it to TOML experiment files and CSV
//! outputs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod filters;
pub mod localization;
pub mod measurement;
pub mod sim;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

//! Frequency-domain anomaly detection for multi-pattern service telemetry.
//!
//! The pipeline amplifies short-term deviations with a dualistic convolution
//! in the time domain, projects each window onto a per-service subset of
//! Fourier bases, reconstructs the restricted spectrum with a two-branch
//! autoencoder, and scores each timestamp by the worse branch's
//! reconstruction error back in the time domain. A numerical verifier for
//! the underlying reconstruction-gap bounds ships alongside the detector.

pub mod autoenc;
pub mod bench;
pub mod detector;
pub mod dualconv;
pub mod error;
pub mod patex;
pub mod series;
pub mod theory;

pub use error::{Error, Result};

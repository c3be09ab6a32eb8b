#![allow(clippy::needless_range_loop)]

//! Simulation and analysis toolkit for trap-to-trap free-fall experiments with
//! optically levitated nanoparticles.
//!
//! The crate is organized around the phases of such an experiment:
//!
//! - [`params`] / [`state`]: particle, trap and environment parameters, and the
//!   per-axis Gaussian state everything acts on.
//! - [`dynamics`]: closed-form evolution of the Gaussian state during free fall
//!   (mean, covariance, expansion factors, purity, coherence length).
//! - [`energetics`]: optical-potential model, mean energy at recapture and the
//!   recapture/loss probability.
//! - [`mc`]: stochastic trajectory simulator used as a brute-force oracle for
//!   the analytic results, plus nonlinear trapped-phase dynamics.
//! - [`signal`]: detector-side pipeline — synthetic traces, Welch PSD,
//!   Lorentzian peak fitting, calibration, bandpass state estimation and
//!   Duffing-tensor fitting.

pub mod constants;
pub mod dynamics;
pub mod energetics;
pub mod error;
pub mod mc;
pub mod numeric;
pub mod params;
pub mod signal;
pub mod state;

pub use error::{Error, Result};
pub use params::{EnvironmentParams, ParticleParams, Protocol, TrapParams};
pub use state::GaussianState1D;

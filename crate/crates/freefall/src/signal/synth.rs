//! Synthetic QPD trace generation.
//!
//! The default dynamics source samples each trapped mode from the exact
//! discrete-time update of the damped thermal oscillator (the stationary
//! linear SDE has a closed-form transition, so no integrator bias enters).
//! A full-potential source driven by the trajectory simulator is available
//! for nonlinear studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::KB;
use crate::dynamics::FallContext;
use crate::error::{Error, Result};
use crate::mc::{simulate_trapped, PhasePoint};
use crate::params::TrapParams;
use crate::state::thermal_state_temperature;

use super::{Channel, Trace};

/// One thermal harmonic mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicMode {
    /// Angular frequency (rad/s).
    pub omega: f64,
    /// Damping rate (rad/s).
    pub gamma: f64,
    /// Particle mass (kg).
    pub mass: f64,
    /// Bath temperature (K).
    pub temperature: f64,
}

/// Exact one-step transition of the damped oscillator: x' = M·x + L·z with
/// M = exp(A·dt) and L·Lᵀ the discrete noise covariance (from stationarity).
struct OuStepper {
    m: [[f64; 2]; 2],
    l: [[f64; 2]; 2],
    sigma_q: f64,
    sigma_p: f64,
}

impl OuStepper {
    fn new(mode: &HarmonicMode, dt: f64) -> Result<Self> {
        let (om, g, mass) = (mode.omega, mode.gamma, mode.mass);
        if om <= 0.0 || g < 0.0 || mass <= 0.0 || mode.temperature < 0.0 {
            return Err(Error::Domain(format!("bad harmonic mode: {mode:?}")));
        }
        let wd2 = om * om - 0.25 * g * g;
        if wd2 <= 0.0 {
            return Err(Error::Domain(format!(
                "mode is not underdamped: Ω={om}, γ={g}"
            )));
        }
        let wd = wd2.sqrt();
        let e = (-0.5 * g * dt).exp();
        let (s, c) = (wd * dt).sin_cos();
        let m = [
            [e * (c + 0.5 * g * s / wd), e * s / (wd * mass)],
            [-e * s * mass * om * om / wd, e * (c - 0.5 * g * s / wd)],
        ];
        let kt = KB * mode.temperature;
        let (vq, vp) = (kt / (mass * om * om), mass * kt);
        let q11 = (vq * (1.0 - m[0][0] * m[0][0]) - vp * m[0][1] * m[0][1]).max(0.0);
        let q12 = -(m[0][0] * vq * m[1][0] + m[0][1] * vp * m[1][1]);
        let q22 = (vp * (1.0 - m[1][1] * m[1][1]) - vq * m[1][0] * m[1][0]).max(0.0);
        let l11 = q11.sqrt();
        let l21 = if l11 > 0.0 { q12 / l11 } else { 0.0 };
        let l22 = (q22 - l21 * l21).max(0.0).sqrt();
        Ok(Self {
            m,
            l: [[l11, 0.0], [l21, l22]],
            sigma_q: vq.sqrt(),
            sigma_p: vp.sqrt(),
        })
    }
}

/// Stationary thermal position series of one mode, sampled exactly at 1/fs.
pub fn synthesize_thermal_mode(
    mode: &HarmonicMode,
    fs: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let stepper = OuStepper::new(mode, 1.0 / fs).expect("valid mode");
    let mut q = stepper.sigma_q * rng.sample::<f64, _>(StandardNormal);
    let mut p = stepper.sigma_p * rng.sample::<f64, _>(StandardNormal);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(q);
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let (m, l) = (&stepper.m, &stepper.l);
        let qn = m[0][0] * q + m[0][1] * p + l[0][0] * z1;
        let pn = m[1][0] * q + m[1][1] * p + l[1][0] * z1 + l[1][1] * z2;
        q = qn;
        p = pn;
    }
    out
}

/// Interferometric transduction map from displacement to detector response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transduction {
    Linear,
    /// Saturating readout s = L·sin(q/L); linear for |q| ≪ L, fully
    /// saturated near |q| ≈ πL/2. The scale for a readout wavelength λ is
    /// L = λ/(4π).
    Saturating { scale: f64 },
}

impl Transduction {
    pub fn apply(&self, q: f64) -> f64 {
        match *self {
            Transduction::Linear => q,
            Transduction::Saturating { scale } => scale * (q / scale).sin(),
        }
    }
}

/// Where the mode displacement series come from.
#[derive(Debug, Clone)]
pub enum DynamicsSource {
    /// Exact sampling of the damped harmonic modes.
    HarmonicExact([HarmonicMode; 3]),
    /// Trajectory simulation in the full Gaussian potential, internally
    /// sub-stepped and decimated to the sample rate.
    FullPotential {
        trap: TrapParams,
        ctx: FallContext,
        init_temperatures: [f64; 3],
    },
}

/// Synthesis configuration for a pair of QPD channel traces.
#[derive(Debug, Clone)]
pub struct TraceSynthConfig {
    pub fs: f64,
    pub n_samples: usize,
    /// Volt-per-meter calibration per axis (the s = c·q convention).
    pub calibrations: [f64; 3],
    /// Relative channel mixing: row 0 is channel X, row 1 channel Y; entry
    /// [c][ax] multiplies the calibrated voltage of axis `ax`. The X channel
    /// reads x and z at full strength, the Y channel reads y; small
    /// cross-leak terms put all three modes in both channels.
    pub mixing: [[f64; 3]; 2],
    /// White noise floor per channel (V²/Hz, one-sided).
    pub noise_floor: [f64; 2],
    pub transduction: Transduction,
    pub seed: u64,
}

impl TraceSynthConfig {
    /// Mixing with full-strength x,z on channel X and y on channel Y plus
    /// the given relative leak level.
    pub fn default_mixing(leak: f64) -> [[f64; 3]; 2] {
        [[1.0, leak, 1.0], [leak, 1.0, leak]]
    }
}

/// Synthesize both QPD channels: s_c(t) = Σ_ax mix[c][ax]·c_ax·T(q_ax(t)) +
/// white noise. Errors if any mode frequency is above 0.45·fs.
pub fn synthesize_qpd_traces(
    source: &DynamicsSource,
    cfg: &TraceSynthConfig,
) -> Result<(Trace, Trace)> {
    let mode_freqs: [f64; 3] = match source {
        DynamicsSource::HarmonicExact(modes) => {
            [modes[0].omega, modes[1].omega, modes[2].omega]
        }
        DynamicsSource::FullPotential { trap, .. } => trap.frequencies,
    };
    for f in mode_freqs {
        if f / (2.0 * std::f64::consts::PI) > 0.45 * cfg.fs {
            return Err(Error::InvalidInput(format!(
                "mode at {} Hz violates the aliasing guard for fs = {}",
                f / (2.0 * std::f64::consts::PI),
                cfg.fs
            )));
        }
    }

    // Per-axis displacement series with independent RNG streams.
    let mut axis_q: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    match source {
        DynamicsSource::HarmonicExact(modes) => {
            for ax in 0..3 {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(ax as u64);
                axis_q[ax] = synthesize_thermal_mode(&modes[ax], cfg.fs, cfg.n_samples, &mut rng);
            }
        }
        DynamicsSource::FullPotential {
            trap,
            ctx,
            init_temperatures,
        } => {
            let omega_max = trap
                .frequencies
                .iter()
                .cloned()
                .fold(0.0f64, f64::max);
            // keep the Verlet step near 1e-3 of the fastest period
            let target_dt = 1e-3 * 2.0 * std::f64::consts::PI / omega_max;
            let substeps = ((1.0 / cfg.fs) / target_dt).ceil().max(1.0) as usize;
            let dt = 1.0 / cfg.fs / substeps as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(7);
            let states = [
                thermal_state_temperature(ctx.mass, trap.frequencies[0], init_temperatures[0])?,
                thermal_state_temperature(ctx.mass, trap.frequencies[1], init_temperatures[1])?,
                thermal_state_temperature(ctx.mass, trap.frequencies[2], init_temperatures[2])?,
            ];
            let init = PhasePoint::sample(&states, &mut rng);
            let total = cfg.n_samples * substeps;
            let tr = simulate_trapped(init, trap, 0.0, total as f64 * dt, dt, ctx, &mut rng)?;
            for ax in 0..3 {
                axis_q[ax] = tr
                    .q
                    .iter()
                    .step_by(substeps)
                    .take(cfg.n_samples)
                    .map(|v| v[ax])
                    .collect();
            }
        }
    }

    let mut traces = Vec::with_capacity(2);
    for (ch_idx, channel) in [Channel::X, Channel::Y].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(100 + ch_idx as u64);
        let sigma_n = (cfg.noise_floor[ch_idx] * cfg.fs / 2.0).sqrt();
        let values: Vec<f64> = (0..cfg.n_samples)
            .map(|i| {
                let mut s = 0.0;
                for ax in 0..3 {
                    s += cfg.mixing[ch_idx][ax]
                        * cfg.calibrations[ax]
                        * cfg.transduction.apply(axis_q[ax][i]);
                }
                s + sigma_n * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        traces.push(Trace::new(cfg.fs, values, channel)?);
    }
    let ty = traces.pop().unwrap();
    let tx = traces.pop().unwrap();
    Ok((tx, ty))
}

/// One free-fall protocol realization as seen by one detector channel:
/// harmonic motion in the initialization trap, a dark gap while the tweezer
/// is off, then harmonic motion around the displaced recapture trap.
#[derive(Debug, Clone)]
pub struct ProtocolSynthConfig {
    pub fs: f64,
    /// Mode frequency in the trap (rad/s).
    pub omega: f64,
    pub mass: f64,
    /// Volt-per-meter calibration.
    pub calibration: f64,
    /// White noise floor (V²/Hz).
    pub noise_floor: f64,
    pub transduction: Transduction,
    pub init_duration: f64,
    pub tau: f64,
    pub measure_duration: f64,
    /// Recapture-trap center position (−d for a downward displacement d).
    pub trap_center_measure: f64,
}

/// Synthesize a single-realization protocol trace with segment markers.
/// `release` is the phase point (q, p) at the release instant; `recapture`
/// the point at the recapture instant. Both segments are undamped harmonic
/// arcs through those points (gas damping is negligible on these windows at
/// the pressures of interest); the transduction map and white detector
/// noise apply throughout.
pub fn synthesize_protocol_trace(
    release: (f64, f64),
    recapture: (f64, f64),
    cfg: &ProtocolSynthConfig,
    rng: &mut impl Rng,
) -> Result<Trace> {
    if cfg.fs <= 0.0 || cfg.omega <= 0.0 || cfg.mass <= 0.0 {
        return Err(Error::Domain("protocol synthesis needs fs, Ω, m > 0".into()));
    }
    let n_init = (cfg.init_duration * cfg.fs).round() as usize;
    let n_gap = (cfg.tau * cfg.fs).round() as usize;
    let n_meas = (cfg.measure_duration * cfg.fs).round() as usize;
    let dt = 1.0 / cfg.fs;
    let sigma_n = (cfg.noise_floor * cfg.fs / 2.0).sqrt();
    let mut values = Vec::with_capacity(n_init + n_gap + n_meas);
    let mut push = |q: Option<f64>, rng: &mut dyn rand::RngCore| {
        let sig = q.map_or(0.0, |q| cfg.calibration * cfg.transduction.apply(q));
        let noise: f64 = if sigma_n > 0.0 {
            sigma_n * rand::Rng::sample::<f64, _>(rng, StandardNormal)
        } else {
            0.0
        };
        values.push(sig + noise);
    };
    // initialize: harmonic arc around 0 ending at `release` when t = 0
    for i in 0..n_init {
        let t = (i as f64 - n_init as f64) * dt;
        let q = release.0 * (cfg.omega * t).cos()
            + release.1 / (cfg.mass * cfg.omega) * (cfg.omega * t).sin();
        push(Some(q), rng);
    }
    // free-fall gap: tweezer off, no scattered light
    for _ in 0..n_gap {
        push(None, rng);
    }
    // measure: harmonic arc around the displaced trap center
    let yc = cfg.trap_center_measure;
    for i in 0..n_meas {
        let t = i as f64 * dt;
        let q = yc
            + (recapture.0 - yc) * (cfg.omega * t).cos()
            + recapture.1 / (cfg.mass * cfg.omega) * (cfg.omega * t).sin();
        push(Some(q), rng);
    }
    Trace::new(cfg.fs, values, Channel::Y)?.with_markers(super::SegmentMarkers {
        init_end: n_init,
        measure_start: n_init + n_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::hz_to_angular;
    use approx::assert_relative_eq;

    #[test]
    fn thermal_mode_variance_matches_equipartition() {
        let mode = HarmonicMode {
            omega: hz_to_angular(136.4e3),
            gamma: hz_to_angular(9.2e3),
            mass: 1.9e-18,
            temperature: 300.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 600_000;
        let q = synthesize_thermal_mode(&mode, 1e6, n, &mut rng);
        let mean = q.iter().sum::<f64>() / n as f64;
        let var = q.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
        let expected = KB * mode.temperature / (mode.mass * mode.omega * mode.omega);
        // ~γT/π ≈ 9000 independent samples → few-percent statistics
        assert_relative_eq!(var, expected, max_relative = 0.05);
    }

    #[test]
    fn aliasing_guard() {
        let mode = HarmonicMode {
            omega: hz_to_angular(480e3),
            gamma: hz_to_angular(9e3),
            mass: 1.9e-18,
            temperature: 300.0,
        };
        let cfg = TraceSynthConfig {
            fs: 1e6,
            n_samples: 1000,
            calibrations: [1e7; 3],
            mixing: TraceSynthConfig::default_mixing(0.1),
            noise_floor: [1e-9, 1e-9],
            transduction: Transduction::Linear,
            seed: 1,
        };
        let modes = [mode; 3];
        assert!(synthesize_qpd_traces(&DynamicsSource::HarmonicExact(modes), &cfg).is_err());
    }

    #[test]
    fn noiseless_single_mode_round_trip() {
        // zero noise, y only on channel Y at known calibration: the trace is
        // exactly c·q.
        let mode = HarmonicMode {
            omega: hz_to_angular(136.4e3),
            gamma: hz_to_angular(9.2e3),
            mass: 1.9e-18,
            temperature: 300.0,
        };
        let quiet = HarmonicMode {
            temperature: 0.0,
            ..mode
        };
        let c = 2.4e7;
        let cfg = TraceSynthConfig {
            fs: 1e6,
            n_samples: 50_000,
            calibrations: [c; 3],
            mixing: [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            noise_floor: [0.0, 0.0],
            transduction: Transduction::Linear,
            seed: 9,
        };
        let (tx, ty) = synthesize_qpd_traces(
            &DynamicsSource::HarmonicExact([quiet, mode, quiet]),
            &cfg,
        )
        .unwrap();
        assert!(tx.values.iter().all(|&v| v == 0.0));
        // variance of the voltage trace = c²·kT/(mΩ²) statistically
        let var = ty.variance();
        let expected = c * c * KB * mode.temperature / (mode.mass * mode.omega * mode.omega);
        assert_relative_eq!(var, expected, max_relative = 0.08);
    }

    #[test]
    fn saturating_transduction_compresses_large_amplitudes() {
        let t = Transduction::Saturating { scale: 84.7e-9 };
        // linear regime
        assert_relative_eq!(t.apply(1e-9), 1e-9, max_relative = 1e-4);
        // saturates well below the input at several scales
        assert!(t.apply(200e-9).abs() < 100e-9);
    }

    #[test]
    fn protocol_trace_segments_and_continuity() {
        let cfg = ProtocolSynthConfig {
            fs: 1e6,
            omega: hz_to_angular(141.2e3),
            mass: 1.9e-18,
            calibration: 2.4e7,
            noise_floor: 0.0,
            transduction: Transduction::Linear,
            init_duration: 1e-3,
            tau: 0.25e-3,
            measure_duration: 1e-3,
            trap_center_measure: -306e-9,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let release = (0.5e-9, 2.0e-22);
        let recapture = (-310e-9, -4.9e-21);
        let tr = synthesize_protocol_trace(release, recapture, &cfg, &mut rng).unwrap();
        let m = tr.markers.unwrap();
        assert_eq!(m.init_end, 1000);
        assert_eq!(m.measure_start, 1250);
        // the gap carries no signal
        assert!(tr.values[m.init_end..m.measure_start]
            .iter()
            .all(|&v| v == 0.0));
        // first measure sample sits at the recapture position
        assert_relative_eq!(
            tr.values[m.measure_start],
            cfg.calibration * recapture.0,
            max_relative = 1e-12
        );
        // last init sample approaches the release point (one sample before)
        let expect = cfg.calibration
            * (release.0 * (cfg.omega * -1e-6).cos()
                + release.1 / (cfg.mass * cfg.omega) * (cfg.omega * -1e-6).sin());
        assert_relative_eq!(tr.values[m.init_end - 1], expect, max_relative = 1e-9);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mode = HarmonicMode {
            omega: hz_to_angular(136.4e3),
            gamma: hz_to_angular(9.2e3),
            mass: 1.9e-18,
            temperature: 300.0,
        };
        let cfg = TraceSynthConfig {
            fs: 1e6,
            n_samples: 10_000,
            calibrations: [1.9e7, 2.4e7, 2.2e6],
            mixing: TraceSynthConfig::default_mixing(0.1),
            noise_floor: [1e-9, 1e-9],
            transduction: Transduction::Linear,
            seed: 42,
        };
        let src = DynamicsSource::HarmonicExact([mode; 3]);
        let (ax, ay) = synthesize_qpd_traces(&src, &cfg).unwrap();
        let (bx, by) = synthesize_qpd_traces(&src, &cfg).unwrap();
        assert_eq!(ax.values, bx.values);
        assert_eq!(ay.values, by.values);
    }
}

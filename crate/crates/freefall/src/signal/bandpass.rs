//! Second-order bandpass state estimation (the low-efficiency Kalman-filter
//! limit): a resonant filter with unit gain at the mode frequency extracts
//! the position quadrature; the no-zero variant, 90° shifted at resonance,
//! extracts the momentum.
//!
//! Continuous prototypes (half-power points at Ω ± 2Γ_f, i.e. a 2 kHz full
//! passband for Γ_f/2π = 0.5 kHz):
//!   H_q(s) = 4Γ_f·s/(s² + 4Γ_f·s + Ω²)
//!   H_p(s) = 4Γ_f·Ω/(s² + 4Γ_f·s + Ω²)
//! discretized by matched-Z pole placement (z_p = e^{s_p/fs}, zeros at
//! z = ±1 for the position branch and z = −1 for the momentum branch) with
//! the gain renormalized at Ω. This keeps both the unit passband gain and
//! the −3 dB width of the analog prototype; a plain bilinear map would warp
//! the passband visibly at these Ω/fs ratios.

use crate::error::{Error, Result};

/// Which quadrature the filter estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandpassKind {
    Position,
    Momentum,
}

/// Filtering direction; `Backward` runs anti-causally (reverse, filter,
/// reverse), used on post-fall segments so transients from the trap
/// switch-on do not corrupt the estimate at the recapture instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// A discretized biquad y[n] = b0·x[n] + b1·x[n−1] + b2·x[n−2]
/// − a1·y[n−1] − a2·y[n−2].
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Matched-Z design of the bandpass prototype: digital poles at
    /// e^{s_p/fs} for the analog poles s_p = −2Γ_f ± i√(Ω²−4Γ_f²), zeros at
    /// z = ±1 (position) or z = −1 doubled (momentum), gain normalized to
    /// exactly 1 at Ω.
    pub fn design(kind: BandpassKind, omega: f64, gamma_f: f64, fs: f64) -> Result<Biquad> {
        if omega <= 0.0 || gamma_f <= 0.0 {
            return Err(Error::Domain(format!(
                "need Ω > 0 and Γ_f > 0, got Ω={omega}, Γ_f={gamma_f}"
            )));
        }
        if gamma_f >= omega / 4.0 {
            return Err(Error::Domain(format!(
                "Γ_f = {gamma_f} is not ≪ Ω = {omega}; prototype poles would not be underdamped"
            )));
        }
        if omega / (2.0 * std::f64::consts::PI) >= fs / 2.0 {
            return Err(Error::InvalidInput(format!(
                "mode at {} Hz is above Nyquist for fs = {fs}",
                omega / (2.0 * std::f64::consts::PI)
            )));
        }
        let dt = 1.0 / fs;
        let r = (-2.0 * gamma_f * dt).exp();
        let wd = (omega * omega - 4.0 * gamma_f * gamma_f).sqrt();
        let a = [-2.0 * r * (wd * dt).cos(), r * r];
        let b_raw = match kind {
            BandpassKind::Position => [1.0, 0.0, -1.0],
            BandpassKind::Momentum => [1.0, 2.0, 1.0],
        };
        let mut bq = Biquad { b: b_raw, a };
        let gain = bq.magnitude_at(omega / (2.0 * std::f64::consts::PI), fs);
        for b in &mut bq.b {
            *b /= gain;
        }
        Ok(bq)
    }

    /// Filter a signal causally with zero initial conditions.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(x.len());
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for &xi in x {
            let yi = self.b[0] * xi + self.b[1] * x1 + self.b[2] * x2
                - self.a[0] * y1
                - self.a[1] * y2;
            y.push(yi);
            x2 = x1;
            x1 = xi;
            y2 = y1;
            y1 = yi;
        }
        y
    }

    /// Complex magnitude of the discrete response at frequency f (Hz).
    pub fn magnitude_at(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let z1 = num_complexish(-w);
        let z2 = num_complexish(-2.0 * w);
        let num_re = self.b[0] + self.b[1] * z1.0 + self.b[2] * z2.0;
        let num_im = self.b[1] * z1.1 + self.b[2] * z2.1;
        let den_re = 1.0 + self.a[0] * z1.0 + self.a[1] * z2.0;
        let den_im = self.a[0] * z1.1 + self.a[1] * z2.1;
        ((num_re * num_re + num_im * num_im) / (den_re * den_re + den_im * den_im)).sqrt()
    }
}

fn num_complexish(w: f64) -> (f64, f64) {
    (w.cos(), w.sin())
}

/// Bandpass position estimate of a (voltage or displacement) signal around
/// the mode at `omega`.
pub fn estimate_position(
    values: &[f64],
    fs: f64,
    omega: f64,
    gamma_f: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    let bq = Biquad::design(BandpassKind::Position, omega, gamma_f, fs)?;
    Ok(apply(&bq, values, direction))
}

/// Momentum estimate: the no-zero filter output (90° shifted at resonance),
/// scaled by −mΩ so that a mode q = A·cos(Ωt) yields p = −mΩA·sin(Ωt).
/// Feed a displacement-calibrated signal to get kg·m/s out.
pub fn estimate_momentum(
    values: &[f64],
    fs: f64,
    omega: f64,
    gamma_f: f64,
    mass: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    let bq = Biquad::design(BandpassKind::Momentum, omega, gamma_f, fs)?;
    let mut out = apply(&bq, values, direction);
    for v in &mut out {
        *v *= -mass * omega;
    }
    Ok(out)
}

fn apply(bq: &Biquad, values: &[f64], direction: Direction) -> Vec<f64> {
    match direction {
        Direction::Forward => bq.filter(values),
        Direction::Backward => {
            let rev: Vec<f64> = values.iter().rev().copied().collect();
            let mut f = bq.filter(&rev);
            f.reverse();
            f
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::hz_to_angular;
    use approx::assert_relative_eq;

    const FS: f64 = 1.0e6;

    fn tone(f: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / FS + phase).cos())
            .collect()
    }

    fn steady_amplitude(y: &[f64]) -> f64 {
        // amplitude over the middle half, away from filter transients
        let mid = &y[y.len() / 4..3 * y.len() / 4];
        let peak = mid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        peak
    }

    #[test]
    fn unit_gain_at_center() {
        let f0 = 141.2e3;
        let omega = hz_to_angular(f0);
        let gamma_f = hz_to_angular(500.0);
        let x = tone(f0, 200_000, 0.3);
        for dir in [Direction::Forward, Direction::Backward] {
            let y = estimate_position(&x, FS, omega, gamma_f, dir).unwrap();
            let a = steady_amplitude(&y);
            assert!(
                (a - 1.0).abs() < 0.005,
                "{dir:?}: passband amplitude {a} not within 0.5% of 1"
            );
        }
        // exact discrete magnitude at the center, both prototypes
        for kind in [BandpassKind::Position, BandpassKind::Momentum] {
            let bq = Biquad::design(kind, omega, gamma_f, FS).unwrap();
            assert_relative_eq!(bq.magnitude_at(f0, FS), 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn rejection_at_ten_gamma_f() {
        // ≥ 14 dB at Ω ± 10Γ_f for the second-order prototype.
        let f0 = 141.2e3;
        let omega = hz_to_angular(f0);
        let gamma_f = hz_to_angular(500.0);
        let bq = Biquad::design(BandpassKind::Position, omega, gamma_f, FS).unwrap();
        for sign in [-1.0, 1.0] {
            let f = f0 + sign * 10.0 * 500.0;
            let mag = bq.magnitude_at(f, FS);
            let atten_db = -20.0 * mag.log10();
            assert!(
                atten_db >= 14.0,
                "attenuation at Ω{}10Γ_f is {atten_db:.2} dB",
                if sign > 0.0 { "+" } else { "−" }
            );
        }
    }

    #[test]
    fn half_power_points_at_two_gamma_f() {
        let f0 = 141.2e3;
        let omega = hz_to_angular(f0);
        let gamma_f = hz_to_angular(500.0);
        let bq = Biquad::design(BandpassKind::Position, omega, gamma_f, FS).unwrap();
        for sign in [-1.0, 1.0] {
            let f = f0 + sign * 2.0 * 500.0;
            let mag = bq.magnitude_at(f, FS);
            assert!(
                (mag - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.02,
                "|H| = {mag} at the nominal half-power point"
            );
        }
    }

    #[test]
    fn linearity() {
        let omega = hz_to_angular(141.2e3);
        let gamma_f = hz_to_angular(500.0);
        let x1 = tone(140e3, 20_000, 0.0);
        let x2 = tone(143e3, 20_000, 1.1);
        let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        let y1 = estimate_position(&x1, FS, omega, gamma_f, Direction::Forward).unwrap();
        let y2 = estimate_position(&x2, FS, omega, gamma_f, Direction::Forward).unwrap();
        let ys = estimate_position(&sum, FS, omega, gamma_f, Direction::Forward).unwrap();
        let scale = ys.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..ys.len() {
            assert!(
                (ys[i] - (y1[i] + y2[i])).abs() <= 1e-10 * scale,
                "superposition violated at {i}"
            );
        }
    }

    #[test]
    fn momentum_estimate_phase_and_scale() {
        // q = A·cos(Ωt) → p̂ should approach −mΩA·sin(Ωt) in the steady state.
        let f0 = 141.2e3;
        let omega = hz_to_angular(f0);
        let gamma_f = hz_to_angular(500.0);
        let mass = 1.9e-18;
        let a = 2.5e-9;
        let n = 400_000;
        let x: Vec<f64> = (0..n)
            .map(|i| a * (omega * i as f64 / FS).cos())
            .collect();
        let p = estimate_momentum(&x, FS, omega, gamma_f, mass, Direction::Forward).unwrap();
        let expect: Vec<f64> = (0..n)
            .map(|i| -mass * omega * a * (omega * i as f64 / FS).sin())
            .collect();
        let mid = n / 2..n / 2 + 10_000;
        let mut err: f64 = 0.0;
        for i in mid {
            err = err.max((p[i] - expect[i]).abs());
        }
        assert!(
            err < 0.02 * mass * omega * a,
            "momentum-estimate deviation {err:e}"
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        let omega = hz_to_angular(141.2e3);
        // Γ_f too large for the narrowband prototype
        assert!(Biquad::design(BandpassKind::Position, omega, omega / 3.0, FS).is_err());
        // mode above Nyquist
        assert!(Biquad::design(BandpassKind::Position, hz_to_angular(600e3), 100.0, FS).is_err());
    }
}

//! Lorentzian (damped-oscillator response) fits to PSD peaks.
//!
//! The model is a sum of thermal-oscillator responses plus a flat floor,
//! S(f) = Σ_j a_j/[(Ω_j²−ω²)² + γ_j²ω²] + c with ω = 2πf, fitted by
//! Levenberg–Marquardt on the PSD in linear power units with weights ∝
//! 1/model (chi-square statistics of averaged periodograms). Overlapping
//! neighbours are fitted jointly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::lm::{levenberg_marquardt, LeastSquaresModel, LmOptions};
use super::Spectrum;

/// Fitted parameters of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeFit {
    /// Center frequency (rad/s).
    pub omega: f64,
    /// Linewidth (rad/s).
    pub gamma: f64,
    /// Numerator amplitude a (input-units²·(rad/s)⁴/Hz).
    pub amplitude: f64,
    /// Peak area ∫S df = a/(4γΩ²) (input-units²).
    pub area: f64,
    pub se_omega: f64,
    pub se_gamma: f64,
    pub se_area: f64,
}

/// Joint fit result for one spectral window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    pub modes: Vec<ModeFit>,
    /// Flat noise floor (input-units²/Hz).
    pub floor: f64,
    /// ½·Σ(weighted residuals)² at the solution.
    pub cost: f64,
    /// Parameter covariance in the raw layout [a,Ω,γ]×modes + floor.
    pub covariance: Vec<Vec<f64>>,
}

/// Initial guess for one mode: center frequency and linewidth, both rad/s,
/// expected within ±20% of the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakGuess {
    pub omega: f64,
    pub gamma: f64,
}

struct PsdModel {
    omegas: Vec<f64>, // ω = 2πf per retained bin
    values: Vec<f64>,
    n_modes: usize,
}

impl PsdModel {
    fn eval(&self, p: &[f64], omega: f64) -> f64 {
        let mut m = p[3 * self.n_modes]; // floor
        for j in 0..self.n_modes {
            let (a, w0, g) = (p[3 * j], p[3 * j + 1], p[3 * j + 2]);
            let d = (w0 * w0 - omega * omega).powi(2) + g * g * omega * omega;
            m += a / d;
        }
        m
    }
}

impl LeastSquaresModel for PsdModel {
    fn n_params(&self) -> usize {
        3 * self.n_modes + 1
    }
    fn n_residuals(&self) -> usize {
        self.values.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool {
        // amplitudes and widths must stay positive; the floor parameter may
        // wander slightly negative as long as the total model stays positive
        // on every bin (rejecting at floor = 0 would lock the whole step
        // vector once the boundary is touched)
        for j in 0..self.n_modes {
            if p[3 * j] <= 0.0 || p[3 * j + 1] <= 0.0 || p[3 * j + 2] <= 0.0 {
                return false;
            }
        }
        for (i, (&omega, &y)) in self.omegas.iter().zip(&self.values).enumerate() {
            let m = self.eval(p, omega);
            if m <= 0.0 {
                return false;
            }
            out[i] = (y - m) / m;
        }
        true
    }
    fn jacobian(&self, p: &[f64], out: &mut [Vec<f64>]) {
        for (i, (&omega, &y)) in self.omegas.iter().zip(&self.values).enumerate() {
            let m = self.eval(p, omega);
            let f = -y / (m * m); // ∂[(y−m)/m]/∂m
            for j in 0..self.n_modes {
                let (a, w0, g) = (p[3 * j], p[3 * j + 1], p[3 * j + 2]);
                let dd = w0 * w0 - omega * omega;
                let d = dd * dd + g * g * omega * omega;
                out[i][3 * j] = f / d;
                out[i][3 * j + 1] = f * (-a * 4.0 * w0 * dd / (d * d));
                out[i][3 * j + 2] = f * (-a * 2.0 * g * omega * omega / (d * d));
            }
            out[i][3 * self.n_modes] = f;
        }
    }
}

/// Fit the PSD bins inside [f_lo, f_hi] with `guesses.len()` oscillator
/// responses plus a flat floor. Neighbouring peaks inside the window are
/// fitted jointly.
pub fn fit_psd_peaks(
    spectrum: &Spectrum,
    guesses: &[PeakGuess],
    f_lo: f64,
    f_hi: f64,
) -> Result<PeakFit> {
    if guesses.is_empty() {
        return Err(Error::InvalidInput("need at least one peak guess".into()));
    }
    let mut omegas = Vec::new();
    let mut values = Vec::new();
    for (f, s) in spectrum.frequencies.iter().zip(&spectrum.psd) {
        if *f >= f_lo && *f <= f_hi && *f > 0.0 {
            omegas.push(2.0 * std::f64::consts::PI * f);
            values.push(*s);
        }
    }
    let model = PsdModel {
        omegas,
        values,
        n_modes: guesses.len(),
    };
    if model.n_residuals() < model.n_params() + 4 {
        return Err(Error::InvalidInput(format!(
            "window [{f_lo}, {f_hi}] Hz holds only {} bins for {} parameters",
            model.n_residuals(),
            model.n_params()
        )));
    }

    // Initial parameters: floor from the lowest PSD value in the window,
    // amplitudes from the peak heights at the guessed centers.
    let floor0 = values_min(&model.values);
    let mut p0 = Vec::with_capacity(model.n_params());
    for g in guesses {
        let s_peak = psd_near(&model, g.omega).max(2.0 * floor0.max(f64::MIN_POSITIVE));
        let a0 = (s_peak - floor0).max(0.5 * s_peak) * g.gamma * g.gamma * g.omega * g.omega;
        p0.extend_from_slice(&[a0, g.omega, g.gamma]);
    }
    p0.push(floor0.max(1e-300));

    let fit = levenberg_marquardt(&model, &p0, &LmOptions::default())?;
    if !fit.converged {
        return Err(Error::Convergence(format!(
            "peak fit did not converge in {} iterations; final cost {:.3e} over {} bins",
            fit.iterations,
            fit.cost,
            model.n_residuals()
        )));
    }

    let mut modes = Vec::with_capacity(guesses.len());
    for j in 0..guesses.len() {
        let (a, w0, g) = (fit.params[3 * j], fit.params[3 * j + 1], fit.params[3 * j + 2]);
        let area = a / (4.0 * g * w0 * w0);
        // error propagation for the area over the (a, Ω, γ) block
        let grad = [1.0 / (4.0 * g * w0 * w0), -2.0 * area / w0, -area / g];
        let mut var_area = 0.0;
        for (r, gr) in grad.iter().enumerate() {
            for (c, gc) in grad.iter().enumerate() {
                var_area += gr * gc * fit.covariance[3 * j + r][3 * j + c];
            }
        }
        modes.push(ModeFit {
            omega: w0,
            gamma: g,
            amplitude: a,
            area,
            se_omega: fit.covariance[3 * j + 1][3 * j + 1].max(0.0).sqrt(),
            se_gamma: fit.covariance[3 * j + 2][3 * j + 2].max(0.0).sqrt(),
            se_area: var_area.max(0.0).sqrt(),
        });
    }
    Ok(PeakFit {
        modes,
        floor: fit.params[3 * guesses.len()],
        cost: fit.cost,
        covariance: fit.covariance,
    })
}

fn values_min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn psd_near(model: &PsdModel, omega: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut val = 0.0;
    for (w, y) in model.omegas.iter().zip(&model.values) {
        let d = (w - omega).abs();
        if d < best {
            best = d;
            val = *y;
        }
    }
    val
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::psd::{welch_psd, Window};
    use crate::signal::synth::{synthesize_thermal_mode, HarmonicMode};
    use crate::signal::{Channel, Trace};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn two_pi(f: f64) -> f64 {
        2.0 * std::f64::consts::PI * f
    }

    /// Synthetic PSD bins drawn from the exact model (no estimation noise).
    fn exact_model_spectrum(
        fs: f64,
        n_bins: usize,
        peaks: &[(f64, f64, f64)],
        floor: f64,
    ) -> Spectrum {
        let df = fs / 2.0 / n_bins as f64;
        let frequencies: Vec<f64> = (0..n_bins).map(|k| k as f64 * df).collect();
        let psd = frequencies
            .iter()
            .map(|&f| {
                let w = two_pi(f);
                peaks
                    .iter()
                    .map(|&(a, w0, g)| a / ((w0 * w0 - w * w).powi(2) + g * g * w * w))
                    .sum::<f64>()
                    + floor
            })
            .collect();
        Spectrum {
            frequencies,
            psd,
            resolution_bandwidth: df,
        }
    }

    #[test]
    fn single_peak_exact_recovery() {
        let w0 = two_pi(112e3);
        let g = two_pi(9.4e3);
        let a = 1.0e-2 * g * w0 * w0; // arbitrary scale
        let sp = exact_model_spectrum(1e6, 4096, &[(a, w0, g)], 1e-10);
        let fit = fit_psd_peaks(
            &sp,
            &[PeakGuess {
                omega: 1.1 * w0,
                gamma: 0.9 * g,
            }],
            60e3,
            180e3,
        )
        .unwrap();
        let m = &fit.modes[0];
        assert_relative_eq!(m.omega, w0, max_relative = 1e-6);
        assert_relative_eq!(m.gamma, g, max_relative = 1e-6);
        assert_relative_eq!(m.area, a / (4.0 * g * w0 * w0), max_relative = 1e-6);
    }

    #[test]
    fn joint_fit_of_overlapping_pair_beats_single_fits() {
        // Two peaks ~2.6 linewidths apart, mirroring the x/y mode pair.
        let w1 = two_pi(112e3);
        let w2 = two_pi(136e3);
        let g = two_pi(9.2e3);
        let a1 = 3.0e-3 * g * w1 * w1;
        let a2 = 2.0e-3 * g * w2 * w2;
        let sp = exact_model_spectrum(1e6, 8192, &[(a1, w1, g), (a2, w2, g)], 1e-11);
        let joint = fit_psd_peaks(
            &sp,
            &[
                PeakGuess { omega: 0.95 * w1, gamma: 1.1 * g },
                PeakGuess { omega: 1.05 * w2, gamma: 0.9 * g },
            ],
            70e3,
            190e3,
        )
        .unwrap();
        let true_area1 = a1 / (4.0 * g * w1 * w1);
        let true_area2 = a2 / (4.0 * g * w2 * w2);
        assert_relative_eq!(joint.modes[0].area, true_area1, max_relative = 0.03);
        assert_relative_eq!(joint.modes[1].area, true_area2, max_relative = 0.03);

        // a lone single-peak fit over the same window is biased by the
        // neighbour's shoulder
        let single = fit_psd_peaks(
            &sp,
            &[PeakGuess { omega: 0.95 * w1, gamma: 1.1 * g }],
            70e3,
            190e3,
        );
        if let Ok(single) = single {
            let err_joint = (joint.modes[0].area / true_area1 - 1.0).abs();
            let err_single = (single.modes[0].area / true_area1 - 1.0).abs();
            assert!(
                err_single > err_joint,
                "single-fit error {err_single} should exceed joint-fit error {err_joint}"
            );
        }
    }

    #[test]
    fn noisy_welch_estimate_recovery() {
        // End-to-end: exact OU synthesis → Welch → fit, 1% accuracy at
        // high SNR for the area and center frequency.
        let fs = 1.0e6;
        let mode = HarmonicMode {
            omega: two_pi(112e3),
            gamma: two_pi(9.4e3),
            mass: 1.9e-18,
            temperature: 300.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2_000_000;
        let q = synthesize_thermal_mode(&mode, fs, n, &mut rng);
        // calibrated to volts with some noise floor far below the peak
        let c = 1.9e7;
        let floor_psd = 1e-8;
        let sigma_n = (floor_psd * fs / 2.0).sqrt();
        let values: Vec<f64> = q
            .iter()
            .map(|&x| c * x + sigma_n * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let tr = Trace::new(fs, values, Channel::X).unwrap();
        let sp = welch_psd(&tr, 16384, 0.5, Window::Hann).unwrap();
        let fit = fit_psd_peaks(
            &sp,
            &[PeakGuess {
                omega: 1.08 * mode.omega,
                gamma: 0.85 * mode.gamma,
            }],
            60e3,
            180e3,
        )
        .unwrap();
        let m = &fit.modes[0];
        assert_relative_eq!(m.omega, mode.omega, max_relative = 1e-3);
        assert_relative_eq!(m.gamma, mode.gamma, max_relative = 0.03);
        let expected_area = c * c * crate::constants::KB * mode.temperature
            / (mode.mass * mode.omega * mode.omega);
        assert_relative_eq!(m.area, expected_area, max_relative = 0.03);
    }

    #[test]
    fn window_too_narrow_rejected() {
        let sp = exact_model_spectrum(1e6, 128, &[(1.0, two_pi(112e3), two_pi(9e3))], 1e-10);
        assert!(fit_psd_peaks(
            &sp,
            &[PeakGuess { omega: two_pi(112e3), gamma: two_pi(9e3) }],
            111e3,
            112.5e3
        )
        .is_err());
    }
}

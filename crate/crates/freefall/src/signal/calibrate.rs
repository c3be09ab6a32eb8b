//! Volt-to-meter calibration, radius/mass inference and effective mode
//! temperatures.
//!
//! Calibration convention: c in V/m with s = c·q, matching the units the
//! calibration table is quoted in. The inverse convention q = c̃·s (with
//! c̃ = 1/c) appears in some derivations; both named conversions are exposed
//! to avoid a silent inversion.

use crate::constants::{EPSTEIN_FACTOR, KB, NA};
use crate::error::{Error, Result};
use crate::params::mass_from_radius;

use super::peakfit::{fit_psd_peaks, PeakGuess};
use super::Spectrum;

/// Equipartition calibration: with a thermal-equilibrium peak area ⟨s²⟩ in
/// V², c² = ⟨s²⟩·mΩ²/(k_B·T_gas), returning c in V/m.
pub fn calibration_factor(area_v2: f64, mass: f64, omega: f64, t_gas: f64) -> Result<f64> {
    if area_v2 <= 0.0 || mass <= 0.0 || omega <= 0.0 || t_gas <= 0.0 {
        return Err(Error::Domain(
            "calibration requires positive area, mass, frequency and temperature".into(),
        ));
    }
    Ok((area_v2 * mass * omega * omega / (KB * t_gas)).sqrt())
}

/// s = c·q: volts from displacement.
pub fn meters_to_volts(q: f64, c: f64) -> f64 {
    c * q
}

/// q = s/c: displacement from volts.
pub fn volts_to_meters(s: f64, c: f64) -> f64 {
    s / c
}

/// Particle radius from the measured damping rate (free-molecular drag):
/// R = 0.619·(9/(√(2π)·ρ))·√(M/(N_A·k_B·T))·P/γ.
pub fn radius_from_damping(
    gamma: f64,
    pressure_pa: f64,
    t_gas: f64,
    molar_mass: f64,
    density: f64,
) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(Error::Domain(format!("damping must be > 0, got {gamma}")));
    }
    if pressure_pa <= 0.0 || t_gas <= 0.0 || molar_mass <= 0.0 || density <= 0.0 {
        return Err(Error::Domain(
            "radius_from_damping requires positive P, T, M, ρ".into(),
        ));
    }
    let geometric = 9.0 / ((2.0 * std::f64::consts::PI).sqrt() * density);
    let thermal = (molar_mass / (NA * KB * t_gas)).sqrt();
    Ok(EPSTEIN_FACTOR * geometric * thermal * pressure_pa / gamma)
}

/// Radius and mass inferred from one mode's fitted linewidth.
pub fn particle_from_damping(
    gamma: f64,
    pressure_pa: f64,
    t_gas: f64,
    molar_mass: f64,
    density: f64,
) -> Result<(f64, f64)> {
    let radius = radius_from_damping(gamma, pressure_pa, t_gas, molar_mass, density)?;
    Ok((radius, mass_from_radius(radius, density)?))
}

/// Effective temperature from the ratio of calibrated peak areas:
/// T₀ = T_gas·(area under feedback)/(area in equilibrium).
pub fn effective_temperature_from_areas(
    area_feedback: f64,
    area_reference: f64,
    t_gas: f64,
) -> Result<f64> {
    if area_feedback <= 0.0 || area_reference <= 0.0 {
        return Err(Error::Domain("peak areas must be positive".into()));
    }
    Ok(t_gas * area_feedback / area_reference)
}

/// Effective temperatures per mode by fitting the same peaks in a
/// feedback-cooled spectrum and an equilibrium reference spectrum (same
/// units), then taking area ratios.
///
/// Each entry of `guesses` carries the window and the per-spectrum peak
/// guesses for one mode group (a group is fitted jointly); the returned
/// temperatures follow the flattened order of the modes.
pub fn effective_temperature(
    psd_feedback: &Spectrum,
    psd_reference: &Spectrum,
    t_gas: f64,
    groups: &[TemperatureFitGroup],
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for g in groups {
        let fb = fit_psd_peaks(psd_feedback, &g.feedback_guesses, g.f_lo, g.f_hi)?;
        let rf = fit_psd_peaks(psd_reference, &g.reference_guesses, g.f_lo, g.f_hi)?;
        if fb.modes.len() != rf.modes.len() {
            return Err(Error::InvalidInput(
                "feedback and reference fits must cover the same modes".into(),
            ));
        }
        for (m_fb, m_rf) in fb.modes.iter().zip(&rf.modes) {
            // guard against an unresolvable peak: the fitted width must
            // exceed the estimator resolution
            if m_fb.gamma / (2.0 * std::f64::consts::PI)
                < 2.0 * psd_feedback.resolution_bandwidth
            {
                return Err(Error::InvalidInput(format!(
                    "peak at {:.1} Hz is unresolved (γ/2π = {:.1} Hz vs RBW {:.1} Hz)",
                    m_fb.omega / (2.0 * std::f64::consts::PI),
                    m_fb.gamma / (2.0 * std::f64::consts::PI),
                    psd_feedback.resolution_bandwidth
                )));
            }
            out.push(effective_temperature_from_areas(m_fb.area, m_rf.area, t_gas)?);
        }
    }
    Ok(out)
}

/// One jointly fitted group of peaks present in both spectra.
#[derive(Debug, Clone)]
pub struct TemperatureFitGroup {
    pub f_lo: f64,
    pub f_hi: f64,
    pub feedback_guesses: Vec<PeakGuess>,
    pub reference_guesses: Vec<PeakGuess>,
}

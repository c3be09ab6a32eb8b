//! Physical constants (CODATA 2018) and unit conversions.
//!
//! Everything internal is strict SI. Pressures are accepted in mbar at
//! interfaces and converted on entry.

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Boltzmann constant (J/K), exact by the 2019 SI definition.
pub const KB: f64 = 1.380_649e-23;

/// Avogadro constant (1/mol), exact.
pub const NA: f64 = 6.022_140_76e23;

/// Speed of light in vacuum (m/s), exact.
pub const C: f64 = 299_792_458.0;

/// Default gravitational acceleration (m/s²). Overridable per scenario.
pub const G_DEFAULT: f64 = 9.806;

/// Epstein drag prefactor for the free-molecular-flow damping/radius relation.
pub const EPSTEIN_FACTOR: f64 = 0.619;

/// Molar mass of air (kg/mol).
pub const MOLAR_MASS_AIR: f64 = 28.97e-3;

/// One millibar in pascal.
pub const MBAR: f64 = 100.0;

/// Convert a pressure in mbar to Pa.
#[inline]
pub fn mbar_to_pa(p_mbar: f64) -> f64 {
    p_mbar * MBAR
}

/// Convert an ordinary frequency in Hz to angular frequency in rad/s.
#[inline]
pub fn hz_to_angular(f_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * f_hz
}

/// Convert an angular frequency in rad/s to ordinary frequency in Hz.
#[inline]
pub fn angular_to_hz(omega: f64) -> f64 {
    omega / (2.0 * std::f64::consts::PI)
}

//! Per-axis Gaussian state: means and 2×2 covariance.

use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, KB};
use crate::error::{Error, Result};

/// Gaussian state of one center-of-mass mode: mean position/momentum and the
/// symmetric covariance (V_q, V_p, C_qp).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianState1D {
    /// Mean position (m).
    pub mean_q: f64,
    /// Mean momentum (kg·m/s).
    pub mean_p: f64,
    /// Position variance (m²).
    pub var_q: f64,
    /// Momentum variance (kg²·m²/s²).
    pub var_p: f64,
    /// Position–momentum covariance (kg·m²/s).
    pub cov_qp: f64,
}

impl GaussianState1D {
    /// Build a state, checking that the covariance is positive semidefinite.
    pub fn new(mean_q: f64, mean_p: f64, var_q: f64, var_p: f64, cov_qp: f64) -> Result<Self> {
        let s = Self {
            mean_q,
            mean_p,
            var_q,
            var_p,
            cov_qp,
        };
        s.check_psd()?;
        Ok(s)
    }

    /// Zero-mean state from variances alone.
    pub fn from_variances(var_q: f64, var_p: f64, cov_qp: f64) -> Result<Self> {
        Self::new(0.0, 0.0, var_q, var_p, cov_qp)
    }

    pub(crate) fn check_psd(&self) -> Result<()> {
        if self.var_q < 0.0 || self.var_p < 0.0 {
            return Err(Error::Domain(format!(
                "negative variance: V_q={}, V_p={}",
                self.var_q, self.var_p
            )));
        }
        // Allow a tiny negative determinant from rounding.
        let det = self.det();
        let scale = self.var_q * self.var_p;
        if det < -1e-12 * scale {
            return Err(Error::Domain(format!(
                "covariance not positive semidefinite: det={det}, V_q·V_p={scale}"
            )));
        }
        Ok(())
    }

    /// Covariance determinant V_q·V_p − C_qp².
    pub fn det(&self) -> f64 {
        self.var_q * self.var_p - self.cov_qp * self.cov_qp
    }

    /// Purity of the Gaussian state, P = (ħ/2)/√|Σ|.
    ///
    /// Equals (4|Σ_r|)^{−1/2} with Σ_r the covariance of (q/q_zpf, p/p_zpf);
    /// 1 for a minimum-uncertainty state.
    pub fn purity(&self) -> f64 {
        0.5 * HBAR / self.det().sqrt()
    }

    /// Whether the state satisfies the uncertainty relation |Σ| ≥ (ħ/2)².
    pub fn is_physical(&self) -> bool {
        self.det() >= (0.5 * HBAR).powi(2) * (1.0 - 1e-12)
    }

    /// RMS position spread √V_q (m).
    pub fn sigma_q(&self) -> f64 {
        self.var_q.sqrt()
    }

    /// RMS momentum spread √V_p (kg·m/s).
    pub fn sigma_p(&self) -> f64 {
        self.var_p.sqrt()
    }
}

/// Zero-point position spread √(ħ/(mΩ)) (m).
pub fn q_zpf(mass: f64, omega: f64) -> f64 {
    (HBAR / (mass * omega)).sqrt()
}

/// Zero-point momentum spread √(ħmΩ) (kg·m/s).
pub fn p_zpf(mass: f64, omega: f64) -> f64 {
    (HBAR * mass * omega).sqrt()
}

/// Thermal (or ground) state of a harmonic mode by mean occupation:
/// V_q = (ħ/mΩ)(n₀+1/2), V_p = ħmΩ(n₀+1/2), C = 0, zero means.
pub fn thermal_state_occupation(mass: f64, omega: f64, n0: f64) -> Result<GaussianState1D> {
    if mass <= 0.0 || omega <= 0.0 {
        return Err(Error::Domain(format!(
            "thermal state requires m > 0 and Ω > 0, got m={mass}, Ω={omega}"
        )));
    }
    if n0 < 0.0 {
        return Err(Error::Domain(format!("occupation must be ≥ 0, got {n0}")));
    }
    let v0 = n0 + 0.5;
    GaussianState1D::from_variances(
        HBAR / (mass * omega) * v0,
        HBAR * mass * omega * v0,
        0.0,
    )
}

/// Thermal state by effective temperature, using the convention
/// n₀ + 1/2 ≡ k_B·T₀/(ħΩ) exactly (classical equipartition entry).
pub fn thermal_state_temperature(mass: f64, omega: f64, t0: f64) -> Result<GaussianState1D> {
    if t0 <= 0.0 {
        return Err(Error::Domain(format!("temperature must be > 0, got {t0}")));
    }
    thermal_state_occupation(mass, omega, occupation_from_temperature(omega, t0)?)
}

/// n₀ from temperature: n₀ = k_B·T/(ħΩ) − 1/2 (clamped at 0 for very cold T).
pub fn occupation_from_temperature(omega: f64, t: f64) -> Result<f64> {
    if omega <= 0.0 || t <= 0.0 {
        return Err(Error::Domain(format!(
            "occupation_from_temperature requires Ω > 0 and T > 0, got Ω={omega}, T={t}"
        )));
    }
    Ok((KB * t / (HBAR * omega) - 0.5).max(0.0))
}

/// Effective temperature from occupation: k_B·T = ħΩ(n₀+1/2).
pub fn temperature_from_occupation(omega: f64, n0: f64) -> f64 {
    HBAR * omega * (n0 + 0.5) / KB
}

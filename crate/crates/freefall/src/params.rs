//! Particle, trap, environment and protocol parameters.
//!
//! All types are immutable value types in strict SI units; they are cheap to
//! copy and safe to share between threads.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{C, EPSTEIN_FACTOR, KB, NA};
use crate::error::{Error, Result};

/// Mass of a homogeneous sphere, m = (4/3)·π·R³·ρ.
pub fn mass_from_radius(radius: f64, density: f64) -> Result<f64> {
    if radius < 0.0 || density <= 0.0 {
        return Err(Error::Domain(format!(
            "mass_from_radius requires radius ≥ 0 and density > 0, got R={radius}, ρ={density}"
        )));
    }
    Ok(4.0 / 3.0 * PI * radius.powi(3) * density)
}

/// Inverse of [`mass_from_radius`].
pub fn radius_from_mass(mass: f64, density: f64) -> Result<f64> {
    if mass < 0.0 || density <= 0.0 {
        return Err(Error::Domain(format!(
            "radius_from_mass requires mass ≥ 0 and density > 0, got m={mass}, ρ={density}"
        )));
    }
    Ok((3.0 * mass / (4.0 * PI * density)).cbrt())
}

/// A dielectric nanoparticle: geometry, material and derived mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleParams {
    /// Radius (m).
    pub radius: f64,
    /// Mass density (kg/m³).
    pub density: f64,
    /// Mass (kg), always (4/3)·π·R³·ρ.
    pub mass: f64,
    /// Relative dielectric permittivity ε_r.
    pub permittivity_rel: f64,
}

impl ParticleParams {
    pub fn new(radius: f64, density: f64, permittivity_rel: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::Domain(format!("particle radius must be > 0, got {radius}")));
        }
        if density <= 0.0 {
            return Err(Error::Domain(format!("particle density must be > 0, got {density}")));
        }
        if permittivity_rel <= 1.0 {
            return Err(Error::Domain(format!(
                "relative permittivity must exceed 1 for a trappable dielectric, got {permittivity_rel}"
            )));
        }
        Ok(Self {
            radius,
            density,
            mass: mass_from_radius(radius, density)?,
            permittivity_rel,
        })
    }

    /// Silica sphere with ε_r = 2.1, ρ = 2200 kg/m³.
    pub fn silica(radius: f64) -> Result<Self> {
        Self::new(radius, 2200.0, 2.1)
    }

    /// Clausius–Mossotti factor (ε_r − 1)/(ε_r + 2).
    pub fn clausius_mossotti(&self) -> f64 {
        (self.permittivity_rel - 1.0) / (self.permittivity_rel + 2.0)
    }
}

/// Optical tweezer parameters: waists, power, harmonic frequencies and depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapParams {
    /// Beam waist along x (m).
    pub waist_x: f64,
    /// Beam waist along y (m).
    pub waist_y: f64,
    /// Rayleigh range along the optical axis z (m).
    pub rayleigh_z: f64,
    /// Tweezer optical power (W).
    pub power: f64,
    /// Angular trap frequencies (Ω_x, Ω_y, Ω_z) in rad/s.
    pub frequencies: [f64; 3],
    /// Trap depth U₀ (J). Set explicitly or derived from the beam parameters.
    pub depth_u0: f64,
}

impl TrapParams {
    /// Build a trap with an explicitly given depth.
    pub fn new(
        waist_x: f64,
        waist_y: f64,
        rayleigh_z: f64,
        power: f64,
        frequencies: [f64; 3],
        depth_u0: f64,
    ) -> Result<Self> {
        let t = Self {
            waist_x,
            waist_y,
            rayleigh_z,
            power,
            frequencies,
            depth_u0,
        };
        t.validate()?;
        Ok(t)
    }

    /// Build a trap whose depth is derived from the Gaussian-beam formula
    /// U₀ = 4R³P/(c·w_x·w_y) · (ε_r−1)/(ε_r+2).
    pub fn with_derived_depth(
        waist_x: f64,
        waist_y: f64,
        rayleigh_z: f64,
        power: f64,
        frequencies: [f64; 3],
        particle: &ParticleParams,
    ) -> Result<Self> {
        let mut t = Self {
            waist_x,
            waist_y,
            rayleigh_z,
            power,
            frequencies,
            depth_u0: 0.0,
        };
        t.depth_u0 = trap_depth_formula(particle, &t);
        t.validate()?;
        Ok(t)
    }

    /// Build a Gaussian trap whose small-oscillation frequencies match the
    /// given targets exactly: the waists follow from (U₀, m, Ω_j) via
    /// Ω_x = (2/w_x)·√(U₀/m), Ω_y = (2/w_y)·√(U₀/m), Ω_z = √(2U₀/m)/w_z.
    pub fn from_frequencies(
        mass: f64,
        depth_u0: f64,
        frequencies: [f64; 3],
        power: f64,
    ) -> Result<Self> {
        if mass <= 0.0 || depth_u0 <= 0.0 {
            return Err(Error::Domain(
                "from_frequencies requires positive mass and depth".into(),
            ));
        }
        let v = (depth_u0 / mass).sqrt();
        Self::new(
            2.0 * v / frequencies[0],
            2.0 * v / frequencies[1],
            std::f64::consts::SQRT_2 * v / frequencies[2],
            power,
            frequencies,
            depth_u0,
        )
    }

    fn validate(&self) -> Result<()> {
        let ok = self.waist_x > 0.0
            && self.waist_y > 0.0
            && self.rayleigh_z > 0.0
            && self.power >= 0.0
            && self.depth_u0 >= 0.0
            && self.frequencies.iter().all(|&w| w > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("trap parameters must be positive: {self:?}")))
        }
    }

    /// Waists as a 3-array (w_x, w_y, w_z) with w_z the Rayleigh range.
    pub fn waists(&self) -> [f64; 3] {
        [self.waist_x, self.waist_y, self.rayleigh_z]
    }
}

/// Gaussian-beam trap depth U₀ = (4R³P / (c·w_x·w_y)) · (ε_r−1)/(ε_r+2).
pub(crate) fn trap_depth_formula(particle: &ParticleParams, trap: &TrapParams) -> f64 {
    4.0 * particle.radius.powi(3) * trap.power / (C * trap.waist_x * trap.waist_y)
        * particle.clausius_mossotti()
}

/// Residual-gas environment: pressure, temperature, composition, damping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentParams {
    /// Gas pressure (Pa).
    pub pressure: f64,
    /// Gas temperature (K).
    pub gas_temperature: f64,
    /// Molar mass of the gas (kg/mol).
    pub molar_mass: f64,
    /// Mechanical damping rate γ (rad/s). `None` means "derive from the
    /// Epstein drag relation for a given particle".
    pub damping_gamma: Option<f64>,
}

impl EnvironmentParams {
    pub fn new(pressure_pa: f64, gas_temperature: f64, molar_mass: f64) -> Result<Self> {
        if pressure_pa < 0.0 || gas_temperature <= 0.0 || molar_mass <= 0.0 {
            return Err(Error::Domain(format!(
                "environment requires P ≥ 0, T > 0, M > 0; got P={pressure_pa}, T={gas_temperature}, M={molar_mass}"
            )));
        }
        Ok(Self {
            pressure: pressure_pa,
            gas_temperature,
            molar_mass,
            damping_gamma: None,
        })
    }

    /// Pin the damping rate to a measured value instead of the drag formula.
    pub fn with_measured_damping(mut self, gamma: f64) -> Self {
        self.damping_gamma = Some(gamma);
        self
    }

    /// Damping rate for the given particle: the measured value if set,
    /// otherwise [`gas_damping_rate`].
    pub fn damping_for(&self, particle: &ParticleParams) -> Result<f64> {
        match self.damping_gamma {
            Some(g) => Ok(g),
            None => gas_damping_rate(particle, self),
        }
    }
}

/// Epstein-drag damping rate,
/// γ = 0.619 · 9/(√(2π)·ρ·R) · √(M/(N_A·k_B·T)) · P.
///
/// Linear in pressure and inverse in particle radius.
pub fn gas_damping_rate(particle: &ParticleParams, env: &EnvironmentParams) -> Result<f64> {
    if particle.radius <= 0.0 || particle.density <= 0.0 {
        return Err(Error::Domain(
            "gas_damping_rate requires positive particle radius and density".into(),
        ));
    }
    if env.pressure < 0.0 || env.gas_temperature <= 0.0 || env.molar_mass <= 0.0 {
        return Err(Error::Domain(
            "gas_damping_rate requires P ≥ 0, T > 0, M > 0".into(),
        ));
    }
    let geometric = 9.0 / ((2.0 * PI).sqrt() * particle.density * particle.radius);
    let thermal = (env.molar_mass / (NA * KB * env.gas_temperature)).sqrt();
    Ok(EPSTEIN_FACTOR * geometric * thermal * env.pressure)
}

/// How the recapture trap displacement is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Displacement {
    /// Fixed downward displacement d (m) of the recapture trap.
    Fixed(f64),
    /// AOM detuning Δf (Hz) with calibration factor c_f (m/Hz): d = c_f·Δf.
    Detuning { delta_f: f64, c_f: f64 },
    /// d = g·τ²/2, the displacement that centers the trap on the mean
    /// particle position at recapture.
    Optimal,
}

impl Displacement {
    /// Resolve to a displacement in meters for free-fall time `tau`.
    pub fn resolve(&self, tau: f64, gravity: f64) -> f64 {
        match *self {
            Displacement::Fixed(d) => d,
            Displacement::Detuning { delta_f, c_f } => c_f * delta_f,
            Displacement::Optimal => 0.5 * gravity * tau * tau,
        }
    }
}

/// Initial-state specification per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    /// Effective mode temperatures (K) along (x, y, z).
    Temperatures([f64; 3]),
    /// Mean occupations n₀ along (x, y, z).
    Occupations([f64; 3]),
}

/// One free-fall protocol: fall time, trap displacement, initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    /// Free-fall duration τ (s).
    pub tau: f64,
    /// Recapture-trap displacement specification.
    pub displacement: Displacement,
    /// Initial thermal state of the three COM modes.
    pub init: InitialState,
}

impl Protocol {
    pub fn new(tau: f64, displacement: Displacement, init: InitialState) -> Result<Self> {
        if tau < 0.0 {
            return Err(Error::Domain(format!("free-fall time must be ≥ 0, got {tau}")));
        }
        Ok(Self {
            tau,
            displacement,
            init,
        })
    }
}

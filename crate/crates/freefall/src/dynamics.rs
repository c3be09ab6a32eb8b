//! Closed-form evolution of the Gaussian state during free fall.
//!
//! The per-axis dynamics is the damped Langevin system
//! q̇ = p/m, ṗ = −m·g_j − γ·p + ξ(t), ⟨ξ(t)ξ(t′)⟩ = 2mk_BTγ·δ(t−t′),
//! with gravity acting on y only. Means and covariance evolve in closed form,
//! exactly in γ; all (1−e^{−γt})-type expressions switch to series below a
//! small-argument threshold to avoid cancellation.

use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, KB};
use crate::error::{Error, Result};
use crate::numeric::eigenvalues_sym2;
use crate::params::{EnvironmentParams, ParticleParams};
use crate::state::GaussianState1D;

/// Crossover below which series expansions replace the closed forms.
const SERIES_THRESHOLD: f64 = 1e-2;

/// (1 − e^{−s})/s, stable for all s ≥ 0.
#[inline]
pub(crate) fn em1_over(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else {
        -libm::expm1(-s) / s
    }
}

/// (1 − s − e^{−s})/s² → −1/2 as s → 0.
#[inline]
fn mean_q_shape(s: f64) -> f64 {
    if s < SERIES_THRESHOLD {
        -(0.5 - s / 6.0 + s * s / 24.0 - s * s * s / 120.0 + s * s * s * s / 720.0
            - s * s * s * s * s / 5040.0)
    } else {
        (1.0 - s - (-s).exp()) / (s * s)
    }
}

/// [s − 2(1 − e^{−s}) + (1 − e^{−2s})/2]/s³ → 1/3 as s → 0.
#[inline]
fn noise_qq_shape(s: f64) -> f64 {
    if s < SERIES_THRESHOLD {
        1.0 / 3.0 - s / 4.0 + 7.0 * s * s / 60.0 - s * s * s / 24.0
            + 31.0 * s * s * s * s / 2520.0
    } else {
        let u = -libm::expm1(-s);
        (s - u - 0.5 * u * u) / (s * s * s)
    }
}

/// Motional axis; gravity acts along −y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Everything the free-fall propagator needs to know about the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FallContext {
    /// Particle mass (kg).
    pub mass: f64,
    /// Mechanical damping rate γ (rad/s).
    pub gamma: f64,
    /// Background-gas temperature (K).
    pub gas_temperature: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
}

impl FallContext {
    pub fn new(mass: f64, gamma: f64, gas_temperature: f64, gravity: f64) -> Result<Self> {
        if mass <= 0.0 || gamma < 0.0 || gas_temperature < 0.0 {
            return Err(Error::Domain(format!(
                "fall context requires m > 0, γ ≥ 0, T ≥ 0; got m={mass}, γ={gamma}, T={gas_temperature}"
            )));
        }
        Ok(Self {
            mass,
            gamma,
            gas_temperature,
            gravity,
        })
    }

    /// Derive the context from particle and environment (damping from the
    /// Epstein relation unless the environment pins a measured value).
    pub fn from_params(
        particle: &ParticleParams,
        env: &EnvironmentParams,
        gravity: f64,
    ) -> Result<Self> {
        Self::new(
            particle.mass,
            env.damping_for(particle)?,
            env.gas_temperature,
            gravity,
        )
    }

    /// Diffusion strength D = 2mk_BTγ of the thermal force.
    pub fn diffusion(&self) -> f64 {
        2.0 * self.mass * KB * self.gas_temperature * self.gamma
    }
}

/// Free-fall transition matrix Φ(t) = [[1, (1−e^{−γt})/(mγ)], [0, e^{−γt}]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    /// Off-diagonal element (s/kg).
    pub m12: f64,
    /// Momentum decay e^{−γt}.
    pub m22: f64,
}

/// Transition matrix for time `t`, exact in γ with a stable small-γt limit.
pub fn transition_matrix(t: f64, mass: f64, gamma: f64) -> Result<TransitionMatrix> {
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be ≥ 0, got {t}")));
    }
    if mass <= 0.0 || gamma < 0.0 {
        return Err(Error::Domain(format!(
            "transition_matrix requires m > 0 and γ ≥ 0, got m={mass}, γ={gamma}"
        )));
    }
    let s = gamma * t;
    Ok(TransitionMatrix {
        m12: t / mass * em1_over(s),
        m22: (-s).exp(),
    })
}

impl TransitionMatrix {
    pub fn identity() -> Self {
        Self { m12: 0.0, m22: 1.0 }
    }

    /// Apply to a (q, p) pair.
    pub fn apply(&self, q: f64, p: f64) -> (f64, f64) {
        (q + self.m12 * p, self.m22 * p)
    }

    /// Matrix product Φ_a·Φ_b (both upper triangular with unit [0,0]).
    pub fn compose(&self, other: &TransitionMatrix) -> Self {
        Self {
            m12: self.m12 * other.m22 + other.m12,
            m22: self.m22 * other.m22,
        }
    }
}

/// Propagate the mean (q, p) of one axis for time `t`.
///
/// Along x and z the mean follows the drift alone; along y gravity adds
/// ⟨q⟩ += (g/γ²)(1 − γt − e^{−γt}) → −gt²/2 and ⟨p⟩ += −(gm/γ)(1 − e^{−γt})
/// → −gmt, evaluated with series fallbacks for γt below the threshold.
pub fn propagate_mean(
    mean_q: f64,
    mean_p: f64,
    t: f64,
    axis: Axis,
    ctx: &FallContext,
) -> Result<(f64, f64)> {
    let phi = transition_matrix(t, ctx.mass, ctx.gamma)?;
    let (mut q, mut p) = phi.apply(mean_q, mean_p);
    if axis == Axis::Y {
        let s = ctx.gamma * t;
        q += ctx.gravity * t * t * mean_q_shape(s);
        p -= ctx.gravity * ctx.mass * t * em1_over(s);
    }
    Ok((q, p))
}

/// Propagate the covariance of one axis for time `t`:
/// Σ(t) = Φ(t)Σ₀Φ(t)ᵀ + ∫₀ᵗ Φ(t−s)·diag(0, 2mk_BTγ)·Φ(t−s)ᵀ ds,
/// with the noise integral in closed form (exact in γ).
///
/// Returns (V_q, V_p, C_qp); the input must be positive semidefinite.
pub fn propagate_covariance(
    state: &GaussianState1D,
    t: f64,
    ctx: &FallContext,
) -> Result<(f64, f64, f64)> {
    state.check_psd()?;
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be ≥ 0, got {t}")));
    }
    let phi = transition_matrix(t, ctx.mass, ctx.gamma)?;
    let (a, b) = (phi.m12, phi.m22);
    let s = ctx.gamma * t;
    let kt = KB * ctx.gas_temperature;

    // Noise integral entries; all zero when γ = 0 or T = 0.
    let (n_qq, n_qp, n_pp) = if s == 0.0 || kt == 0.0 {
        (0.0, 0.0, 0.0)
    } else {
        let u = -libm::expm1(-s);
        (
            2.0 * kt / ctx.mass * t * t * s * noise_qq_shape(s),
            kt * t * s * em1_over(s) * em1_over(s),
            ctx.mass * kt * u * (2.0 - u),
        )
    };

    let vq = state.var_q + 2.0 * a * state.cov_qp + a * a * state.var_p + n_qq;
    let cqp = b * (state.cov_qp + a * state.var_p) + n_qp;
    let vp = b * b * state.var_p + n_pp;
    Ok((vq, vp, cqp))
}

/// Propagate a full Gaussian state (means and covariance) for time `t`.
pub fn propagate_state(
    state: &GaussianState1D,
    t: f64,
    axis: Axis,
    ctx: &FallContext,
) -> Result<GaussianState1D> {
    let (mean_q, mean_p) = propagate_mean(state.mean_q, state.mean_p, t, axis, ctx)?;
    let (var_q, var_p, cov_qp) = propagate_covariance(state, t, ctx)?;
    Ok(GaussianState1D {
        mean_q,
        mean_p,
        var_q,
        var_p,
        cov_qp,
    })
}

/// First-order (in the reheating terms) covariance: ballistic drift plus the
/// leading noise moments,
/// V_q = V_q⁰ + V_p⁰t²/m² + Dt³/(3m²), V_p = V_p⁰ + Dt,
/// C = V_p⁰t/m + Dt²/(2m), with D = 2mk_BTγ.
///
/// Kept as a named approximation for testing against the exact propagator;
/// requires an initially uncorrelated state.
pub fn covariance_first_order(
    state: &GaussianState1D,
    t: f64,
    ctx: &FallContext,
) -> Result<(f64, f64, f64)> {
    if state.cov_qp != 0.0 {
        return Err(Error::InvalidInput(
            "first-order covariance assumes an initially uncorrelated state".into(),
        ));
    }
    let m = ctx.mass;
    let d = ctx.diffusion();
    let vq = state.var_q + state.var_p * t * t / (m * m) + d * t * t * t / (3.0 * m * m);
    let vp = state.var_p + d * t;
    let c = state.var_p * t / m + d * t * t / (2.0 * m);
    Ok((vq, vp, c))
}

/// Damping, decoherence and reheating rates for one mode.
///
/// With the convention n+1/2 ≡ k_BT/(ħΩ), the identity
/// Γ_dec/(n₀+1/2) = Γ_reheat holds exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceRates {
    /// Mechanical damping γ (rad/s).
    pub gamma: f64,
    /// Decoherence rate Γ = γ·k_BT_env/(ħΩ) = γ(n_th+1/2) (rad/s).
    pub gamma_dec: f64,
    /// Reheating rate Γ = γ·T_env/T₀ (rad/s), the form entering the
    /// expansion law.
    pub gamma_reheat: f64,
}

impl DecoherenceRates {
    /// Rates for a mode of frequency `omega`, initialized at temperature `t0`,
    /// in a gas at `t_env`.
    pub fn new(gamma: f64, omega: f64, t_env: f64, t0: f64) -> Result<Self> {
        if gamma < 0.0 || omega <= 0.0 || t_env < 0.0 || t0 <= 0.0 {
            return Err(Error::Domain(format!(
                "rates require γ ≥ 0, Ω > 0, T_env ≥ 0, T₀ > 0; got γ={gamma}, Ω={omega}, T_env={t_env}, T₀={t0}"
            )));
        }
        Ok(Self {
            gamma,
            gamma_dec: gamma * KB * t_env / (HBAR * omega),
            gamma_reheat: gamma * t_env / t0,
        })
    }

    /// Same, with the initial state given by occupation n₀.
    pub fn from_occupation(gamma: f64, omega: f64, t_env: f64, n0: f64) -> Result<Self> {
        let t0 = HBAR * omega * (n0 + 0.5) / KB;
        Self::new(gamma, omega, t_env, t0)
    }
}

/// Position expansion factor ξ_q(τ) = √(1 + Ω²τ² + (2/3)·Γ_reheat·Ω²τ³).
pub fn expansion_q(tau: f64, omega: f64, gamma_reheat: f64) -> Result<f64> {
    if tau < 0.0 {
        return Err(Error::Domain(format!("tau must be ≥ 0, got {tau}")));
    }
    let wt = omega * tau;
    Ok((1.0 + wt * wt * (1.0 + 2.0 / 3.0 * gamma_reheat * tau)).sqrt())
}

/// Expansion/compression factors from the principal axes of the phase-space
/// ellipse: normalize the evolved covariance by the initial rms values
/// (q₀, p₀) and return the square roots of the extreme eigenvalues.
///
/// The initial state must be uncorrelated with non-degenerate variances.
pub fn expansion_factors(
    state0: &GaussianState1D,
    state_t: &GaussianState1D,
) -> Result<(f64, f64)> {
    if state0.cov_qp != 0.0 {
        return Err(Error::InvalidInput(
            "expansion factors are defined relative to an uncorrelated initial state".into(),
        ));
    }
    if state0.var_q <= 0.0 || state0.var_p <= 0.0 {
        return Err(Error::Domain(
            "initial variances must be positive to normalize the ellipse".into(),
        ));
    }
    let a = state_t.var_q / state0.var_q;
    let b = state_t.var_p / state0.var_p;
    let c = state_t.cov_qp / (state0.var_q * state0.var_p).sqrt();
    let (hi, lo) = eigenvalues_sym2(a, b, c);
    Ok((hi.sqrt(), lo.max(0.0).sqrt()))
}

/// State purity after free fall, in terms of V₀ = n₀+1/2 and the
/// decoherence rate Γ:
/// P = [4V₀(V₀+2Γt) + (4/3)(2V₀+Γt)·Γ·Ω²t³]^{−1/2}.
///
/// This is the determinant of the first-order covariance in zero-point
/// units; exact at t = 0 where P = (2n₀+1)^{−1}.
pub fn purity(v0: f64, gamma_dec: f64, omega: f64, t: f64) -> Result<f64> {
    if v0 < 0.5 {
        return Err(Error::Domain(format!("V₀ = n₀+1/2 must be ≥ 1/2, got {v0}")));
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be ≥ 0, got {t}")));
    }
    let gt = gamma_dec * t;
    let wt = omega * t;
    let det4 = 4.0 * v0 * (v0 + 2.0 * gt) + 4.0 / 3.0 * (2.0 * v0 + gt) * gt * wt * wt;
    Ok(1.0 / det4.sqrt())
}

/// Coherence length ℓ = √8 · P · σ_q.
pub fn coherence_length(purity: f64, sigma_q: f64) -> Result<f64> {
    if purity <= 0.0 || purity > 1.0 + 1e-12 {
        return Err(Error::Domain(format!("purity must be in (0, 1], got {purity}")));
    }
    if sigma_q <= 0.0 {
        return Err(Error::Domain(format!("σ_q must be > 0, got {sigma_q}")));
    }
    Ok(8f64.sqrt() * purity * sigma_q)
}

//! Optical-potential model, recapture energetics and loss probability.
//!
//! Conventions: the y axis points up (gravity along −y), so a falling
//! particle has negative mean position and momentum. The recapture trap is
//! displaced a distance `d` downwards, i.e. its center sits at y = −d. The
//! misalignment entering the overlap integral is Δy = d − g·τ²/2, identical
//! to the displaced-frame form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_state, purity, Axis, DecoherenceRates, FallContext};
use crate::error::{Error, Result};
use crate::numeric::{erf, erfcx, gauss_hermite, halton, inv_norm_cdf, KahanSum};
use crate::params::{trap_depth_formula, ParticleParams, TrapParams};
use crate::state::{thermal_state_occupation, GaussianState1D};

/// Per-axis Gaussian states (x, y, z); only y carries nonzero means.
pub type ThreeAxisState = [GaussianState1D; 3];

/// Gaussian-beam trap depth U₀ = (4R³P/(c·w_x·w_y)) · (ε_r−1)/(ε_r+2).
pub fn trap_depth(particle: &ParticleParams, trap: &TrapParams) -> Result<f64> {
    if particle.radius <= 0.0 || trap.power < 0.0 || trap.waist_x <= 0.0 || trap.waist_y <= 0.0 {
        return Err(Error::Domain(
            "trap_depth requires positive radius and waists, non-negative power".into(),
        ));
    }
    Ok(trap_depth_formula(particle, trap))
}

/// Optical potential of a Gaussian beam centered at (0, center_y, 0):
/// U(q) = U₀·[1 − exp(−2q_x²/w_x² − 2(q_y−c)²/w_y²)/(1+(q_z/w_z)²)].
///
/// Zero at the focus, U₀ far away.
pub fn optical_potential(q: [f64; 3], trap: &TrapParams, center_y: f64) -> f64 {
    trap.depth_u0 * (1.0 - well_fraction(q, trap, center_y))
}

/// The complementary "well depth" U₀ − U(q): the energy barrier between a
/// particle at q and the continuum.
pub fn well_depth(q: [f64; 3], trap: &TrapParams, center_y: f64) -> f64 {
    trap.depth_u0 * well_fraction(q, trap, center_y)
}

#[inline]
fn well_fraction(q: [f64; 3], trap: &TrapParams, center_y: f64) -> f64 {
    let dy = q[1] - center_y;
    let gauss = (-2.0 * q[0] * q[0] / (trap.waist_x * trap.waist_x)
        - 2.0 * dy * dy / (trap.waist_y * trap.waist_y))
        .exp();
    let zr = q[2] / trap.rayleigh_z;
    gauss / (1.0 + zr * zr)
}

/// Overlap integrals of the Gaussian position marginals with the separable
/// potential factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapIntegrals {
    pub i_x: f64,
    pub i_y: f64,
    pub i_z: f64,
}

impl OverlapIntegrals {
    pub fn product(&self) -> f64 {
        self.i_x * self.i_y * self.i_z
    }
}

/// I_x = w/√(w²+4V), I_y = w·exp(−2Δy²/(w²+4V))/√(w²+4V),
/// I_z = √(πx)·erfcx(√x) with x = w_z²/(2V_z); each → 1 as the variances
/// (and Δy) vanish.
pub fn overlap_integrals(
    var_q: [f64; 3],
    trap: &TrapParams,
    delta_y: f64,
) -> Result<OverlapIntegrals> {
    if var_q.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("position variances must be ≥ 0".into()));
    }
    let ix = gaussian_overlap(trap.waist_x, var_q[0], 0.0);
    let iy = gaussian_overlap(trap.waist_y, var_q[1], delta_y);
    let iz = if var_q[2] == 0.0 {
        1.0
    } else {
        let x = trap.rayleigh_z * trap.rayleigh_z / (2.0 * var_q[2]);
        (std::f64::consts::PI * x).sqrt() * erfcx(x.sqrt())
    };
    Ok(OverlapIntegrals {
        i_x: ix,
        i_y: iy,
        i_z: iz,
    })
}

#[inline]
fn gaussian_overlap(w: f64, v: f64, delta: f64) -> f64 {
    let w2 = w * w + 4.0 * v;
    w / w2.sqrt() * (-2.0 * delta * delta / w2).exp()
}

/// Optimal trap displacement d = g·τ²/2.
pub fn optimal_displacement(tau: f64, gravity: f64) -> Result<f64> {
    if tau < 0.0 {
        return Err(Error::Domain(format!("tau must be ≥ 0, got {tau}")));
    }
    Ok(0.5 * gravity * tau * tau)
}

/// AOM detuning Δf = d/c_f corresponding to the optimal displacement.
pub fn optimal_detuning(tau: f64, gravity: f64, c_f: f64) -> Result<f64> {
    if c_f <= 0.0 {
        return Err(Error::Domain(format!("c_f must be > 0, got {c_f}")));
    }
    Ok(optimal_displacement(tau, gravity)? / c_f)
}

/// Mean-energy decomposition of the y motion at recapture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// ⟨p²⟩/2m including the gravitational mean momentum (J).
    pub kinetic: f64,
    /// U₀·(1 − I_y) (J).
    pub potential: f64,
    /// kinetic + potential (J).
    pub total: f64,
    /// total/(k_B·T₀) with k_B·T₀ = V_p⁰/m.
    pub normalized: f64,
    /// Trap-particle misalignment Δy = d − |⟨q_y(τ)⟩| (m).
    pub delta_y: f64,
}

/// Mean energy stored in the y motion at recapture after a fall of `tau`
/// with the trap displaced down by `d`:
/// ⟨H_y⟩ = ⟨p_y²⟩/2m + U₀[1 − I_y(Δy)].
///
/// Means and covariance come from the exact free-fall propagation.
pub fn mean_energy_y(
    state0: &GaussianState1D,
    trap: &TrapParams,
    tau: f64,
    d: f64,
    ctx: &FallContext,
) -> Result<EnergyReport> {
    let st = propagate_state(state0, tau, Axis::Y, ctx)?;
    // Particle mean sits at negative y; trap center at −d.
    let delta_y = d + st.mean_q;
    let kinetic = (st.mean_p * st.mean_p + st.var_p) / (2.0 * ctx.mass);
    let iy = gaussian_overlap(trap.waist_y, st.var_q, delta_y);
    let potential = trap.depth_u0 * (1.0 - iy);
    let total = kinetic + potential;
    let kt0 = state0.var_p / ctx.mass;
    Ok(EnergyReport {
        kinetic,
        potential,
        total,
        normalized: total / kt0,
        delta_y,
    })
}

/// Normalized mean-energy model in the same form as the main-text law,
/// with the overlap width w̃² = w² + 4V_q(τ) taken from the explicit
/// derivation:
/// ⟨H⟩/k_BT₀ = 1/2 + g²τ²/(2Ω²q₀²) + Ũ₀·[1 − (w/w̃)·exp(−2Δy²/w̃²)].
#[allow(clippy::too_many_arguments)]
pub fn normalized_energy_model(
    q0: f64,
    omega: f64,
    u0_over_kt0: f64,
    waist_y: f64,
    tau: f64,
    delta_y: f64,
    gravity: f64,
    gamma_reheat: f64,
) -> f64 {
    let vq = q0 * q0 * {
        let wt = omega * tau;
        1.0 + wt * wt * (1.0 + 2.0 / 3.0 * gamma_reheat * tau)
    };
    let iy = gaussian_overlap(waist_y, vq, delta_y);
    0.5 + gravity * gravity * tau * tau / (2.0 * omega * omega * q0 * q0)
        + u0_over_kt0 * (1.0 - iy)
}

/// Recapture energetics and probabilities at the recapture instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecaptureReport {
    /// Total mean energy ⟨H⟩ = ⟨K⟩ + U₀(1 − I_xI_yI_z) (J).
    pub mean_energy: f64,
    /// Mean kinetic energy over all three axes (J).
    pub kinetic: f64,
    /// Mean potential energy U₀(1 − I_xI_yI_z) (J).
    pub potential: f64,
    /// Probability that the particle is recaptured.
    pub recapture_probability: f64,
    /// 1 − recapture probability.
    pub loss_probability: f64,
    /// Absolute error estimate of the probability integral.
    pub integration_error: f64,
    /// Integration route that produced the value.
    pub method: String,
}

/// Controls for the recapture-probability integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecaptureOptions {
    /// Gauss–Hermite orders tried in sequence.
    pub gh_orders: [usize; 3],
    /// Absolute tolerance on P_R.
    pub abs_tol: f64,
    /// Quasi-random fallback: points per shift.
    pub qmc_points: usize,
    /// Quasi-random fallback: number of random shifts.
    pub qmc_shifts: usize,
    /// Seed for the quasi-random shifts.
    pub seed: u64,
}

impl Default for RecaptureOptions {
    fn default() -> Self {
        Self {
            gh_orders: [32, 48, 64],
            abs_tol: 1e-4,
            qmc_points: 1 << 16,
            qmc_shifts: 8,
            seed: 0x5eed_f0f0,
        }
    }
}

/// Mean recapture energy and recapture/loss probability for the three-axis
/// Gaussian state at the recapture instant, with the trap displaced down
/// by `d`.
///
/// P_R = ∫dq P_q(q)·½[1 + erf((p̄_y + p_u(q))/√(2V_p^y))], where
/// p_u(q) = √(2m·(U₀−U(q))) is the escape-barrier momentum at q. The
/// integral runs over the 3-axis position Gaussian via tensor Gauss–Hermite
/// quadrature, falling back to shifted quasi-random sampling when the
/// quadrature does not self-verify to the requested tolerance.
pub fn recapture_report(
    state: &ThreeAxisState,
    trap: &TrapParams,
    d: f64,
    mass: f64,
    opts: &RecaptureOptions,
) -> Result<RecaptureReport> {
    for s in state {
        s.check_psd()?;
    }
    let delta_y = d + state[1].mean_q;
    let var_q = [state[0].var_q, state[1].var_q, state[2].var_q];
    let overlaps = overlap_integrals(var_q, trap, delta_y)?;
    let kinetic = state
        .iter()
        .map(|s| (s.mean_p * s.mean_p + s.var_p) / (2.0 * mass))
        .sum::<f64>();
    let potential = trap.depth_u0 * (1.0 - overlaps.product());

    let (p_r, err, method) = recapture_integral(state, trap, d, mass, opts)?;
    let p_r = p_r.clamp(0.0, 1.0);

    // The loss integral keeps only the y momentum. That is sound provided
    // the neglected x/z kinetic energy cannot itself eject the particle;
    // when it could, a non-trivial recapture claim is unreliable.
    let xz_kinetic = (state[0].var_p + state[2].var_p) / (2.0 * mass);
    if xz_kinetic > 0.05 * trap.depth_u0 && p_r > 1e-3 {
        return Err(Error::InvalidInput(format!(
            "x/z kinetic energy {xz_kinetic:e} J is not small against the trap depth {:e} J; \
             the single-axis recapture integral does not apply",
            trap.depth_u0
        )));
    }

    Ok(RecaptureReport {
        mean_energy: kinetic + potential,
        kinetic,
        potential,
        recapture_probability: p_r,
        loss_probability: 1.0 - p_r,
        integration_error: err,
        method,
    })
}

/// The integrand of the loss integral at position q.
#[inline]
fn recapture_integrand(
    q: [f64; 3],
    trap: &TrapParams,
    center_y: f64,
    mass: f64,
    mean_p_y: f64,
    var_p_y: f64,
) -> f64 {
    let barrier = well_depth(q, trap, center_y);
    let p_u = (2.0 * mass * barrier).sqrt();
    let arg = (mean_p_y + p_u) / (2.0 * var_p_y).sqrt();
    0.5 * (1.0 + erf(arg))
}

fn recapture_integral(
    state: &ThreeAxisState,
    trap: &TrapParams,
    d: f64,
    mass: f64,
    opts: &RecaptureOptions,
) -> Result<(f64, f64, String)> {
    let center_y = -d;
    let means = [0.0, state[1].mean_q, 0.0];
    let sigmas = [
        state[0].var_q.sqrt(),
        state[1].var_q.sqrt(),
        state[2].var_q.sqrt(),
    ];
    let mean_p_y = state[1].mean_p;
    let var_p_y = state[1].var_p;

    // Gauss–Hermite ladder with successive-order difference as the error
    // estimate.
    let mut last: Option<f64> = None;
    for &order in &opts.gh_orders {
        let val = gh_tensor(order, means, sigmas, |q| {
            recapture_integrand(q, trap, center_y, mass, mean_p_y, var_p_y)
        });
        if let Some(prev) = last {
            let err = (val - prev).abs();
            if err < opts.abs_tol {
                return Ok((val, err, format!("gauss-hermite-{order}")));
            }
        }
        last = Some(val);
    }

    // Quasi-random fallback: Halton points with seeded Cranley–Patterson
    // shifts; spread across shifts gives the error estimate. A second rung
    // with 4× the points handles near-indicator integrands.
    let mut result = (f64::NAN, f64::INFINITY);
    for (rung, points) in [opts.qmc_points, 4 * opts.qmc_points].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let shifts: Vec<[f64; 3]> = (0..opts.qmc_shifts)
            .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        let estimates: Vec<f64> = shifts
            .par_iter()
            .map(|shift| {
                let mut acc = KahanSum::new();
                for i in 1..=points as u64 {
                    let mut q = [0.0; 3];
                    for (dim, &base) in [2u64, 3, 5].iter().enumerate() {
                        let u =
                            (halton(i, base) + shift[dim]).fract().clamp(1e-16, 1.0 - 1e-16);
                        q[dim] = means[dim] + sigmas[dim] * inv_norm_cdf(u);
                    }
                    acc.add(recapture_integrand(
                        q, trap, center_y, mass, mean_p_y, var_p_y,
                    ));
                }
                acc.value() / points as f64
            })
            .collect();
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        let var = estimates
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / (estimates.len() - 1) as f64;
        let err = 2.0 * (var / estimates.len() as f64).sqrt();
        if err < opts.abs_tol {
            return Ok((
                mean,
                err,
                format!("qmc-halton-{points}x{}-r{rung}", opts.qmc_shifts),
            ));
        }
        result = (mean, err);
    }
    Err(Error::Integration {
        message: format!(
            "recapture integral did not reach tolerance {:.1e}",
            opts.abs_tol
        ),
        partial: result.0,
        error_estimate: result.1,
    })
}

/// Tensor-product Gauss–Hermite integration of `f` against the 3-axis
/// Gaussian with the given means and standard deviations.
fn gh_tensor(order: usize, means: [f64; 3], sigmas: [f64; 3], f: impl Fn([f64; 3]) -> f64) -> f64 {
    let (nodes, weights) = gauss_hermite(order);
    let norm = std::f64::consts::PI.powf(-1.5);
    let map = |dim: usize, i: usize| means[dim] + std::f64::consts::SQRT_2 * sigmas[dim] * nodes[i];
    let mut acc = KahanSum::new();
    for ix in 0..order {
        let qx = map(0, ix);
        for iy in 0..order {
            let qy = map(1, iy);
            let wxy = weights[ix] * weights[iy];
            let mut inner = KahanSum::new();
            for iz in 0..order {
                inner.add(weights[iz] * f([qx, qy, map(2, iz)]));
            }
            acc.add(wxy * inner.value());
        }
    }
    acc.value() * norm
}

/// Direct Monte Carlo recapture estimate: sample the full 6-D Gaussian and
/// count p² ≤ 2m·(U₀−U(q)), with the x/z kinetic contributions included
/// exactly. Returns (fraction, standard error).
pub fn recapture_mc(
    state: &ThreeAxisState,
    trap: &TrapParams,
    d: f64,
    mass: f64,
    n: usize,
    seed: u64,
) -> (f64, f64) {
    let center_y = -d;
    let counts: Vec<u64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let mut q = [0.0; 3];
            let mut ke = 0.0;
            for ax in 0..3 {
                let s = &state[ax];
                // Sample (q, p) with the correct covariance: p | q is Gaussian
                // with mean C/V_q·(q−q̄) and variance V_p − C²/V_q.
                let zq: f64 = rng.sample(StandardNormal);
                let zp: f64 = rng.sample(StandardNormal);
                let qa = s.mean_q + s.var_q.sqrt() * zq;
                let slope = if s.var_q > 0.0 { s.cov_qp / s.var_q } else { 0.0 };
                let cond_var = (s.var_p - slope * s.cov_qp).max(0.0);
                let pa = s.mean_p + slope * (qa - s.mean_q) + cond_var.sqrt() * zp;
                q[ax] = qa;
                ke += pa * pa;
            }
            u64::from(ke <= 2.0 * mass * well_depth(q, trap, center_y))
        })
        .collect();
    let hits: u64 = counts.iter().sum();
    let p = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    (p, se)
}

/// One cell of the loss/purity map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossMapCell {
    pub tau: f64,
    pub n0: f64,
    pub loss_probability: f64,
    pub purity: f64,
}

/// Inputs for the loss/purity map: the fall context (mass, damping, gas
/// temperature, gravity) plus the mode frequency the purity refers to.
#[derive(Debug, Clone, Copy)]
pub struct LossMapConfig {
    pub ctx: FallContext,
    pub omega_purity: f64,
}

/// Loss probability and purity on a (τ, n₀) grid at the optimal recapture
/// displacement d = gτ²/2. Grid cells are evaluated independently in
/// parallel; results are deterministic for a fixed seed.
pub fn loss_map(
    tau_grid: &[f64],
    n0_grid: &[f64],
    trap: &TrapParams,
    cfg: &LossMapConfig,
    opts: &RecaptureOptions,
) -> Result<Vec<LossMapCell>> {
    if tau_grid.is_empty() || n0_grid.is_empty() {
        return Err(Error::InvalidInput("loss_map grids must be non-empty".into()));
    }
    if tau_grid.windows(2).any(|w| w[0] >= w[1]) || n0_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("loss_map grids must be ascending".into()));
    }
    let jobs: Vec<(f64, f64)> = tau_grid
        .iter()
        .flat_map(|&tau| n0_grid.iter().map(move |&n0| (tau, n0)))
        .collect();
    jobs.par_iter()
        .map(|&(tau, n0)| {
            let st = propagate_thermal_three_axis(n0, tau, trap, &cfg.ctx)?;
            let d = optimal_displacement(tau, cfg.ctx.gravity)?;
            let rep = recapture_report(&st, trap, d, cfg.ctx.mass, opts)?;
            let rates = DecoherenceRates::from_occupation(
                cfg.ctx.gamma,
                cfg.omega_purity,
                cfg.ctx.gas_temperature,
                n0,
            )?;
            let p = purity(n0 + 0.5, rates.gamma_dec, cfg.omega_purity, tau)?;
            Ok(LossMapCell {
                tau,
                n0,
                loss_probability: rep.loss_probability,
                purity: p,
            })
        })
        .collect()
}

/// Thermal three-axis state with common occupation n₀, propagated to time τ.
pub fn propagate_thermal_three_axis(
    n0: f64,
    tau: f64,
    trap: &TrapParams,
    ctx: &FallContext,
) -> Result<ThreeAxisState> {
    let mut out = [GaussianState1D::from_variances(1.0, 1.0, 0.0)?; 3];
    for axis in Axis::ALL {
        let s0 = thermal_state_occupation(ctx.mass, trap.frequencies[axis.index()], n0)?;
        out[axis.index()] = propagate_state(&s0, tau, axis, ctx)?;
    }
    Ok(out)
}

/// Purity contour τ*(n₀) at the given level: for each n₀ with
/// P(τ=0) = (2n₀+1)⁻¹ above the level, bisect the (monotone) purity in τ.
/// Returns (n₀, τ*) pairs for n₀ values whose crossing lies inside
/// [0, tau_max].
pub fn purity_contour(
    level: f64,
    n0_grid: &[f64],
    tau_max: f64,
    omega: f64,
    gamma: f64,
    gas_temperature: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for &n0 in n0_grid {
        let v0 = n0 + 0.5;
        let rates = DecoherenceRates::from_occupation(gamma, omega, gas_temperature, n0)?;
        if purity(v0, rates.gamma_dec, omega, 0.0)? <= level
            || purity(v0, rates.gamma_dec, omega, tau_max)? >= level
        {
            continue;
        }
        let (mut lo, mut hi) = (0.0, tau_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if purity(v0, rates.gamma_dec, omega, mid)? > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push((n0, 0.5 * (lo + hi)));
    }
    Ok(out)
}

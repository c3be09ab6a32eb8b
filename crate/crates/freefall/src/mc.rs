//! Stochastic trajectory simulation: the brute-force oracle for the analytic
//! free-fall results, plus nonlinear trapped-phase dynamics.
//!
//! Trajectory `i` of an ensemble draws from an independent, scheduling-
//! invariant RNG stream (ChaCha, stream = i), so ensembles are bit-identical
//! for a fixed seed regardless of the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::KB;
use crate::dynamics::{transition_matrix, Axis, FallContext};
use crate::energetics::well_depth;
use crate::error::{Error, Result};
use crate::numeric::KahanSum;
use crate::params::TrapParams;
use crate::state::GaussianState1D;

/// One phase-space point per axis: `q[axis]`, `p[axis]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: [f64; 3],
    pub p: [f64; 3],
}

impl PhasePoint {
    pub fn at_rest() -> Self {
        Self {
            q: [0.0; 3],
            p: [0.0; 3],
        }
    }

    /// Sample from three independent per-axis Gaussian states.
    pub fn sample(states: &[GaussianState1D; 3], rng: &mut impl Rng) -> Self {
        let mut q = [0.0; 3];
        let mut p = [0.0; 3];
        for ax in 0..3 {
            let s = &states[ax];
            let zq: f64 = rng.sample(StandardNormal);
            let zp: f64 = rng.sample(StandardNormal);
            // p | q from the conditional of the 2×2 Gaussian.
            let slope = if s.var_q > 0.0 { s.cov_qp / s.var_q } else { 0.0 };
            let cond_var = (s.var_p - slope * s.cov_qp).max(0.0);
            q[ax] = s.mean_q + s.var_q.sqrt() * zq;
            p[ax] = s.mean_p + slope * (q[ax] - s.mean_q) + cond_var.sqrt() * zp;
        }
        Self { q, p }
    }
}

/// Why a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryStatus {
    Completed,
    /// Left the 5-waist region around the trap center.
    Lost { step: usize },
}

/// A sampled trajectory on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub q: Vec<[f64; 3]>,
    pub p: Vec<[f64; 3]>,
    pub rng_seed: u64,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.q.len()).map(move |i| i as f64 * self.dt)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Per-axis position series.
    pub fn axis_q(&self, axis: Axis) -> Vec<f64> {
        self.q.iter().map(|v| v[axis.index()]).collect()
    }
}

fn check_finite(q: &[f64; 3], p: &[f64; 3], step: usize) -> Result<()> {
    if q.iter().chain(p.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration {
            message: format!("non-finite state at step {step}"),
            partial: f64::NAN,
            error_estimate: f64::NAN,
        })
    }
}

/// Euler–Maruyama integration of the free-fall Langevin equations
/// q̇ = p/m, ṗ = −mg_j − γp + ξ(t) with ⟨ξξ'⟩ = 2mk_BTγδ, gravity on y only.
///
/// Records every step including the initial point.
pub fn simulate_freefall(
    initial: PhasePoint,
    tau: f64,
    dt: f64,
    ctx: &FallContext,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if dt <= 0.0 || tau < dt {
        return Err(Error::Domain(format!(
            "need dt > 0 and tau ≥ dt, got dt={dt}, tau={tau}"
        )));
    }
    let steps = (tau / dt).round() as usize;
    let mut q = Vec::with_capacity(steps + 1);
    let mut p = Vec::with_capacity(steps + 1);
    let sigma = (ctx.diffusion() * dt).sqrt();
    let mut st = initial;
    q.push(st.q);
    p.push(st.p);
    for step in 0..steps {
        for ax in 0..3 {
            let noise: f64 = rng.sample(StandardNormal);
            let grav = if ax == Axis::Y.index() {
                -ctx.mass * ctx.gravity
            } else {
                0.0
            };
            st.q[ax] += st.p[ax] / ctx.mass * dt;
            st.p[ax] += (grav - ctx.gamma * st.p[ax]) * dt + sigma * noise;
        }
        check_finite(&st.q, &st.p, step)?;
        q.push(st.q);
        p.push(st.p);
    }
    Ok(Trajectory {
        dt,
        q,
        p,
        rng_seed: 0,
        status: TrajectoryStatus::Completed,
    })
}

/// Exact one-step sampler of the linear free-fall SDE: the endpoint at time
/// `t` is Gaussian with the closed-form mean and noise covariance, so no
/// time-stepping error enters. Used for variance-reduction cross-checks.
pub fn exact_freefall_sample(
    initial: PhasePoint,
    t: f64,
    ctx: &FallContext,
    rng: &mut impl Rng,
) -> Result<PhasePoint> {
    let phi = transition_matrix(t, ctx.mass, ctx.gamma)?;
    // Noise covariance of the increment (same closed form as the
    // state-propagation integral with a zero initial covariance).
    let zero = GaussianState1D::from_variances(0.0, 0.0, 0.0)?;
    let (n_qq, n_pp, n_qp) = crate::dynamics::propagate_covariance(&zero, t, ctx)?;
    // Cholesky of [[n_qq, n_qp], [n_qp, n_pp]].
    let (l11, l21, l22) = if n_qq > 0.0 {
        let l11 = n_qq.sqrt();
        let l21 = n_qp / l11;
        (l11, l21, (n_pp - l21 * l21).max(0.0).sqrt())
    } else {
        (0.0, 0.0, n_pp.max(0.0).sqrt())
    };
    let mut out = PhasePoint::at_rest();
    for axis in Axis::ALL {
        let ax = axis.index();
        let (mut qm, mut pm) = phi.apply(initial.q[ax], initial.p[ax]);
        if axis == Axis::Y {
            let (gq, gp) = crate::dynamics::propagate_mean(0.0, 0.0, t, Axis::Y, ctx)?;
            qm += gq;
            pm += gp;
        }
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        out.q[ax] = qm + l11 * z1;
        out.p[ax] = pm + l21 * z1 + l22 * z2;
    }
    Ok(out)
}

/// Gradient force of the Gaussian optical potential centered at
/// (0, center_y, 0).
#[inline]
pub fn optical_force(q: [f64; 3], trap: &TrapParams, center_y: f64) -> [f64; 3] {
    let dy = q[1] - center_y;
    let wx2 = trap.waist_x * trap.waist_x;
    let wy2 = trap.waist_y * trap.waist_y;
    let wz2 = trap.rayleigh_z * trap.rayleigh_z;
    let gauss = (-2.0 * q[0] * q[0] / wx2 - 2.0 * dy * dy / wy2).exp();
    let lorentz = 1.0 / (1.0 + q[2] * q[2] / wz2);
    let el = trap.depth_u0 * gauss * lorentz;
    [
        -4.0 * el * q[0] / wx2,
        -4.0 * el * dy / wy2,
        -2.0 * el * lorentz * q[2] / wz2,
    ]
}

/// Trapped-phase integration in the full Gaussian potential (no harmonic
/// approximation): velocity Verlet with an exact Ornstein–Uhlenbeck
/// substep for damping and thermal noise. Reduces to plain velocity Verlet
/// for γ = 0, conserving energy over long runs.
///
/// A particle further than 5 waists from the trap center is flagged lost
/// and the trajectory ends there.
pub fn simulate_trapped(
    initial: PhasePoint,
    trap: &TrapParams,
    center_y: f64,
    duration: f64,
    dt: f64,
    ctx: &FallContext,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if dt <= 0.0 || duration < dt {
        return Err(Error::Domain(format!(
            "need dt > 0 and duration ≥ dt, got dt={dt}, duration={duration}"
        )));
    }
    let steps = (duration / dt).round() as usize;
    let mut q = Vec::with_capacity(steps + 1);
    let mut p = Vec::with_capacity(steps + 1);
    let c1 = (-ctx.gamma * dt).exp();
    let c2 = ((1.0 - c1 * c1) * ctx.mass * KB * ctx.gas_temperature).sqrt();
    let mut st = initial;
    q.push(st.q);
    p.push(st.p);
    let mut force = optical_force(st.q, trap, center_y);
    let mut status = TrajectoryStatus::Completed;
    for step in 0..steps {
        for ax in 0..3 {
            st.p[ax] += 0.5 * dt * force[ax];
            st.q[ax] += 0.5 * dt * st.p[ax] / ctx.mass;
        }
        if ctx.gamma > 0.0 {
            for ax in 0..3 {
                let noise: f64 = rng.sample(StandardNormal);
                st.p[ax] = c1 * st.p[ax] + c2 * noise;
            }
        }
        for ax in 0..3 {
            st.q[ax] += 0.5 * dt * st.p[ax] / ctx.mass;
        }
        force = optical_force(st.q, trap, center_y);
        for ax in 0..3 {
            st.p[ax] += 0.5 * dt * force[ax];
        }
        check_finite(&st.q, &st.p, step)?;
        q.push(st.q);
        p.push(st.p);
        let escaped = st.q[0].abs() > 5.0 * trap.waist_x
            || (st.q[1] - center_y).abs() > 5.0 * trap.waist_y
            || st.q[2].abs() > 5.0 * trap.rayleigh_z;
        if escaped {
            status = TrajectoryStatus::Lost { step };
            break;
        }
    }
    Ok(Trajectory {
        dt,
        q,
        p,
        rng_seed: 0,
        status,
    })
}

/// Total energy (kinetic + optical potential) of a phase point.
pub fn total_energy(pt: &PhasePoint, trap: &TrapParams, center_y: f64, mass: f64) -> f64 {
    let ke: f64 = pt.p.iter().map(|p| p * p).sum::<f64>() / (2.0 * mass);
    ke + crate::energetics::optical_potential(pt.q, trap, center_y)
}

/// Oscillation frequency from zero crossings of a (mean-subtracted) signal:
/// counts upward crossings with linear interpolation of the crossing times.
pub fn frequency_from_zero_crossings(signal: &[f64], dt: f64) -> Result<f64> {
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let mut first = None;
    let mut last = None;
    let mut count = 0usize;
    for i in 1..signal.len() {
        let (a, b) = (signal[i - 1] - mean, signal[i] - mean);
        if a < 0.0 && b >= 0.0 {
            let t = (i as f64 - b / (b - a)) * dt;
            if first.is_none() {
                first = Some(t);
            } else {
                count += 1;
            }
            last = Some(t);
        }
    }
    match (first, last) {
        (Some(t0), Some(t1)) if count > 0 => Ok(count as f64 / (t1 - t0)),
        _ => Err(Error::InvalidInput(
            "signal has too few zero crossings for a frequency estimate".into(),
        )),
    }
}

/// Ensemble statistics at one readout time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub tau: f64,
    pub n_traj: usize,
    /// Per-axis mean position (m) and its standard error.
    pub mean_q: [f64; 3],
    pub se_mean_q: [f64; 3],
    /// Per-axis mean momentum (kg·m/s) and its standard error.
    pub mean_p: [f64; 3],
    pub se_mean_p: [f64; 3],
    /// Per-axis sample variances and covariance.
    pub var_q: [f64; 3],
    pub var_p: [f64; 3],
    pub cov_qp: [f64; 3],
    pub se_var_q: [f64; 3],
    pub se_var_p: [f64; 3],
    pub se_cov_qp: [f64; 3],
    /// Mean y-motion energy p_y²/2m + U₀(1−u_y) (J) and its standard error.
    pub mean_energy_y: f64,
    pub se_energy_y: f64,
    /// Mean total recapture energy (J) and its standard error.
    pub mean_energy: f64,
    pub se_energy: f64,
    /// Fraction of trajectories satisfying the recapture condition.
    pub recapture_fraction: f64,
    pub se_recapture: f64,
    pub rng_seed: u64,
}

/// What the ensemble runner simulates.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    /// Initial per-axis Gaussian states.
    pub initial: [GaussianState1D; 3],
    /// Readout times, strictly increasing, > 0.
    pub taus: Vec<f64>,
    /// Trap used for the recapture test and energies.
    pub trap: TrapParams,
    /// Downward trap displacement at each readout time (same length as
    /// `taus`).
    pub displacements: Vec<f64>,
    /// Free-fall context.
    pub ctx: FallContext,
    /// Integrator step (upper bound; segments between readouts are divided
    /// evenly so every readout time is hit exactly).
    pub dt: f64,
    /// RNG seed; trajectory i uses stream i.
    pub seed: u64,
}

/// Phase-space readout of one trajectory at one time: (q, p, recaptured).
type Readout = ([f64; 3], [f64; 3], bool);

/// Run `n` free-fall trajectories, reading out states, energies and the
/// recapture condition p² ≤ 2m·(U₀−U(q)) at every requested time.
///
/// Each trajectory is integrated once across the whole τ grid (common random
/// numbers across readout times). Trajectories are independent work items;
/// the reduction runs in a fixed order with compensated summation, so the
/// result is identical for any thread count.
pub fn run_ensemble(spec: &EnsembleSpec, n: usize) -> Result<Vec<EnsembleStats>> {
    if n < 2 {
        return Err(Error::InvalidInput("ensemble needs at least 2 trajectories".into()));
    }
    if spec.taus.is_empty() || spec.taus[0] <= 0.0 {
        return Err(Error::InvalidInput("readout times must be positive".into()));
    }
    if spec.taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("readout times must be ascending".into()));
    }
    if spec.displacements.len() != spec.taus.len() {
        return Err(Error::InvalidInput(
            "one displacement per readout time is required".into(),
        ));
    }
    if spec.dt <= 0.0 {
        return Err(Error::Domain(format!("dt must be > 0, got {}", spec.dt)));
    }

    // Pre-compute the stepping plan: segments between consecutive readouts,
    // each divided into an integer number of steps no longer than dt.
    let mut plan = Vec::with_capacity(spec.taus.len());
    let mut prev = 0.0;
    for &tau in &spec.taus {
        let span = tau - prev;
        let steps = (span / spec.dt).ceil().max(1.0) as usize;
        plan.push((steps, span / steps as f64));
        prev = tau;
    }

    let n_taus = spec.taus.len();
    // Per trajectory, per readout: q[3], p[3], recaptured flag.
    let records: Vec<Result<Vec<Readout>>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i);
            let mut st = PhasePoint::sample(&spec.initial, &mut rng);
            let sigma_base = spec.ctx.diffusion();
            let mut out = Vec::with_capacity(n_taus);
            for (k, &(steps, dt)) in plan.iter().enumerate() {
                let sigma = (sigma_base * dt).sqrt();
                for step in 0..steps {
                    for ax in 0..3 {
                        let noise: f64 = rng.sample(StandardNormal);
                        let grav = if ax == 1 { -spec.ctx.mass * spec.ctx.gravity } else { 0.0 };
                        st.q[ax] += st.p[ax] / spec.ctx.mass * dt;
                        st.p[ax] += (grav - spec.ctx.gamma * st.p[ax]) * dt + sigma * noise;
                    }
                    check_finite(&st.q, &st.p, step)?;
                }
                let center_y = -spec.displacements[k];
                let ke: f64 = st.p.iter().map(|p| p * p).sum::<f64>() / (2.0 * spec.ctx.mass);
                let recaptured = ke <= well_depth(st.q, &spec.trap, center_y);
                out.push((st.q, st.p, recaptured));
            }
            Ok(out)
        })
        .collect();

    let mut rows: Vec<Vec<Readout>> = Vec::with_capacity(n);
    for r in records {
        rows.push(r?);
    }

    let nf = n as f64;
    let mut stats = Vec::with_capacity(n_taus);
    for k in 0..n_taus {
        let center_y = -spec.displacements[k];
        // First pass: means.
        let mut sq = [KahanSum::new(); 3];
        let mut sp = [KahanSum::new(); 3];
        let mut s_ey = KahanSum::new();
        let mut s_et = KahanSum::new();
        let mut hits = 0usize;
        for row in &rows {
            let (q, p, rec) = row[k];
            for ax in 0..3 {
                sq[ax].add(q[ax]);
                sp[ax].add(p[ax]);
            }
            s_ey.add(energy_y(&q, &p, &spec.trap, center_y, spec.ctx.mass));
            s_et.add(total_energy(
                &PhasePoint { q, p },
                &spec.trap,
                center_y,
                spec.ctx.mass,
            ));
            hits += rec as usize;
        }
        let mean_q = sq.map(|s| s.value() / nf);
        let mean_p = sp.map(|s| s.value() / nf);
        let mean_ey = s_ey.value() / nf;
        let mean_et = s_et.value() / nf;

        // Second pass: central moments.
        let mut m2q = [KahanSum::new(); 3];
        let mut m2p = [KahanSum::new(); 3];
        let mut mqp = [KahanSum::new(); 3];
        let mut m4q = [KahanSum::new(); 3];
        let mut m4p = [KahanSum::new(); 3];
        let mut m2qp = [KahanSum::new(); 3];
        let mut v_ey = KahanSum::new();
        let mut v_et = KahanSum::new();
        for row in &rows {
            let (q, p, _) = row[k];
            for ax in 0..3 {
                let dq = q[ax] - mean_q[ax];
                let dp = p[ax] - mean_p[ax];
                m2q[ax].add(dq * dq);
                m2p[ax].add(dp * dp);
                mqp[ax].add(dq * dp);
                m4q[ax].add(dq * dq * dq * dq);
                m4p[ax].add(dp * dp * dp * dp);
                m2qp[ax].add(dq * dp * dq * dp);
            }
            let dey = energy_y(&q, &p, &spec.trap, center_y, spec.ctx.mass) - mean_ey;
            v_ey.add(dey * dey);
            let det = total_energy(&PhasePoint { q, p }, &spec.trap, center_y, spec.ctx.mass)
                - mean_et;
            v_et.add(det * det);
        }
        let var_q = m2q.map(|s| s.value() / (nf - 1.0));
        let var_p = m2p.map(|s| s.value() / (nf - 1.0));
        let cov_qp = mqp.map(|s| s.value() / (nf - 1.0));
        // Standard errors: means from the sample variance; variances and
        // covariance from their empirical fourth moments.
        let mut se_var_q = [0.0; 3];
        let mut se_var_p = [0.0; 3];
        let mut se_cov = [0.0; 3];
        for ax in 0..3 {
            se_var_q[ax] = ((m4q[ax].value() / nf - var_q[ax] * var_q[ax]).max(0.0) / nf).sqrt();
            se_var_p[ax] = ((m4p[ax].value() / nf - var_p[ax] * var_p[ax]).max(0.0) / nf).sqrt();
            se_cov[ax] = ((m2qp[ax].value() / nf - cov_qp[ax] * cov_qp[ax]).max(0.0) / nf).sqrt();
        }
        let frac = hits as f64 / nf;
        stats.push(EnsembleStats {
            tau: spec.taus[k],
            n_traj: n,
            mean_q,
            se_mean_q: std::array::from_fn(|ax| (var_q[ax] / nf).sqrt()),
            mean_p,
            se_mean_p: std::array::from_fn(|ax| (var_p[ax] / nf).sqrt()),
            var_q,
            var_p,
            cov_qp,
            se_var_q,
            se_var_p,
            se_cov_qp: se_cov,
            mean_energy_y: mean_ey,
            se_energy_y: (v_ey.value() / (nf - 1.0) / nf).sqrt(),
            mean_energy: mean_et,
            se_energy: (v_et.value() / (nf - 1.0) / nf).sqrt(),
            recapture_fraction: frac,
            se_recapture: (frac * (1.0 - frac) / nf).sqrt(),
            rng_seed: spec.seed,
        });
    }
    Ok(stats)
}

/// y-motion energy p_y²/2m + U₀(1 − u_y(q_y)) with u_y the transverse
/// Gaussian factor of the potential; the quantity the energy-sweep analysis
/// uses.
fn energy_y(q: &[f64; 3], p: &[f64; 3], trap: &TrapParams, center_y: f64, mass: f64) -> f64 {
    let dy = q[1] - center_y;
    let uy = (-2.0 * dy * dy / (trap.waist_y * trap.waist_y)).exp();
    p[1] * p[1] / (2.0 * mass) + trap.depth_u0 * (1.0 - uy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::hz_to_angular;
    use crate::dynamics::{propagate_covariance, propagate_state};
    use crate::state::thermal_state_temperature;
    use approx::assert_relative_eq;

    const G: f64 = 9.806;

    fn paper_trap() -> TrapParams {
        let m = 1.9905e-18;
        let omega = hz_to_angular(141.2e3);
        let q0 = 0.58e-9;
        let u0 = 5.4e5 * m * omega * omega * q0 * q0;
        TrapParams::new(
            0.6e-6,
            0.6e-6,
            2.3e-6,
            0.130,
            [
                hz_to_angular(116e3),
                hz_to_angular(141.2e3),
                hz_to_angular(41e3),
            ],
            u0,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_ballistic_fall() {
        // γ = 0, T = 0, start at rest: q_y(τ) = −gτ²/2 up to the O(dt)
        // integrator bias; with dt = 1e-8 s the bias is below 0.1 nm.
        let ctx = FallContext::new(2.0e-18, 0.0, 0.0, G).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tr = simulate_freefall(PhasePoint::at_rest(), 0.25e-3, 1e-8, &ctx, &mut rng).unwrap();
        let qy = tr.q.last().unwrap()[1];
        assert!(
            (qy + 306.4e-9).abs() < 0.1e-9,
            "q_y(τ) = {qy} should be −306.4 nm within 0.1 nm"
        );
        assert_eq!(tr.status, TrajectoryStatus::Completed);
    }

    #[test]
    fn freefall_rejects_bad_steps() {
        let ctx = FallContext::new(2.0e-18, 0.0, 0.0, G).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(simulate_freefall(PhasePoint::at_rest(), 1e-5, 0.0, &ctx, &mut rng).is_err());
        assert!(simulate_freefall(PhasePoint::at_rest(), 1e-9, 1e-8, &ctx, &mut rng).is_err());
    }

    fn ensemble_spec(taus: Vec<f64>, n_seed: u64) -> EnsembleSpec {
        let m = 1.9e-18;
        let omega = hz_to_angular(141.2e3);
        let s0 = thermal_state_temperature(m, omega, 34.1e-3).unwrap();
        let sx = thermal_state_temperature(m, hz_to_angular(116e3), 12.9e-3).unwrap();
        let sz = thermal_state_temperature(m, hz_to_angular(41e3), 42e-3).unwrap();
        let ctx = FallContext::new(m, 0.0176, 300.0, G).unwrap();
        let displacements = taus.iter().map(|&t| 0.5 * G * t * t).collect();
        EnsembleSpec {
            initial: [sx, s0, sz],
            taus,
            trap: paper_trap(),
            displacements,
            ctx,
            dt: 1.25e-7,
            seed: n_seed,
        }
    }

    #[test]
    fn ensemble_covariance_matches_analytic_propagation() {
        // 2e4 trajectories: sample covariance of the y mode within 3 SE of
        // the closed-form propagation at two readout times.
        let spec = ensemble_spec(vec![0.1e-3, 0.25e-3], 7);
        let stats = run_ensemble(&spec, 20_000).unwrap();
        for st in &stats {
            let (vq, vp, cqp) = propagate_covariance(&spec.initial[1], st.tau, &spec.ctx).unwrap();
            assert!(
                (st.var_q[1] - vq).abs() < 3.0 * st.se_var_q[1],
                "V_q at τ={}: MC {} vs analytic {vq} (SE {})",
                st.tau,
                st.var_q[1],
                st.se_var_q[1]
            );
            assert!(
                (st.var_p[1] - vp).abs() < 3.0 * st.se_var_p[1],
                "V_p at τ={}: MC {} vs analytic {vp}",
                st.tau,
                st.var_p[1]
            );
            assert!(
                (st.cov_qp[1] - cqp).abs() < 3.0 * st.se_cov_qp[1],
                "C_qp at τ={}: MC {} vs analytic {cqp}",
                st.tau,
                st.cov_qp[1]
            );
        }
    }

    #[test]
    fn ensemble_mean_follows_gravity() {
        let spec = ensemble_spec(vec![0.25e-3], 11);
        let stats = run_ensemble(&spec, 20_000).unwrap();
        let st = &stats[0];
        let (mq, mp) =
            crate::dynamics::propagate_mean(0.0, 0.0, st.tau, Axis::Y, &spec.ctx).unwrap();
        assert!((st.mean_q[1] - mq).abs() < 3.0 * st.se_mean_q[1]);
        assert!((st.mean_p[1] - mp).abs() < 3.0 * st.se_mean_p[1]);
        // x and z stay centered
        for ax in [0usize, 2] {
            assert!(st.mean_q[ax].abs() < 3.0 * st.se_mean_q[ax]);
        }
    }

    #[test]
    fn ensemble_is_deterministic_and_crn_consistent() {
        let spec = ensemble_spec(vec![0.1e-3, 0.25e-3], 99);
        let a = run_ensemble(&spec, 500).unwrap();
        let b = run_ensemble(&spec, 500).unwrap();
        assert_eq!(a, b, "same seed must give bit-identical statistics");
        // readout at τ=0.1 ms must be identical whether or not a later
        // readout exists (common random numbers across the grid)
        let spec_short = EnsembleSpec {
            taus: vec![0.1e-3],
            displacements: vec![0.5 * G * 0.1e-3 * 0.1e-3],
            ..spec.clone()
        };
        let c = run_ensemble(&spec_short, 500).unwrap();
        assert_eq!(a[0], c[0]);
    }

    #[test]
    fn ensemble_recapture_at_short_fall() {
        // Short fall, trap on the particle: everything recaptured.
        let spec = ensemble_spec(vec![1e-5], 3);
        let stats = run_ensemble(&spec, 200).unwrap();
        assert_eq!(stats[0].recapture_fraction, 1.0);
    }

    #[test]
    fn ensemble_weak_convergence_in_dt() {
        // Halving dt moves means and variances by less than one SE at this n.
        let spec_a = ensemble_spec(vec![0.25e-3], 5);
        let mut spec_b = ensemble_spec(vec![0.25e-3], 5);
        spec_b.dt = spec_a.dt / 2.0;
        let a = run_ensemble(&spec_a, 20_000).unwrap();
        let b = run_ensemble(&spec_b, 20_000).unwrap();
        assert!((a[0].mean_q[1] - b[0].mean_q[1]).abs() < a[0].se_mean_q[1]);
        assert!((a[0].var_q[1] - b[0].var_q[1]).abs() < a[0].se_var_q[1]);
        assert!((a[0].var_p[1] - b[0].var_p[1]).abs() < a[0].se_var_p[1]);
    }

    #[test]
    fn exact_sampler_agrees_with_analytic_covariance() {
        let m = 1.9e-18;
        let omega = hz_to_angular(141.2e3);
        let s0 = thermal_state_temperature(m, omega, 34.1e-3).unwrap();
        let ctx = FallContext::new(m, 0.0176, 300.0, G).unwrap();
        let tau = 0.25e-3;
        let n = 40_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut qs = Vec::with_capacity(n);
        let mut ps = Vec::with_capacity(n);
        for _ in 0..n {
            let init = PhasePoint::sample(&[s0, s0, s0], &mut rng);
            let out = exact_freefall_sample(init, tau, &ctx, &mut rng).unwrap();
            qs.push(out.q[1]);
            ps.push(out.p[1]);
        }
        let target = propagate_state(&s0, tau, Axis::Y, &ctx).unwrap();
        let mq = qs.iter().sum::<f64>() / n as f64;
        let vq = qs.iter().map(|q| (q - mq) * (q - mq)).sum::<f64>() / (n as f64 - 1.0);
        let se_vq = target.var_q * (2.0 / n as f64).sqrt();
        assert!((vq - target.var_q).abs() < 3.0 * se_vq);
        let mp = ps.iter().sum::<f64>() / n as f64;
        assert!((mp - target.mean_p).abs() < 3.0 * (target.var_p / n as f64).sqrt());
    }

    #[test]
    fn trapped_small_amplitude_frequency() {
        // γ = 0, T = 0, small amplitude: oscillation at Ω_y within 0.1%.
        let trap = paper_trap();
        let m = 1.9905e-18;
        let ctx = FallContext::new(m, 0.0, 0.0, G).unwrap();
        let omega_y = 2.0 * (trap.depth_u0 / m).sqrt() / trap.waist_y;
        let period = 2.0 * std::f64::consts::PI / omega_y;
        let dt = 1e-3 * period;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = PhasePoint {
            q: [0.0, 5e-9, 0.0],
            p: [0.0; 3],
        };
        let tr = simulate_trapped(init, &trap, 0.0, 150.0 * period, dt, &ctx, &mut rng).unwrap();
        let freq = frequency_from_zero_crossings(&tr.axis_q(Axis::Y), dt).unwrap();
        let expected = omega_y / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(freq, expected, max_relative = 1e-3);
    }

    #[test]
    fn trapped_energy_conservation() {
        // 100 periods at γ = 0, T = 0: energy drift below 1e-4 relative.
        let trap = paper_trap();
        let m = 1.9905e-18;
        let ctx = FallContext::new(m, 0.0, 0.0, G).unwrap();
        let omega_y = 2.0 * (trap.depth_u0 / m).sqrt() / trap.waist_y;
        let period = 2.0 * std::f64::consts::PI / omega_y;
        let dt = 1e-3 * period;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = PhasePoint {
            q: [30e-9, 150e-9, 60e-9],
            p: [0.0; 3],
        };
        let e0 = total_energy(&init, &trap, 0.0, m);
        let tr = simulate_trapped(init, &trap, 0.0, 100.0 * period, dt, &ctx, &mut rng).unwrap();
        for (q, p) in tr.q.iter().zip(&tr.p).step_by(997) {
            let e = total_energy(&PhasePoint { q: *q, p: *p }, &trap, 0.0, m);
            assert!(
                ((e - e0) / e0).abs() < 1e-4,
                "energy drift {:.2e}",
                (e - e0) / e0
            );
        }
    }

    #[test]
    fn trapped_unbound_particle_is_flagged_lost() {
        let trap = paper_trap();
        let m = 1.9905e-18;
        let ctx = FallContext::new(m, 0.0, 0.0, G).unwrap();
        let p_esc = (2.0 * m * trap.depth_u0).sqrt();
        let init = PhasePoint {
            q: [0.0, 0.0, 0.0],
            p: [0.0, 1.5 * p_esc, 0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tr = simulate_trapped(init, &trap, 0.0, 1e-3, 1e-9, &ctx, &mut rng).unwrap();
        assert!(matches!(tr.status, TrajectoryStatus::Lost { .. }));
    }

    #[test]
    fn zero_crossing_estimator_on_pure_tone() {
        let f0 = 137_000.0;
        let fs = 1e6;
        let n = 100_000;
        let signal: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / fs).sin())
            .collect();
        let f = frequency_from_zero_crossings(&signal, 1.0 / fs).unwrap();
        assert_relative_eq!(f, f0, max_relative = 1e-4);
    }
}

//! Amplitude-dependent frequency shifts of the Gaussian trap and the
//! Duffing-tensor fit.
//!
//! The quartic correction to the trap gives a displacement-dependent
//! oscillation frequency Ω_j = Ω_{0,j}·(1 + (3/4)·Σ_i ξ_ji·⟨q_i²⟩) with the
//! tensor rows (ξ_x, ξ_y, ξ_z) for the transverse modes and
//! (2ξ_x, 2ξ_y, ξ_z) for the axial one; for a Gaussian beam ξ_j = −2/w_j².

use serde::{Deserialize, Serialize};

use crate::dynamics::Axis;
use crate::error::{Error, Result};

use super::lm::{levenberg_marquardt, LeastSquaresModel, LmOptions};

/// Column coefficients (ξ_x, ξ_y, ξ_z) in 1/m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuffingTensor {
    pub xi: [f64; 3],
}

impl DuffingTensor {
    /// Tensor of an ideal Gaussian trap with the given waists: ξ_j = −2/w_j².
    pub fn from_waists(waists: [f64; 3]) -> Self {
        Self {
            xi: waists.map(|w| -2.0 / (w * w)),
        }
    }

    /// Row of coefficients seen by the given mode.
    pub fn row(&self, axis: Axis) -> [f64; 3] {
        match axis {
            Axis::X | Axis::Y => self.xi,
            Axis::Z => [2.0 * self.xi[0], 2.0 * self.xi[1], self.xi[2]],
        }
    }

    /// Waists implied by the softening coefficients, w_j = √(−2/ξ_j);
    /// `None` where the coefficient is non-negative (hardening).
    pub fn waists(&self) -> [Option<f64>; 3] {
        self.xi
            .map(|x| if x < 0.0 { Some((-2.0 / x).sqrt()) } else { None })
    }
}

/// Shifted mode frequency Ω_j = Ω₀·(1 + (3/4)·Σ_i row_i·⟨q_i²⟩).
pub fn duffing_frequency(
    omega0: f64,
    variances: [f64; 3],
    tensor: &DuffingTensor,
    axis: Axis,
) -> f64 {
    let row = tensor.row(axis);
    let shift: f64 = row
        .iter()
        .zip(&variances)
        .map(|(xi, v)| xi * v)
        .sum();
    omega0 * (1.0 + 0.75 * shift)
}

/// One observation of the y-mode frequency: the rms amplitudes of all three
/// modes during the observation window and the measured Ω_y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuffingPoint {
    pub y_rms: f64,
    pub omega_y: f64,
    /// Per-point x/z variances; when absent the fit falls back to the fixed
    /// values passed to [`fit_duffing`].
    pub x_var: Option<f64>,
    pub z_var: Option<f64>,
}

/// Result of the tensor fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuffingFit {
    pub tensor: DuffingTensor,
    pub se: [f64; 3],
    /// Waists w_j = √(−2/ξ_j) where softening was found.
    pub waists: [Option<f64>; 3],
    /// Set when any fitted coefficient is non-negative: hardening is not a
    /// Gaussian-trap signature, but the fit is still reported.
    pub hardening_warning: bool,
    pub cost: f64,
}

struct DuffingModel {
    rows: Vec<[f64; 3]>, // (x², y², z²) per point
    omegas: Vec<f64>,
    omega0: f64,
}

impl LeastSquaresModel for DuffingModel {
    fn n_params(&self) -> usize {
        3
    }
    fn n_residuals(&self) -> usize {
        self.omegas.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool {
        for (i, (row, om)) in self.rows.iter().zip(&self.omegas).enumerate() {
            let shift = p[0] * row[0] + p[1] * row[1] + p[2] * row[2];
            out[i] = self.omega0 * (1.0 + 0.75 * shift) - om;
        }
        true
    }
    fn jacobian(&self, _p: &[f64], out: &mut [Vec<f64>]) {
        for (i, row) in self.rows.iter().enumerate() {
            for j in 0..3 {
                out[i][j] = 0.75 * self.omega0 * row[j];
            }
        }
    }
}

/// Least-squares fit of the three tensor components to y-mode frequency
/// observations. Requires at least 4 points spanning a ≥ 2× amplitude range,
/// and enough independent x/z variation to separate ξ_x from ξ_z (per-point
/// variances; two constant columns are degenerate).
pub fn fit_duffing(
    points: &[DuffingPoint],
    fixed_x_var: f64,
    fixed_z_var: f64,
    omega0: f64,
) -> Result<DuffingFit> {
    if points.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "need ≥ 4 frequency observations, got {}",
            points.len()
        )));
    }
    let y_min = points.iter().map(|p| p.y_rms).fold(f64::INFINITY, f64::min);
    let y_max = points.iter().map(|p| p.y_rms).fold(0.0f64, f64::max);
    if y_min <= 0.0 || y_max / y_min < 2.0 {
        return Err(Error::InvalidInput(format!(
            "amplitude span {y_min:e}..{y_max:e} is below the 2× range needed to \
             identify the softening slope"
        )));
    }
    let rows: Vec<[f64; 3]> = points
        .iter()
        .map(|p| {
            [
                p.x_var.unwrap_or(fixed_x_var),
                p.y_rms * p.y_rms,
                p.z_var.unwrap_or(fixed_z_var),
            ]
        })
        .collect();
    // ξ_x and ξ_z enter only through their per-point variances; without
    // independent variation the two columns are collinear.
    let spread = |k: usize| {
        let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r[k]).fold(0.0f64, f64::max);
        (hi - lo) / hi.max(1e-300)
    };
    if spread(0) < 1e-9 || spread(2) < 1e-9 {
        return Err(Error::InvalidInput(
            "ξ_x and ξ_z are not separately identifiable from constant x/z variances; \
             provide per-point values"
                .into(),
        ));
    }

    let model = DuffingModel {
        rows,
        omegas: points.iter().map(|p| p.omega_y).collect(),
        omega0,
    };
    let guess = [-1e12, -1e12, -1e12];
    let fit = levenberg_marquardt(&model, &guess, &LmOptions::default())?;
    if !fit.converged {
        return Err(Error::Convergence(format!(
            "tensor fit did not converge; cost {:.3e}",
            fit.cost
        )));
    }
    let tensor = DuffingTensor {
        xi: [fit.params[0], fit.params[1], fit.params[2]],
    };
    Ok(DuffingFit {
        se: [
            fit.covariance[0][0].max(0.0).sqrt(),
            fit.covariance[1][1].max(0.0).sqrt(),
            fit.covariance[2][2].max(0.0).sqrt(),
        ],
        waists: tensor.waists(),
        hardening_warning: tensor.xi.iter().any(|&x| x >= 0.0),
        tensor,
        cost: fit.cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::hz_to_angular;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn paper_tensor() -> DuffingTensor {
        DuffingTensor {
            xi: [-1.72e12, -2.78e12, -0.32e12],
        }
    }

    #[test]
    fn frequency_shift_fixed_points() {
        let omega0 = hz_to_angular(141.2e3);
        let t = paper_tensor();
        // no amplitude → no shift
        assert_eq!(duffing_frequency(omega0, [0.0; 3], &t, Axis::Y), omega0);
        // pure y amplitude of 100 nm rms: relative shift (3/4)·ξ_y·(100 nm)²
        let shift = duffing_frequency(omega0, [0.0, 1e-14, 0.0], &t, Axis::Y) / omega0 - 1.0;
        assert_relative_eq!(shift, 0.75 * -2.78e12 * 1e-14, max_relative = 1e-12);
        assert_relative_eq!(shift, -2.085e-2, max_relative = 1e-3);
        // z-row doubles the transverse coefficients
        let sz = duffing_frequency(omega0, [1e-14, 0.0, 0.0], &t, Axis::Z) / omega0 - 1.0;
        assert_relative_eq!(sz, 0.75 * 2.0 * -1.72e12 * 1e-14, max_relative = 1e-12);
    }

    #[test]
    fn waist_mapping() {
        let t = paper_tensor();
        let w = t.waists();
        assert_relative_eq!(w[1].unwrap(), 0.848e-6, max_relative = 2e-3);
        // hardening column maps to None
        let t2 = DuffingTensor {
            xi: [1e12, -2.0e12, -0.3e12],
        };
        assert!(t2.waists()[0].is_none());
    }

    #[test]
    fn tensor_recovery_from_synthetic_observations() {
        // Single-realization observations: the per-point x/z variances carry
        // the full exponential spread of one thermal realization around the
        // quoted averages, with 0.1% frequency noise. All three components
        // come back within 5%.
        let omega0 = hz_to_angular(141.2e3);
        let truth = paper_tensor();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 600;
        let points: Vec<DuffingPoint> = (0..n)
            .map(|i| {
                let y_rms = 40e-9 + 160e-9 * i as f64 / (n - 1) as f64;
                // per-realization mode energies are exponentially distributed
                let ex: f64 = -(1.0 - rng.gen::<f64>()).ln();
                let ez: f64 = -(1.0 - rng.gen::<f64>()).ln();
                let x_var = (38e-9f64 * 38e-9) * ex;
                let z_var = (63e-9f64 * 63e-9) * ez;
                let om = duffing_frequency(omega0, [x_var, y_rms * y_rms, z_var], &truth, Axis::Y);
                let noise: f64 = rng.sample(StandardNormal);
                DuffingPoint {
                    y_rms,
                    omega_y: om * (1.0 + 1e-3 * noise),
                    x_var: Some(x_var),
                    z_var: Some(z_var),
                }
            })
            .collect();
        let fit = fit_duffing(&points, 38e-9 * 38e-9, 63e-9 * 63e-9, omega0).unwrap();
        for (got, want) in fit.tensor.xi.iter().zip(&truth.xi) {
            assert!(
                (got / want - 1.0).abs() < 0.05,
                "ξ {got:e} vs {want:e}"
            );
        }
        assert!(!fit.hardening_warning);
        // w_y from ξ_y within 2%
        let wy = fit.waists[1].unwrap();
        assert!(
            (wy / 0.85e-6 - 1.0).abs() < 0.02,
            "w_y = {wy:e}"
        );
    }

    #[test]
    fn constant_xz_columns_are_degenerate() {
        let omega0 = hz_to_angular(141.2e3);
        let truth = paper_tensor();
        let points: Vec<DuffingPoint> = (0..10)
            .map(|i| {
                let y_rms = 40e-9 + 160e-9 * i as f64 / 9.0;
                let om = duffing_frequency(
                    omega0,
                    [38e-9 * 38e-9, y_rms * y_rms, 63e-9 * 63e-9],
                    &truth,
                    Axis::Y,
                );
                DuffingPoint {
                    y_rms,
                    omega_y: om,
                    x_var: None,
                    z_var: None,
                }
            })
            .collect();
        assert!(fit_duffing(&points, 38e-9 * 38e-9, 63e-9 * 63e-9, omega0).is_err());
    }

    #[test]
    fn zero_amplitude_span_rejected() {
        let omega0 = hz_to_angular(141.2e3);
        let points: Vec<DuffingPoint> = (0..6)
            .map(|_| DuffingPoint {
                y_rms: 100e-9,
                omega_y: omega0,
                x_var: Some(1e-16),
                z_var: Some(1e-16),
            })
            .collect();
        assert!(fit_duffing(&points, 1e-16, 1e-16, omega0).is_err());
    }

    #[test]
    fn hardening_reported_with_warning() {
        let omega0 = hz_to_angular(141.2e3);
        let truth = DuffingTensor {
            xi: [1.0e12, -2.78e12, -0.32e12],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let points: Vec<DuffingPoint> = (0..20)
            .map(|i| {
                let y_rms = 40e-9 + 120e-9 * i as f64 / 19.0;
                let xv = 1e-15 * (1.0 + 0.5 * rng.gen::<f64>());
                let zv = 4e-15 * (1.0 + 0.5 * rng.gen::<f64>());
                DuffingPoint {
                    y_rms,
                    omega_y: duffing_frequency(omega0, [xv, y_rms * y_rms, zv], &truth, Axis::Y),
                    x_var: Some(xv),
                    z_var: Some(zv),
                }
            })
            .collect();
        let fit = fit_duffing(&points, 1e-15, 4e-15, omega0).unwrap();
        assert!(fit.hardening_warning);
        assert!(fit.waists[0].is_none());
    }
}

//! Expansion/compression factors from ensembles of normalized phase-space
//! samples at recapture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::eigenvalues_sym2;

/// Result of an ensemble expansion analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionEstimate {
    /// √(largest eigenvalue) of the sample covariance of (q̃, p̃).
    pub xi_q: f64,
    /// √(smallest eigenvalue).
    pub xi_p: f64,
    /// 2σ confidence interval on ξ_q.
    pub xi_q_ci: (f64, f64),
    /// 2σ confidence interval on ξ_p.
    pub xi_p_ci: (f64, f64),
    /// Sample covariance [[V_q̃, C], [C, V_p̃]].
    pub covariance: [[f64; 2]; 2],
    pub n_samples: usize,
    /// How the confidence intervals were produced.
    pub ci_method: String,
}

fn sample_covariance(samples: &[(f64, f64)]) -> [[f64; 2]; 2] {
    let n = samples.len() as f64;
    let mq = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mp = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let (mut vq, mut vp, mut c) = (0.0, 0.0, 0.0);
    for (q, p) in samples {
        vq += (q - mq) * (q - mq);
        vp += (p - mp) * (p - mp);
        c += (q - mq) * (p - mp);
    }
    [[vq / (n - 1.0), c / (n - 1.0)], [c / (n - 1.0), vp / (n - 1.0)]]
}

fn xi_pair(cov: &[[f64; 2]; 2]) -> (f64, f64) {
    let (hi, lo) = eigenvalues_sym2(cov[0][0], cov[1][1], cov[0][1]);
    (hi.max(0.0).sqrt(), lo.max(0.0).sqrt())
}

/// Expansion (ξ_q) and compression (ξ_p) factors of normalized phase-space
/// samples (q/q₀, p/p₀): the square roots of the extreme eigenvalues of the
/// sample covariance, with seeded-bootstrap 2σ confidence intervals.
///
/// The normalization constants q₀, p₀ are the pre-fall rms values pooled
/// over the ensemble; the caller normalizes before passing samples in.
pub fn ensemble_expansion(samples: &[(f64, f64)], seed: u64) -> Result<ExpansionEstimate> {
    if samples.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 samples for an expansion estimate, got {}",
            samples.len()
        )));
    }
    let cov = sample_covariance(samples);
    let (xi_q, xi_p) = xi_pair(&cov);

    // percentile bootstrap, 2σ levels
    const B: usize = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qs = Vec::with_capacity(B);
    let mut ps = Vec::with_capacity(B);
    let mut resample = Vec::with_capacity(samples.len());
    for _ in 0..B {
        resample.clear();
        for _ in 0..samples.len() {
            resample.push(samples[rng.gen_range(0..samples.len())]);
        }
        let (bq, bp) = xi_pair(&sample_covariance(&resample));
        qs.push(bq);
        ps.push(bp);
    }
    qs.sort_by(|a, b| a.total_cmp(b));
    ps.sort_by(|a, b| a.total_cmp(b));
    let pick = |v: &[f64], q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    // 2σ two-sided: 2.275% / 97.725%
    let (lo_q, hi_q) = (pick(&qs, 0.02275), pick(&qs, 0.97725));
    let (lo_p, hi_p) = (pick(&ps, 0.02275), pick(&ps, 0.97725));

    Ok(ExpansionEstimate {
        xi_q,
        xi_p,
        xi_q_ci: (lo_q, hi_q),
        xi_p_ci: (lo_p, hi_p),
        covariance: cov,
        n_samples: samples.len(),
        ci_method: format!("bootstrap-percentile-2sigma-B{B}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn gaussian_cloud(
        n: usize,
        sq: f64,
        sp: f64,
        rho: f64,
        seed: u64,
    ) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                (
                    sq * z1,
                    sp * (rho * z1 + (1.0 - rho * rho).sqrt() * z2),
                )
            })
            .collect()
    }

    #[test]
    fn identity_cloud_gives_unity_factors() {
        // samples drawn from the initial state itself: (ξ_q, ξ_p) ≈ (1, 1)
        // and the CIs cover 1.
        let samples = gaussian_cloud(400, 1.0, 1.0, 0.0, 21);
        let est = ensemble_expansion(&samples, 5).unwrap();
        assert!(est.xi_q_ci.0 <= 1.0 && 1.0 <= est.xi_q_ci.1);
        assert!(est.xi_p_ci.0 <= 1.05 && 0.95 <= est.xi_p_ci.1);
        assert!((est.xi_q - 1.0).abs() < 0.15);
        assert!((est.xi_p - 1.0).abs() < 0.15);
    }

    #[test]
    fn anisotropic_cloud_recovers_axes() {
        let samples = gaussian_cloud(4000, 5.0, 0.5, 0.0, 8);
        let est = ensemble_expansion(&samples, 5).unwrap();
        assert!((est.xi_q - 5.0).abs() < 0.3);
        assert!((est.xi_p - 0.5).abs() < 0.05);
        assert!(est.xi_q_ci.0 < est.xi_q && est.xi_q < est.xi_q_ci.1);
    }

    #[test]
    fn too_few_samples_rejected() {
        let samples = gaussian_cloud(9, 1.0, 1.0, 0.0, 3);
        assert!(ensemble_expansion(&samples, 5).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let samples = gaussian_cloud(100, 2.0, 1.0, 0.3, 4);
        let a = ensemble_expansion(&samples, 77).unwrap();
        let b = ensemble_expansion(&samples, 77).unwrap();
        assert_eq!(a, b);
    }
}

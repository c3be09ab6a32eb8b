//! Numerical support: scaled error functions, Gauss–Hermite nodes,
//! low-discrepancy sequences and compensated summation.

use crate::error::{Error, Result};

pub use libm::{erf, erfc};

/// Scaled complementary error function erfcx(x) = e^{x²}·erfc(x) for x ≥ 0.
///
/// Direct product up to x = 25 (both factors representable), Laplace
/// continued fraction beyond.
pub fn erfcx(x: f64) -> f64 {
    assert!(x >= 0.0, "erfcx implemented for non-negative arguments");
    if x <= 25.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        // erfcx(x) = 1/√π · 1/(x + 1/(2x + 2/(x + 3/(2x + ...))))
        // evaluated bottom-up with a fixed depth; converges fast for x ≫ 1.
        let mut f = 0.0;
        for k in (1..=20u32).rev() {
            let num = k as f64;
            let den = if k % 2 == 1 { 2.0 * x } else { x };
            f = num / (den + f);
        }
        1.0 / ((x + f) * std::f64::consts::PI.sqrt())
    }
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation refined by one Halley step against
/// erfc, giving close to full double accuracy.
#[allow(clippy::excessive_precision)]
pub fn inv_norm_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "inv_norm_cdf requires p in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // One Halley refinement: e = Φ(x) − p expressed via erfc for accuracy in
    // both tails.
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Gauss–Hermite quadrature rule: nodes x_i and weights w_i such that
/// ∫ f(x)·e^{−x²} dx ≈ Σ w_i f(x_i).
///
/// Newton iteration on the orthonormalized Hermite recurrence; accurate and
/// overflow-free for the orders used here (≤ 128).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "need at least a 2-point rule");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        // Initial guesses for the roots, largest first.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        // Newton on the orthonormal Hermite polynomial h_n.
        let mut pp = 0.0;
        for _ in 0..100 {
            let pi_4 = std::f64::consts::PI.powf(-0.25);
            let mut p1 = pi_4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        // w = 2/pp² for the normalized recurrence (equals 1/(n·h_{n−1}²)).
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Halton low-discrepancy sequence value: radical inverse of `index` in
/// the given prime base.
pub fn halton(index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    let b = base as f64;
    while i > 0 {
        f /= b;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Compensated (Kahan) accumulator; the reduction result is independent of
/// how work was partitioned across threads as long as the input order is
/// fixed.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Symmetric 2×2 eigenvalues by the closed-form quadratic, returned as
/// (λ_max, λ_min). For PSD input the small eigenvalue is recovered from the
/// determinant to avoid cancellation.
pub fn eigenvalues_sym2(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + b);
    let diff = 0.5 * (a - b);
    let r = (diff * diff + c * c).sqrt();
    let hi = mean + r;
    let det = a * b - c * c;
    let lo = if hi > 0.0 && det >= 0.0 { det / hi } else { mean - r };
    (hi, lo)
}

/// Weighted least-squares quadratic fit y ≈ c0 + c1·x + c2·x².
/// Returns the coefficients and their standard errors from the scaled
/// normal-equation inverse.
pub fn fit_quadratic(
    xs: &[f64],
    ys: &[f64],
    weights: &[f64],
) -> Result<([f64; 3], [f64; 3])> {
    if xs.len() != ys.len() || xs.len() != weights.len() || xs.len() < 4 {
        return Err(Error::InvalidInput(
            "quadratic fit needs ≥ 4 equally sized x/y/weight arrays".into(),
        ));
    }
    // scale x for conditioning
    let xs_max = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut a = vec![vec![0.0; 3]; 3];
    let mut b = vec![0.0; 3];
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(weights) {
        let u = x / xs_max;
        let basis = [1.0, u, u * u];
        for r in 0..3 {
            b[r] += w * basis[r] * y;
            for c in 0..3 {
                a[r][c] += w * basis[r] * basis[c];
            }
        }
    }
    let coef_scaled = solve_linear(a.clone(), b)?;
    // chi² per dof for the error scale
    let mut chi2 = 0.0;
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(weights) {
        let u = x / xs_max;
        let m = coef_scaled[0] + coef_scaled[1] * u + coef_scaled[2] * u * u;
        chi2 += w * (y - m) * (y - m);
    }
    let s2 = (chi2 / (xs.len() - 3) as f64).max(1.0);
    let mut se = [0.0; 3];
    for k in 0..3 {
        let mut e = vec![0.0; 3];
        e[k] = 1.0;
        let col = solve_linear(a.clone(), e)?;
        se[k] = (col[k].max(0.0) * s2).sqrt() / xs_max.powi(k as i32);
    }
    Ok((
        [
            coef_scaled[0],
            coef_scaled[1] / xs_max,
            coef_scaled[2] / (xs_max * xs_max),
        ],
        se,
    ))
}

/// Simple linear solve with partial pivoting (small dense systems only).
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if a[i][k].abs() > a[piv][k].abs() {
                piv = i;
            }
        }
        if a[piv][k].abs() < 1e-300 {
            return Err(Error::Convergence("singular normal equations".into()));
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Ok(x)
}

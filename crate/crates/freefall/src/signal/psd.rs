//! Welch averaged-periodogram PSD estimation.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

use super::{Spectrum, Trace};

/// Window applied to each segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    fn samples(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| {
                    let x = std::f64::consts::PI * i as f64 / n as f64;
                    x.sin() * x.sin()
                })
                .collect(),
        }
    }
}

/// One-sided Welch PSD: segments of `segment_length` samples with fractional
/// `overlap`, windowed, FFT'd and averaged. Normalized so that the integral
/// of the PSD equals the (window-weighted) signal variance.
pub fn welch_psd(
    trace: &Trace,
    segment_length: usize,
    overlap: f64,
    window: Window,
) -> Result<Spectrum> {
    if segment_length < 4 {
        return Err(Error::InvalidInput(format!(
            "segment length {segment_length} too small"
        )));
    }
    if segment_length > trace.values.len() {
        return Err(Error::InvalidInput(format!(
            "segment length {segment_length} exceeds trace length {}",
            trace.values.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidInput(format!(
            "overlap must be in [0, 1), got {overlap}"
        )));
    }
    let n = segment_length;
    let hop = ((n as f64 * (1.0 - overlap)).round() as usize).max(1);
    let w = window.samples(n);
    let w_sq: f64 = w.iter().map(|x| x * x).sum();
    let w_sum: f64 = w.iter().sum();
    let fs = trace.sample_rate;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let n_bins = n / 2 + 1;
    let mut acc = vec![0.0f64; n_bins];
    let mut segments = 0usize;
    let mut buf: Vec<Complex<f64>> = vec![Complex::default(); n];
    let mut start = 0;
    while start + n <= trace.values.len() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(trace.values[start + i] * w[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let mag2 = buf[k].norm_sqr();
            // one-sided: double everything except DC and Nyquist
            let fold = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                1.0
            } else {
                2.0
            };
            *a += fold * mag2;
        }
        segments += 1;
        start += hop;
    }
    let scale = 1.0 / (fs * w_sq * segments as f64);
    let psd: Vec<f64> = acc.iter().map(|a| a * scale).collect();
    let frequencies: Vec<f64> = (0..n_bins).map(|k| k as f64 * fs / n as f64).collect();
    Ok(Spectrum {
        frequencies,
        psd,
        resolution_bandwidth: fs * w_sq / (w_sum * w_sum),
    })
}

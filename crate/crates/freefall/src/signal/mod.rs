//! Detector-side pipeline: synthetic trace generation, PSD estimation,
//! Lorentzian fitting, calibration, bandpass state estimation,
//! ensemble-expansion extraction and Duffing-tensor fitting.

pub mod bandpass;
pub mod calibrate;
pub mod duffing;
pub mod expansion;
pub mod lm;
pub mod peakfit;
pub mod psd;
pub mod synth;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detector channel: the horizontal QPD difference carries the x and z
/// motion, the vertical one the y motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    X,
    Y,
}

impl Channel {
    fn code(self) -> u8 {
        match self {
            Channel::X => 0,
            Channel::Y => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Channel::X),
            1 => Ok(Channel::Y),
            other => Err(Error::Format(format!("unknown channel code {other}"))),
        }
    }
}

/// Sample indices separating the protocol phases of a trace:
/// [0, init_end) initialize, [init_end, measure_start) free-fall gap,
/// [measure_start, len) measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMarkers {
    pub init_end: usize,
    pub measure_start: usize,
}

/// A uniformly sampled detector trace (volts) or displacement record
/// (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Sample rate (Hz).
    pub sample_rate: f64,
    pub values: Vec<f64>,
    pub channel: Channel,
    pub markers: Option<SegmentMarkers>,
}

impl Trace {
    pub fn new(sample_rate: f64, values: Vec<f64>, channel: Channel) -> Result<Self> {
        if sample_rate <= 0.0 {
            return Err(Error::Domain(format!(
                "sample rate must be > 0, got {sample_rate}"
            )));
        }
        Ok(Self {
            sample_rate,
            values,
            channel,
            markers: None,
        })
    }

    pub fn with_markers(mut self, markers: SegmentMarkers) -> Result<Self> {
        if markers.init_end > markers.measure_start || markers.measure_start > self.values.len() {
            return Err(Error::InvalidInput(format!(
                "markers {markers:?} out of order or beyond trace length {}",
                self.values.len()
            )));
        }
        self.markers = Some(markers);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate
    }

    /// Sample variance of the values.
    pub fn variance(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    }

    /// Write as two-column CSV `time_s,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "time_s,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(f, "{},{v}", i as f64 / self.sample_rate)?;
        }
        Ok(())
    }

    /// Read from two-column CSV; the sample rate is inferred from the time
    /// column.
    pub fn read_csv(path: &Path, channel: Channel) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in content.lines().enumerate() {
            if ln == 0 || line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',');
            let t: f64 = cols
                .next()
                .ok_or_else(|| Error::Format(format!("line {ln}: missing time")))?
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("line {ln}: {e}")))?;
            let v: f64 = cols
                .next()
                .ok_or_else(|| Error::Format(format!("line {ln}: missing value")))?
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("line {ln}: {e}")))?;
            times.push(t);
            values.push(v);
        }
        if values.len() < 2 {
            return Err(Error::Format("need at least two samples".into()));
        }
        let fs = (times.len() as f64 - 1.0) / (times[times.len() - 1] - times[0]);
        Trace::new(fs, values, channel)
    }

    /// Write the raw binary format: magic "LTRC", u32 version, f64 sample
    /// rate, u8 channel, u64 count, then little-endian f64 samples.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"LTRC")?;
        f.write_all(&1u32.to_le_bytes())?;
        f.write_all(&self.sample_rate.to_le_bytes())?;
        f.write_all(&[self.channel.code()])?;
        f.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != b"LTRC" {
            return Err(Error::Format("bad magic; not a trace file".into()));
        }
        let mut b4 = [0u8; 4];
        f.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != 1 {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        f.read_exact(&mut b8)?;
        let fs = f64::from_le_bytes(b8);
        let mut b1 = [0u8; 1];
        f.read_exact(&mut b1)?;
        let channel = Channel::from_code(b1[0])?;
        f.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            f.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Trace::new(fs, values, channel)
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Bin frequencies (Hz), ascending from 0.
    pub frequencies: Vec<f64>,
    /// PSD values (input-units²/Hz).
    pub psd: Vec<f64>,
    /// Resolution (equivalent-noise) bandwidth of the estimator (Hz).
    pub resolution_bandwidth: f64,
}

impl Spectrum {
    /// Bin spacing (Hz).
    pub fn df(&self) -> f64 {
        self.frequencies[1] - self.frequencies[0]
    }

    /// ∫ psd df over [f_lo, f_hi].
    pub fn band_power(&self, f_lo: f64, f_hi: f64) -> f64 {
        let df = self.df();
        self.frequencies
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, s)| s * df)
            .sum()
    }

    /// Total integrated power.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df()
    }

    /// Write as CSV `frequency_hz,psd`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "frequency_hz,psd")?;
        for (fr, s) in self.frequencies.iter().zip(&self.psd) {
            writeln!(f, "{fr},{s}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = std::env::temp_dir().join("freefall_trace_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.bin");
        let values: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.1).sin() * 1e-9).collect();
        let tr = Trace::new(1e6, values.clone(), Channel::Y).unwrap();
        tr.write_binary(&path).unwrap();
        let back = Trace::read_binary(&path).unwrap();
        assert_eq!(back.values, values);
        assert_eq!(back.sample_rate, 1e6);
        assert_eq!(back.channel, Channel::Y);
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let dir = std::env::temp_dir().join("freefall_trace_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        let values: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).cos()).collect();
        let tr = Trace::new(0.95e6, values.clone(), Channel::X).unwrap();
        tr.write_csv(&path).unwrap();
        let back = Trace::read_csv(&path, Channel::X).unwrap();
        assert_eq!(back.values, values);
        assert!((back.sample_rate / 0.95e6 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn marker_validation() {
        let tr = Trace::new(1e6, vec![0.0; 100], Channel::X).unwrap();
        assert!(tr
            .clone()
            .with_markers(SegmentMarkers {
                init_end: 30,
                measure_start: 60
            })
            .is_ok());
        assert!(tr
            .clone()
            .with_markers(SegmentMarkers {
                init_end: 70,
                measure_start: 60
            })
            .is_err());
        assert!(tr
            .with_markers(SegmentMarkers {
                init_end: 10,
                measure_start: 200
            })
            .is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join("freefall_trace_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.bin");
        std::fs::write(&path, b"NOPE1234").unwrap();
        assert!(Trace::read_binary(&path).is_err());
    }
}

//! Ramp-rate and spectral checks against a grid operator's limits.
//!
//! Normalized spectrum: `S(f_k) = 2|X_k| / (N * P_mean)` for `k >= 1` and
//! `S(0) = 1`, where `X_k` is the DFT of the raw samples and
//! `P_mean = |X_0| / N`. A sinusoid of amplitude `A` riding on a mean `P`
//! reads `S = A / P` on its bin. The same normalization makes `S` invariant
//! under scaling the trace.

use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::trace::PowerTrace;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ComplianceError {
    #[error("trace has zero mean power")]
    ZeroMeanPower,
    #[error("nyquist frequency {nyquist} Hz does not exceed cutoff {f_c} Hz")]
    InsufficientBandwidth { nyquist: f64, f_c: f64 },
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
}

/// Grid limits: `S(f) <= alpha` for `f >= f_c` and `|dP/dt| <= beta * p_rated`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub alpha: f64,
    pub f_c: f64,
    pub beta: f64,
}

impl GridSpec {
    pub fn new(alpha: f64, f_c: f64, beta: f64) -> Result<Self, ComplianceError> {
        let spec = Self { alpha, f_c, beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ComplianceError> {
        for (name, v) in [("alpha", self.alpha), ("f_c", self.f_c), ("beta", self.beta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ComplianceError::InvalidSpec(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for GridSpec {
    /// The benchmark limits: 10%/s ramp, `S(f) < 1e-4` above 2 Hz.
    fn default() -> Self {
        Self { alpha: 1e-4, f_c: 2.0, beta: 0.1 }
    }
}

/// Optional taper applied before the DFT. Compliance is defined on the
/// unwindowed spectrum; Hann is for leakage diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    None,
    Hann,
}

/// One-sided normalized magnitude spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub mags: Vec<f64>,
    pub mean_power: f64,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    /// Magnitude of the bin nearest to `freq`.
    pub fn at(&self, freq: f64) -> f64 {
        let k = (freq / self.bin_width()).round() as usize;
        self.mags[k.min(self.mags.len() - 1)]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["freq_hz", "s_mag"]).map_err(std::io::Error::other)?;
        for (f, s) in self.freqs.iter().zip(&self.mags) {
            out.write_record([f.to_string(), s.to_string()]).map_err(std::io::Error::other)?;
        }
        out.flush()
    }
}

/// Result of [`check_compliance`]. Serializes with these exact field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub ramp_ok: bool,
    /// Largest `|dP/dt| / p_rated`, per second.
    pub max_ramp: f64,
    /// `(time_s, ramp)` for every first difference exceeding `beta`.
    pub ramp_violations: Vec<(f64, f64)>,
    pub spectral_ok: bool,
    /// `(freq_hz, S)` of the largest bin at or above `f_c`.
    pub worst_bin: (f64, f64),
    pub spectral_violations: Vec<(f64, f64)>,
}

/// First differences normalized by rated power, per second. Length `N - 1`.
pub fn ramp_rate(trace: &PowerTrace) -> Vec<f64> {
    let scale = 1.0 / (trace.dt() * trace.p_rated());
    trace.samples().windows(2).map(|w| (w[1] - w[0]) * scale).collect()
}

/// Unnormalized one-sided DFT magnitudes `|X_k|`, `k = 0..=N/2`.
pub fn dft_magnitudes(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf.into_iter().map(|c| c.norm()).collect()
}

pub fn spectrum(trace: &PowerTrace) -> Result<Spectrum, ComplianceError> {
    spectrum_with(trace, Window::None)
}

pub fn spectrum_with(trace: &PowerTrace, window: Window) -> Result<Spectrum, ComplianceError> {
    let samples = trace.samples();
    let n = samples.len();
    let raw = dft_magnitudes(samples);
    let mean_power = raw[0] / n as f64;
    if mean_power == 0.0 {
        return Err(ComplianceError::ZeroMeanPower);
    }

    let (mags_src, gain) = match window {
        Window::None => (raw, n as f64),
        Window::Hann => {
            let w: Vec<f64> = (0..n)
                .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
                .collect();
            let tapered: Vec<f64> = samples.iter().zip(&w).map(|(x, w)| x * w).collect();
            (dft_magnitudes(&tapered), w.iter().sum())
        }
    };

    let df = 1.0 / (n as f64 * trace.dt());
    let freqs = (0..mags_src.len()).map(|k| k as f64 * df).collect();
    let mut mags: Vec<f64> = mags_src.iter().map(|m| 2.0 * m / (gain * mean_power)).collect();
    mags[0] = 1.0;
    Ok(Spectrum { freqs, mags, mean_power })
}

/// Check a trace against both grid limits.
pub fn check_compliance(trace: &PowerTrace, spec: &GridSpec) -> Result<ComplianceReport, ComplianceError> {
    spec.validate()?;
    let nyquist = trace.nyquist();
    if nyquist <= spec.f_c {
        return Err(ComplianceError::InsufficientBandwidth { nyquist, f_c: spec.f_c });
    }

    let ramps = ramp_rate(trace);
    let max_ramp = ramps.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let ramp_violations: Vec<(f64, f64)> = ramps
        .iter()
        .enumerate()
        .filter(|(_, r)| r.abs() > spec.beta)
        .map(|(k, &r)| (trace.time(k), r))
        .collect();

    let spec_s = spectrum(trace)?;
    let mut worst_bin = (spec.f_c, 0.0);
    let mut spectral_violations = Vec::new();
    for (&f, &s) in spec_s.freqs.iter().zip(&spec_s.mags) {
        if f < spec.f_c {
            continue;
        }
        if s > worst_bin.1 {
            worst_bin = (f, s);
        }
        if s > spec.alpha {
            spectral_violations.push((f, s));
        }
    }

    Ok(ComplianceReport {
        ramp_ok: ramp_violations.is_empty(),
        max_ramp,
        ramp_violations,
        spectral_ok: spectral_violations.is_empty(),
        worst_bin,
        spectral_violations,
    })
}

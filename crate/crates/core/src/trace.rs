//! Uniformly sampled power traces.
//!
//! Traces hold absolute watts. Normalization by rated power happens in the
//! analysis code ([`crate::compliance`]), since storage sizing needs the raw
//! values.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default sample interval (100 Hz).
pub const DEFAULT_DT: f64 = 0.01;

/// Dip duration for a 22 s period / 80% dip trace that puts the fundamental
/// bin at S(1/22 Hz) ≈ 0.1. Found by sweeping dip durations against
/// [`crate::compliance::spectrum`]; see `tests/trace_props.rs`.
pub const DEFAULT_DIP_DURATION: f64 = 1.3;

/// Relative tolerance on row spacing when reading a trace CSV.
const SPACING_RTOL: f64 = 1e-6;
/// Relative tolerance on the `[0, p_rated]` range when parsing.
const RANGE_SLACK: f64 = 1e-9;

/// Errors produced while building, reading or transforming traces.
#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("nonuniform sampling at line {line}")]
    NonuniformSampling { line: u64 },
    #[error("negative power at line {line}")]
    NegativePower { line: u64 },
    #[error("power {value} W exceeds rated power {p_rated} W at sample {index}")]
    ExceedsRated { index: usize, value: f64, p_rated: f64 },
    #[error("negative power {value} W at sample {index}")]
    NegativeSample { index: usize, value: f64 },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("trace needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("invalid sample interval {0}")]
    InvalidDt(f64),
    #[error("invalid rated power {0}")]
    InvalidRated(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// A uniformly sampled power-vs-time series.
///
/// Samples of a regular trace satisfy `0 <= p <= p_rated`. Traces built with
/// [`PowerTrace::unclamped`] skip that check; they are meant for diagnostic
/// signals such as the output of a resonant filter, which may overshoot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    samples: Vec<f64>,
    dt: f64,
    p_rated: f64,
    label: String,
    #[serde(default)]
    unclamped: bool,
}

impl PowerTrace {
    pub fn new(
        samples: Vec<f64>,
        dt: f64,
        p_rated: f64,
        label: impl Into<String>,
    ) -> Result<Self, TraceError> {
        Self::build(samples, dt, p_rated, label.into(), false)
    }

    /// Build a trace without the `[0, p_rated]` range check.
    pub fn unclamped(
        samples: Vec<f64>,
        dt: f64,
        p_rated: f64,
        label: impl Into<String>,
    ) -> Result<Self, TraceError> {
        Self::build(samples, dt, p_rated, label.into(), true)
    }

    fn build(
        samples: Vec<f64>,
        dt: f64,
        p_rated: f64,
        label: String,
        unclamped: bool,
    ) -> Result<Self, TraceError> {
        if samples.len() < 2 {
            return Err(TraceError::TooShort(samples.len()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(TraceError::InvalidDt(dt));
        }
        if !(p_rated.is_finite() && p_rated > 0.0) {
            return Err(TraceError::InvalidRated(p_rated));
        }
        for (index, &value) in samples.iter().enumerate() {
            if !value.is_finite() {
                return Err(TraceError::NonFinite(index));
            }
            if unclamped {
                continue;
            }
            if value < 0.0 {
                return Err(TraceError::NegativeSample { index, value });
            }
            if value > p_rated {
                return Err(TraceError::ExceedsRated { index, value, p_rated });
            }
        }
        Ok(Self { samples, dt, p_rated, label, unclamped })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn p_rated(&self) -> f64 {
        self.p_rated
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_unclamped(&self) -> bool {
        self.unclamped
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; a valid trace has at least two samples.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Time of sample `k` in seconds.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Span from first to last sample.
    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.dt
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same trace with every sample and the rated power multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, TraceError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(TraceError::InvalidParams(format!("scale factor {factor}")));
        }
        let samples = self.samples.iter().map(|p| p * factor).collect();
        Self::build(samples, self.dt, self.p_rated * factor, self.label.clone(), self.unclamped)
    }

    /// Write as `time_s,power_w` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TraceError> {
        let mut out = csv::Writer::from_writer(writer);
        let map = |e: csv::Error| TraceError::Io(std::io::Error::other(e));
        out.write_record(["time_s", "power_w"]).map_err(map)?;
        for (k, p) in self.samples.iter().enumerate() {
            out.write_record([self.time(k).to_string(), p.to_string()]).map_err(map)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let file = File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Read a two-column `time_s,power_w` CSV trace from disk.
pub fn load_trace(path: impl AsRef<Path>, p_rated: f64) -> Result<PowerTrace, TraceError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(TraceError::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(parse_trace_csv(file, p_rated)?.with_label(label))
}

/// Parse a trace CSV from any reader.
///
/// The first line must be the header `time_s,power_w`. The sample interval is
/// taken from the first two rows and every later gap must match it within a
/// relative tolerance of 1e-6. Powers within `1e-9 p_rated` outside
/// `[0, p_rated]` are snapped onto the range.
pub fn parse_trace_csv<R: Read>(reader: R, p_rated: f64) -> Result<PowerTrace, TraceError> {
    if !(p_rated.is_finite() && p_rated > 0.0) {
        return Err(TraceError::InvalidRated(p_rated));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = rdr.records();
    match records.next() {
        Some(Ok(header)) if header.len() == 2 && &header[0] == "time_s" && &header[1] == "power_w" => {}
        Some(Err(e)) => return Err(csv_row_error(e, 1)),
        _ => {
            return Err(TraceError::MalformedRow {
                line: 1,
                reason: "expected header `time_s,power_w`".into(),
            })
        }
    }

    let mut times: Vec<f64> = Vec::new();
    let mut samples: Vec<f64> = Vec::new();
    let mut dt = 0.0;
    for (idx, record) in records.enumerate() {
        let fallback_line = idx as u64 + 2;
        let record = record.map_err(|e| csv_row_error(e, fallback_line))?;
        let line = record.position().map_or(fallback_line, |p| p.line());
        if record.len() != 2 {
            return Err(TraceError::MalformedRow {
                line,
                reason: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let t = parse_field(&record[0], line)?;
        let mut p = parse_field(&record[1], line)?;
        // roundoff from simulated traces may land a hair outside the range
        let slack = RANGE_SLACK * p_rated;
        if p < -slack {
            return Err(TraceError::NegativePower { line });
        }
        if p > p_rated + slack {
            return Err(TraceError::ExceedsRated { index: samples.len(), value: p, p_rated });
        }
        p = p.clamp(0.0, p_rated);
        if let Some(&prev) = times.last() {
            let gap = t - prev;
            if !(gap > 0.0) {
                return Err(TraceError::NonuniformSampling { line });
            }
            if times.len() == 1 {
                dt = gap;
            } else if (gap - dt).abs() > SPACING_RTOL * dt {
                return Err(TraceError::NonuniformSampling { line });
            }
        }
        times.push(t);
        samples.push(p);
    }
    if samples.len() < 2 {
        return Err(TraceError::TooShort(samples.len()));
    }
    PowerTrace::new(samples, dt, p_rated, "")
}

fn parse_field(field: &str, line: u64) -> Result<f64, TraceError> {
    let value: f64 = field.parse().map_err(|_| TraceError::MalformedRow {
        line,
        reason: format!("not a number: {field:?}"),
    })?;
    if !value.is_finite() {
        return Err(TraceError::MalformedRow { line, reason: format!("non-finite value {field:?}") });
    }
    Ok(value)
}

fn csv_row_error(err: csv::Error, fallback_line: u64) -> TraceError {
    let line = err.position().map_or(fallback_line, |p| p.line());
    TraceError::MalformedRow { line, reason: err.to_string() }
}

/// Parameters for a periodic training-like trace with rectangular dips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthTrainingParams {
    /// Seconds between dip starts.
    pub period: f64,
    /// Fractional depth of each dip, in `[0, 1]`.
    pub dip_fraction: f64,
    pub dip_duration: f64,
    pub peak_power: f64,
    pub total_duration: f64,
    pub dt: f64,
    /// Rated power of the emitted trace; defaults to `peak_power`.
    pub p_rated: Option<f64>,
    /// Perturb each dip start by a seeded offset within ±10% of the period.
    pub jitter: bool,
    pub jitter_seed: u64,
    /// Linear ramp from zero over this many seconds at the start.
    pub startup_ramp: Option<f64>,
    /// Abrupt shutdown: power is zero for this many seconds at the end.
    pub shutdown_tail: Option<f64>,
    /// Put dip edges on a one-sample linear transition instead of a jump.
    pub edge_ramp: bool,
}

impl Default for SynthTrainingParams {
    fn default() -> Self {
        Self {
            period: 22.0,
            dip_fraction: 0.8,
            dip_duration: DEFAULT_DIP_DURATION,
            peak_power: 1.0,
            total_duration: 220.0,
            dt: DEFAULT_DT,
            p_rated: None,
            jitter: false,
            jitter_seed: 0,
            startup_ramp: None,
            shutdown_tail: None,
            edge_ramp: false,
        }
    }
}

impl SynthTrainingParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |msg: String| Err(TraceError::InvalidParams(msg));
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.period) {
            return bad(format!("period must be > 0, got {}", self.period));
        }
        if !(0.0..=1.0).contains(&self.dip_fraction) {
            return bad(format!("dip_fraction must be in [0, 1], got {}", self.dip_fraction));
        }
        if !(self.dip_duration.is_finite() && self.dip_duration >= 0.0 && self.dip_duration < self.period) {
            return bad(format!(
                "dip_duration must be in [0, period), got {} with period {}",
                self.dip_duration, self.period
            ));
        }
        if !finite_pos(self.peak_power) {
            return bad(format!("peak_power must be > 0, got {}", self.peak_power));
        }
        if !finite_pos(self.dt) {
            return Err(TraceError::InvalidDt(self.dt));
        }
        if !(self.total_duration.is_finite() && self.total_duration >= 2.0 * self.dt) {
            return bad(format!("total_duration must span at least 2 samples, got {}", self.total_duration));
        }
        if let Some(p_rated) = self.p_rated {
            if !(p_rated.is_finite() && p_rated >= self.peak_power) {
                return bad(format!("p_rated {p_rated} must be >= peak_power {}", self.peak_power));
            }
        }
        for (name, value) in [("startup_ramp", self.startup_ramp), ("shutdown_tail", self.shutdown_tail)] {
            if let Some(v) = value {
                if !(v.is_finite() && v >= 0.0 && v < self.total_duration) {
                    return bad(format!("{name} must be in [0, total_duration), got {v}"));
                }
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.total_duration / self.dt).round() as usize
    }
}

/// Periodic trace at `peak_power` with rectangular dips at the end of each period.
///
/// The record spans `[0, total_duration)` so an integer number of periods puts
/// the fundamental exactly on a DFT bin.
pub fn synth_training_trace(params: &SynthTrainingParams) -> Result<PowerTrace, TraceError> {
    params.validate()?;
    let n = params.sample_count();
    let dt = params.dt;
    let peak = params.peak_power;
    let low = peak * (1.0 - params.dip_fraction);
    let mid = 0.5 * (peak + low);
    let mut samples = vec![peak; n];

    if params.dip_fraction > 0.0 && params.dip_duration > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.jitter_seed);
        let max_jitter = 0.1 * params.period;
        let dip_len = ((params.dip_duration / dt).round() as usize).max(1);
        let mut k = 0usize;
        loop {
            let nominal = k as f64 * params.period + (params.period - params.dip_duration);
            if nominal - max_jitter >= params.total_duration {
                break;
            }
            let offset = if params.jitter { rng.random_range(-max_jitter..=max_jitter) } else { 0.0 };
            let start = ((nominal + offset) / dt).round() as i64;
            let end = start + dip_len as i64;
            for i in start.max(0)..end.min(n as i64) {
                samples[i as usize] = low;
            }
            if params.edge_ramp && dip_len > 1 {
                if (0..n as i64).contains(&start) {
                    samples[start as usize] = mid;
                }
                if (0..n as i64).contains(&end) && samples[end as usize] == peak {
                    samples[end as usize] = mid;
                }
            }
            k += 1;
        }
    }

    if let Some(ramp) = params.startup_ramp.filter(|r| *r > 0.0) {
        for (i, p) in samples.iter_mut().enumerate() {
            let t = i as f64 * dt;
            if t >= ramp {
                break;
            }
            *p *= t / ramp;
        }
    }
    if let Some(tail) = params.shutdown_tail.filter(|t| *t > 0.0) {
        let cut = n - ((tail / dt).round() as usize).min(n);
        samples[cut..].iter_mut().for_each(|p| *p = 0.0);
    }

    let p_rated = params.p_rated.unwrap_or(peak);
    PowerTrace::new(samples, dt, p_rated, "synthetic")
}

/// Linearly interpolate `trace` onto a uniform grid with spacing `new_dt`
/// covering the same span.
pub fn resample(trace: &PowerTrace, new_dt: f64) -> Result<PowerTrace, TraceError> {
    if !(new_dt.is_finite() && new_dt > 0.0) {
        return Err(TraceError::InvalidDt(new_dt));
    }
    let src = trace.samples();
    let last = src.len() - 1;
    let count = (trace.duration() / new_dt + 1e-9).floor() as usize + 1;
    let samples = (0..count)
        .map(|j| {
            let pos = j as f64 * new_dt / trace.dt();
            let i = (pos.floor() as usize).min(last - 1);
            let frac = (pos - i as f64).clamp(0.0, 1.0);
            let (a, b) = (src[i], src[i + 1]);
            if frac == 0.0 || a == b {
                a
            } else if frac == 1.0 {
                b
            } else {
                a + frac * (b - a)
            }
        })
        .collect();
    let out = if trace.is_unclamped() {
        PowerTrace::unclamped(samples, new_dt, trace.p_rated(), trace.label())
    } else {
        PowerTrace::new(samples, new_dt, trace.p_rated(), trace.label())
    };
    out
}

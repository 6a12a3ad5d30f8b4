//! Cluster-level aggregation of identical rack traces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::trace::{PowerTrace, TraceError};

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub n_racks: usize,
    #[serde(default)]
    pub skew_seed: Option<u64>,
    /// Largest per-rack time offset, s.
    #[serde(default)]
    pub max_skew: f64,
}

impl ClusterConfig {
    pub fn synchronous(n_racks: usize) -> Self {
        Self { n_racks, skew_seed: None, max_skew: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.n_racks == 0 {
            return Err(ClusterError::InvalidConfig("n_racks must be >= 1".into()));
        }
        if !(self.max_skew.is_finite() && self.max_skew >= 0.0) {
            return Err(ClusterError::InvalidConfig(format!("max_skew must be >= 0, got {}", self.max_skew)));
        }
        Ok(())
    }
}

/// `N` racks drawing the same power at the same time.
pub fn aggregate_synchronous(rack: &PowerTrace, cfg: &ClusterConfig) -> Result<PowerTrace, ClusterError> {
    cfg.validate()?;
    if cfg.max_skew != 0.0 {
        return Err(ClusterError::InvalidConfig("synchronous aggregation needs max_skew = 0".into()));
    }
    let n = cfg.n_racks as f64;
    Ok(rack.scaled(n)?.with_label(format!("{} x{}", rack.label(), cfg.n_racks)))
}

/// Sum of `N` copies, each circularly delayed by a seeded offset drawn
/// uniformly from `[0, max_skew]` and rounded to whole samples.
pub fn aggregate_skewed(rack: &PowerTrace, cfg: &ClusterConfig) -> Result<PowerTrace, ClusterError> {
    cfg.validate()?;
    if cfg.max_skew >= rack.duration() {
        return Err(ClusterError::InvalidConfig(format!(
            "max_skew {} must be shorter than the trace ({} s)",
            cfg.max_skew,
            rack.duration()
        )));
    }
    if cfg.max_skew == 0.0 {
        return aggregate_synchronous(rack, cfg);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.skew_seed.unwrap_or(0));
    let offsets: Vec<f64> = (0..cfg.n_racks).map(|_| rng.random_range(0.0..=cfg.max_skew)).collect();
    aggregate_with_offsets(rack, &offsets)
}

/// Sum of circularly delayed copies, one per offset (seconds).
pub fn aggregate_with_offsets(rack: &PowerTrace, offsets: &[f64]) -> Result<PowerTrace, ClusterError> {
    if offsets.is_empty() {
        return Err(ClusterError::InvalidConfig("need at least one rack".into()));
    }
    let n = rack.len();
    let src = rack.samples();
    let mut out = vec![0.0; n];
    for &offset in offsets {
        if !(offset.is_finite() && offset >= 0.0) {
            return Err(ClusterError::InvalidConfig(format!("offset {offset} must be >= 0")));
        }
        let shift = (offset / rack.dt()).round() as usize % n;
        for (k, v) in out.iter_mut().enumerate() {
            *v += src[(k + n - shift) % n];
        }
    }
    let label = format!("{} x{} skewed", rack.label(), offsets.len());
    let p_rated = rack.p_rated() * offsets.len() as f64;
    let trace = if rack.is_unclamped() {
        PowerTrace::unclamped(out, rack.dt(), p_rated, label)?
    } else {
        PowerTrace::new(out, rack.dt(), p_rated, label)?
    };
    Ok(trace)
}

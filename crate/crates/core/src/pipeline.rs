//! Rack-to-grid conditioning chain: storage smoothing followed by the input
//! filter.

use serde::{Deserialize, Serialize};

use crate::ess::{simulate_ess, EssError, EssParams, EssSimResult};
use crate::filter::{design_filter, simulate_filter, FilterError, FilterParams};
use crate::trace::PowerTrace;

/// LC corner of the default pipeline filter, Hz.
pub const DEFAULT_FILTER_CORNER: f64 = 0.5;
/// Source inductance of the default pipeline filter, H.
pub const DEFAULT_FILTER_INDUCTANCE: f64 = 0.1;
pub const DEFAULT_V_DC: f64 = 400.0;
pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ess(#[from] EssError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub ess: EssParams,
    pub filter: FilterParams,
}

impl Default for Pipeline {
    fn default() -> Self {
        Self {
            ess: EssParams { beta: DEFAULT_BETA, v_dc: DEFAULT_V_DC, p_b_limit: None },
            filter: default_filter(),
        }
    }
}

pub fn default_filter() -> FilterParams {
    design_filter(DEFAULT_FILTER_CORNER, DEFAULT_FILTER_INDUCTANCE, crate::filter::DEFAULT_DAMPING_RATIO)
        .expect("default filter parameters are valid")
}

#[derive(Debug, Clone)]
pub struct Conditioned {
    pub ess: EssSimResult,
    /// Grid-side power after the filter.
    pub grid: PowerTrace,
}

impl Pipeline {
    /// Rack power through the storage branch, then the filter.
    pub fn condition(&self, rack: &PowerTrace) -> Result<Conditioned, PipelineError> {
        let ess = simulate_ess(rack, &self.ess)?;
        let grid = simulate_filter(&self.filter, &ess.grid_power, self.ess.v_dc)?;
        Ok(Conditioned { ess, grid: grid.with_label(format!("{} grid", rack.label())) })
    }

    /// Combined magnitude: first-order storage stage times the filter.
    pub fn response(&self, freqs: &[f64]) -> Vec<f64> {
        freqs.iter().map(|&f| self.ess.response(f) * self.filter.transfer(f).norm()).collect()
    }
}

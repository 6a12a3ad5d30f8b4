//! Controlled energy-storage branch and its sizing rules.
//!
//! The storage current obeys `d/dt i_B + beta * i_B + d/dt i_R = 0`. For a
//! piecewise-constant rack current this has an exact discrete solution: at
//! each sample boundary `i_B` jumps by `-(i_R[k] - i_R[k-1])`, then decays by
//! `exp(-beta * dt)` across the interval. The grid then sees
//! `i_R + i_B`, which relaxes toward the rack current at rate `beta`.
//!
//! Sign convention: battery power `> 0` means charging, and
//! `grid = rack + battery` at every sample.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::compliance::ramp_rate;
use crate::trace::{PowerTrace, TraceError};

#[derive(Debug, thiserror::Error)]
pub enum EssError {
    #[error("invalid storage parameters: {0}")]
    InvalidParams(String),
    #[error("beta * dt = {0} must be < 1")]
    TimestepTooCoarse(f64),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssParams {
    /// Control decay rate, 1/s.
    pub beta: f64,
    /// Bus voltage, V.
    pub v_dc: f64,
    /// Battery power above which samples are flagged, W.
    #[serde(default)]
    pub p_b_limit: Option<f64>,
}

impl EssParams {
    pub fn new(beta: f64, v_dc: f64) -> Result<Self, EssError> {
        let p = Self { beta, v_dc, p_b_limit: None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_limit(mut self, p_b_limit: f64) -> Self {
        self.p_b_limit = Some(p_b_limit);
        self
    }

    pub fn validate(&self) -> Result<(), EssError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(EssError::InvalidParams(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.v_dc.is_finite() && self.v_dc > 0.0) {
            return Err(EssError::InvalidParams(format!("v_dc must be > 0, got {}", self.v_dc)));
        }
        if let Some(limit) = self.p_b_limit {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(EssError::InvalidParams(format!("p_b_limit must be > 0, got {limit}")));
            }
        }
        Ok(())
    }

    /// Corner of the smoothing stage, `beta / (2 pi)` Hz.
    pub fn f_b(&self) -> f64 {
        self.beta / (2.0 * PI)
    }

    /// First-order magnitude `1 / sqrt(1 + (f / f_b)^2)` seen by the grid.
    pub fn response(&self, freq: f64) -> f64 {
        let x = freq / self.f_b();
        1.0 / (1.0 + x * x).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssSimResult {
    pub grid_power: PowerTrace,
    /// Signed battery power, W; positive while charging.
    pub battery_power: Vec<f64>,
    /// Energy moved into storage since the first sample, J.
    pub stored_energy: Vec<f64>,
    /// Largest grid ramp as a fraction of rated power per second.
    pub max_ramp: f64,
    /// Samples where `|battery_power|` exceeded `p_b_limit`.
    pub limit_violations: Vec<usize>,
}

impl EssSimResult {
    /// Largest `|E(t) - E(0)|`.
    pub fn worst_case_energy(&self) -> f64 {
        let e0 = self.stored_energy[0];
        self.stored_energy.iter().fold(0.0, |m, e| m.max((e - e0).abs()))
    }

    /// Write `time_s,rack_w,grid_w,batt_w,stored_j` rows.
    pub fn write_csv<W: Write>(&self, rack: &PowerTrace, writer: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let io = std::io::Error::other;
        out.write_record(["time_s", "rack_w", "grid_w", "batt_w", "stored_j"]).map_err(io)?;
        let grid = self.grid_power.samples();
        for k in 0..grid.len() {
            out.write_record([
                rack.time(k).to_string(),
                rack.samples()[k].to_string(),
                grid[k].to_string(),
                self.battery_power[k].to_string(),
                self.stored_energy[k].to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()
    }
}

/// Run the storage smoothing law over a rack trace.
pub fn simulate_ess(rack: &PowerTrace, params: &EssParams) -> Result<EssSimResult, EssError> {
    params.validate()?;
    let dt = rack.dt();
    let bdt = params.beta * dt;
    if bdt >= 1.0 {
        return Err(EssError::TimestepTooCoarse(bdt));
    }
    let v = params.v_dc;
    let decay = (-bdt).exp();
    // integral of exp(-beta t) over one interval
    let hold = -(-bdt).exp_m1() / params.beta;

    let rack_i: Vec<f64> = rack.samples().iter().map(|p| p / v).collect();
    let n = rack_i.len();
    let mut grid = Vec::with_capacity(n);
    let mut battery = Vec::with_capacity(n);
    let mut stored = Vec::with_capacity(n);
    let mut limit_violations = Vec::new();

    let mut i_b = 0.0;
    let mut energy = 0.0;
    for k in 0..n {
        if k > 0 {
            energy += v * i_b * hold;
            i_b = decay * i_b - (rack_i[k] - rack_i[k - 1]);
        }
        let p_b = v * i_b;
        if params.p_b_limit.is_some_and(|limit| p_b.abs() > limit) {
            limit_violations.push(k);
        }
        // the grid is a convex blend of past rack samples; clamp away rounding
        let mut g = v * (rack_i[k] + i_b);
        if !rack.is_unclamped() {
            g = g.clamp(0.0, rack.p_rated());
        }
        grid.push(g);
        battery.push(p_b);
        stored.push(energy);
    }

    let label = format!("{} conditioned", rack.label());
    let grid_power = if rack.is_unclamped() {
        PowerTrace::unclamped(grid, dt, rack.p_rated(), label)?
    } else {
        PowerTrace::new(grid, dt, rack.p_rated(), label)?
    };
    let max_ramp = ramp_rate(&grid_power).iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    Ok(EssSimResult { grid_power, battery_power: battery, stored_energy: stored, max_ramp, limit_violations })
}

/// Largest excursion of stored energy from its initial value, J.
pub fn worst_case_energy(rack: &PowerTrace, params: &EssParams) -> Result<f64, EssError> {
    Ok(simulate_ess(rack, params)?.worst_case_energy())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssSizing {
    /// `(p_rated - p_min) / p_rated`.
    pub epsilon: f64,
    /// Minimum installed capacity, J.
    pub e_b_min: f64,
    /// Minimum power rating, W.
    pub p_b_min: f64,
    /// Largest energy swing the storage must absorb, J.
    pub delta_e_max: f64,
}

pub fn size_ess(p_rated: f64, p_min: f64, beta: f64, gamma: f64) -> Result<EssSizing, EssError> {
    let bad = |m: String| Err(EssError::InvalidParams(m));
    if !(p_rated.is_finite() && p_rated > 0.0) {
        return bad(format!("p_rated must be > 0, got {p_rated}"));
    }
    if !(p_min.is_finite() && (0.0..=p_rated).contains(&p_min)) {
        return bad(format!("p_min must lie in [0, p_rated], got {p_min}"));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return bad(format!("beta must be > 0, got {beta}"));
    }
    if !(gamma.is_finite() && gamma > 0.0 && gamma <= 1.0) {
        return bad(format!("gamma must lie in (0, 1], got {gamma}"));
    }
    // evaluated from the swing directly so round numbers stay exact
    let swing = p_rated - p_min;
    let delta_e_max = swing / beta;
    Ok(EssSizing { epsilon: swing / p_rated, e_b_min: delta_e_max / gamma, p_b_min: swing, delta_e_max })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(i1: f64, i2: f64, v: f64, n: usize, at: usize, dt: f64) -> PowerTrace {
        let s = (0..n).map(|k| if k < at { i1 * v } else { i2 * v }).collect();
        PowerTrace::new(s, dt, i1.max(i2) * v, "step").unwrap()
    }

    #[test]
    fn sizing_example() {
        let s = size_ess(10_000.0, 2_000.0, 0.1, 0.2).unwrap();
        assert_eq!(s.epsilon, 0.8);
        assert_eq!(s.delta_e_max, 80_000.0);
        assert_eq!(s.e_b_min, 400_000.0);
        assert_eq!(s.p_b_min, 8_000.0);
    }

    #[test]
    fn sizing_edges() {
        let s = size_ess(10.0, 10.0, 0.1, 0.2).unwrap();
        assert_eq!((s.epsilon, s.e_b_min, s.p_b_min, s.delta_e_max), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(size_ess(1.0, 0.0, 1.0, 1.0).unwrap().e_b_min, 1.0);
        assert!(size_ess(1.0, 0.0, 1.0, 0.0).is_err());
        assert!(size_ess(1.0, 2.0, 1.0, 0.5).is_err());
        assert!(size_ess(1.0, 0.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn constant_rack_is_untouched() {
        let t = PowerTrace::new(vec![4200.0; 300], 0.01, 10_000.0, "").unwrap();
        let r = simulate_ess(&t, &EssParams::new(0.1, 400.0).unwrap()).unwrap();
        assert!(r.battery_power.iter().all(|&b| b == 0.0));
        assert_eq!(r.grid_power.samples(), t.samples());
        assert_eq!(r.max_ramp, 0.0);
    }

    #[test]
    fn step_follows_exponential() {
        let (i1, i2, v, beta, dt) = (25.0, 5.0, 400.0, 0.1, 0.01);
        let t = step(i1, i2, v, 20_000, 100, dt);
        let r = simulate_ess(&t, &EssParams::new(beta, v).unwrap()).unwrap();
        for k in 100..20_000 {
            let tk = (k - 100) as f64 * dt;
            let want = v * (i1 - i2) * (-beta * tk).exp();
            assert!((r.battery_power[k] - want).abs() <= 1e-9 * want.abs(), "k={k}");
        }
    }

    #[test]
    fn coarse_step_rejected() {
        let t = PowerTrace::new(vec![1.0, 2.0], 10.0, 2.0, "").unwrap();
        assert!(matches!(simulate_ess(&t, &EssParams::new(0.1, 1.0).unwrap()), Err(EssError::TimestepTooCoarse(_))));
    }

    #[test]
    fn limit_flags_but_does_not_clamp() {
        let t = step(10.0, 2.0, 1.0, 50, 10, 0.01);
        let params = EssParams::new(0.1, 1.0).unwrap().with_limit(5.0);
        let r = simulate_ess(&t, &params).unwrap();
        assert_eq!(r.limit_violations.first(), Some(&10));
        assert!((r.battery_power[10] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn corner_and_response() {
        let p = EssParams::new(0.1, 400.0).unwrap();
        assert!((p.f_b() - 0.1 / (2.0 * PI)).abs() < 1e-18);
        assert!((p.response(p.f_b()) - 0.5f64.sqrt()).abs() < 1e-15);
    }
}

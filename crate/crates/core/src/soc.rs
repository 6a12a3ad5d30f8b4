//! Battery state-of-charge model and the two-loop SoC controller.
//!
//! The outer loop picks a target SoC: `s_mid` while the rack is active, a
//! lower storage level during long predicted idle windows. The inner loop
//! tracks that target with a receding-horizon QP over charge/discharge
//! current, applying only the first step before re-planning.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::qp::{KktResidual, QpError, QpProblem};

pub const COULOMBS_PER_AH: f64 = 3600.0;
/// Outer-loop refresh period, s.
pub const OUTER_PERIOD: f64 = 300.0;
const REGULARIZATION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SocError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("soc {soc} outside safe box [{min}, {max}]")]
    OutsideSafeBox { soc: f64, min: f64, max: f64 },
    #[error("planner failed: {0}")]
    Infeasible(#[from] QpError),
}

fn bad<T>(msg: String) -> Result<T, SocError> {
    Err(SocError::InvalidParams(msg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryParams {
    /// Capacity, C.
    pub q_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    /// Corrective-current limit, A.
    pub i_max: f64,
    pub s_safe_min: f64,
    pub s_safe_max: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            q_max: 74.0 * COULOMBS_PER_AH,
            eta_c: 0.98,
            eta_d: 0.98,
            i_max: 36.0,
            s_safe_min: 0.1,
            s_safe_max: 0.9,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), SocError> {
        if !(self.q_max.is_finite() && self.q_max > 0.0) {
            return bad(format!("q_max must be > 0, got {}", self.q_max));
        }
        for (name, eta) in [("eta_c", self.eta_c), ("eta_d", self.eta_d)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {eta}"));
            }
        }
        if !(self.i_max.is_finite() && self.i_max > 0.0) {
            return bad(format!("i_max must be > 0, got {}", self.i_max));
        }
        if !(0.0 <= self.s_safe_min && self.s_safe_min < self.s_safe_max && self.s_safe_max <= 1.0) {
            return bad(format!("need 0 <= s_safe_min < s_safe_max <= 1, got [{}, {}]", self.s_safe_min, self.s_safe_max));
        }
        Ok(())
    }

    pub fn in_safe_box(&self, soc: f64) -> bool {
        (self.s_safe_min..=self.s_safe_max).contains(&soc)
    }

    /// Time to charge from `soc` up to `s_mid` at full corrective current.
    pub fn t_ready(&self, soc: f64, s_mid: f64) -> f64 {
        (s_mid - soc).max(0.0) * self.q_max / (self.eta_c * self.i_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub soc: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: BatteryState,
    /// The raw update left `[0, 1]` and was clamped.
    pub saturated: bool,
}

/// Advance SoC by `dt` seconds at a constant `current` (positive charges).
pub fn soc_step(state: BatteryState, params: &BatteryParams, current: f64, dt: f64) -> StepOutcome {
    let charge = params.eta_c * current.max(0.0) - (-current).max(0.0) / params.eta_d;
    let raw = state.soc + dt / params.q_max * charge;
    let soc = raw.clamp(0.0, 1.0);
    StepOutcome { state: BatteryState { soc, timestamp: state.timestamp + dt }, saturated: soc != raw }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerConfigRepr {
    s_mid: f64,
    s_idle: f64,
    t_enter: f64,
    delta_s_min: f64,
    horizon_h: usize,
    delta_t: f64,
    lambda_i: f64,
    lambda_delta: f64,
    lambda_t: f64,
    deadband: f64,
    #[serde(default)]
    delta_s_ref: Option<f64>,
}

/// Outer and inner loop settings.
///
/// `delta_s_ref` is always `s_mid - s_idle`; a JSON config may state it, but
/// a mismatching value is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ControllerConfigRepr")]
pub struct ControllerConfig {
    pub s_mid: f64,
    pub s_idle: f64,
    pub t_enter: f64,
    pub delta_s_min: f64,
    pub horizon_h: usize,
    pub delta_t: f64,
    pub lambda_i: f64,
    pub lambda_delta: f64,
    pub lambda_t: f64,
    pub deadband: f64,
    pub delta_s_ref: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            s_mid: 0.5,
            s_idle: 0.3,
            t_enter: 4.0 * 3600.0,
            delta_s_min: 0.02,
            horizon_h: 12,
            delta_t: 5.0,
            lambda_i: 0.01,
            lambda_delta: 1.0,
            lambda_t: 5.0,
            deadband: 0.005,
            delta_s_ref: 0.2,
        }
    }
}

impl TryFrom<ControllerConfigRepr> for ControllerConfig {
    type Error = SocError;

    fn try_from(r: ControllerConfigRepr) -> Result<Self, SocError> {
        let cfg = ControllerConfig {
            s_mid: r.s_mid,
            s_idle: r.s_idle,
            t_enter: r.t_enter,
            delta_s_min: r.delta_s_min,
            horizon_h: r.horizon_h,
            delta_t: r.delta_t,
            lambda_i: r.lambda_i,
            lambda_delta: r.lambda_delta,
            lambda_t: r.lambda_t,
            deadband: r.deadband,
            delta_s_ref: r.delta_s_ref.unwrap_or(r.s_mid - r.s_idle),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), SocError> {
        let finite = [
            self.s_mid,
            self.s_idle,
            self.t_enter,
            self.delta_s_min,
            self.delta_t,
            self.lambda_i,
            self.lambda_delta,
            self.lambda_t,
            self.deadband,
            self.delta_s_ref,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite controller setting".into());
        }
        if !(0.0..=1.0).contains(&self.s_idle) || !(0.0..=1.0).contains(&self.s_mid) || self.s_idle >= self.s_mid {
            return bad(format!("need 0 <= s_idle < s_mid <= 1, got {} and {}", self.s_idle, self.s_mid));
        }
        if self.horizon_h < 1 {
            return bad("horizon_h must be >= 1".into());
        }
        if self.delta_t <= 0.0 {
            return bad(format!("delta_t must be > 0, got {}", self.delta_t));
        }
        if self.lambda_i < 0.0 || self.lambda_delta < 0.0 || self.lambda_t < 0.0 {
            return bad("weights must be >= 0".into());
        }
        if self.deadband < 0.0 || self.delta_s_min < 0.0 || self.t_enter < 0.0 {
            return bad("deadband, delta_s_min and t_enter must be >= 0".into());
        }
        let want = self.s_mid - self.s_idle;
        if (self.delta_s_ref - want).abs() > 1e-9 {
            return bad(format!("delta_s_ref must equal s_mid - s_idle = {want}, got {}", self.delta_s_ref));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Active,
    Idle,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Active => "active",
            Mode::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterLoopInput {
    pub mode: Mode,
    /// Time left in the current idle window, s.
    pub t_remain: f64,
    pub s_current: f64,
    /// Predicted length of the whole idle window, s. Storage mode is entered
    /// when this exceeds `t_enter`; defaults to `t_remain`.
    #[serde(default)]
    pub idle_window: Option<f64>,
}

/// Outer-loop target SoC.
pub fn select_target(cfg: &ControllerConfig, params: &BatteryParams, input: &OuterLoopInput) -> f64 {
    if input.mode == Mode::Active {
        return cfg.s_mid;
    }
    let t_remain = input.t_remain.max(0.0);
    if input.idle_window.unwrap_or(t_remain) <= cfg.t_enter {
        return cfg.s_mid;
    }
    if t_remain < params.t_ready(input.s_current, cfg.s_mid) {
        return cfg.s_mid;
    }
    let spare = (t_remain - params.t_ready(cfg.s_idle, cfg.s_mid)).max(0.0);
    let delta_s_max = params.i_max * spare / (params.eta_d * params.q_max);
    let candidate = cfg.s_idle.max(cfg.s_mid - delta_s_max).max(params.s_safe_min);
    if cfg.s_mid - candidate >= cfg.delta_s_min {
        candidate
    } else {
        cfg.s_mid
    }
}

/// Inner-loop QP.
///
/// Current is split into charge and discharge parts, `i_k = i_max (xc_k -
/// xd_k)`, which makes the lossy SoC update linear. Only the part that moves
/// SoC toward the target is kept as a decision variable `y_k in [0, 1]`; the
/// other is fixed at zero. Leaving both free lets the optimizer run them
/// together above target, dissipating charge through conversion losses while
/// the net current, and so its penalty, stays small.
///
/// The objective is a least-squares residual `|M y - t|^2`, so its value in
/// normalized units is `y'Gy/2 + c'y + |t|^2`.
#[derive(Debug, Clone)]
pub struct PlanProblem {
    pub qp: QpProblem,
    pub offset: f64,
    pub horizon: usize,
    /// `+1` when charging toward the target, `-1` when discharging.
    pub direction: f64,
}

pub fn build_plan_problem(
    soc: f64,
    s_star: f64,
    cfg: &ControllerConfig,
    params: &BatteryParams,
    prev_u: f64,
) -> PlanProblem {
    let h = cfg.horizon_h;
    let r = cfg.delta_s_ref;
    let direction = if soc > s_star { -1.0 } else { 1.0 };
    let gain = cfg.delta_t * params.i_max / (params.q_max * r);
    let per_step = if direction > 0.0 { gain * params.eta_c } else { -gain / params.eta_d };
    let e0 = (soc - s_star) / r;
    let e_row = |k: usize| DVector::from_fn(h, |j, _| if j < k { per_step } else { 0.0 });

    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(3 * h);
    let mut target = Vec::with_capacity(3 * h);
    for k in 1..=h {
        let w = if k == h { 1.0 + cfg.lambda_t } else { 1.0 };
        rows.push(e_row(k) * w.sqrt());
        target.push(-w.sqrt() * e0);
    }
    let (si, sd) = (cfg.lambda_i.sqrt() * direction, cfg.lambda_delta.sqrt() * direction);
    for k in 0..h {
        let mut row = DVector::zeros(h);
        row[k] = si;
        rows.push(row);
        target.push(0.0);
    }
    for k in 0..h {
        let mut row = DVector::zeros(h);
        row[k] = sd;
        if k > 0 {
            row[k - 1] = -sd;
            target.push(0.0);
        } else {
            target.push(cfg.lambda_delta.sqrt() * prev_u);
        }
        rows.push(row);
    }
    let m = DMatrix::from_fn(rows.len(), h, |i, j| rows[i][j]);
    let t = DVector::from_vec(target);
    let g = 2.0 * m.transpose() * &m + DMatrix::identity(h, h) * REGULARIZATION;
    let c = -2.0 * m.transpose() * &t;

    // rows: y >= 0, y <= 1, then the SoC box at every predicted step
    let mut a = DMatrix::zeros(4 * h, h);
    let mut b = DVector::zeros(4 * h);
    for k in 0..h {
        a[(k, k)] = 1.0;
        a[(h + k, k)] = -1.0;
        b[h + k] = -1.0;
    }
    for k in 1..=h {
        let row = e_row(k) * r;
        let lo = 2 * h + 2 * (k - 1);
        a.row_mut(lo).copy_from(&row.transpose());
        b[lo] = params.s_safe_min - soc;
        a.row_mut(lo + 1).copy_from(&(-row).transpose());
        b[lo + 1] = soc - params.s_safe_max;
    }
    PlanProblem { qp: QpProblem { g, c, a, b }, offset: t.norm_squared(), horizon: h, direction }
}

#[derive(Debug, Clone)]
pub struct Plan {
    /// Net current per step, A.
    pub currents: Vec<f64>,
    /// Normalized charge part `xc_k`.
    pub charge: Vec<f64>,
    /// Normalized discharge part `xd_k`.
    pub discharge: Vec<f64>,
    /// Objective in normalized units; zero inside the deadband.
    pub objective: f64,
    pub kkt: Option<KktResidual>,
}

/// Plan the next `H` corrective currents toward `s_star`.
pub fn plan_correction(
    state: &BatteryState,
    s_star: f64,
    cfg: &ControllerConfig,
    params: &BatteryParams,
    prev_u: f64,
) -> Result<Plan, SocError> {
    let h = cfg.horizon_h;
    if !params.in_safe_box(state.soc) {
        return Err(SocError::OutsideSafeBox { soc: state.soc, min: params.s_safe_min, max: params.s_safe_max });
    }
    if (state.soc - s_star).abs() <= cfg.deadband {
        return Ok(Plan { currents: vec![0.0; h], charge: vec![0.0; h], discharge: vec![0.0; h], objective: 0.0, kkt: None });
    }
    let problem = build_plan_problem(state.soc, s_star, cfg, params, prev_u);
    let sol = problem.qp.solve(DVector::zeros(h))?;
    let kkt = problem.qp.kkt_residual(&sol);
    let y: Vec<f64> = sol.x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let zeros = vec![0.0; h];
    let (charge, discharge) = if problem.direction > 0.0 { (y.clone(), zeros) } else { (zeros, y.clone()) };
    let currents = y.iter().map(|v| problem.direction * v * params.i_max).collect();
    Ok(Plan { currents, charge, discharge, objective: sol.objective + problem.offset, kkt: Some(kkt) })
}

/// Slow exogenous SoC disturbance added to the applied current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriftModel {
    #[default]
    None,
    /// Constant bias current, A; positive pushes SoC up.
    BiasCurrent(f64),
}

impl DriftModel {
    pub fn current(&self) -> f64 {
        match self {
            DriftModel::None => 0.0,
            DriftModel::BiasCurrent(i) => *i,
        }
    }
}

/// Piecewise-constant rack activity over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// `(start_time, mode)` pairs with strictly increasing start times; the
    /// first must start at 0.
    pub segments: Vec<(f64, Mode)>,
    pub duration: f64,
}

impl Schedule {
    pub fn constant(mode: Mode, duration: f64) -> Self {
        Self { segments: vec![(0.0, mode)], duration }
    }

    pub fn validate(&self) -> Result<(), SocError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration must be > 0, got {}", self.duration));
        }
        match self.segments.first() {
            Some((t, _)) if *t == 0.0 => {}
            _ => return bad("schedule must start at t = 0".into()),
        }
        if self.segments.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return bad("schedule start times must increase".into());
        }
        Ok(())
    }

    fn segment_at(&self, t: f64) -> (Mode, f64, f64) {
        let i = self.segments.iter().rposition(|(s, _)| *s <= t).unwrap_or(0);
        let start = self.segments[i].0;
        let end = self.segments.get(i + 1).map_or(self.duration, |s| s.0);
        (self.segments[i].1, start, end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time_s: f64,
    pub soc: f64,
    pub target: f64,
    pub applied_current_a: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerRun {
    /// First row is the initial state; each later row is the state after one
    /// inner step together with the current applied during that step.
    pub log: Vec<LogEntry>,
    /// Steps whose SoC update was clamped to `[0, 1]`.
    pub saturated_steps: usize,
}

impl ControllerRun {
    pub fn final_soc(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |e| e.soc)
    }

    pub fn soc(&self) -> Vec<f64> {
        self.log.iter().map(|e| e.soc).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let io = std::io::Error::other;
        out.write_record(["time_s", "soc", "target", "applied_current_a", "mode"]).map_err(io)?;
        for e in &self.log {
            out.write_record([
                e.time_s.to_string(),
                e.soc.to_string(),
                e.target.to_string(),
                e.applied_current_a.to_string(),
                e.mode.as_str().to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub drift: DriftModel,
    /// When false no corrective current is applied.
    pub controller_enabled: bool,
    pub outer_period: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { drift: DriftModel::None, controller_enabled: true, outer_period: OUTER_PERIOD }
    }
}

/// Simulate the closed loop over a schedule.
///
/// Every `delta_t` the planner runs and its first current is applied on top
/// of the drift. The target is refreshed every `outer_period` and whenever
/// the mode changes. If SoC ever leaves the safe box the loop applies full
/// current back toward it instead of planning.
pub fn run_controller(
    schedule: &Schedule,
    initial: BatteryState,
    cfg: &ControllerConfig,
    params: &BatteryParams,
    opts: &RunOptions,
) -> Result<ControllerRun, SocError> {
    cfg.validate()?;
    params.validate()?;
    schedule.validate()?;
    if !(opts.outer_period.is_finite() && opts.outer_period > 0.0) {
        return bad(format!("outer_period must be > 0, got {}", opts.outer_period));
    }
    let steps = (schedule.duration / cfg.delta_t).round() as usize;
    let outer_every = ((opts.outer_period / cfg.delta_t).round() as usize).max(1);
    let bias = opts.drift.current();

    let mut state = initial;
    let mut log = Vec::with_capacity(steps + 1);
    let mut saturated_steps = 0;
    let mut prev_u = 0.0;
    let mut target = cfg.s_mid;
    let mut last_mode = None;

    for step in 0..steps {
        let t = step as f64 * cfg.delta_t;
        let (mode, start, end) = schedule.segment_at(t);
        if step % outer_every == 0 || last_mode != Some(mode) {
            let input = OuterLoopInput { mode, t_remain: end - t, s_current: state.soc, idle_window: Some(end - start) };
            target = select_target(cfg, params, &input);
        }
        if step == 0 {
            log.push(LogEntry { time_s: t, soc: state.soc, target, applied_current_a: 0.0, mode });
        }
        last_mode = Some(mode);

        let applied = if !opts.controller_enabled {
            0.0
        } else if state.soc < params.s_safe_min {
            params.i_max
        } else if state.soc > params.s_safe_max {
            -params.i_max
        } else {
            plan_correction(&state, target, cfg, params, prev_u)?.currents[0]
        };
        prev_u = applied / params.i_max;
        let out = soc_step(state, params, applied + bias, cfg.delta_t);
        saturated_steps += usize::from(out.saturated);
        state = out.state;
        log.push(LogEntry { time_s: t + cfg.delta_t, soc: state.soc, target, applied_current_a: applied, mode });
    }
    Ok(ControllerRun { log, saturated_steps })
}

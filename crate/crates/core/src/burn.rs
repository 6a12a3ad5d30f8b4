//! Software power-burn baseline.
//!
//! A synthetic GPU stands in for real hardware: burning at duty `d` within a
//! control window draws `a d + b` watts plus noise. Calibration fits that
//! line; the schedule then shapes a two-rank job into a ramp-limited trace by
//! burning extra power during warm-up, checkpoints and cool-down.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::trace::{PowerTrace, TraceError};

#[derive(Debug, thiserror::Error)]
pub enum BurnError {
    #[error("calibration needs at least two distinct duty values")]
    DegenerateSweep,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("trace has zero energy")]
    ZeroEnergy,
    #[error("sample intervals differ: {0} s vs {1} s")]
    DtMismatch(f64, f64),
    #[error("burn trace drops below the raw job at sample {index}: {burn} W < {raw} W")]
    BelowFloor { index: usize, burn: f64, raw: f64 },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticGpu {
    pub true_a: f64,
    pub true_b: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticGpu {
    pub fn validate(&self) -> Result<(), BurnError> {
        if !(self.true_a.is_finite() && self.true_a > 0.0) || !self.true_b.is_finite() {
            return Err(BurnError::InvalidParams(format!("need true_a > 0, got {}", self.true_a)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(BurnError::InvalidParams(format!("need noise_sigma >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyPowerModel {
    /// W per unit duty.
    pub a: f64,
    /// W at zero duty.
    pub b: f64,
    pub p_idle: f64,
    pub d_range: (f64, f64),
}

impl DutyPowerModel {
    pub fn new(a: f64, b: f64, p_idle: f64) -> Result<Self, BurnError> {
        if !(a.is_finite() && a > 0.0 && b.is_finite() && p_idle.is_finite()) {
            return Err(BurnError::InvalidParams(format!("need a > 0 and finite b, p_idle; got {a}, {b}, {p_idle}")));
        }
        Ok(Self { a, b, p_idle, d_range: (0.0, 1.0) })
    }

    pub fn p_max(&self) -> f64 {
        self.a + self.b
    }

    /// `a d + b`, clamped to `[p_idle, a + b]`.
    pub fn predict(&self, duty: f64) -> f64 {
        (self.a * duty + self.b).clamp(self.p_idle.min(self.p_max()), self.p_max())
    }
}

/// Fit `P(d) = a d + b` to mean window power at each duty.
pub fn calibrate(gpu: &SyntheticGpu, duties: &[f64], windows_per_duty: usize) -> Result<DutyPowerModel, BurnError> {
    gpu.validate()?;
    if windows_per_duty == 0 {
        return Err(BurnError::InvalidParams("windows_per_duty must be >= 1".into()));
    }
    if let Some(d) = duties.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(BurnError::InvalidParams(format!("duty {d} outside [0, 1]")));
    }
    let mut distinct: Vec<f64> = duties.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(BurnError::DegenerateSweep);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(gpu.seed);
    let noise = Normal::new(0.0, gpu.noise_sigma).map_err(|e| BurnError::InvalidParams(e.to_string()))?;
    let means: Vec<f64> = duties
        .iter()
        .map(|&d| {
            let sum: f64 = (0..windows_per_duty).map(|_| gpu.true_a * d + gpu.true_b + noise.sample(&mut rng)).sum();
            sum / windows_per_duty as f64
        })
        .collect();

    let n = duties.len() as f64;
    let d_bar = duties.iter().sum::<f64>() / n;
    let p_bar = means.iter().sum::<f64>() / n;
    let sxy: f64 = duties.iter().zip(&means).map(|(d, p)| (d - d_bar) * (p - p_bar)).sum();
    let sxx: f64 = duties.iter().map(|d| (d - d_bar).powi(2)).sum();
    let a = sxy / sxx;
    let b = p_bar - a * d_bar;

    let idle: Vec<f64> = duties.iter().zip(&means).filter(|(d, _)| **d == 0.0).map(|(_, p)| *p).collect();
    let p_idle = if idle.is_empty() { b } else { idle.iter().sum::<f64>() / idle.len() as f64 };
    DutyPowerModel::new(a, b, p_idle)
}

/// `clip((p - b) / a, 0, 1)`.
pub fn duty_for_power(model: &DutyPowerModel, p_target: f64) -> f64 {
    ((p_target - model.b) / model.a).clamp(0.0, 1.0)
}

/// Power-shaped two-rank training job. Powers are per GPU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurnSchedule {
    pub t_warm: f64,
    pub t_cool: f64,
    pub p_warm: f64,
    pub p_train: f64,
    pub p_ckpt: f64,
    pub p_cool: f64,
    pub checkpoint_every_k: usize,
    pub step_duration: f64,
    pub total_steps: usize,
    /// Control window, s.
    pub t_win: f64,
    /// Length of each checkpoint pause, s.
    pub ckpt_duration: f64,
    /// Smallest burn slice within a window, s; duty resolution is
    /// `burn_quantum / t_win`.
    pub burn_quantum: f64,
}

impl Default for BurnSchedule {
    fn default() -> Self {
        Self {
            t_warm: 41.0,
            t_cool: 41.0,
            p_warm: 60.0,
            p_train: 150.0,
            p_ckpt: 110.0,
            p_cool: 60.0,
            checkpoint_every_k: 50,
            step_duration: 0.5,
            total_steps: 400,
            t_win: 1.0,
            ckpt_duration: 5.0,
            burn_quantum: 0.01,
        }
    }
}

impl BurnSchedule {
    pub fn validate(&self) -> Result<(), BurnError> {
        let bad = |m: &str| Err(BurnError::InvalidSchedule(m.into()));
        let durations = [self.t_warm, self.t_cool, self.step_duration, self.t_win, self.ckpt_duration, self.burn_quantum];
        if durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return bad("all durations must be > 0");
        }
        let powers = [self.p_warm, self.p_train, self.p_ckpt, self.p_cool];
        if powers.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("powers must be finite and >= 0");
        }
        if self.p_warm > self.p_train {
            return bad("p_warm must not exceed p_train");
        }
        if self.p_ckpt >= self.p_train {
            return bad("p_ckpt must be below p_train");
        }
        if self.checkpoint_every_k == 0 || self.total_steps == 0 {
            return bad("checkpoint_every_k and total_steps must be >= 1");
        }
        if self.burn_quantum > self.t_win {
            return bad("burn_quantum must not exceed t_win");
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> usize {
        self.total_steps / self.checkpoint_every_k
    }

    pub fn train_duration(&self) -> f64 {
        self.total_steps as f64 * self.step_duration + self.checkpoints() as f64 * self.ckpt_duration
    }

    pub fn total_duration(&self) -> f64 {
        self.t_warm + self.train_duration() + self.t_cool
    }

    /// Whether every phase change falls on a window boundary and rank 1 can
    /// fully cover a checkpoint dip. Such schedules are emitted as pure lerp
    /// segments, so their ramp never exceeds the steepest setpoint slope plus
    /// one duty step per window.
    pub fn is_window_aligned(&self, model: &DutyPowerModel) -> bool {
        let on_grid = |t: f64| {
            let x = t / self.t_win;
            (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0)
        };
        let block = self.checkpoint_every_k as f64 * self.step_duration;
        [self.t_warm, block, self.ckpt_duration, self.train_duration()].into_iter().all(on_grid)
            && 2.0 * self.p_train - self.p_ckpt <= model.p_max()
    }

    /// Duty resolution.
    pub fn duty_step(&self) -> f64 {
        self.burn_quantum / self.t_win
    }

    /// Whether `t`, measured from the start of training, falls in a
    /// checkpoint pause. Pauses follow every `k`-th step.
    fn in_checkpoint(&self, t: f64) -> bool {
        let block = self.checkpoint_every_k as f64 * self.step_duration;
        let cycle = block + self.ckpt_duration;
        let i = (t / cycle).floor();
        i < self.checkpoints() as f64 && t - i * cycle >= block
    }

    /// Per-rank job power without any burning.
    fn natural(&self, model: &DutyPowerModel, t: f64) -> [f64; 2] {
        let train = t - self.t_warm;
        if train < 0.0 || train >= self.train_duration() {
            [model.p_idle; 2]
        } else if self.in_checkpoint(train) {
            [self.p_ckpt; 2]
        } else {
            [self.p_train; 2]
        }
    }

    /// Per-rank power setpoints of the shaped schedule.
    fn target(&self, model: &DutyPowerModel, t: f64) -> [f64; 2] {
        let train = t - self.t_warm;
        let end = self.train_duration();
        if train < 0.0 {
            [lerp(self.p_warm, self.p_train, t / self.t_warm); 2]
        } else if train >= end {
            [lerp(self.p_train, self.p_cool, ((train - end) / self.t_cool).min(1.0)); 2]
        } else if self.in_checkpoint(train) {
            [self.p_ckpt, (2.0 * self.p_train - self.p_ckpt).min(model.p_max())]
        } else {
            [self.p_train; 2]
        }
    }
}

fn lerp(a: f64, b: f64, x: f64) -> f64 {
    a + (b - a) * x
}

fn sample_count(duration: f64, dt: f64) -> usize {
    (duration / dt).round() as usize
}

/// Two-rank job power with no shaping, training starting after `t_warm`.
pub fn raw_job_trace(schedule: &BurnSchedule, model: &DutyPowerModel, dt: f64) -> Result<PowerTrace, BurnError> {
    schedule.validate()?;
    let n = sample_count(schedule.total_duration(), dt);
    let samples = (0..n).map(|k| schedule.natural(model, k as f64 * dt).iter().sum()).collect();
    Ok(PowerTrace::new(samples, dt, 2.0 * model.p_max(), "raw job")?)
}

/// Emit the shaped two-rank trace.
///
/// At each window boundary every rank's setpoint is converted to a duty,
/// rounded up to the schedule's duty resolution, and mapped back through the
/// model; a rank never drops below its natural job power. Power between
/// boundaries is interpolated linearly so ramps follow the setpoint slope,
/// floored at the job's own draw.
pub fn schedule_burn(schedule: &BurnSchedule, model: &DutyPowerModel, dt: f64) -> Result<PowerTrace, BurnError> {
    schedule.validate()?;
    if !(dt.is_finite() && dt > 0.0 && dt <= schedule.t_win) {
        return Err(BurnError::InvalidSchedule(format!("dt must lie in (0, t_win], got {dt}")));
    }
    if schedule.p_warm < model.p_idle || schedule.p_cool < model.p_idle {
        return Err(BurnError::InvalidSchedule("p_warm and p_cool must be at least p_idle".into()));
    }
    let total = schedule.total_duration();
    let step = schedule.duty_step();
    let window_power = |t: f64| -> f64 {
        let natural = schedule.natural(model, t);
        let target = schedule.target(model, t);
        (0..2)
            .map(|r| {
                if target[r] <= natural[r] {
                    natural[r]
                } else {
                    // round up so a rank never falls short of its setpoint
                    let d = ((duty_for_power(model, target[r]) / step) - 1e-9).ceil() * step;
                    model.predict(d.min(1.0)).max(natural[r])
                }
            })
            .sum()
    };
    let windows = (total / schedule.t_win).ceil() as usize;
    let levels: Vec<f64> = (0..=windows).map(|j| window_power(j as f64 * schedule.t_win)).collect();

    let n = sample_count(total, dt);
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let x = t / schedule.t_win;
            let j = (x.floor() as usize).min(windows - 1);
            let frac = x - j as f64;
            let level = if frac == 0.0 { levels[j] } else { lerp(levels[j], levels[j + 1], frac) };
            // phase changes inside a window must not dip under the job itself
            level.max(schedule.natural(model, t).iter().sum())
        })
        .collect();
    Ok(PowerTrace::new(samples, dt, 2.0 * model.p_max(), "burn")?)
}

/// Confirm `burn >= raw` sample by sample.
pub fn check_floor(burn: &PowerTrace, raw: &PowerTrace) -> Result<(), BurnError> {
    if burn.dt() != raw.dt() {
        return Err(BurnError::DtMismatch(burn.dt(), raw.dt()));
    }
    for (index, (&b, &r)) in burn.samples().iter().zip(raw.samples()).enumerate() {
        if b < r - 1e-9 * r.abs().max(1.0) {
            return Err(BurnError::BelowFloor { index, burn: b, raw: r });
        }
    }
    Ok(())
}

fn trapezoid(samples: &[f64], len: usize, dt: f64) -> f64 {
    let at = |k: usize| samples.get(k).copied().unwrap_or(0.0);
    (1..len).map(|k| 0.5 * (at(k - 1) + at(k)) * dt).sum()
}

/// Energy ratio `burn / conditioned`, the shorter trace padded with zeros.
pub fn compare_energy(burn: &PowerTrace, conditioned: &PowerTrace) -> Result<f64, BurnError> {
    if (burn.dt() - conditioned.dt()).abs() > 1e-12 * burn.dt() {
        return Err(BurnError::DtMismatch(burn.dt(), conditioned.dt()));
    }
    let len = burn.len().max(conditioned.len());
    let e_burn = trapezoid(burn.samples(), len, burn.dt());
    let e_cond = trapezoid(conditioned.samples(), len, burn.dt());
    if e_burn <= 0.0 || e_cond <= 0.0 {
        return Err(BurnError::ZeroEnergy);
    }
    Ok(e_burn / e_cond)
}

/// A job that idles for part of every cycle next to a burn baseline that
/// holds the busy level throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdleScenario {
    /// Busy power, W.
    pub p_busy: f64,
    /// Fraction of each cycle spent idle.
    pub idle_fraction: f64,
    /// Idle power as a fraction of `p_busy`.
    pub idle_level: f64,
    pub cycle: f64,
    pub duration: f64,
    pub dt: f64,
}

impl Default for IdleScenario {
    fn default() -> Self {
        Self { p_busy: 300.0, idle_fraction: 0.2, idle_level: 0.2, cycle: 10.0, duration: 2200.0, dt: 0.05 }
    }
}

impl IdleScenario {
    pub fn validate(&self) -> Result<(), BurnError> {
        let positive = [self.p_busy, self.cycle, self.duration, self.dt];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(BurnError::InvalidParams("p_busy, cycle, duration and dt must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.idle_fraction) || !(0.0..=1.0).contains(&self.idle_level) {
            return Err(BurnError::InvalidParams("need idle_fraction in [0, 1) and idle_level in [0, 1]".into()));
        }
        if self.cycle < 2.0 * self.dt || self.duration < self.cycle {
            return Err(BurnError::InvalidParams("need dt <= cycle / 2 and cycle <= duration".into()));
        }
        Ok(())
    }

    /// `1 / (1 - f + f l)`: burn energy over job energy when conditioning is
    /// lossless.
    pub fn expected_ratio(&self) -> f64 {
        1.0 / (1.0 - self.idle_fraction + self.idle_fraction * self.idle_level)
    }

    /// `(burn, job)` traces.
    pub fn traces(&self) -> Result<(PowerTrace, PowerTrace), BurnError> {
        self.validate()?;
        let per = (self.cycle / self.dt).round() as usize;
        let busy = ((1.0 - self.idle_fraction) * per as f64).round() as usize;
        let n = sample_count(self.duration, self.dt);
        let job = (0..n).map(|k| if k % per < busy { self.p_busy } else { self.idle_level * self.p_busy }).collect();
        let job = PowerTrace::new(job, self.dt, self.p_busy, "idle job")?;
        let burn = PowerTrace::new(vec![self.p_busy; n], self.dt, self.p_busy, "burn")?;
        Ok((burn, job))
    }
}

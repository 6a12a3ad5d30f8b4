//! Experiment pipelines behind the `powersmooth` command.
//!
//! Each `cmd_*` function does the work of one subcommand and returns a
//! serializable report; `main.rs` only parses flags, prints and picks the
//! exit code.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use powersmooth::burn::{
    calibrate, check_floor, compare_energy, raw_job_trace, schedule_burn, BurnSchedule, IdleScenario, SyntheticGpu,
};
use powersmooth::cluster::{aggregate_synchronous, ClusterConfig};
use powersmooth::compliance::{check_compliance, ramp_rate, spectrum, ComplianceReport, GridSpec};
use powersmooth::ess::{size_ess, EssParams, EssSizing};
use powersmooth::filter::{design_filter, log_space, FilterParams, DEFAULT_DAMPING_RATIO};
use powersmooth::pipeline::{Pipeline, DEFAULT_BETA, DEFAULT_FILTER_CORNER, DEFAULT_FILTER_INDUCTANCE, DEFAULT_V_DC};
use powersmooth::soc::{
    run_controller, BatteryParams, BatteryState, ControllerConfig, DriftModel, Mode, RunOptions, Schedule,
};
use powersmooth::trace::{load_trace, synth_training_trace, PowerTrace, SynthTrainingParams};
use serde::{Deserialize, Serialize};

/// Fixed output file names under `--out`.
pub const GRID_CSV: &str = "grid.csv";
pub const SOC_CSV: &str = "soc.csv";
pub const STORAGE_CSV: &str = "storage.csv";
pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const RESPONSE_CSV: &str = "response.csv";
pub const REPORT_JSON: &str = "report.json";

/// Rated rack power used when nothing else is given, W.
pub const DEFAULT_RACK_POWER: f64 = 10_000.0;

/// Either explicit component values or a corner-frequency design request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterChoice {
    Design {
        f_f: f64,
        l_f: f64,
        #[serde(default = "default_damping_ratio")]
        damping_ratio: f64,
    },
    Params(FilterParams),
}

fn default_damping_ratio() -> f64 {
    DEFAULT_DAMPING_RATIO
}

impl Default for FilterChoice {
    fn default() -> Self {
        FilterChoice::Design { f_f: DEFAULT_FILTER_CORNER, l_f: DEFAULT_FILTER_INDUCTANCE, damping_ratio: DEFAULT_DAMPING_RATIO }
    }
}

impl FilterChoice {
    pub fn resolve(&self) -> Result<FilterParams> {
        Ok(match *self {
            FilterChoice::Design { f_f, l_f, damping_ratio } => design_filter(f_f, l_f, damping_ratio)?,
            FilterChoice::Params(p) => p,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    Synth(SynthTrainingParams),
    File { path: PathBuf, p_rated: f64 },
}

impl Default for TraceSource {
    fn default() -> Self {
        TraceSource::Synth(SynthTrainingParams { peak_power: DEFAULT_RACK_POWER, ..Default::default() })
    }
}

/// Battery scenario run alongside the power pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SocScenario {
    pub initial_soc: f64,
    /// Run length when no explicit schedule is given, s.
    pub duration: f64,
    pub mode: Mode,
    pub schedule: Option<Schedule>,
    /// Bias current added to every step, A.
    pub drift_a: f64,
}

impl Default for SocScenario {
    fn default() -> Self {
        Self { initial_soc: 0.62, duration: 3600.0, mode: Mode::Active, schedule: None, drift_a: 1.0 }
    }
}

impl SocScenario {
    pub fn schedule(&self) -> Schedule {
        self.schedule.clone().unwrap_or_else(|| Schedule::constant(self.mode, self.duration))
    }
}

/// Everything `simulate` needs. Omitted sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub spec: GridSpec,
    pub filter: FilterChoice,
    pub ess: EssParams,
    pub battery: BatteryParams,
    pub controller: ControllerConfig,
    pub trace: TraceSource,
    pub soc: SocScenario,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spec: GridSpec::default(),
            filter: FilterChoice::default(),
            ess: EssParams { beta: DEFAULT_BETA, v_dc: DEFAULT_V_DC, p_b_limit: None },
            battery: BatteryParams::default(),
            controller: ControllerConfig::default(),
            trace: TraceSource::default(),
            soc: SocScenario::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("parsing run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.filter.resolve()?;
        self.ess.validate()?;
        self.battery.validate()?;
        self.controller.validate()?;
        self.soc.schedule().validate()?;
        match &self.trace {
            TraceSource::Synth(p) => p.validate()?,
            TraceSource::File { path, .. } if !path.is_file() => bail!("trace file {} does not exist", path.display()),
            TraceSource::File { .. } => {}
        }
        Ok(())
    }
}

/// Compliance result with violation lists cut down to their counts and the
/// first few entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceSummary {
    pub ramp_ok: bool,
    pub max_ramp: f64,
    pub ramp_violation_count: usize,
    pub spectral_ok: bool,
    pub worst_bin: (f64, f64),
    pub spectral_violation_count: usize,
    pub first_ramp_violations: Vec<(f64, f64)>,
    pub first_spectral_violations: Vec<(f64, f64)>,
}

const LISTED_VIOLATIONS: usize = 10;

impl ComplianceSummary {
    pub fn passed(&self) -> bool {
        self.ramp_ok && self.spectral_ok
    }
}

impl From<ComplianceReport> for ComplianceSummary {
    fn from(r: ComplianceReport) -> Self {
        let first = |v: &[(f64, f64)]| v.iter().take(LISTED_VIOLATIONS).copied().collect();
        Self {
            ramp_ok: r.ramp_ok,
            max_ramp: r.max_ramp,
            ramp_violation_count: r.ramp_violations.len(),
            spectral_ok: r.spectral_ok,
            worst_bin: r.worst_bin,
            spectral_violation_count: r.spectral_violations.len(),
            first_ramp_violations: first(&r.ramp_violations),
            first_spectral_violations: first(&r.spectral_violations),
        }
    }
}

pub fn cmd_synth(params: &SynthTrainingParams, out: &Path) -> Result<PowerTrace> {
    let trace = synth_training_trace(params)?;
    trace.save_csv(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(trace)
}

pub fn cmd_check(trace: &PowerTrace, spec: &GridSpec) -> Result<ComplianceSummary> {
    Ok(check_compliance(trace, spec)?.into())
}

pub fn cmd_size(p_rated: f64, p_min: f64, beta: f64, gamma: f64) -> Result<EssSizing> {
    Ok(size_ess(p_rated, p_min, beta, gamma)?)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimulateOptions {
    pub no_controller: bool,
    pub cluster: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInfo {
    pub label: String,
    pub samples: usize,
    pub dt: f64,
    pub p_rated: f64,
    pub mean_power: f64,
}

impl From<&PowerTrace> for TraceInfo {
    fn from(t: &PowerTrace) -> Self {
        Self { label: t.label().into(), samples: t.len(), dt: t.dt(), p_rated: t.p_rated(), mean_power: t.mean() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSummary {
    pub worst_case_energy_j: f64,
    pub peak_battery_w: f64,
    pub limit_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocSummary {
    pub controller_enabled: bool,
    pub drift_a: f64,
    pub initial: f64,
    pub final_soc: f64,
    pub min: f64,
    pub max: f64,
    pub saturated_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub cluster_racks: usize,
    pub trace: TraceInfo,
    pub raw: ComplianceSummary,
    pub grid: ComplianceSummary,
    pub storage: StorageSummary,
    pub filter: FilterParams,
    pub soc: SocSummary,
    /// Whether the conditioned grid trace meets both limits.
    pub passed: bool,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn load_source(cfg: &RunConfig, seed: Option<u64>) -> Result<PowerTrace> {
    Ok(match &cfg.trace {
        TraceSource::Synth(p) => {
            let mut p = p.clone();
            if let Some(seed) = seed {
                p.jitter_seed = seed;
            }
            synth_training_trace(&p)?
        }
        TraceSource::File { path, p_rated } => load_trace(path, *p_rated)?,
    })
}

/// Full run: rack trace through storage and filter, compliance of both ends,
/// and a battery controller scenario. Writes the fixed output files to `out`.
pub fn cmd_simulate(cfg: &RunConfig, opts: &SimulateOptions, out: &Path) -> Result<SimReport> {
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut rack = load_source(cfg, opts.seed)?;
    let cluster_racks = opts.cluster.unwrap_or(1);
    if cluster_racks != 1 {
        rack = aggregate_synchronous(&rack, &ClusterConfig::synchronous(cluster_racks))?;
    }

    let pipeline = Pipeline { ess: cfg.ess, filter: cfg.filter.resolve()? };
    let conditioned = pipeline.condition(&rack)?;
    let raw = cmd_check(&rack, &cfg.spec)?;
    let grid = cmd_check(&conditioned.grid, &cfg.spec)?;

    conditioned.grid.write_csv(create(out, GRID_CSV)?)?;
    let mut w = create(out, STORAGE_CSV)?;
    conditioned.ess.write_csv(&rack, &mut w)?;
    w.flush()?;

    spectrum(&conditioned.grid)?.write_csv(create(out, SPECTRUM_CSV)?)?;

    let freqs = log_space(1e-3, 0.5 / rack.dt(), 200);
    let mut w = create(out, RESPONSE_CSV)?;
    writeln!(w, "freq_hz,mag")?;
    for (f, m) in freqs.iter().zip(pipeline.response(&freqs)) {
        writeln!(w, "{f},{m}")?;
    }
    w.flush()?;

    let run_opts = RunOptions {
        drift: if cfg.soc.drift_a == 0.0 { DriftModel::None } else { DriftModel::BiasCurrent(cfg.soc.drift_a) },
        controller_enabled: !opts.no_controller,
        ..Default::default()
    };
    let initial = BatteryState { soc: cfg.soc.initial_soc, timestamp: 0.0 };
    let run = run_controller(&cfg.soc.schedule(), initial, &cfg.controller, &cfg.battery, &run_opts)?;
    run.write_csv(create(out, SOC_CSV)?)?;
    let socs = run.soc();

    let peak_battery_w = conditioned.ess.battery_power.iter().fold(0.0_f64, |m, p| m.max(p.abs()));
    let report = SimReport {
        cluster_racks,
        trace: (&rack).into(),
        passed: grid.passed(),
        raw,
        grid,
        storage: StorageSummary {
            worst_case_energy_j: conditioned.ess.worst_case_energy(),
            peak_battery_w,
            limit_violations: conditioned.ess.limit_violations.len(),
        },
        filter: pipeline.filter,
        soc: SocSummary {
            controller_enabled: run_opts.controller_enabled,
            drift_a: cfg.soc.drift_a,
            initial: cfg.soc.initial_soc,
            final_soc: run.final_soc(),
            min: socs.iter().copied().fold(f64::INFINITY, f64::min),
            max: socs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            saturated_steps: run.saturated_steps,
        },
    };
    let mut w = create(out, REPORT_JSON)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(report)
}

/// Reload the report of an earlier `simulate` run.
pub fn cmd_report(dir: &Path) -> Result<SimReport> {
    let path = dir.join(REPORT_JSON);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub scenario: String,
    pub burn_energy_j: f64,
    pub conditioned_energy_j: f64,
    pub ratio: f64,
    /// Closed-form ratio when the scenario has one.
    pub expected_ratio: Option<f64>,
    pub burn_ramp_ok: bool,
}

#[derive(Debug, Clone)]
pub enum CompareScenario {
    /// Calibrate a synthetic GPU and shape a training job with it.
    Schedule { schedule: BurnSchedule, gpu: SyntheticGpu, dt: f64 },
    Idle(IdleScenario),
}

/// Calibration sweep: duties 0, 0.05, ..., 1 with ten windows each.
pub fn calibration_duties() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

fn energy(t: &PowerTrace) -> f64 {
    t.samples().windows(2).map(|w| 0.5 * (w[0] + w[1]) * t.dt()).sum()
}

/// Burn baseline against the same job conditioned by storage and filter.
pub fn cmd_compare(scenario: &CompareScenario, pipeline: &Pipeline, spec: &GridSpec) -> Result<CompareReport> {
    let (name, burn, job, expected) = match scenario {
        CompareScenario::Schedule { schedule, gpu, dt } => {
            let model = calibrate(gpu, &calibration_duties(), 10)?;
            let burn = schedule_burn(schedule, &model, *dt)?;
            let job = raw_job_trace(schedule, &model, *dt)?;
            check_floor(&burn, &job).context("burn schedule drops below the job it shapes")?;
            ("schedule", burn, job, None)
        }
        CompareScenario::Idle(sc) => {
            let (burn, job) = sc.traces()?;
            ("idle", burn, job, Some(sc.expected_ratio()))
        }
    };
    let conditioned = pipeline.condition(&job)?.grid;
    let ratio = compare_energy(&burn, &conditioned)?;
    let burn_ramp_ok = ramp_rate(&burn).iter().all(|r| r.abs() <= spec.beta);
    Ok(CompareReport {
        scenario: name.into(),
        burn_energy_j: energy(&burn),
        conditioned_energy_j: energy(&conditioned),
        ratio,
        expected_ratio: expected,
        burn_ramp_ok,
    })
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use powersmooth::burn::{BurnSchedule, IdleScenario, SyntheticGpu};
use powersmooth::compliance::GridSpec;
use powersmooth::pipeline::Pipeline;
use powersmooth::trace::{load_trace, SynthTrainingParams, DEFAULT_DIP_DURATION, DEFAULT_DT};
use powersmooth_cli::*;
use serde::Serialize;

/// Rack power smoothing experiments: synthesize traces, check grid limits,
/// size storage, simulate the conditioning chain and compare with a burn
/// baseline.
///
/// Exit codes: 0 pass, 1 limit violations, 2 usage or invalid parameters.
#[derive(Parser)]
#[command(name = "powersmooth", version)]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random source.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a periodic training trace with rectangular dips.
    Synth(SynthArgs),
    /// Check a trace CSV against ramp and spectral limits.
    Check(CheckArgs),
    /// Minimum storage energy and power for a load swing.
    Size(SizeArgs),
    /// Run the storage + filter chain and a battery scenario.
    Simulate(SimulateArgs),
    /// Energy of a burn baseline relative to the conditioned job.
    Compare(CompareArgs),
    /// Summarize the report of an earlier simulate run.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Seconds between dips.
    #[arg(long, default_value_t = 22.0)]
    period: f64,
    /// Fractional dip depth.
    #[arg(long, default_value_t = 0.8)]
    dip: f64,
    /// Dip length, s.
    #[arg(long, default_value_t = DEFAULT_DIP_DURATION)]
    dip_duration: f64,
    /// Total length, s.
    #[arg(long, default_value_t = 220.0)]
    duration: f64,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    /// Peak power, W.
    #[arg(long, default_value_t = DEFAULT_RACK_POWER)]
    peak: f64,
    /// Randomize dip starts (uses --seed).
    #[arg(long)]
    jitter: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpecArgs {
    /// Spectral limit on S(f).
    #[arg(long, default_value_t = GridSpec::default().alpha)]
    alpha: f64,
    /// Lowest frequency the spectral limit applies to, Hz.
    #[arg(long, default_value_t = GridSpec::default().f_c)]
    f_c: f64,
    /// Ramp limit, fraction of rated power per second.
    #[arg(long, default_value_t = GridSpec::default().beta)]
    beta: f64,
}

impl SpecArgs {
    fn spec(&self) -> GridSpec {
        GridSpec { alpha: self.alpha, f_c: self.f_c, beta: self.beta }
    }
}

#[derive(Args)]
struct CheckArgs {
    trace: PathBuf,
    /// Rated power, W; defaults to the trace peak.
    #[arg(long)]
    p_rated: Option<f64>,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args)]
struct SizeArgs {
    #[arg(long)]
    p_rated: f64,
    #[arg(long)]
    p_min: f64,
    /// Storage control rate, 1/s.
    #[arg(long)]
    beta: f64,
    /// Usable fraction of installed capacity.
    #[arg(long)]
    gamma: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Run config JSON; defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rack trace CSV, overriding the config's trace source.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Rated rack power for --trace, W; defaults to the trace peak.
    #[arg(long, requires = "trace")]
    p_rated: Option<f64>,
    /// Run the battery scenario open loop.
    #[arg(long)]
    no_controller: bool,
    /// Aggregate this many synchronous racks.
    #[arg(long)]
    cluster: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Burn schedule JSON; defaults to the built-in schedule.
    #[arg(long, conflicts_with = "idle")]
    schedule: Option<PathBuf>,
    /// Use the constructed idle-fraction scenario instead of a schedule.
    #[arg(long)]
    idle: bool,
    /// Idle fraction of each cycle for --idle.
    #[arg(long, default_value_t = IdleScenario::default().idle_fraction, requires = "idle")]
    idle_fraction: f64,
    /// Measurement noise of the synthetic GPU, W.
    #[arg(long, default_value_t = 2.0)]
    gpu_noise: f64,
    /// Sample interval of the shaped trace, s.
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    /// Storage control rate, 1/s.
    #[arg(long, default_value_t = GridSpec::default().beta)]
    beta: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a simulate run.
    dir: PathBuf,
}

/// Outcome of a command: what to print and whether limits were met.
struct Outcome {
    text: String,
    json: serde_json::Value,
    passed: bool,
}

impl Outcome {
    fn new(text: String, value: &impl Serialize, passed: bool) -> Result<Self> {
        Ok(Self { text, json: serde_json::to_value(value)?, passed })
    }
}

fn compliance_text(name: &str, s: &ComplianceSummary) -> String {
    let verdict = |ok| if ok { "ok" } else { "VIOLATION" };
    format!(
        "{name}: ramp {} (max {:.4}/s, {} violations); spectrum {} (worst S={:.3e} at {:.3} Hz, {} violations)",
        verdict(s.ramp_ok),
        s.max_ramp,
        s.ramp_violation_count,
        verdict(s.spectral_ok),
        s.worst_bin.1,
        s.worst_bin.0,
        s.spectral_violation_count
    )
}

fn sim_text(r: &SimReport) -> String {
    let mut lines = vec![
        format!("trace: {} ({} samples, {} W rated, {} racks)", r.trace.label, r.trace.samples, r.trace.p_rated, r.cluster_racks),
        compliance_text("raw", &r.raw),
        compliance_text("grid", &r.grid),
        format!("storage: worst-case energy {:.1} J, peak power {:.1} W", r.storage.worst_case_energy_j, r.storage.peak_battery_w),
        format!(
            "soc: {:.4} -> {:.4} (range {:.4}..{:.4}, controller {})",
            r.soc.initial,
            r.soc.final_soc,
            r.soc.min,
            r.soc.max,
            if r.soc.controller_enabled { "on" } else { "off" }
        ),
    ];
    lines.push(if r.passed { "PASS".into() } else { "FAIL".into() });
    lines.join("\n")
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Synth(a) => {
            let params = SynthTrainingParams {
                period: a.period,
                dip_fraction: a.dip,
                dip_duration: a.dip_duration,
                peak_power: a.peak,
                total_duration: a.duration,
                dt: a.dt,
                jitter: a.jitter,
                jitter_seed: cli.seed.unwrap_or(0),
                ..Default::default()
            };
            let t = cmd_synth(&params, &a.out)?;
            let info = TraceInfo::from(&t);
            Outcome::new(format!("wrote {} samples to {}", t.len(), a.out.display()), &info, true)
        }
        Command::Check(a) => {
            let trace = match a.p_rated {
                Some(p) => load_trace(&a.trace, p)?,
                None => {
                    let peak = load_trace(&a.trace, f64::MAX)?.max();
                    load_trace(&a.trace, peak)?
                }
            };
            let s = cmd_check(&trace, &a.spec.spec())?;
            let passed = s.passed();
            Outcome::new(compliance_text("check", &s), &s, passed)
        }
        Command::Size(a) => {
            let s = cmd_size(a.p_rated, a.p_min, a.beta, a.gamma)?;
            let text = format!(
                "epsilon = {}\nE_B >= {} J\nP_B >= {} W\nworst-case swing = {} J",
                s.epsilon, s.e_b_min, s.p_b_min, s.delta_e_max
            );
            Outcome::new(text, &s, true)
        }
        Command::Simulate(a) => {
            let mut cfg = match &a.config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            if let Some(path) = a.trace {
                let p_rated = match a.p_rated {
                    Some(p) => p,
                    None => load_trace(&path, f64::MAX)?.max(),
                };
                cfg.trace = TraceSource::File { path, p_rated };
            }
            let opts = SimulateOptions { no_controller: a.no_controller, cluster: a.cluster, seed: cli.seed };
            let r = cmd_simulate(&cfg, &opts, &a.out)?;
            Outcome::new(sim_text(&r), &r, r.passed)
        }
        Command::Compare(a) => {
            let scenario = if a.idle {
                CompareScenario::Idle(IdleScenario { idle_fraction: a.idle_fraction, ..Default::default() })
            } else {
                let schedule = match &a.schedule {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                        serde_json::from_str(&text).context("parsing burn schedule")?
                    }
                    None => BurnSchedule::default(),
                };
                let gpu = SyntheticGpu { true_a: 150.0, true_b: 50.0, noise_sigma: a.gpu_noise, seed: cli.seed.unwrap_or(0) };
                CompareScenario::Schedule { schedule, gpu, dt: a.dt }
            };
            let pipeline = Pipeline { ess: powersmooth::EssParams::new(a.beta, powersmooth::pipeline::DEFAULT_V_DC)?, ..Default::default() };
            let r = cmd_compare(&scenario, &pipeline, &GridSpec { beta: a.beta, ..Default::default() })?;
            let mut text = format!(
                "burn {:.1} J vs conditioned {:.1} J: ratio {:.4}",
                r.burn_energy_j, r.conditioned_energy_j, r.ratio
            );
            if let Some(e) = r.expected_ratio {
                text.push_str(&format!(" (lossless {e:.4})"));
            }
            Outcome::new(text, &r, true)
        }
        Command::Report(a) => {
            let r = cmd_report(&a.dir)?;
            Outcome::new(sim_text(&r), &r, r.passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                println!("{}", out.json);
            } else {
                println!("{}", out.text);
            }
            ExitCode::from(if out.passed { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

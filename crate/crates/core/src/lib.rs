//! Simulation and compliance toolkit for smoothing rack-level power transients.
//!
//! The crate models a rack power path made of a passive damped LC input filter
//! and an actively controlled energy-storage branch, checks arbitrary power
//! traces against grid ramp-rate and spectral limits, manages battery state of
//! charge with a two-loop controller, and simulates a software power-burn
//! baseline for energy comparison.
//!
//! Modules map onto the stages of a typical experiment:
//!
//! - [`trace`]: uniformly sampled power traces (CSV ingest, synthesis, resampling)
//! - [`compliance`]: ramp rates, normalized spectra and grid-limit checks
//! - [`filter`]: damped LC input filter design, frequency response and exact LTI simulation
//! - [`ess`]: storage smoothing law and component sizing
//! - [`soc`]: battery state-of-charge model, target selection and receding-horizon QP
//! - [`burn`]: duty-cycle calibration and power-shaped training schedules
//! - [`cluster`]: synchronous and skewed aggregation of rack traces
//! - [`pipeline`]: storage + filter composition used by the CLI

pub mod burn;
pub mod cluster;
pub mod compliance;
pub mod ess;
pub mod filter;
pub mod pipeline;
pub mod qp;
pub mod soc;
pub mod trace;

pub use compliance::{check_compliance, ramp_rate, spectrum, ComplianceReport, GridSpec, Spectrum};
pub use ess::{simulate_ess, size_ess, EssParams, EssSimResult, EssSizing};
pub use filter::{design_filter, frequency_response, simulate_filter, FilterParams};
pub use trace::{load_trace, resample, synth_training_trace, PowerTrace, SynthTrainingParams};

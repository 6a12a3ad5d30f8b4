//! Second-order LC input filter with a parallel R–L damping leg.
//!
//! Topology, grid side to rack side: the source inductor `L_F` carries grid
//! current into a node shunted by `C_F`; the damping leg (`R_Da` in series
//! with `L_Da`) sits in parallel with `L_F`. The rack-side load draws current
//! from the capacitor node. With `Z_p = sL_F (R_Da + sL_Da) / (R_Da + s(L_F + L_Da))`
//! the grid-current transfer is
//!
//! ```text
//!            i_grid            R + s(L + Ld)
//!   H(s) = ---------- = -----------------------------------
//!            i_rack       s^3 L C Ld + s^2 L C R + s(L + Ld) + R
//! ```
//!
//! and without the damping leg it reduces to `1 / (1 + s^2 L C)`.
//! The leg carries no current in steady state, so DC gain is exactly 1.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::trace::{PowerTrace, TraceError};

/// Default `L_Da / L_F`.
pub const DEFAULT_LEG_RATIO: f64 = 0.05;
/// Default `R_Da / sqrt(L_F / C_F)`.
pub const DEFAULT_DAMPING_RATIO: f64 = 0.4;

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("invalid filter parameters: {0}")]
    InvalidParams(String),
    #[error("trace dt {dt} s is too coarse for the filter; need dt <= {max_dt} s")]
    TimestepTooCoarse { dt: f64, max_dt: f64 },
    #[error("state matrix norm {0:e} at this step is too large to discretize")]
    TooStiff(f64),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingLeg {
    pub r_da: f64,
    pub l_da: f64,
}

/// Sizing rule for the damping leg: `l_da = leg_ratio * l_f`,
/// `r_da = damping_ratio * sqrt(l_f / c_f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DampingRule {
    pub leg_ratio: f64,
    pub damping_ratio: f64,
}

impl Default for DampingRule {
    fn default() -> Self {
        Self { leg_ratio: DEFAULT_LEG_RATIO, damping_ratio: DEFAULT_DAMPING_RATIO }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterParamsRepr {
    l_f: f64,
    c_f: f64,
    #[serde(default)]
    r_da: Option<f64>,
    #[serde(default)]
    l_da: Option<f64>,
}

/// Component values of the input filter. `f_f` is derived on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FilterParamsRepr", into = "FilterParamsRepr")]
pub struct FilterParams {
    l_f: f64,
    c_f: f64,
    damping: Option<DampingLeg>,
    f_f: f64,
}

impl TryFrom<FilterParamsRepr> for FilterParams {
    type Error = FilterError;

    fn try_from(r: FilterParamsRepr) -> Result<Self, Self::Error> {
        let damping = match (r.r_da, r.l_da) {
            (Some(r_da), Some(l_da)) => Some(DampingLeg { r_da, l_da }),
            (None, None) => None,
            _ => return Err(FilterError::InvalidParams("r_da and l_da must be given together".into())),
        };
        FilterParams::new(r.l_f, r.c_f, damping)
    }
}

impl From<FilterParams> for FilterParamsRepr {
    fn from(p: FilterParams) -> Self {
        Self {
            l_f: p.l_f,
            c_f: p.c_f,
            r_da: p.damping.map(|d| d.r_da),
            l_da: p.damping.map(|d| d.l_da),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), FilterError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(FilterError::InvalidParams(format!("{name} must be > 0, got {v}")))
    }
}

impl FilterParams {
    pub fn new(l_f: f64, c_f: f64, damping: Option<DampingLeg>) -> Result<Self, FilterError> {
        positive("l_f", l_f)?;
        positive("c_f", c_f)?;
        if let Some(leg) = damping {
            positive("r_da", leg.r_da)?;
            positive("l_da", leg.l_da)?;
        }
        let f_f = 1.0 / (2.0 * PI * (l_f * c_f).sqrt());
        Ok(Self { l_f, c_f, damping, f_f })
    }

    /// Plain LC filter, damping leg removed.
    pub fn undamped(l_f: f64, c_f: f64) -> Result<Self, FilterError> {
        Self::new(l_f, c_f, None)
    }

    pub fn l_f(&self) -> f64 {
        self.l_f
    }

    pub fn c_f(&self) -> f64 {
        self.c_f
    }

    pub fn damping(&self) -> Option<DampingLeg> {
        self.damping
    }

    /// LC corner `1 / (2 pi sqrt(L_F C_F))`.
    pub fn f_f(&self) -> f64 {
        self.f_f
    }

    /// Characteristic impedance `sqrt(L_F / C_F)`.
    pub fn z0(&self) -> f64 {
        (self.l_f / self.c_f).sqrt()
    }

    pub fn without_damping(&self) -> Self {
        Self { damping: None, ..*self }
    }

    /// Complex grid-current transfer `H(j 2 pi f)`.
    pub fn transfer(&self, freq: f64) -> Complex64 {
        let s = Complex64::new(0.0, 2.0 * PI * freq);
        let (l, c) = (self.l_f, self.c_f);
        match self.damping {
            None => Complex64::new(1.0, 0.0) / (1.0 + s * s * l * c),
            Some(DampingLeg { r_da: r, l_da: ld }) => {
                let num = r + s * (l + ld);
                let den = s * s * s * (l * c * ld) + s * s * (l * c * r) + s * (l + ld) + r;
                num / den
            }
        }
    }

    /// Continuous-time state space `(A, B, C)` with the rack current as input
    /// and grid current as output. States: `[i_Lf, i_Lda, v_C]` (or
    /// `[i_Lf, v_C]` without damping), `v_C` measured as deviation from the
    /// source voltage.
    pub fn state_space(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let (l, c) = (self.l_f, self.c_f);
        match self.damping {
            None => (
                DMatrix::from_row_slice(2, 2, &[0.0, -1.0 / l, 1.0 / c, 0.0]),
                DVector::from_vec(vec![0.0, -1.0 / c]),
                DVector::from_vec(vec![1.0, 0.0]),
            ),
            Some(DampingLeg { r_da: r, l_da: ld }) => (
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[0.0, 0.0, -1.0 / l, 0.0, -r / ld, -1.0 / ld, 1.0 / c, 1.0 / c, 0.0],
                ),
                DVector::from_vec(vec![0.0, 0.0, -1.0 / c]),
                DVector::from_vec(vec![1.0, 1.0, 0.0]),
            ),
        }
    }
}

/// Size `C_F` for a target corner and attach a damping leg with the default
/// leg ratio and the given damping ratio.
pub fn design_filter(f_f: f64, l_f: f64, damping_ratio: f64) -> Result<FilterParams, FilterError> {
    design_filter_with(f_f, l_f, DampingRule { damping_ratio, ..DampingRule::default() })
}

pub fn design_filter_with(f_f: f64, l_f: f64, rule: DampingRule) -> Result<FilterParams, FilterError> {
    positive("f_f", f_f)?;
    positive("l_f", l_f)?;
    positive("leg_ratio", rule.leg_ratio)?;
    positive("damping_ratio", rule.damping_ratio)?;
    let omega = 2.0 * PI * f_f;
    let c_f = 1.0 / (omega * omega * l_f);
    let leg = DampingLeg { r_da: rule.damping_ratio * (l_f / c_f).sqrt(), l_da: rule.leg_ratio * l_f };
    let mut params = FilterParams::new(l_f, c_f, Some(leg))?;
    // report the requested corner rather than the rounded reconstruction
    params.f_f = f_f;
    Ok(params)
}

/// `|H(j 2 pi f)|` at each frequency.
pub fn frequency_response(params: &FilterParams, freqs: &[f64]) -> Vec<f64> {
    freqs.iter().map(|&f| params.transfer(f).norm()).collect()
}

/// Largest `|[[A, B], [0, 0]] dt|_1` accepted by [`discretize`]; the matrix
/// exponential stops converging in reasonable time well beyond this.
pub const MAX_SCALED_NORM: f64 = 1e24;

/// Zero-order-hold discretization `(Phi, Gamma)` of the filter at step `dt`,
/// via the exponential of the augmented matrix `[[A, B], [0, 0]] * dt`.
pub fn discretize(params: &FilterParams, dt: f64) -> Result<(DMatrix<f64>, DVector<f64>), FilterError> {
    positive("dt", dt)?;
    let (a, b, _) = params.state_space();
    let n = a.nrows();
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, 1)).copy_from(&(b * dt));
    let norm = aug.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    if !(norm <= MAX_SCALED_NORM) {
        return Err(FilterError::TooStiff(norm));
    }
    let e = aug.exp();
    let phi = e.view((0, 0), (n, n)).into_owned();
    let gamma = e.view((0, n), (n, 1)).column(0).into_owned();
    Ok((phi, gamma))
}

/// Grid-side power after the filter for a rack power trace.
///
/// Power is converted to current at the fixed bus voltage `v_dc`, held
/// constant over each sample interval, and stepped exactly with the
/// matrix-exponential discretization. The filter starts in DC equilibrium
/// for the first sample. The returned trace is unclamped because a resonant
/// filter can overshoot the rack's range.
pub fn simulate_filter(params: &FilterParams, rack: &PowerTrace, v_dc: f64) -> Result<PowerTrace, FilterError> {
    positive("v_dc", v_dc)?;
    let dt = rack.dt();
    let max_dt = 1.0 / (20.0 * params.f_f());
    if dt > max_dt * (1.0 + 1e-12) {
        return Err(FilterError::TimestepTooCoarse { dt, max_dt });
    }
    let (phi, gamma) = discretize(params, dt)?;
    let (_, _, c) = params.state_space();
    let inputs: Vec<f64> = rack.samples().iter().map(|p| p / v_dc).collect();

    let mut x = DVector::zeros(phi.nrows());
    x[0] = inputs[0];
    let mut next = DVector::zeros(phi.nrows());
    let mut out = Vec::with_capacity(inputs.len());
    for &u in &inputs {
        out.push(c.dot(&x) * v_dc);
        phi.mul_to(&x, &mut next);
        next.axpy(u, &gamma, 1.0);
        std::mem::swap(&mut x, &mut next);
    }
    Ok(PowerTrace::unclamped(out, dt, rack.p_rated(), format!("{} filtered", rack.label()))?)
}

/// Write `freq_hz,mag` rows.
pub fn write_response_csv<W: Write>(freqs: &[f64], mags: &[f64], writer: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["freq_hz", "mag"]).map_err(std::io::Error::other)?;
    for (f, m) in freqs.iter().zip(mags) {
        out.write_record([f.to_string(), m.to_string()]).map_err(std::io::Error::other)?;
    }
    out.flush()
}

/// `count` log-spaced frequencies from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count.max(2) - 1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absurdly_stiff_leg_is_rejected() {
        let p = FilterParams::new(0.1, 0.5, Some(DampingLeg { r_da: 1.01e38, l_da: 0.005 })).unwrap();
        assert!(matches!(discretize(&p, 1.0 / (20.0 * p.f_f())), Err(FilterError::TooStiff(_))));
        let ok = FilterParams::new(0.1, 0.5, Some(DampingLeg { r_da: 1e15, l_da: 0.005 })).unwrap();
        assert!(discretize(&ok, 1.0 / (20.0 * ok.f_f())).is_ok());
    }

    #[test]
    fn design_sizes_capacitor() {
        let p = design_filter(4.0, 0.1, 1.0).unwrap();
        assert!((p.c_f() - 1.5831e-2).abs() < 1e-6, "{}", p.c_f());
        assert_eq!(p.f_f(), 4.0);
        let rebuilt = 1.0 / (2.0 * PI * (p.l_f() * p.c_f()).sqrt());
        assert!((rebuilt - 4.0).abs() / 4.0 < 1e-12);
    }

    #[test]
    fn corner_from_components() {
        let p = FilterParams::undamped(1e-3, 1.6e-3).unwrap();
        assert!((p.f_f() - 125.8).abs() < 0.05, "{}", p.f_f());
    }

    #[test]
    fn damping_rule_values() {
        let p = design_filter_with(2.0, 0.5, DampingRule { leg_ratio: 4.0, damping_ratio: 1.5 }).unwrap();
        let leg = p.damping().unwrap();
        assert!((leg.l_da - 2.0).abs() < 1e-15);
        assert!((leg.r_da - 1.5 * p.z0()).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_components() {
        assert!(design_filter(0.0, 0.1, 1.0).is_err());
        assert!(design_filter(4.0, -0.1, 1.0).is_err());
        assert!(FilterParams::new(0.1, 0.1, Some(DampingLeg { r_da: 0.0, l_da: 1.0 })).is_err());
    }

    #[test]
    fn passes_dc_and_low_frequencies() {
        let p = design_filter(4.0, 0.1, 1.0).unwrap();
        assert!((frequency_response(&p, &[0.04])[0] - 1.0).abs() < 1e-3);
        assert!((p.transfer(0.0).re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn undamped_decade_above_corner() {
        let p = design_filter(4.0, 0.1, 1.0).unwrap().without_damping();
        let h = frequency_response(&p, &[40.0])[0];
        assert!((h - 1.0 / 99.0).abs() < 1e-12, "{h}");
    }

    #[test]
    fn finite_gain_at_corner() {
        for ratio in [0.2, 0.4, 1.0, 3.0] {
            let p = design_filter(4.0, 0.1, ratio).unwrap();
            let h = frequency_response(&p, &[4.0])[0];
            assert!(h.is_finite() && h <= 10.0, "ratio {ratio}: {h}");
        }
    }

    #[test]
    fn json_round_trip_recomputes_corner() {
        let p = design_filter(4.0, 0.1, 0.4).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"r_da\""));
        let back: FilterParams = serde_json::from_str(&text).unwrap();
        assert!((back.f_f() - 4.0).abs() < 1e-12);
        assert!(serde_json::from_str::<FilterParams>(r#"{"l_f":0.1,"c_f":0.01,"r_da":1.0}"#).is_err());
        assert!(serde_json::from_str::<FilterParams>(r#"{"l_f":-0.1,"c_f":0.01}"#).is_err());
    }

    #[test]
    fn coarse_timestep_rejected() {
        let p = design_filter(4.0, 0.1, 0.4).unwrap();
        let t = PowerTrace::new(vec![1.0; 10], 0.02, 1.0, "").unwrap();
        assert!(matches!(simulate_filter(&p, &t, 400.0), Err(FilterError::TimestepTooCoarse { .. })));
    }

    #[test]
    fn constant_input_passes_unchanged() {
        let p = design_filter(0.5, 0.1, 0.4).unwrap();
        let t = PowerTrace::new(vec![7.5; 500], 0.01, 10.0, "").unwrap();
        let out = simulate_filter(&p, &t, 400.0).unwrap();
        assert!(out.samples().iter().all(|&v| (v - 7.5).abs() < 1e-9));
    }
}

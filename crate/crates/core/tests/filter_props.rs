use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use powersmooth::compliance::dft_magnitudes;
use powersmooth::filter::{
    design_filter, design_filter_with, frequency_response, log_space, simulate_filter, DampingLeg, DampingRule,
    FilterParams,
};
use powersmooth::trace::PowerTrace;
use proptest::prelude::*;

const V_DC: f64 = 400.0;

/// Steady-state gain of a simulated on-bin sinusoid, read from the DFT of an
/// integer number of periods after the transient has died out.
pub fn simulated_gain(params: &FilterParams, freq: f64) -> f64 {
    let dt = (0.005 / freq).min(1.0 / (20.0 * params.f_f()));
    let settle = 40.0 / params.f_f();
    let per_period = (1.0 / (freq * dt)).round() as usize;
    let dt = 1.0 / (freq * per_period as f64);
    let periods = 20;
    let skip = (settle / dt).ceil() as usize;
    let n = skip + periods * per_period;
    let (mean, amp) = (1000.0, 200.0);
    let input: Vec<f64> = (0..n).map(|k| mean + amp * (2.0 * PI * freq * k as f64 * dt).sin()).collect();
    let rack = PowerTrace::new(input, dt, 2000.0, "").unwrap();
    let out = simulate_filter(params, &rack, V_DC).unwrap();
    let tail = &out.samples()[skip..];
    let x = dft_magnitudes(tail);
    let measured = 2.0 * x[periods] / tail.len() as f64;
    // zero-order hold scales the input fundamental by sinc(pi f dt)
    let arg = PI * freq * dt;
    measured / (amp * arg.sin() / arg)
}

#[test]
fn time_and_frequency_domain_agree() {
    let params = design_filter(4.0, 0.1, 0.4).unwrap();
    for f in log_space(0.4, 400.0, 10) {
        let want = frequency_response(&params, &[f])[0];
        let got = simulated_gain(&params, f);
        assert!((got - want).abs() <= 1e-3 * want, "f={f}: {got} vs {want}");
    }
}

#[test]
fn undamped_slope_is_minus_two() {
    let p = design_filter(4.0, 0.1, 1.0).unwrap().without_damping();
    let h = frequency_response(&p, &[40.0, 400.0]);
    let slope = (h[1] / h[0]).log10();
    assert!((slope + 2.0).abs() <= 0.04, "{slope}");
}

#[test]
fn default_design_rolls_off_monotonically() {
    for f_f in [0.5, 4.0, 125.0] {
        let p = design_filter(f_f, 0.1, powersmooth::filter::DEFAULT_DAMPING_RATIO).unwrap();
        let freqs = log_space(2.0 * f_f, 1000.0 * f_f, 400);
        let h = frequency_response(&p, &freqs);
        assert!(h.windows(2).all(|w| w[1] <= w[0]), "f_f={f_f}");
        let peak = frequency_response(&p, &log_space(0.01 * f_f, 100.0 * f_f, 2000)).into_iter().fold(0.0, f64::max);
        assert!(peak <= 10.0);
    }
}

/// Roots of the closed-form denominator `L C Ld s^3 + L C R s^2 + (L + Ld) s + R`
/// via the companion matrix.
fn denominator_roots(p: &FilterParams) -> Vec<Complex<f64>> {
    let DampingLeg { r_da: r, l_da: ld } = p.damping().unwrap();
    let (l, c) = (p.l_f(), p.c_f());
    let a3 = l * c * ld;
    let (a2, a1, a0) = (l * c * r / a3, (l + ld) / a3, r / a3);
    let companion = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, -a0, 1.0, 0.0, -a1, 0.0, 1.0, -a2]);
    companion.complex_eigenvalues().iter().copied().collect()
}

#[test]
fn step_ringing_decays_at_complex_pole_rate() {
    // lightly damped so several ringing periods are visible
    let p = design_filter_with(4.0, 0.1, DampingRule { leg_ratio: 4.0, damping_ratio: 1.0 }).unwrap();
    let roots = denominator_roots(&p);
    let pair = roots.iter().find(|z| z.im > 1e-9).unwrap();
    assert!((pair.im / (2.0 * PI) - 4.0).abs() < 1.0, "ringing near f_f");

    let dt = 1e-3;
    let n = 12_000;
    let input: Vec<f64> = (0..n).map(|k| if k < 100 { 2000.0 } else { 1000.0 }).collect();
    let out = simulate_filter(&p, &PowerTrace::new(input, dt, 2000.0, "").unwrap(), V_DC).unwrap();
    let dev: Vec<f64> = out.samples().iter().map(|y| y - 1000.0).collect();

    // peaks of |deviation| after the real pole has died out
    let real = roots.iter().find(|z| z.im.abs() < 1e-9).unwrap().re;
    let start = 100 + (8.0 / -real / dt) as usize;
    let mut peaks = Vec::new();
    for k in start + 1..n - 1 {
        let (a, b, c) = (dev[k - 1].abs(), dev[k].abs(), dev[k + 1].abs());
        if b > a && b >= c && b > 1e-6 {
            peaks.push(((k - 100) as f64 * dt, b.ln()));
        }
    }
    assert!(peaks.len() > 20);
    let m = peaks.len() as f64;
    let tx = peaks.iter().map(|p| p.0).sum::<f64>() / m;
    let ty = peaks.iter().map(|p| p.1).sum::<f64>() / m;
    let slope = peaks.iter().map(|p| (p.0 - tx) * (p.1 - ty)).sum::<f64>() / peaks.iter().map(|p| (p.0 - tx).powi(2)).sum::<f64>();
    let decay = -slope;
    assert!((decay - (-pair.re)).abs() <= 0.05 * -pair.re, "fitted {decay} vs pole {}", -pair.re);
}

#[test]
fn step_settles_to_input() {
    let p = design_filter(0.5, 0.1, 0.4).unwrap();
    let input: Vec<f64> = (0..6000).map(|k| if k < 10 { 500.0 } else { 900.0 }).collect();
    let out = simulate_filter(&p, &PowerTrace::new(input, 0.01, 1000.0, "").unwrap(), V_DC).unwrap();
    assert!((out.samples()[5999] - 900.0).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn finite_damping_is_stable(
        l_f in 1e-4f64..1.0,
        c_f in 1e-5f64..1.0,
        r_da in 1e-3f64..1e3,
        l_da in 1e-4f64..10.0,
    ) {
        let p = FilterParams::new(l_f, c_f, Some(DampingLeg { r_da, l_da })).unwrap();
        let (a, _, _) = p.state_space();
        for z in a.complex_eigenvalues().iter() {
            prop_assert!(z.re < 0.0, "{}", z);
        }
    }

    #[test]
    fn corner_round_trip(f_f in 0.01f64..1e4, l_f in 1e-6f64..10.0, ratio in 0.05f64..5.0) {
        let p = design_filter(f_f, l_f, ratio).unwrap();
        let rebuilt = 1.0 / (2.0 * PI * (p.l_f() * p.c_f()).sqrt());
        prop_assert!((rebuilt - f_f).abs() <= 1e-12 * f_f);
        prop_assert_eq!(p.f_f(), f_f);
    }

    #[test]
    fn dc_gain_is_one(f_f in 0.1f64..100.0, ratio in 0.05f64..5.0) {
        let p = design_filter(f_f, 0.1, ratio).unwrap();
        let h = frequency_response(&p, &[f_f * 1e-4])[0];
        prop_assert!((h - 1.0).abs() < 1e-6);
    }
}

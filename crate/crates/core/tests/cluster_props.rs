use powersmooth::cluster::{aggregate_skewed, aggregate_synchronous, aggregate_with_offsets, ClusterConfig};
use powersmooth::compliance::{dft_magnitudes, ramp_rate, spectrum};
use powersmooth::trace::{synth_training_trace, PowerTrace, SynthTrainingParams};
use proptest::prelude::*;

fn rack() -> PowerTrace {
    synth_training_trace(&SynthTrainingParams { peak_power: 10_000.0, ..Default::default() }).unwrap()
}

/// Compare `agg` with `n * base` bin by bin. Bins the periodic rack trace
/// leaves empty hold only roundoff, so they get an absolute bound scaled by
/// the DC bin; every other bin is held to `rel` relative.
fn assert_scaled(base: &[f64], agg: &[f64], n: f64, rel: f64) {
    let floor = 1e-9 * base[0];
    for (k, (r, a)) in base.iter().zip(agg).enumerate() {
        let err = (a - n * r).abs();
        if *r > floor {
            assert!(err <= rel * n * r, "n={n} bin {k}: rel {:e}", err / (n * r));
        } else {
            assert!(err <= rel * n * base[0], "n={n} empty bin {k}: {err:e}");
        }
    }
}

#[test]
fn raw_bins_scale_by_n() {
    let r = rack();
    let base = dft_magnitudes(r.samples());
    for n in [1, 10, 4000] {
        let agg = aggregate_synchronous(&r, &ClusterConfig::synchronous(n)).unwrap();
        assert_scaled(&base, &dft_magnitudes(agg.samples()), n as f64, 1e-12);
    }
}

#[test]
fn normalized_spectrum_is_n_invariant() {
    let r = rack();
    let s1 = spectrum(&r).unwrap();
    for n in [10, 4000] {
        let sn = spectrum(&aggregate_synchronous(&r, &ClusterConfig::synchronous(n)).unwrap()).unwrap();
        for (a, b) in s1.mags.iter().zip(&sn.mags) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }
    }
}

#[test]
fn forty_megawatt_cluster() {
    let agg = aggregate_synchronous(&rack(), &ClusterConfig::synchronous(4000)).unwrap();
    assert_eq!(agg.p_rated(), 40e6);
    assert_eq!(agg.max(), 40e6);
}

#[test]
fn ramp_scales_in_watts_not_fraction() {
    let r = rack();
    let agg = aggregate_synchronous(&r, &ClusterConfig::synchronous(10)).unwrap();
    for (a, b) in ramp_rate(&r).iter().zip(ramp_rate(&agg)) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn antiphase_pair_cancels_fundamental() {
    // a square wave of period 22 s, one copy delayed by half a period
    let dt = 0.01;
    let samples: Vec<f64> = (0..4400).map(|k| if k % 2200 < 1100 { 10_000.0 } else { 2_000.0 }).collect();
    let sq = PowerTrace::new(samples, dt, 10_000.0, "sq").unwrap();
    let pair = aggregate_with_offsets(&sq, &[0.0, 11.0]).unwrap();
    assert!(pair.samples().iter().all(|p| *p == 12_000.0));
    let s = spectrum(&pair).unwrap();
    assert!(s.mags[1..].iter().all(|m| *m < 1e-12));
}

#[test]
fn skew_attenuates_dip_harmonics() {
    let r = rack();
    let sync = spectrum(&r).unwrap();
    let cfg = ClusterConfig { n_racks: 64, skew_seed: Some(3), max_skew: 22.0 };
    let skewed = spectrum(&aggregate_skewed(&r, &cfg).unwrap()).unwrap();
    let f = 1.0 / 22.0;
    assert!(skewed.at(f) < 0.5 * sync.at(f), "{} vs {}", skewed.at(f), sync.at(f));
}

#[test]
fn skewed_config_errors() {
    let r = rack();
    let too_long = ClusterConfig { n_racks: 2, skew_seed: None, max_skew: 1e4 };
    assert!(aggregate_skewed(&r, &too_long).is_err());
    assert!(aggregate_synchronous(&r, &ClusterConfig::synchronous(0)).is_err());
}

proptest! {
    #[test]
    fn skewed_sum_preserves_energy(n in 1usize..20, seed in any::<u64>(), skew in 0.0f64..20.0) {
        let r = rack();
        let cfg = ClusterConfig { n_racks: n, skew_seed: Some(seed), max_skew: skew };
        let agg = aggregate_skewed(&r, &cfg).unwrap();
        let want = n as f64 * r.samples().iter().sum::<f64>();
        let got: f64 = agg.samples().iter().sum();
        prop_assert!((got - want).abs() <= 1e-9 * want);
        prop_assert!(agg.max() <= n as f64 * r.max() + 1e-6);
    }
}

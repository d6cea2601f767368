//! End-to-end runs through the public API: readout chain, CSV hand-off,
//! estimation and sweep reproducibility.

use ise_core::estimation::{self, PronyConfig};
use ise_core::experiments::{self, ScenarioConfig, SweepAxis, SweepSpec};
use ise_core::sensing::{self, FluorescenceProfile, MeasurementSource};
use ise_core::{crlb, IseError};

fn sorted_deg(v: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = v.iter().map(|t| t.to_degrees()).collect();
    d.sort_by(f64::total_cmp);
    d
}

#[test]
fn fluorescence_csv_reproduces_the_readout() {
    let cfg = ScenarioConfig::two_target_default();
    let readout = sensing::simulate_readout(&cfg.params, &cfg.scene, &cfg.geometry).unwrap();
    let mut buf = Vec::new();
    readout.profile.write_csv(&mut buf).unwrap();
    let back = FluorescenceProfile::read_csv(buf.as_slice()).unwrap();

    let alpha = sensing::recover_alpha(&back).unwrap();
    let raw = sensing::channel_measurements(&alpha, &cfg.geometry).unwrap();
    for (a, b) in raw.iter().zip(&readout.raw) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-30), "{a} vs {b}");
    }
}

#[test]
fn measurement_csv_round_trip_then_estimate() {
    let cfg = ScenarioConfig::two_target_default();
    let m = sensing::predicted_measurements(&cfg.scene, &cfg.geometry, &cfg.params).unwrap();
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    let rec = sensing::read_measurement_csv(buf.as_slice()).unwrap();
    assert_eq!(rec.values, m.values);

    let spacing = (rec.positions[15] - rec.positions[0]) / 15.0;
    let est = estimation::estimate_from_samples(&rec.values, spacing, cfg.scene_meta(), &cfg.prony).unwrap();
    let d = sorted_deg(&est.doas);
    assert!((d[0] + 30.0).abs() < 1e-8 && (d[1] - 45.0).abs() < 1e-8, "{d:?}");
}

#[test]
fn full_readout_chain_lands_near_truth() {
    let cfg = ScenarioConfig::two_target_default();
    let readout = sensing::simulate_readout(&cfg.params, &cfg.scene, &cfg.geometry).unwrap();
    assert_eq!(readout.measurement.source, MeasurementSource::SimulatedFluorescence);
    let est = estimation::estimate_doa(&readout.measurement, cfg.scene_meta(), &cfg.prony).unwrap();
    let d = sorted_deg(&est.doas);
    // only linearization and differencing error remain
    assert!((d[0] + 30.0).abs() < 0.5 && (d[1] - 45.0).abs() < 0.5, "{d:?}");
}

#[test]
fn over_ordered_model_still_selects_the_targets() {
    let cfg = ScenarioConfig::two_target_default();
    let m = sensing::predicted_measurements(&cfg.scene, &cfg.geometry, &cfg.params).unwrap();
    for p in [4, 6, 8, 10] {
        let est = estimation::estimate_doa(&m, cfg.scene_meta(), &PronyConfig::for_targets(2).with_order(p)).unwrap();
        let d = sorted_deg(&est.doas);
        assert!((d[0] + 30.0).abs() < 1e-6 && (d[1] - 45.0).abs() < 1e-6, "p = {p}: {d:?}");
    }
}

#[test]
fn sweep_is_reproducible_and_csv_is_stable() {
    let mut cfg = ScenarioConfig::two_target_default();
    cfg.trials = 25;
    cfg.sweep = Some(SweepSpec {
        axis: SweepAxis::SamplingInterval,
        values: vec![0.125, 0.25],
    });
    let csv = |c: &ScenarioConfig| {
        let mut buf = Vec::new();
        experiments::run_sweep(c).unwrap().write_csv(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let a = csv(&cfg);
    assert_eq!(a, csv(&cfg));
    assert!(a.starts_with("sampling_interval_wavelengths,rmse_deg,crlb_deg,trials,failures\n"));
    assert_eq!(a.lines().count(), 3);

    cfg.base_seed = 2;
    assert_ne!(a, csv(&cfg));
}

#[test]
fn monte_carlo_rmse_sits_above_the_bound() {
    let mut cfg = ScenarioConfig::two_target_default();
    cfg.trials = 200;
    let mc = experiments::mc_rmse(&cfg, 0).unwrap();
    let bound = experiments::pooled_crlb_std(&cfg).unwrap();
    assert_eq!(mc.failures, 0);
    assert!(mc.rmse >= 0.7 * bound, "rmse {} bound {}", mc.rmse, bound);
    assert!(mc.rmse <= 5.0 * bound, "rmse {} bound {}", mc.rmse, bound);
}

#[test]
fn end_fire_target_bound_is_refused() {
    let cfg = ScenarioConfig::with_targets(&[90.0]);
    let err = crlb::scene_crlb(&cfg.params, &cfg.scene, &cfg.geometry, 30.0).unwrap_err();
    assert!(matches!(err, IseError::EndFireSingularity { index: 0, .. }), "{err}");
}

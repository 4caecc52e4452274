use std::path::Path;

use hom_core::config::ExperimentConfig;
use hom_core::correlator::{cross_correlate, normalize_cw, CorrelationHistogram};
use hom_core::model::{g2_orthogonal, AutocorrFn};
use hom_core::photon_sim::simulate;
use hom_core::ttag;

fn shipped(name: &str, duration_s: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    let text = std::fs::read_to_string(path).unwrap();
    ExperimentConfig::parse(
        &text.replace("duration_s = 1.5", &format!("duration_s = {duration_s}")),
    )
    .unwrap()
}

fn histogram(cfg: &ExperimentConfig) -> CorrelationHistogram {
    let r = simulate(&cfg.setup).unwrap();
    let t = |v: &[hom_core::photon_sim::DetectionRecord]| {
        v.iter().map(|r| r.time_ps).collect::<Vec<_>>()
    };
    let h = cross_correlate(&t(&r.detector_1), &t(&r.detector_2), 2000, 16, r.duration_s).unwrap();
    normalize_cw(&h).unwrap()
}

/// Mean normalized value over bins whose center lies within `ps` of zero.
fn near_zero(h: &CorrelationHistogram, ps: f64) -> f64 {
    let n = h.normalized.as_ref().unwrap();
    let v: Vec<f64> = (0..h.len())
        .filter(|&k| h.bin_center(k).abs() < ps)
        .map(|k| n[k])
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn orthogonal_dip_and_parallel_bunching() {
    let orth = histogram(&shipped("hom_orthogonal.cfg", "0.2"));
    let par = histogram(&shipped("hom_parallel.cfg", "0.2"));
    let pump = 2e-5; // per ps
    let ga = AutocorrFn::cw(1.0 - 0.91f64.powi(2), 1.0 / (pump + 1.0 / 1120.0)).unwrap();
    let gb = AutocorrFn::cw(1.0 - 0.94f64.powi(2), 1.0 / (pump + 1.0 / 1060.0)).unwrap();
    let expected: f64 = [-8.0, 8.0]
        .iter()
        .map(|&t| g2_orthogonal(t, &ga, &gb))
        .sum::<f64>()
        / 2.0;
    // ~270 counts per bin, two bins
    let o = near_zero(&orth, 16.0);
    assert!((o - expected).abs() < 0.1, "orthogonal {o} vs {expected}");
    assert!(near_zero(&par, 16.0) > o + 0.2);
    // antibunching recovers over ~1.1 ns, so the ±2 ns edge is still below 1
    let n = orth.normalized.as_ref().unwrap();
    let tail = n[..20].iter().sum::<f64>() / 20.0;
    let model = (0..20)
        .map(|k| g2_orthogonal(orth.bin_center(k), &ga, &gb))
        .sum::<f64>()
        / 20.0;
    assert!((tail - model).abs() < 0.05, "tail {tail} vs {model}");
    assert!(model < 0.95);
}

#[test]
fn simulated_clicks_survive_the_file_format() {
    let cfg = shipped("hom_parallel.cfg", "0.01");
    let r = simulate(&cfg.setup).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d1.ttag");
    ttag::write_file(&p, &r.detector_1).unwrap();
    assert_eq!(ttag::read_file(&p).unwrap(), r.detector_1);
    assert!(r
        .detector_1
        .windows(2)
        .all(|w| w[0].time_ps <= w[1].time_ps));
}

mod common;

use std::path::Path;

use common::*;
use hom_core::correlator::from_csv;
use hom_core::io::{file_digest, KvDocument};
use hom_core::model::{hom_visibility, InterferenceModel};
use hom_core::photon_sim::DetectionRecord;
use hom_core::ttag;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MINIMAL: &str = "\
seed = 3
hwp = parallel
[emitter_a]
wavelength_nm = 1250.74
lifetime_ps = 1120
coherence_time_ps = 115
signal_purity_rho = 0.91
residual_g0 = 0
brightness_per_pulse = 1
[emitter_b]
wavelength_nm = 1250.74
lifetime_ps = 1060
coherence_time_ps = 115
signal_purity_rho = 0.94
residual_g0 = 0
brightness_per_pulse = 1
[excitation]
mode = cw
cw_rate_hz = 1e6
duration_s = 0
[detector_1]
efficiency = 1
dark_rate_hz = 0
jitter_fwhm_ps = 0
[detector_2]
efficiency = 1
dark_rate_hz = 0
jitter_fwhm_ps = 0
[model]
overlap_v = 0.96
tau_c_ps = 115
";

fn records(times: &[i64], det: u8) -> Vec<DetectionRecord> {
    times
        .iter()
        .map(|&t| DetectionRecord {
            time_ps: t,
            detector: det,
        })
        .collect()
}

fn code(dir: &Path, args: &[&str]) -> Option<i32> {
    homsim(dir, args).status.code()
}

fn read_kv(p: &Path) -> KvDocument {
    KvDocument::parse(&std::fs::read_to_string(p).unwrap(), "test").unwrap()
}

#[test]
fn minimal_config_gives_empty_valid_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("exp.cfg"), MINIMAL).unwrap();
    homsim_ok(d, &["simulate", "exp.cfg"]);
    assert!(ttag::read_file(&d.join("detector_1.ttag"))
        .unwrap()
        .is_empty());
    assert!(ttag::read_file(&d.join("detector_2.ttag"))
        .unwrap()
        .is_empty());
    let meta = read_kv(&d.join("run.meta"));
    assert_eq!(meta.get("counts", "pairs"), Some("0"));
    assert!(d.join("detector_1.ttag.meta").exists());
}

#[test]
fn simulate_twice_gives_identical_digests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = stage_config(
        d,
        "hom_parallel.cfg",
        &[("duration_s = 1.5", "duration_s = 0.02")],
    );
    let mut runs = Vec::new();
    for _ in 0..2 {
        homsim_ok(d, &["simulate", s(&cfg)]);
        runs.push(
            ["parallel_1.ttag", "parallel_2.ttag", "parallel.meta"]
                .map(|f| file_digest(&d.join(f)).unwrap()),
        );
    }
    assert_eq!(runs[0], runs[1]);
    let other = stage_config(
        d,
        "hom_parallel.cfg",
        &[
            ("duration_s = 1.5", "duration_s = 0.02"),
            ("seed = 2024", "seed = 1"),
        ],
    );
    homsim_ok(d, &["simulate", s(&other)]);
    assert_ne!(file_digest(&d.join("parallel_1.ttag")).unwrap(), runs[0][0]);
}

#[test]
fn bad_configs_exit_with_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("typo.cfg"), MINIMAL.replace("overlap_v", "overlap")).unwrap();
    let out = homsim(d, &["simulate", "typo.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));
    std::fs::write(
        d.join("neg.cfg"),
        MINIMAL.replace("duration_s = 0", "duration_s = -1"),
    )
    .unwrap();
    assert_eq!(code(d, &["simulate", "neg.cfg"]), Some(2));
    assert_eq!(code(d, &["simulate", "missing.cfg"]), Some(1));
    assert_eq!(code(d, &["no-such-command"]), Some(2));
}

#[test]
fn correlate_hand_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ttag::write_file(&d.join("a.ttag"), &records(&[0, 100, 1000], 1)).unwrap();
    ttag::write_file(&d.join("b.ttag"), &records(&[50, 130, 990], 2)).unwrap();
    homsim_ok(
        d,
        &[
            "correlate",
            "a.ttag",
            "b.ttag",
            "--bin-ps",
            "50",
            "--max-lag-ps",
            "200",
            "-o",
            "h.csv",
        ],
    );
    let h = from_csv(&std::fs::read_to_string(d.join("h.csv")).unwrap()).unwrap();
    // lags b - a within [-200, 200): 50, 130, -50, 30, -10
    assert_eq!(h.min_lag_ps, -200);
    assert_eq!(h.counts, vec![0, 0, 0, 2, 1, 1, 1, 0]);
    assert!(h.normalized.is_none());
    assert!(d.join("h.csv.meta").exists());
    assert!(homsim_ok(
        d,
        &[
            "correlate",
            "a.ttag",
            "b.ttag",
            "--max-lag-ps",
            "32",
            "-o",
            "d.csv"
        ]
    )
    .is_empty());
    let default_bins = from_csv(&std::fs::read_to_string(d.join("d.csv")).unwrap()).unwrap();
    assert_eq!(default_bins.bin_width_ps, 16);
}

#[test]
fn correlate_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.ttag"), b"JUNKJUNKJUNKJUNK").unwrap();
    ttag::write_file(&d.join("ok.ttag"), &records(&[1], 1)).unwrap();
    let out = homsim(
        d,
        &[
            "correlate",
            "bad.ttag",
            "ok.ttag",
            "--max-lag-ps",
            "160",
            "-o",
            "h.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TTAG"));
    assert!(!d.join("h.csv").exists());
    assert_eq!(
        code(
            d,
            &[
                "correlate",
                "ok.ttag",
                "ok.ttag",
                "--max-lag-ps",
                "100",
                "-o",
                "h.csv"
            ]
        ),
        Some(2),
        "range not a whole number of bins"
    );
    assert_eq!(
        code(
            d,
            &[
                "correlate",
                "ok.ttag",
                "ok.ttag",
                "--max-lag-ps",
                "160",
                "--normalize",
                "pulsed",
                "-o",
                "h.csv"
            ]
        ),
        Some(2)
    );
}

#[test]
fn correlate_poisson_streams_normalize_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let span = 1_000_000_000_000i64;
    let mut draw = |n: usize| {
        let mut v: Vec<i64> = (0..n).map(|_| rng.random_range(0..span)).collect();
        v.sort_unstable();
        v
    };
    ttag::write_file(&d.join("a.ttag"), &records(&draw(200_000), 1)).unwrap();
    ttag::write_file(&d.join("b.ttag"), &records(&draw(200_000), 2)).unwrap();
    homsim_ok(
        d,
        &[
            "correlate",
            "a.ttag",
            "b.ttag",
            "--bin-ps",
            "1000",
            "--max-lag-ps",
            "200000",
            "--normalize",
            "cw",
            "--duration-s",
            "1",
            "-o",
            "h.csv",
        ],
    );
    let h = from_csv(&std::fs::read_to_string(d.join("h.csv")).unwrap()).unwrap();
    let n = h.normalized.unwrap();
    let mean = n.iter().sum::<f64>() / n.len() as f64;
    // 400 bins of ~40 counts each: σ(mean) ≈ 0.008
    assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
}

#[test]
fn pulsed_g2_is_printed_and_dark_corrected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = stage_config(
        d,
        "dot_a_g2.cfg",
        &[("duration_s = 0.25", "duration_s = 0.02")],
    );
    homsim_ok(d, &["simulate", s(&cfg)]);
    let args = [
        "correlate",
        "dot_a_1.ttag",
        "dot_a_2.ttag",
        "--bin-ps",
        "100",
        "--max-lag-ps",
        "150000",
        "--normalize",
        "pulsed",
        "--rep-ps",
        "25000",
        "-o",
        "g2.csv",
    ];
    let out = homsim_ok(d, &args);
    let g = kv_value(&out, "g2_zero").unwrap();
    let err = kv_value(&out, "g2_zero_err").unwrap();
    assert!((g - 0.25).abs() < 4.0 * err + 0.01, "{g} ± {err}");
    let mut with_dark = args.to_vec();
    with_dark.extend(["--dark-fraction", "0.09"]);
    let out = homsim_ok(d, &with_dark);
    let c = kv_value(&out, "g2_zero_corrected").unwrap();
    assert!((c - (g - 0.18) / 0.91f64.powi(2)).abs() < 1e-9);
    let too_short = [
        "correlate",
        "dot_a_1.ttag",
        "dot_a_2.ttag",
        "--bin-ps",
        "100",
        "--max-lag-ps",
        "50000",
        "--normalize",
        "pulsed",
        "--rep-ps",
        "25000",
        "-o",
        "x.csv",
    ];
    assert_eq!(code(d, &too_short), Some(2));
}

fn fit_args<'a>(f: &'a HomFixture, out: &'a str) -> Vec<&'a str> {
    vec![
        "fit-hom",
        s(&f.parallel),
        s(&f.orthogonal),
        "--rho-a",
        "0.91",
        "--rho-b",
        "0.94",
        "--ga-csv",
        s(&f.ga),
        "--gb-csv",
        s(&f.gb),
        "-o",
        out,
    ]
}

#[test]
fn fit_report_is_internally_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ga, gb) = reference_autocorr();
    let f = write_hom_fixture(d, "x", &reference_model(), &ga, &gb, 2e5, 1);
    let stdout = homsim_ok(d, &fit_args(&f, "fit.kv"));
    assert!(stdout.contains("visibility"));
    let r = read_kv(&d.join("fit.kv"));
    let get = |k: &str| r.get("hom_fit", k).unwrap().parse::<f64>().unwrap();
    assert_eq!(
        get("visibility"),
        hom_visibility(get("g_par_0"), get("g_perp_0")).unwrap()
    );
    assert!((get("v") - 0.96).abs() < 0.1 && (get("tau_c_ps") - 115.0).abs() < 20.0);
    for k in ["v_err", "tau_c_ps_err", "g_par_0_err", "visibility_err"] {
        assert!(get(k) > 0.0, "{k}");
    }
    // fixed gA, gB pin g⊥ regardless of V and τc
    assert_eq!(get("g_perp_0_err"), 0.0);
    let prov = read_kv(&d.join("fit.kv.meta"));
    assert_eq!(prov.get("inputs", "input_0"), Some("x_par.csv"));
}

#[test]
fn fit_of_indistinguishable_free_data_is_consistent_with_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ga, gb) = reference_autocorr();
    let m = InterferenceModel::new(0.0, 115.0, 0.91, 0.94);
    let f = write_hom_fixture(d, "zero", &m, &ga, &gb, 2e5, 2);
    homsim_ok(d, &fit_args(&f, "fit.kv"));
    let r = read_kv(&d.join("fit.kv"));
    let v: f64 = r.get("hom_fit", "v").unwrap().parse().unwrap();
    let e: f64 = r.get("hom_fit", "v_err").unwrap().parse().unwrap();
    assert!(v.abs() <= 2.0 * e.max(1e-3), "V = {v} ± {e}");
}

#[test]
fn fit_with_shared_autocorrelation_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ga, _) = reference_autocorr();
    let f = write_hom_fixture(d, "shared", &reference_model(), &ga, &ga, 2e5, 3);
    homsim_ok(
        d,
        &[
            "fit-hom",
            s(&f.parallel),
            s(&f.orthogonal),
            "--rho-a",
            "0.91",
            "--rho-b",
            "0.94",
            "-o",
            "fit.kv",
        ],
    );
    let r = read_kv(&d.join("fit.kv"));
    assert!(r.get("hom_fit", "g0").is_some());
}

#[test]
fn fit_rejects_mismatched_binning() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ga, gb) = reference_autocorr();
    let f = write_hom_fixture(d, "a", &reference_model(), &ga, &gb, 1e4, 1);
    std::fs::write(
        d.join("short.csv"),
        "lag_ps,counts,normalized\n-32,1,1\n-16,1,1\n0,1,1\n16,1,1\n",
    )
    .unwrap();
    let args = [
        "fit-hom",
        s(&f.parallel),
        "short.csv",
        "--rho-a",
        "0.9",
        "--rho-b",
        "0.9",
        "-o",
        "fit.kv",
    ];
    assert_eq!(code(d, &args), Some(2));
    let half = [
        "fit-hom",
        s(&f.parallel),
        s(&f.orthogonal),
        "--rho-a",
        "0.9",
        "--rho-b",
        "0.9",
        "--ga-csv",
        s(&f.ga),
        "-o",
        "f.kv",
    ];
    assert_eq!(code(d, &half), Some(2));
}

#[test]
fn tune_dots_and_contract_exits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    homsim_ok(d, &["calibration", "-o", "cal.kv"]);
    let out = homsim_ok(
        d,
        &[
            "tune",
            "cal.kv",
            "1250.40",
            "1250.74",
            "--tol-uev",
            "3",
            "-o",
            "trace.csv",
        ],
    );
    let p = kv_value(&out, "power_mw").unwrap();
    assert!((p - 1.25).abs() < 0.02, "{p}");
    assert!(kv_value(&out, "detuning_uev").unwrap() <= 3.0);
    assert!(std::fs::read_to_string(d.join("trace.csv"))
        .unwrap()
        .starts_with("iter,power_mw,detuning_uev\n"));

    let out = homsim_ok(d, &["tune", "cal.kv", "1250.40", "1250.40", "-o", "t0.csv"]);
    assert_eq!(kv_value(&out, "iterations"), Some(0.0));

    let beyond = homsim(d, &["tune", "cal.kv", "1250.40", "1251.50", "-o", "t1.csv"]);
    assert_eq!(beyond.status.code(), Some(3));
    assert!(!String::from_utf8_lossy(&beyond.stderr).is_empty());
    assert_eq!(
        code(d, &["tune", "cal.kv", "1250.74", "1250.40", "-o", "t2.csv"]),
        Some(3)
    );
    assert_eq!(
        code(
            d,
            &[
                "tune",
                "cal.kv",
                "1250.40",
                "1250.74",
                "--max-iters",
                "1",
                "-o",
                "t3.csv"
            ]
        ),
        Some(4)
    );
    std::fs::write(d.join("bad.cal"), "power_to_temp = 0:4\n").unwrap();
    assert_eq!(
        code(
            d,
            &["tune", "bad.cal", "1250.40", "1250.74", "-o", "t4.csv"]
        ),
        Some(2)
    );
}

#[test]
fn budget_flags_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = homsim_ok(
        d,
        &["budget", "--stage", "optics=0.5", "--stage", "detector=0.2"],
    );
    let doc = KvDocument::parse(&out, "budget").unwrap();
    assert_eq!(doc.get("system", "system_efficiency"), Some("0.1"));
    assert_eq!(doc.get("system", "stage.fiber"), None);
    assert_eq!(code(d, &["budget", "--stage", "optics=1.5"]), Some(2));
    assert_eq!(code(d, &["budget", "--tau-off-ps", "0"]), Some(2));
}

#[test]
fn report_sections_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let empty = homsim_ok(d, &["report"]);
    let doc = KvDocument::parse(&empty, "report").unwrap();
    for sec in ["budget", "hom_fit", "tuning"] {
        assert_eq!(doc.get(sec, "status"), Some("absent"));
    }

    let out = homsim(d, &["report", "--fit", "nope.kv", "--trace", "gone.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.kv") && err.contains("gone.csv"), "{err}");

    std::fs::write(d.join("fit.kv"), "[hom_fit]\ng_par_0 = 0.96\ng_perp_0 = 0.72\nvisibility = 0.3333333333333333\nvisibility_err = 0.01\n")
        .unwrap();
    homsim_ok(d, &["budget", "-o", "budget.kv"]);
    let args = [
        "report",
        "--fit",
        "fit.kv",
        "--budget",
        "budget.kv",
        "-o",
        "report.kv",
    ];
    homsim_ok(d, &args);
    let first = std::fs::read(d.join("report.kv")).unwrap();
    homsim_ok(d, &args);
    assert_eq!(std::fs::read(d.join("report.kv")).unwrap(), first);
    let r = read_kv(&d.join("report.kv"));
    assert_eq!(r.get("hom_fit", "visibility_display"), Some("0.33 ± 0.01"));
    assert_eq!(r.get("budget", "collection_a_display"), Some("7.3%"));
}

#[test]
fn report_detects_digest_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = stage_config(
        d,
        "hom_parallel.cfg",
        &[("duration_s = 1.5", "duration_s = 0.01")],
    );
    homsim_ok(d, &["simulate", s(&cfg)]);
    homsim_ok(
        d,
        &[
            "correlate",
            "parallel_1.ttag",
            "parallel_2.ttag",
            "--max-lag-ps",
            "800",
            "-o",
            "h.csv",
        ],
    );
    let ok = homsim_ok(d, &["report", "--config", s(&cfg), "--artifact", "h.csv"]);
    assert!(ok.contains("digest_check = ok"));

    // a config other than the one that produced the data
    let other = d.join("other.cfg");
    std::fs::write(
        &other,
        std::fs::read_to_string(&cfg)
            .unwrap()
            .replace("seed = 2024", "seed = 9"),
    )
    .unwrap();
    let out = homsim(d, &["report", "--config", s(&other), "--artifact", "h.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest mismatch"));

    // the histogram's input replaced after correlation
    ttag::write_file(&d.join("parallel_1.ttag"), &records(&[5], 1)).unwrap();
    let out = homsim(d, &["report", "--artifact", "h.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hom_core::correlator::{write_csv, CorrelationHistogram};
use hom_core::hom_fit::predicted_histograms;
use hom_core::model::{AutocorrFn, InterferenceModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Copies a shipped config into `dir`, applying `(from, to)` text edits.
pub fn stage_config(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = std::fs::read_to_string(configs_dir().join(name)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{name} has no `{from}`");
        text = text.replace(from, to);
    }
    let out = dir.join(name);
    std::fs::write(&out, text).unwrap();
    out
}

pub fn homsim(dir: &Path, args: &[&str]) -> Output {
    homsim_env(dir, args, &[])
}

pub fn homsim_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_homsim"));
    c.current_dir(dir).args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("homsim runs")
}

/// Runs homsim and panics with its stderr unless it exits 0.
pub fn homsim_ok(dir: &Path, args: &[&str]) -> String {
    let out = homsim(dir, args);
    assert!(
        out.status.success(),
        "homsim {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// `key = value` lookup in homsim's structured-text output.
pub fn kv_value(text: &str, key: &str) -> Option<f64> {
    text.lines().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == key).then(|| v.trim().parse().ok()).flatten()
    })
}

/// Histogram binning whose uncorrelated level is `level` counts per bin.
pub fn template(min_lag: i64, max_lag: i64, bw: i64, level: f64) -> CorrelationHistogram {
    let mut h = CorrelationHistogram::empty(min_lag, max_lag, bw).unwrap();
    h.acquisition_s = 1.0;
    h.rate1_hz = (level / (bw as f64 * 1e-12)).sqrt();
    h.rate2_hz = h.rate1_hz;
    h
}

/// Histogram with `expected` normalized values, Poisson-sampled when a seed
/// is given.
pub fn synth(
    t: &CorrelationHistogram,
    expected: &[f64],
    seed: Option<u64>,
) -> CorrelationHistogram {
    let level = t.uncorrelated_level();
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let mut h = t.clone();
    h.counts = expected
        .iter()
        .map(|&g| match rng.as_mut() {
            Some(r) => Poisson::new(level * g).unwrap().sample(r) as u64,
            None => (level * g).round() as u64,
        })
        .collect();
    h.normalized = Some(h.counts.iter().map(|&c| c as f64 / level).collect());
    h
}

pub struct HomFixture {
    pub parallel: PathBuf,
    pub orthogonal: PathBuf,
    pub ga: PathBuf,
    pub gb: PathBuf,
}

/// Parallel/orthogonal histograms drawn from the convolved model, plus
/// noiseless single-dot autocorrelation curves on the same binning.
pub fn write_hom_fixture(
    dir: &Path,
    tag: &str,
    m: &InterferenceModel,
    ga: &AutocorrFn,
    gb: &AutocorrFn,
    level: f64,
    seed: u64,
) -> HomFixture {
    let t = template(-2400, 2400, 16, level);
    let (par, perp) = predicted_histograms(&t, ga, gb, m).unwrap();
    let centers: Vec<f64> = (0..t.len()).map(|k| t.bin_center(k)).collect();
    let curve = |g: &AutocorrFn| centers.iter().map(|&c| g.eval(c)).collect::<Vec<_>>();
    let f = HomFixture {
        parallel: dir.join(format!("{tag}_par.csv")),
        orthogonal: dir.join(format!("{tag}_orth.csv")),
        ga: dir.join(format!("{tag}_ga.csv")),
        gb: dir.join(format!("{tag}_gb.csv")),
    };
    write_csv(&f.parallel, &synth(&t, &par, Some(seed))).unwrap();
    write_csv(&f.orthogonal, &synth(&t, &perp, Some(seed ^ 0x9e37_79b9))).unwrap();
    write_csv(&f.ga, &synth(&t, &curve(ga), None)).unwrap();
    write_csv(&f.gb, &synth(&t, &curve(gb), None)).unwrap();
    f
}

pub fn reference_model() -> InterferenceModel {
    InterferenceModel::new(0.96, 115.0, 0.91, 0.94)
}

pub fn reference_autocorr() -> (AutocorrFn, AutocorrFn) {
    (
        AutocorrFn::cw(0.25, 560.0).unwrap(),
        AutocorrFn::cw(0.29, 560.0).unwrap(),
    )
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

//! Experiment configuration files and the end-to-end simulation run.
//!
//! Flat `key = value` text with dotted section prefixes (or `[section]`
//! headers). Unknown keys are rejected.
//!
//! ```text
//! seed = 7
//! hwp = parallel
//! [emitter_a]
//! wavelength_nm = 1250.74
//! ...
//! [excitation]
//! mode = cw
//! cw_rate_hz = 2e7
//! duration_s = 1
//! [output]
//! detector_1 = det1.ttag
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{parse_kv, sha256_hex, KvDocument};
use crate::model::{default_pair_irf_sigma_ps, EmitterSpec, InterferenceModel};
use crate::photon_sim::{
    simulate, simulate_autocorrelation, DetectorSpec, EventCounts, ExcitationMode, ExcitationSpec,
    ExperimentSetup, Hwp, DEFAULT_PULSE_JITTER_PS,
};
use crate::provenance::{file_name, Provenance};
use crate::ttag;

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub detector_1: PathBuf,
    pub detector_2: PathBuf,
    pub metadata: PathBuf,
}

/// What the two detectors look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Both dots through the interference beamsplitter.
    Hom,
    /// Dot A alone through a 50:50 splitter onto both detectors. The
    /// `emitter_b` and `model` sections may be omitted.
    Autocorrelation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub setup: ExperimentSetup,
    pub output: OutputPaths,
    /// SHA-256 of the canonical physics content (output paths excluded).
    pub digest: String,
    pub warnings: Vec<String>,
}

const EMITTER_KEYS: &[&str] = &[
    "id",
    "wavelength_nm",
    "lifetime_ps",
    "coherence_time_ps",
    "signal_purity_rho",
    "residual_g0",
    "polarization_deg",
    "brightness_per_pulse",
];
const DETECTOR_KEYS: &[&str] = &[
    "efficiency",
    "dark_rate_hz",
    "jitter_fwhm_ps",
    "dead_time_ps",
];
const EXCITATION_KEYS: &[&str] = &[
    "mode",
    "rep_rate_hz",
    "cw_rate_hz",
    "pulse_jitter_ps",
    "duration_s",
];
const MODEL_KEYS: &[&str] = &[
    "overlap_v",
    "tau_c_ps",
    "rho_a",
    "rho_b",
    "detuning_rad_per_ps",
    "irf_sigma_ps",
];
const OUTPUT_KEYS: &[&str] = &["detector_1", "detector_2", "metadata"];

fn known(key: &str) -> bool {
    let Some((section, field)) = key.split_once('.') else {
        return matches!(key, "seed" | "hwp" | "pairing_window_ps" | "experiment");
    };
    let list = match section {
        "emitter_a" | "emitter_b" => EMITTER_KEYS,
        "detector_1" | "detector_2" => DETECTOR_KEYS,
        "excitation" => EXCITATION_KEYS,
        "model" => MODEL_KEYS,
        "output" => OUTPUT_KEYS,
        _ => return false,
    };
    list.contains(&field)
}

struct Fields {
    map: BTreeMap<String, (String, usize)>,
}

impl Fields {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(v, _)| v.as_str())
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| {
                Error::format("experiment config", format!("line {line}: `{key}`: {e}"))
            }),
        }
    }

    fn req<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| {
            Error::format("experiment config", format!("missing required key `{key}`"))
        })
    }

    fn opt<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }
}

fn emitter(f: &Fields, section: &str, default_id: &str) -> Result<EmitterSpec> {
    let k = |name: &str| format!("{section}.{name}");
    Ok(EmitterSpec {
        id: f.raw(&k("id")).unwrap_or(default_id).to_string(),
        wavelength_nm: f.req(&k("wavelength_nm"))?,
        lifetime_ps: f.req(&k("lifetime_ps"))?,
        coherence_time_ps: f.req(&k("coherence_time_ps"))?,
        signal_purity_rho: f.req(&k("signal_purity_rho"))?,
        residual_g0: f.req(&k("residual_g0"))?,
        polarization_deg: f.opt(&k("polarization_deg"), 0.0)?,
        brightness_per_pulse: f.req(&k("brightness_per_pulse"))?,
    })
}

fn detector(f: &Fields, section: &str) -> Result<DetectorSpec> {
    let k = |name: &str| format!("{section}.{name}");
    Ok(DetectorSpec {
        efficiency: f.req(&k("efficiency"))?,
        dark_rate_hz: f.req(&k("dark_rate_hz"))?,
        jitter_fwhm_ps: f.req(&k("jitter_fwhm_ps"))?,
        dead_time_ps: f.opt(&k("dead_time_ps"), 0)?,
    })
}

fn excitation(f: &Fields) -> Result<ExcitationSpec> {
    let mode: String = f.req("excitation.mode")?;
    let duration_s = f.req("excitation.duration_s")?;
    let (mode, jitter) = match mode.as_str() {
        "pulsed" => {
            if f.has("excitation.cw_rate_hz") {
                return Err(Error::format(
                    "experiment config",
                    "`excitation.cw_rate_hz` is not used in pulsed mode",
                ));
            }
            (
                ExcitationMode::Pulsed {
                    rep_rate_hz: f.req("excitation.rep_rate_hz")?,
                },
                f.opt("excitation.pulse_jitter_ps", DEFAULT_PULSE_JITTER_PS)?,
            )
        }
        "cw" => {
            for k in ["excitation.rep_rate_hz", "excitation.pulse_jitter_ps"] {
                if f.has(k) {
                    return Err(Error::format(
                        "experiment config",
                        format!("`{k}` is not used in cw mode"),
                    ));
                }
            }
            (
                ExcitationMode::Cw {
                    cw_rate_hz: f.req("excitation.cw_rate_hz")?,
                },
                0.0,
            )
        }
        other => {
            return Err(Error::format(
                "experiment config",
                format!("excitation.mode must be `pulsed` or `cw`, got `{other}`"),
            ))
        }
    };
    Ok(ExcitationSpec {
        mode,
        pulse_jitter_ps: jitter,
        duration_s,
        seed: 0,
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in parse_kv(text, "experiment config")? {
            if !known(&e.key) {
                return Err(Error::format(
                    "experiment config",
                    format!("line {}: unknown key `{}`", e.line, e.key),
                ));
            }
            if map.insert(e.key.clone(), (e.value, e.line)).is_some() {
                return Err(Error::format(
                    "experiment config",
                    format!("line {}: duplicate key `{}`", e.line, e.key),
                ));
            }
        }
        let f = Fields { map };

        let experiment = match f.raw("experiment").unwrap_or("hom") {
            "hom" => Experiment::Hom,
            "autocorrelation" => Experiment::Autocorrelation,
            other => {
                return Err(Error::format(
                    "experiment config",
                    format!("experiment must be `hom` or `autocorrelation`, got `{other}`"),
                ))
            }
        };
        let solo = experiment == Experiment::Autocorrelation;
        let emitter_a = emitter(&f, "emitter_a", "A")?;
        let has_b = f.map.keys().any(|k| k.starts_with("emitter_b."));
        let emitter_b = if solo && !has_b {
            EmitterSpec {
                id: "B".into(),
                ..emitter_a.clone()
            }
        } else {
            emitter(&f, "emitter_b", "B")?
        };
        let tau_c: f64 = if solo {
            f.opt("model.tau_c_ps", emitter_a.coherence_time_ps)?
        } else {
            f.req("model.tau_c_ps")?
        };
        let model = InterferenceModel {
            overlap_v: if solo {
                f.opt("model.overlap_v", 0.0)?
            } else {
                f.req("model.overlap_v")?
            },
            tau_c_ps: tau_c,
            rho_a: f.opt("model.rho_a", emitter_a.signal_purity_rho)?,
            rho_b: f.opt("model.rho_b", emitter_b.signal_purity_rho)?,
            detuning_rad_per_ps: f.opt("model.detuning_rad_per_ps", 0.0)?,
            irf_sigma_ps: f.opt("model.irf_sigma_ps", default_pair_irf_sigma_ps())?,
        };
        let hwp: Hwp = match f.raw("hwp") {
            None if solo => Hwp::Orthogonal,
            _ => f.req::<String>("hwp")?.parse()?,
        };
        let setup = ExperimentSetup {
            excitation: excitation(&f)?,
            detector_1: detector(&f, "detector_1")?,
            detector_2: detector(&f, "detector_2")?,
            pairing_window_ps: f.opt(
                "pairing_window_ps",
                ExperimentSetup::default_pairing_window_ps(tau_c),
            )?,
            seed: f.req("seed")?,
            emitter_a,
            emitter_b,
            model,
            hwp,
        };
        let mut warnings = setup.validate()?;
        for (side, rho_model, rho_emitter) in [
            ("a", setup.model.rho_a, setup.emitter_a.signal_purity_rho),
            ("b", setup.model.rho_b, setup.emitter_b.signal_purity_rho),
        ] {
            if rho_model != rho_emitter {
                warnings.push(format!(
                    "model.rho_{side} = {rho_model} differs from emitter_{side}.signal_purity_rho = {rho_emitter}"
                ));
            }
        }
        let path = |k: &str, default: &str| PathBuf::from(f.raw(k).unwrap_or(default));
        let output = OutputPaths {
            detector_1: path("output.detector_1", "detector_1.ttag"),
            detector_2: path("output.detector_2", "detector_2.ttag"),
            metadata: path("output.metadata", "run.meta"),
        };
        Ok(Self {
            experiment,
            setup,
            output,
            digest: config_digest(&f),
            warnings,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        // Relative outputs live beside the config file.
        if let Some(dir) = path.parent() {
            for p in [
                &mut cfg.output.detector_1,
                &mut cfg.output.detector_2,
                &mut cfg.output.metadata,
            ] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }
}

fn config_digest(f: &Fields) -> String {
    let mut canon = String::new();
    for (k, (v, _)) in &f.map {
        if !k.starts_with("output.") {
            canon.push_str(k);
            canon.push('=');
            canon.push_str(v);
            canon.push('\n');
        }
    }
    sha256_hex(canon.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub digest: String,
    pub counts: EventCounts,
    pub output: OutputPaths,
}

fn counts_doc(d: &mut KvDocument, c: &EventCounts) {
    d.section("counts")
        .set("segments", c.segments)
        .set("signal_a", c.signal_a)
        .set("background_a", c.background_a)
        .set("signal_b", c.signal_b)
        .set("background_b", c.background_b)
        .set("pairs", c.pairing.pairs)
        .set("signal_pairs", c.pairing.signal_pairs)
        .set("same_arm_pairs", c.pairing.same_arm)
        .set("unpaired", c.pairing.unpaired)
        .set("arm_c", c.arm_c)
        .set("arm_d", c.arm_d)
        .set("detector_1", c.detector_1)
        .set("detector_2", c.detector_2);
}

/// Simulates, then writes both TTAG files, their sidecars and the run
/// metadata.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    for w in &cfg.warnings {
        log::warn!("{w}");
    }
    let s = &cfg.setup;
    let result = match cfg.experiment {
        Experiment::Hom => simulate(s)?,
        Experiment::Autocorrelation => simulate_autocorrelation(
            &s.emitter_a,
            &s.excitation,
            &s.detector_1,
            &s.detector_2,
            s.seed,
        )?,
    };
    let out = &cfg.output;
    ttag::write_file(&out.detector_1, &result.detector_1)?;
    ttag::write_file(&out.detector_2, &result.detector_2)?;
    let p1 = Provenance::for_output("simulate", &out.detector_1, vec![cfg.digest.clone()], &[])?;
    let p2 = Provenance::for_output("simulate", &out.detector_2, vec![cfg.digest.clone()], &[])?;
    p1.write_for(&out.detector_1)?;
    p2.write_for(&out.detector_2)?;

    let mut d = KvDocument::new();
    d.section("run")
        .set(
            "experiment",
            if cfg.experiment == Experiment::Hom {
                "hom"
            } else {
                "autocorrelation"
            },
        )
        .set("seed", cfg.setup.seed)
        .set("config_digest", &cfg.digest)
        .set("hwp", cfg.setup.hwp)
        .set("duration_s", result.duration_s);
    counts_doc(&mut d, &result.counts);
    d.section("files")
        .set("detector_1", file_name(&out.detector_1))
        .set("detector_1_sha256", &p1.sha256)
        .set("detector_2", file_name(&out.detector_2))
        .set("detector_2_sha256", &p2.sha256);
    d.write(&out.metadata)?;
    log::info!(
        "wrote {} + {} clicks ({} pairs)",
        result.counts.detector_1,
        result.counts.detector_2,
        result.counts.pairing.pairs
    );
    Ok(RunSummary {
        digest: cfg.digest.clone(),
        counts: result.counts,
        output: out.clone(),
    })
}

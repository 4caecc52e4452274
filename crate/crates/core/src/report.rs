//! Consolidated report over the pipeline's outputs, with digest checks
//! across stages.

use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::{file_digest, KvDocument};
use crate::provenance::{file_name, Provenance};

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub budget: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub configs: Vec<PathBuf>,
    /// Any further pipeline outputs (TTAG files, histograms) to verify.
    pub artifacts: Vec<PathBuf>,
}

impl ReportInputs {
    fn all_paths(&self) -> Vec<&Path> {
        self.budget
            .iter()
            .chain(&self.fit)
            .chain(&self.trace)
            .chain(&self.configs)
            .chain(&self.artifacts)
            .map(PathBuf::as_path)
            .collect()
    }
}

fn copy_section(out: &mut KvDocument, src: &KvDocument, src_section: &str, keys: &[&str]) -> usize {
    let mut n = 0;
    for k in keys {
        if let Some(v) = src.get(src_section, k) {
            out.set(k, v);
            n += 1;
        }
    }
    n
}

fn percent(v: Option<&str>) -> Option<String> {
    v.and_then(|s| s.parse::<f64>().ok())
        .map(|x| format!("{:.1}%", 100.0 * x))
}

struct TraceSummary {
    points: usize,
    final_iter: String,
    final_power: String,
    final_detuning: String,
}

fn read_trace(path: &Path) -> Result<TraceSummary> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("iter,power_mw,detuning_uev") {
        return Err(Error::format(
            "tuning trace",
            "missing `iter,power_mw,detuning_uev` header",
        ));
    }
    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    let last = rows
        .last()
        .ok_or_else(|| Error::format("tuning trace", "no rows"))?;
    let cols: Vec<&str> = last.split(',').collect();
    if cols.len() != 3 {
        return Err(Error::format("tuning trace", "expected 3 columns"));
    }
    Ok(TraceSummary {
        points: rows.len(),
        final_iter: cols[0].to_string(),
        final_power: cols[1].to_string(),
        final_detuning: cols[2].to_string(),
    })
}

/// Builds the report. Every named input must exist; sections for inputs
/// not given are marked absent.
pub fn build_report(inputs: &ReportInputs) -> Result<KvDocument> {
    let missing: Vec<String> = inputs
        .all_paths()
        .into_iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "missing inputs: {}",
            missing.join(", ")
        )));
    }

    let mut d = KvDocument::new();

    d.section("budget");
    match &inputs.budget {
        None => {
            d.set("status", "absent");
        }
        Some(p) => {
            let b = KvDocument::parse(&std::fs::read_to_string(p)?, "budget report")?;
            d.set("status", "present");
            copy_section(&mut d, &b, "coupling", &["beta_a", "beta_b"]);
            copy_section(&mut d, &b, "system", &["system_efficiency"]);
            copy_section(&mut d, &b, "collection", &["collection_a", "collection_b"]);
            for key in ["system_efficiency", "collection_a", "collection_b"] {
                let section = if key == "system_efficiency" {
                    "system"
                } else {
                    "collection"
                };
                if let Some(s) = percent(b.get(section, key)) {
                    d.set(&format!("{key}_display"), s);
                }
            }
        }
    }

    d.section("hom_fit");
    match &inputs.fit {
        None => {
            d.set("status", "absent");
        }
        Some(p) => {
            let f = KvDocument::parse(&std::fs::read_to_string(p)?, "fit report")?;
            d.set("status", "present");
            let n = copy_section(
                &mut d,
                &f,
                "hom_fit",
                &[
                    "v",
                    "v_err",
                    "tau_c_ps",
                    "tau_c_ps_err",
                    "g_par_0",
                    "g_par_0_err",
                    "g_perp_0",
                    "g_perp_0_err",
                    "visibility",
                    "visibility_err",
                ],
            );
            if n == 0 {
                return Err(Error::format("fit report", "no [hom_fit] values"));
            }
            if let (Some(v), Some(e)) = (
                f.get("hom_fit", "visibility"),
                f.get("hom_fit", "visibility_err"),
            ) {
                if let (Ok(v), Ok(e)) = (v.parse::<f64>(), e.parse::<f64>()) {
                    d.set("visibility_display", format!("{v:.2} ± {e:.2}"));
                }
            }
        }
    }

    d.section("tuning");
    match &inputs.trace {
        None => {
            d.set("status", "absent");
        }
        Some(p) => {
            let t = read_trace(p)?;
            d.set("status", "present")
                .set("trace_points", t.points)
                .set("final_iteration", t.final_iter)
                .set("final_power_mw", t.final_power)
                .set("final_detuning_uev", t.final_detuning);
        }
    }

    d.section("digests");
    let mut config_digests = Vec::new();
    for (i, p) in inputs.configs.iter().enumerate() {
        let cfg = ExperimentConfig::read(p)?;
        d.set(&format!("config_{i}"), &cfg.digest);
        config_digests.push(cfg.digest);
    }
    let mut checked = 0;
    let mut problems = Vec::new();
    for p in inputs.all_paths() {
        let actual = file_digest(p)?;
        d.set(&format!("sha256.{}", file_name(p)), &actual);
        let Some(prov) = Provenance::read_for(p)? else {
            continue;
        };
        checked += 1;
        if prov.sha256 != actual {
            problems.push(format!("{} changed after it was written", p.display()));
        }
        for (name, sha) in &prov.inputs {
            let upstream = p.parent().unwrap_or(Path::new(".")).join(name);
            if upstream.exists() && &file_digest(&upstream)? != sha {
                problems.push(format!(
                    "{} was produced from a different {}",
                    p.display(),
                    name
                ));
            }
        }
        if !config_digests.is_empty() {
            for cd in &prov.config_digests {
                if !config_digests.contains(cd) {
                    problems.push(format!(
                        "{} traces to config {cd}, which is not among the given configs",
                        p.display()
                    ));
                }
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::invalid(format!(
            "digest mismatch: {}",
            problems.join("; ")
        )));
    }
    d.set("sidecars_checked", checked);
    d.set(
        "digest_check",
        if checked > 0 || !config_digests.is_empty() {
            "ok"
        } else {
            "not_applicable"
        },
    );
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::{budget_report, BudgetInputs};
    use crate::io::write_atomic;
    use crate::provenance::stamp;

    #[test]
    fn empty_inputs_give_absent_sections() {
        let d = build_report(&ReportInputs::default()).unwrap();
        for s in ["budget", "hom_fit", "tuning"] {
            assert_eq!(d.get(s, "status"), Some("absent"));
        }
        assert_eq!(d.get("digests", "digest_check"), Some("not_applicable"));
    }

    #[test]
    fn missing_inputs_are_enumerated() {
        let inputs = ReportInputs {
            budget: Some("/nonexistent/b.kv".into()),
            trace: Some("/nonexistent/t.csv".into()),
            ..Default::default()
        };
        let msg = build_report(&inputs).unwrap_err().to_string();
        assert!(msg.contains("b.kv") && msg.contains("t.csv"), "{msg}");
    }

    #[test]
    fn fit_visibility_and_budget_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let fit = dir.path().join("fit.kv");
        write_atomic(
            &fit,
            b"[hom_fit]\nv = 0.96\ng_par_0 = 0.96\ng_perp_0 = 0.72\nvisibility = 0.3333333333\nvisibility_err = 0.01\n",
        )
        .unwrap();
        let budget = dir.path().join("budget.kv");
        budget_report(&BudgetInputs::default())
            .unwrap()
            .write(&budget)
            .unwrap();
        let inputs = ReportInputs {
            budget: Some(budget),
            fit: Some(fit),
            ..Default::default()
        };
        let d = build_report(&inputs).unwrap();
        assert_eq!(d.get("hom_fit", "visibility_display"), Some("0.33 ± 0.01"));
        assert_eq!(d.get("budget", "system_efficiency_display"), Some("1.7%"));
        assert_eq!(build_report(&inputs).unwrap().render(), d.render());
    }

    #[test]
    fn tampered_output_fails_the_check() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("hist.csv");
        write_atomic(&a, b"lag_ps,counts,normalized\n").unwrap();
        stamp("correlate", &a, vec!["abc".into()], &[]).unwrap();
        let inputs = ReportInputs {
            artifacts: vec![a.clone()],
            ..Default::default()
        };
        assert!(build_report(&inputs).is_ok());
        write_atomic(&a, b"lag_ps,counts,normalized\n0,1,\n").unwrap();
        assert!(build_report(&inputs)
            .unwrap_err()
            .to_string()
            .contains("digest mismatch"));
    }
}

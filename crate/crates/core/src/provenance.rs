//! `.meta` sidecars that tie each output file to the configuration and
//! input files it was produced from.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{file_digest, KvDocument};

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub stage: String,
    /// Digests of every experiment configuration upstream of the file.
    pub config_digests: Vec<String>,
    pub sha256: String,
    /// Input file name (no directory) and its digest when it was read.
    pub inputs: Vec<(String, String)>,
}

pub fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| p.display().to_string())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

impl Provenance {
    /// Describes `output`, which must already be written.
    pub fn for_output(
        stage: &str,
        output: &Path,
        config_digests: Vec<String>,
        inputs: &[&Path],
    ) -> Result<Self> {
        let mut config_digests = config_digests;
        config_digests.sort();
        config_digests.dedup();
        Ok(Self {
            stage: stage.to_string(),
            config_digests,
            sha256: file_digest(output)?,
            inputs: inputs
                .iter()
                .map(|p| Ok((file_name(p), file_digest(p)?)))
                .collect::<Result<_>>()?,
        })
    }

    /// Upstream config digests of `inputs`, read from their sidecars.
    pub fn upstream_digests(inputs: &[&Path]) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for p in inputs {
            if let Some(prov) = Self::read_for(p)? {
                out.extend(prov.config_digests);
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut d = KvDocument::new();
        d.section("provenance")
            .set("stage", &self.stage)
            .set("config_digest", self.config_digests.join(","))
            .set("sha256", &self.sha256);
        if !self.inputs.is_empty() {
            d.section("inputs");
            for (i, (name, sha)) in self.inputs.iter().enumerate() {
                d.set(&format!("input_{i}"), name);
                d.set(&format!("input_{i}_sha256"), sha);
            }
        }
        d
    }

    pub fn write_for(&self, output: &Path) -> Result<()> {
        self.to_kv().write(&sidecar_path(output))
    }

    pub fn read_for(output: &Path) -> Result<Option<Self>> {
        let side = sidecar_path(output);
        if !side.exists() {
            return Ok(None);
        }
        let d = KvDocument::parse(&std::fs::read_to_string(&side)?, "provenance sidecar")?;
        let need = |k: &str| {
            d.get("provenance", k)
                .map(str::to_string)
                .ok_or_else(|| Error::format("provenance sidecar", format!("missing `{k}`")))
        };
        let digests = need("config_digest")?;
        let mut inputs = Vec::new();
        let mut i = 0;
        while let Some(name) = d.get("inputs", &format!("input_{i}")) {
            let sha = d
                .get("inputs", &format!("input_{i}_sha256"))
                .ok_or_else(|| {
                    Error::format("provenance sidecar", format!("input_{i} has no digest"))
                })?;
            inputs.push((name.to_string(), sha.to_string()));
            i += 1;
        }
        Ok(Some(Self {
            stage: need("stage")?,
            config_digests: digests
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
            sha256: need("sha256")?,
            inputs,
        }))
    }
}

/// Writes the sidecar for a freshly written `output`, inheriting upstream
/// config digests from `inputs` and adding `own_digests`.
pub fn stamp(
    stage: &str,
    output: &Path,
    own_digests: Vec<String>,
    inputs: &[&Path],
) -> Result<Provenance> {
    let mut digests = Provenance::upstream_digests(inputs)?;
    digests.extend(own_digests);
    let p = Provenance::for_output(stage, output, digests, inputs)?;
    p.write_for(output)?;
    Ok(p)
}

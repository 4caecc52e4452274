//! File plumbing shared by every on-disk format: atomic writes and the
//! `key = value` structured-text format used for configs, calibrations,
//! sidecars and reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// One `key = value` entry. Keys inside a `[section]` are prefixed with
/// `section.`.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_kv(text: &str, what: &'static str) -> Result<Vec<Entry>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::format(
                what,
                format!("line {}: expected `key = value`", i + 1),
            ));
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::format(what, format!("line {}: empty key", i + 1)));
        }
        let key = if section.is_empty() {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        out.push(Entry {
            key,
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

/// Ordered `[section]` / `key = value` document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDocument {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl KvDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        self.sections.push((name.to_string(), Vec::new()));
        self
    }

    /// Appends to the most recent section (creating an unnamed one first).
    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        if self.sections.is_empty() {
            self.sections.push((String::new(), Vec::new()));
        }
        let (_, entries) = self.sections.last_mut().expect("non-empty");
        entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .filter(|(s, _)| s == section)
            .flat_map(|(_, e)| e.iter())
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, (name, entries)) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            if !name.is_empty() {
                out.push_str(&format!("[{name}]\n"));
            }
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn parse(text: &str, what: &'static str) -> Result<Self> {
        let mut doc = KvDocument::new();
        let mut current: Option<String> = None;
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                doc.section(name.trim());
                current = Some(name.trim().to_string());
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::format(what, format!("bad line `{line}`")));
            };
            if current.is_none() {
                doc.sections.push((String::new(), Vec::new()));
                current = Some(String::new());
            }
            doc.set(k.trim(), v.trim());
        }
        Ok(doc)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Parses `x:y, x:y, ...` anchor lists.
pub fn parse_pairs(value: &str, what: &'static str) -> Result<Vec<(f64, f64)>> {
    value
        .split(',')
        .map(|pair| {
            let (x, y) = pair
                .split_once(':')
                .ok_or_else(|| Error::format(what, format!("expected `x:y`, got `{pair}`")))?;
            let x = x
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::format(what, e.to_string()))?;
            let y = y
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::format(what, e.to_string()))?;
            Ok((x, y))
        })
        .collect()
}

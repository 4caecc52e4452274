//! `TTAG` binary timestamp files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "TTAG"
//! version u16      1
//! count   u64      number of records
//! record  9 bytes  detector id (u8), time_ps (i64)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::photon_sim::DetectionRecord;

pub const MAGIC: &[u8; 4] = b"TTAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;
pub const RECORD_LEN: usize = 9;

pub fn encode(records: &[DetectionRecord]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * records.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        buf.push(r.detector);
        buf.extend_from_slice(&r.time_ps.to_le_bytes());
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Vec<DetectionRecord>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("TTAG file", "shorter than header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("TTAG file", "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format(
            "TTAG file",
            format!("unsupported version {version}"),
        ));
    }
    let count = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != count.saturating_mul(RECORD_LEN as u64) {
        return Err(Error::format(
            "TTAG file",
            format!(
                "header declares {count} records but body holds {} bytes",
                body.len()
            ),
        ));
    }
    Ok(body
        .chunks_exact(RECORD_LEN)
        .map(|c| DetectionRecord {
            detector: c[0],
            time_ps: i64::from_le_bytes(c[1..9].try_into().expect("8 bytes")),
        })
        .collect())
}

pub fn write_file(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    write_atomic(path, &encode(records))
}

pub fn read_file(path: &Path) -> Result<Vec<DetectionRecord>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Streams records to any writer without building the whole buffer.
pub fn write_to(mut w: impl Write, records: &[DetectionRecord]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        w.write_all(&[r.detector])?;
        w.write_all(&r.time_ps.to_le_bytes())?;
    }
    Ok(())
}

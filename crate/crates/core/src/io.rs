//! Binary field files and CSV series. Every write goes to a temporary file
//! in the target directory that is renamed into place once complete.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::lelong::SingularityRecord;

pub const MAGIC: &[u8; 4] = b"PCMA";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

/// Metadata stored ahead of the node values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldHeader {
    pub n: u32,
    pub nodes_per_axis: u32,
    pub h: f64,
    pub time: f64,
    pub m_cap: f64,
}

impl FieldHeader {
    pub fn of(g: &Grid, u: &ScalarField) -> Self {
        FieldHeader {
            n: g.n() as u32,
            nodes_per_axis: g.nodes_per_axis as u32,
            h: g.h,
            time: u.time,
            m_cap: u.m_cap,
        }
    }

    pub fn node_count(&self) -> usize {
        (self.nodes_per_axis as usize).pow(2 * self.n)
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(MAGIC);
        b[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        b[8..12].copy_from_slice(&self.n.to_le_bytes());
        b[12..16].copy_from_slice(&self.nodes_per_axis.to_le_bytes());
        b[16..24].copy_from_slice(&self.h.to_le_bytes());
        b[24..32].copy_from_slice(&self.time.to_le_bytes());
        b[32..40].copy_from_slice(&self.m_cap.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::TruncatedFile);
        }
        if &b[0..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"));
        let f64_at = |i: usize| f64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch(version));
        }
        Ok(FieldHeader {
            n: u32_at(8),
            nodes_per_axis: u32_at(12),
            h: f64_at(16),
            time: f64_at(24),
            m_cap: f64_at(32),
        })
    }
}

/// Replace `path` with `bytes` in one rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn encode_field(header: &FieldHeader, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(&header.to_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode a field file. Floor flags are recovered from `value ≤ −M_cap`;
/// boundary traces are not stored.
pub fn decode_field(bytes: &[u8]) -> Result<(FieldHeader, ScalarField)> {
    let header = FieldHeader::from_bytes(bytes)?;
    let count = header.node_count();
    let body = &bytes[HEADER_LEN..];
    if body.len() < 8 * count {
        return Err(Error::TruncatedFile);
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .take(count)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let floor = values.iter().map(|&v| v <= -header.m_cap).collect();
    let field = ScalarField {
        values,
        floor,
        time: header.time,
        m_cap: header.m_cap,
        trace: None,
    };
    Ok((header, field))
}

pub fn write_field(g: &Grid, u: &ScalarField, path: &Path) -> Result<()> {
    write_atomic(path, &encode_field(&FieldHeader::of(g, u), &u.values))
}

pub fn read_field(path: &Path) -> Result<(FieldHeader, ScalarField)> {
    decode_field(&std::fs::read(path)?)
}

/// Round-trippable rendering: 17 significant digits.
pub fn render(v: f64) -> String {
    format!("{v:.16e}")
}

pub const SERIES_HEADER: &str = "t,u_at_atom,nu_hat,resolved_flag,bound_lo,bound_hi";

/// CSV text of one or more tracking records, one row per snapshot.
pub fn series_csv(records: &[SingularityRecord]) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for rec in records {
        let resolved_at = rec.epsilon_measured();
        for s in &rec.series {
            let flag = u8::from(resolved_at.is_some_and(|e| s.t >= e));
            out.push_str(&format!(
                "{},{},{},{flag},{},{}\n",
                render(s.t),
                render(s.u_at_atom),
                render(s.nu_hat),
                render(rec.bound_lo),
                render(rec.bound_hi)
            ));
        }
    }
    out
}

pub fn write_series(records: &[SingularityRecord], path: &Path) -> Result<()> {
    write_atomic(path, series_csv(records).as_bytes())
}

/// Generic CSV with a header row and numeric cells.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.iter().map(|&v| render(v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

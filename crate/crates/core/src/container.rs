//! Binary container shared by model checkpoints and texton dictionaries.
//!
//! Layout: the 8-byte magic `TEXWEAVE`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then every array as little-endian `f64` values in
//! manifest order. Manifest offsets count elements, not bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TEXWEAVE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: String,
    pub arrays: Vec<ArrayEntry>,
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode(kind: &str, meta: serde_json::Value, arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut offset = 0;
    let entries = arrays
        .iter()
        .map(|a| {
            let expected: usize = a.shape.iter().product();
            if expected != a.data.len() {
                return Err(Error::invalid(format!(
                    "array {} has {} values for shape {:?}",
                    a.name,
                    a.data.len(),
                    a.shape
                )));
            }
            let e = ArrayEntry {
                name: a.name.clone(),
                shape: a.shape.clone(),
                offset,
                len: a.data.len(),
            };
            offset += a.data.len();
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        arrays: entries,
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for a in arrays {
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], expected_kind: &str) -> Result<(Header, Vec<NamedArray>)> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing TEXWEAVE magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    if header.kind != expected_kind {
        return Err(Error::Format(format!(
            "expected a {expected_kind} file, found {}",
            header.kind
        )));
    }
    let data = &bytes[12 + hlen..];
    let total: usize = header.arrays.iter().map(|a| a.len).sum();
    if data.len() != total * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, manifest describes {}",
            data.len(),
            total * 8
        )));
    }
    let mut arrays = Vec::with_capacity(header.arrays.len());
    let mut expected_offset = 0;
    for e in &header.arrays {
        if e.offset != expected_offset || e.shape.iter().product::<usize>() != e.len {
            return Err(Error::Format(format!(
                "inconsistent manifest entry {}",
                e.name
            )));
        }
        expected_offset += e.len;
        let values = data[e.offset * 8..(e.offset + e.len) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push(NamedArray {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: values,
        });
    }
    Ok((header, arrays))
}

/// Writes via a temporary sibling file so a crash never leaves a torn file.
pub fn write(
    path: &Path,
    kind: &str,
    meta: serde_json::Value,
    arrays: &[NamedArray],
) -> Result<()> {
    let bytes = encode(kind, meta, arrays)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read(path: &Path, expected_kind: &str) -> Result<(Header, Vec<NamedArray>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes, expected_kind)
}

//! FMAP1 feature-map files.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `FMAP`                  |
//! | 4      | 1    | version, always 1             |
//! | 5      | 4    | height `H` (u32)              |
//! | 9      | 4    | width `W` (u32)               |
//! | 13     | 4    | channels `C` (u32)            |
//! | 17     | 4·HWC| `f32` values in `[h][w][c]`   |
//!
//! Values are widened to `f64` on read and narrowed to `f32` on write.

use std::path::Path;

use crate::embedding::FeatureMap;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMAP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 17;

pub fn encode_fmap(fm: &FeatureMap) -> Result<Vec<u8>> {
    let dim = |v: usize, name: &str| {
        u32::try_from(v).map_err(|_| Error::pre(format!("{name} = {v} does not fit in 32 bits")))
    };
    let (h, w, c) = (dim(fm.height(), "H")?, dim(fm.width(), "W")?, dim(fm.channels(), "C")?);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * fm.values().len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in [h, w, c] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in fm.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fmap(bytes: &[u8]) -> Result<FeatureMap> {
    let need = |offset: usize, len: usize| -> Result<&[u8]> {
        bytes.get(offset..offset + len).ok_or_else(|| Error::Truncated {
            offset: bytes.len(),
            needed: offset + len - bytes.len(),
        })
    };
    if need(0, 4)? != MAGIC {
        return Err(Error::BadMagic { offset: 0 });
    }
    let version = need(4, 1)?[0];
    if version != VERSION {
        return Err(Error::UnsupportedVersion { offset: 4, version });
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let raw = need(5 + 4 * i, 4)?;
        *d = u32::from_le_bytes(raw.try_into().expect("four bytes")) as usize;
    }
    let [h, w, c] = dims;
    let body = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .filter(|n| n.checked_add(HEADER_LEN).is_some())
        .ok_or(Error::DimensionOverflow { offset: 5 })?;
    let data = need(HEADER_LEN, body)?;
    if bytes.len() > HEADER_LEN + body {
        return Err(Error::TrailingBytes { offset: HEADER_LEN + body });
    }
    let values = data
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("four bytes"))))
        .collect();
    FeatureMap::new(h, w, c, values)
}

pub fn write_fmap(path: impl AsRef<Path>, fm: &FeatureMap) -> Result<()> {
    std::fs::write(path, encode_fmap(fm)?)?;
    Ok(())
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_fmap(&std::fs::read(path)?)
}

//! Flat binary weight files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TDNW"
//! 4       2     format version, u16 LE (currently 1)
//! 6       1     scalar width in bytes (4 = f32, 8 = f64)
//! 7       1     network kind (1 = static schema, 2 = dynamic schema)
//! 8       4     block count B, u32 LE
//! 12      8B    per block: rows u32 LE, cols u32 LE
//! ...           block data in order, row-major, little-endian scalars
//! ```
//!
//! Normalisation statistics and other metadata live in a JSON sidecar next to
//! the weight file (same path with a `.json` extension).

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"TDNW";
pub const FORMAT_VERSION: u16 = 1;
pub const KIND_STATIC: u8 = 1;
pub const KIND_DYNAMIC: u8 = 2;

pub fn encode<T: Real>(kind: u8, blocks: &[&Mat<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::WIDTH);
    out.push(kind);
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(b.cols() as u32).to_le_bytes());
    }
    for b in blocks {
        for &v in b.as_slice() {
            if T::WIDTH == 4 {
                out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                msg: format!("file ends while reading {what} (needed {n} bytes at offset {})", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes a weight file; scalars are converted to `T` whatever width was stored.
pub fn decode<T: Real>(bytes: &[u8], kind: u8) -> Result<Vec<Mat<T>>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic".into() });
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format { offset: 4, msg: format!("unsupported format version {version}") });
    }
    let width = r.take(1, "width")?[0];
    if width != 4 && width != 8 {
        return Err(Error::Format { offset: 6, msg: format!("unsupported scalar width {width}") });
    }
    let got_kind = r.take(1, "kind")?[0];
    if got_kind != kind {
        return Err(Error::Format { offset: 7, msg: format!("expected network kind {kind}, found {got_kind}") });
    }
    let n = r.u32("block count")? as usize;
    let mut dims = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let rows = r.u32("block rows")? as usize;
        let cols = r.u32("block cols")? as usize;
        dims.push((rows, cols));
    }
    let mut out = Vec::with_capacity(dims.len());
    for (rows, cols) in dims {
        let raw = r.take(rows * cols * width as usize, "block data")?;
        let data = raw
            .chunks_exact(width as usize)
            .map(|ch| {
                if width == 4 {
                    T::lit(f32::from_le_bytes(ch.try_into().unwrap()) as f64)
                } else {
                    T::lit(f64::from_le_bytes(ch.try_into().unwrap()))
                }
            })
            .collect();
        out.push(Mat::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format { offset: r.pos as u64, msg: "trailing bytes after last block".into() });
    }
    Ok(out)
}

pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

pub fn save<T: Real, S: Serialize>(path: &Path, kind: u8, blocks: &[&Mat<T>], meta: &S) -> Result<()> {
    std::fs::write(path, encode(kind, blocks))?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn load<T: Real, S: DeserializeOwned>(path: &Path, kind: u8) -> Result<(Vec<Mat<T>>, S)> {
    let blocks = decode(&std::fs::read(path)?, kind)?;
    let meta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    Ok((blocks, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let a = Mat::from_rows(&[[1.0_f64, 2.0], [3.0, 4.5]]);
        let b = Mat::from_rows(&[[-0.25_f64, 7.0, 1e-3]]);
        let bytes = encode(KIND_STATIC, &[&a, &b]);
        assert_eq!(bytes.len(), 12 + 16 + 7 * 8);
        let back: Vec<Mat<f64>> = decode(&bytes, KIND_STATIC).unwrap();
        assert_eq!(back, vec![a.clone(), b]);
        let short = &bytes[..bytes.len() - 3];
        match decode::<f64>(short, KIND_STATIC) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, short.len()),
            other => panic!("{other:?}"),
        }
        assert!(decode::<f64>(&bytes, KIND_DYNAMIC).is_err());
        let narrow: Vec<Mat<f32>> = decode(&encode(KIND_STATIC, &[&a]), KIND_STATIC).unwrap();
        assert_eq!(narrow[0][(1, 1)], 4.5);
    }
}

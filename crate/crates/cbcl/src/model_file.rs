//! Centroid store files (`CBMS`), little-endian:
//!
//! ```text
//! "CBMS" | 0x01 | dim: u32 | n_classes: u32
//! per class: id: u32 | D: f32 | n_centroids: u32 | n_centroids x (weight: u32, dim x f32)
//! ```
//!
//! Centroid means and thresholds are narrowed to `f32` on write.

use std::fs;
use std::path::Path;

use cbcl_core::{Centroid, ClassId, ClassModel, ModelStore};

use crate::error::{Error, FormatIssue, Location, Result};

pub const MAGIC: &[u8; 4] = b"CBMS";
pub const VERSION: u8 = 1;

pub fn encode_model(store: &ModelStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for model in store.models() {
        out.extend_from_slice(&model.class().0.to_le_bytes());
        out.extend_from_slice(&(model.distance_threshold() as f32).to_le_bytes());
        out.extend_from_slice(&(model.centroids().len() as u32).to_le_bytes());
        for c in model.centroids() {
            out.extend_from_slice(&c.weight().to_le_bytes());
            for &v in c.mean() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, Location::Byte(self.pos as u64), FormatIssue::Truncated));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        let at = self.pos;
        let v = f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::format(self.path, Location::Byte(at as u64), FormatIssue::NonFinite));
        }
        Ok(v)
    }

    fn invalid(&self, at: usize, e: impl ToString) -> Error {
        Error::format(self.path, Location::Byte(at as u64), FormatIssue::Invalid(e.to_string()))
    }
}

pub fn decode_model(path: &Path, bytes: &[u8]) -> Result<ModelStore> {
    if bytes.len() < 13 || &bytes[..4] != MAGIC {
        return Err(Error::format(
            path,
            Location::Byte(0),
            FormatIssue::MalformedHeader("expected CBMS magic and 13-byte header".into()),
        ));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(path, Location::Byte(4), FormatIssue::UnsupportedVersion(bytes[4])));
    }
    let mut cur = Cursor { path, bytes, pos: 5 };
    let dim = cur.u32()? as usize;
    let n_classes = cur.u32()?;
    let mut store = ModelStore::new(dim);
    for _ in 0..n_classes {
        let start = cur.pos;
        let class = ClassId(cur.u32()?);
        let d = f64::from(cur.f32()?);
        let n = cur.u32()?;
        let mut centroids = Vec::new();
        for _ in 0..n {
            let at = cur.pos;
            let weight = cur.u32()?;
            let mut mean = Vec::with_capacity(dim);
            for _ in 0..dim {
                mean.push(f64::from(cur.f32()?));
            }
            centroids.push(Centroid::from_parts(mean, weight).map_err(|e| cur.invalid(at, e))?);
        }
        let model = ClassModel::from_parts(class, centroids, d).map_err(|e| cur.invalid(start, e))?;
        store.insert(model).map_err(|e| cur.invalid(start, e))?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(path, Location::Byte(cur.pos as u64), FormatIssue::TrailingBytes));
    }
    Ok(store)
}

pub fn save_model(store: &ModelStore, path: &Path) -> Result<()> {
    fs::write(path, encode_model(store)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(path, &bytes)
}

//! Feature files.
//!
//! Binary (`CBFV`), all integers little-endian:
//!
//! ```text
//! "CBFV" | 0x01 | dim: u32 | count: u32 | count x (label_id: u32, dim x f32)
//! ```
//!
//! CSV: header `label,f0,...,f{dim-1}`, one row per example, `label` holding
//! the class name.
//!
//! Both formats keep a sidecar `<file>.labels` with `label_id<TAB>name` lines.
//! Sidecar ids may be sparse; they are remapped to dense class ids in
//! ascending id order when loading.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cbcl_core::{ClassId, Dataset, FeatureVector, LabelMap, LabeledExample};

use crate::error::{Error, FormatIssue, Location, Result};

pub const MAGIC: &[u8; 4] = b"CBFV";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FeatureFormat {
    /// `.csv` means CSV, anything else binary.
    pub fn infer(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Binary,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    pub l2_normalize: bool,
}

pub fn labels_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".labels");
    PathBuf::from(os)
}

/// Sidecar entries `(external id, name)` sorted by id.
pub fn read_label_file(path: &Path) -> Result<Vec<(u32, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::format(path, Location::Line(line_no), FormatIssue::Invalid(msg.into()));
        let (id, name) = line.split_once('\t').ok_or_else(|| bad("expected `id<TAB>name`"))?;
        let id: u32 = id.trim().parse().map_err(|_| bad("label id is not an unsigned integer"))?;
        if name.is_empty() {
            return Err(bad("empty label name"));
        }
        if entries.iter().any(|(other, _)| *other == id) {
            return Err(bad("duplicate label id"));
        }
        entries.push((id, name.to_string()));
    }
    entries.sort_by_key(|(id, _)| *id);
    Ok(entries)
}

/// A label map plus the external ids its dense ids came from.
pub fn load_label_map(path: &Path) -> Result<(LabelMap, Vec<u32>)> {
    let entries = read_label_file(path)?;
    let ids = entries.iter().map(|(id, _)| *id).collect();
    let map = LabelMap::new(entries.into_iter().map(|(_, n)| n).collect())
        .map_err(|e| Error::format(path, Location::Line(0), FormatIssue::Invalid(e.to_string())))?;
    Ok((map, ids))
}

pub fn write_label_file(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut out = String::new();
    for (id, name) in labels.iter() {
        out.push_str(&format!("{}\t{}\n", id.0, name));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a `CBFV` image; `labels` maps external ids to dense class ids.
pub fn decode_binary(path: &Path, bytes: &[u8], labels: &LabelMap, external_ids: &[u32]) -> Result<Dataset> {
    let header = |detail: &str| Error::format(path, Location::Byte(0), FormatIssue::MalformedHeader(detail.into()));
    if bytes.len() < HEADER_LEN {
        return Err(header("file shorter than the 13-byte header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(header("missing CBFV magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(path, Location::Byte(4), FormatIssue::UnsupportedVersion(bytes[4])));
    }
    let dim = read_u32(bytes, 5) as usize;
    let count = read_u32(bytes, 9) as usize;
    if dim == 0 {
        return Err(Error::format(path, Location::Byte(5), FormatIssue::MalformedHeader("dimension is zero".into())));
    }
    let record_len = 4 + 4 * dim;
    let body = bytes.len() - HEADER_LEN;
    if body < count.saturating_mul(record_len) {
        let offset = HEADER_LEN + (body / record_len) * record_len;
        return Err(Error::format(path, Location::Byte(offset as u64), FormatIssue::Truncated));
    }
    if body > count * record_len {
        let offset = HEADER_LEN + count * record_len;
        return Err(Error::format(path, Location::Byte(offset as u64), FormatIssue::TrailingBytes));
    }

    let mut examples = Vec::with_capacity(count);
    let mut values = vec![0f32; dim];
    for r in 0..count {
        let start = HEADER_LEN + r * record_len;
        let external = read_u32(bytes, start);
        let label = external_ids
            .binary_search(&external)
            .map(|i| ClassId(i as u32))
            .map_err(|_| Error::format(path, Location::Byte(start as u64), FormatIssue::UnknownLabel(external)))?;
        for (k, v) in values.iter_mut().enumerate() {
            let at = start + 4 + 4 * k;
            *v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::format(path, Location::Byte(at as u64), FormatIssue::NonFinite));
            }
        }
        examples.push(LabeledExample { vector: FeatureVector::from_f32(&values)?, label });
    }
    Ok(Dataset::new(dim, labels.clone(), examples)?)
}

/// `CBFV` image of `ds`, labels written as their dense ids. Coordinates are
/// narrowed to `f32`.
pub fn encode_binary(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * (4 + 4 * ds.dim()));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    for ex in ds.examples() {
        out.extend_from_slice(&ex.label.0.to_le_bytes());
        for &v in ex.vector.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn load_csv(path: &Path, sidecar: Option<(LabelMap, Vec<u32>)>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let header_err = |d: &str| Error::format(path, Location::Line(1), FormatIssue::MalformedHeader(d.into()));
    if headers.len() < 2 || &headers[0] != "label" {
        return Err(header_err("expected `label,f0,...`"));
    }
    for (k, h) in headers.iter().skip(1).enumerate() {
        if h != format!("f{k}") {
            return Err(header_err("feature columns must be f0..f{dim-1}"));
        }
    }
    let dim = headers.len() - 1;

    let mut rows: Vec<(String, Vec<f64>, u64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let at = Location::Line(line);
        if record.len() != dim + 1 {
            return Err(Error::format(
                path,
                at,
                FormatIssue::DimensionMismatch { expected: dim, found: record.len().saturating_sub(1) },
            ));
        }
        let mut values = Vec::with_capacity(dim);
        for field in record.iter().skip(1) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, at, FormatIssue::Invalid(format!("not a number: {field:?}"))))?;
            if !v.is_finite() {
                return Err(Error::format(path, at, FormatIssue::NonFinite));
            }
            values.push(f64::from(v));
        }
        rows.push((record[0].to_string(), values, line));
    }

    let labels = match sidecar {
        Some((map, _)) => map,
        None => {
            let mut names: Vec<String> = rows.iter().map(|(n, _, _)| n.clone()).collect();
            names.sort();
            names.dedup();
            LabelMap::new(names)?
        }
    };
    let mut examples = Vec::with_capacity(rows.len());
    for (name, values, line) in rows {
        let label = labels.id_of(&name).ok_or_else(|| {
            Error::format(path, Location::Line(line), FormatIssue::Invalid(format!("unknown label {name:?}")))
        })?;
        examples.push(LabeledExample { vector: FeatureVector::new(values)?, label });
    }
    Ok(Dataset::new(dim, labels, examples)?)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, Location::Line(line), FormatIssue::Invalid(format!("{other:?}"))),
    }
}

pub fn load_features(path: &Path, format: FeatureFormat, options: LoadOptions) -> Result<Dataset> {
    let sidecar_path = labels_path(path);
    let ds = match format {
        FeatureFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let (labels, ids) = load_label_map(&sidecar_path)?;
            decode_binary(path, &bytes, &labels, &ids)?
        }
        FeatureFormat::Csv => {
            let sidecar = if sidecar_path.exists() { Some(load_label_map(&sidecar_path)?) } else { None };
            load_csv(path, sidecar)?
        }
    };
    Ok(if options.l2_normalize { ds.l2_normalized() } else { ds })
}

pub fn save_features(ds: &Dataset, path: &Path, format: FeatureFormat) -> Result<()> {
    match format {
        FeatureFormat::Binary => fs::write(path, encode_binary(ds)).map_err(|e| Error::io(path, e))?,
        FeatureFormat::Csv => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            let mut line = String::from("label");
            for k in 0..ds.dim() {
                line.push_str(&format!(",f{k}"));
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            for ex in ds.examples() {
                let name = ds.labels().name(ex.label).expect("dataset labels are valid");
                line.clear();
                line.push_str(name);
                for &v in ex.vector.as_slice() {
                    line.push_str(&format!(",{}", v as f32));
                }
                writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    write_label_file(&labels_path(path), ds.labels())
}

/// Summary of a file that loaded cleanly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileReport {
    pub dim: usize,
    pub count: usize,
    pub classes: usize,
}

pub fn validate_file(path: &Path, format: FeatureFormat) -> Result<FileReport> {
    let ds = load_features(path, format, LoadOptions::default())?;
    Ok(FileReport { dim: ds.dim(), count: ds.len(), classes: ds.labels().len() })
}

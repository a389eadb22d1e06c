//! Scene files and arrangement store files.
//!
//! Scene file:
//!
//! ```text
//! image <width> <height>
//! <label_name> <x_min> <y_min> <x_max> <y_max>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Label names may
//! contain spaces; the last four tokens are the box.
//!
//! Arrangement store:
//!
//! ```text
//! cbcl-arrangements 1 <n_classes>
//! <name>\t<run lengths>
//! ```
//!
//! Run lengths are comma separated and alternate zeros and ones, starting
//! with a (possibly empty) run of zeros.

use std::fs;
use std::path::Path;

use cbcl_core::arrangement::{ArrangementStore, ArrangementVector, BoundingBox, Scene, SceneObject};
use cbcl_core::LabelMap;

use crate::error::{Error, FormatIssue, Location, Result};

const STORE_HEADER: &str = "cbcl-arrangements";
const STORE_VERSION: &str = "1";

fn bad(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::format(path, Location::Line(line as u64), FormatIssue::Invalid(msg.into()))
}

pub fn parse_scene(path: &Path, text: &str, labels: &LabelMap) -> Result<Scene> {
    let mut size = None;
    let mut objects = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let number = |t: &str| -> Result<f64> {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(path, line_no, format!("not a finite number: {t:?}")))
        };
        if size.is_none() {
            if tokens.len() != 3 || tokens[0] != "image" {
                return Err(Error::format(
                    path,
                    Location::Line(line_no as u64),
                    FormatIssue::MalformedHeader("expected `image <width> <height>`".into()),
                ));
            }
            size = Some((number(tokens[1])?, number(tokens[2])?));
            continue;
        }
        if tokens.len() < 5 {
            return Err(bad(path, line_no, "expected `<label> <x_min> <y_min> <x_max> <y_max>`"));
        }
        let split = tokens.len() - 4;
        let name = tokens[..split].join(" ");
        let label = labels.id_of(&name).ok_or_else(|| bad(path, line_no, format!("unknown label {name:?}")))?;
        let c: Vec<f64> = tokens[split..].iter().map(|t| number(t)).collect::<Result<_>>()?;
        objects.push(SceneObject { label, bbox: BoundingBox::new(c[0], c[1], c[2], c[3]) });
    }
    let (width, height) = size.ok_or_else(|| {
        Error::format(path, Location::Line(1), FormatIssue::MalformedHeader("missing `image` line".into()))
    })?;
    let scene = Scene { width, height, objects };
    scene.validate().map_err(|e| Error::format(path, Location::Line(0), FormatIssue::Invalid(e.to_string())))?;
    Ok(scene)
}

pub fn load_scene(path: &Path, labels: &LabelMap) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(path, &text, labels)
}

pub fn write_scene(scene: &Scene, labels: &LabelMap) -> String {
    let mut out = format!("image {} {}\n", scene.width, scene.height);
    for o in &scene.objects {
        let b = &o.bbox;
        let name = labels.name(o.label).unwrap_or("?");
        out.push_str(&format!("{name} {} {} {} {}\n", b.x_min, b.y_min, b.x_max, b.y_max));
    }
    out
}

pub fn run_lengths(bits: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &b in bits {
        if b != current {
            runs.push(len);
            current = b;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    runs
}

pub fn encode_store(store: &ArrangementStore) -> String {
    let mut out = format!("{STORE_HEADER} {STORE_VERSION} {}\n", store.n_classes());
    for (name, v) in store.entries() {
        let runs: Vec<String> = run_lengths(v.bits()).iter().map(usize::to_string).collect();
        out.push_str(&format!("{name}\t{}\n", runs.join(",")));
    }
    out
}

pub fn decode_store(path: &Path, text: &str) -> Result<ArrangementStore> {
    let mut lines = text.lines().enumerate();
    let header_err = || {
        Error::format(
            path,
            Location::Line(1),
            FormatIssue::MalformedHeader(format!("expected `{STORE_HEADER} {STORE_VERSION} <n_classes>`")),
        )
    };
    let (_, header) = lines.next().ok_or_else(header_err)?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 3 || tokens[0] != STORE_HEADER {
        return Err(header_err());
    }
    if tokens[1] != STORE_VERSION {
        let v = tokens[1].parse().unwrap_or(u8::MAX);
        return Err(Error::format(path, Location::Line(1), FormatIssue::UnsupportedVersion(v)));
    }
    let n: usize = tokens[2].parse().map_err(|_| header_err())?;
    let mut store = ArrangementStore::new(n);
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (name, runs) =
            line.split_once('\t').ok_or_else(|| bad(path, line_no, "expected `<name><TAB><run lengths>`"))?;
        let mut bits = Vec::new();
        let mut value = false;
        for r in runs.split(',') {
            let len: usize = r.trim().parse().map_err(|_| bad(path, line_no, format!("bad run length {r:?}")))?;
            if bits.len() + len > n + 2 * n * n {
                return Err(bad(path, line_no, "run lengths exceed the vector length"));
            }
            bits.extend(std::iter::repeat_n(value, len));
            value = !value;
        }
        let v = ArrangementVector::from_bits(n, bits).map_err(|e| bad(path, line_no, e.to_string()))?;
        store.insert(name, v).map_err(|e| bad(path, line_no, e.to_string()))?;
    }
    Ok(store)
}

pub fn load_store(path: &Path) -> Result<ArrangementStore> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_store(path, &text)
}

pub fn save_store(store: &ArrangementStore, path: &Path) -> Result<()> {
    fs::write(path, encode_store(store)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> LabelMap {
        LabelMap::new(vec!["tooth brush".into(), "toothpaste".into(), "soap".into()]).unwrap()
    }

    #[test]
    fn scene_parses_multiword_labels() {
        let text = "# kitchen\nimage 100 50\ntooth brush 1 1 10 10\n\nsoap 20 5 30 15\n";
        let s = parse_scene(Path::new("s.txt"), text, &labels()).unwrap();
        assert_eq!(s.objects.len(), 2);
        assert_eq!(s.objects[0].label.0, 0);
        assert_eq!(s.objects[1].bbox, BoundingBox::new(20.0, 5.0, 30.0, 15.0));
        let again = parse_scene(Path::new("s.txt"), &write_scene(&s, &labels()), &labels()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn scene_errors() {
        let p = Path::new("s.txt");
        assert!(parse_scene(p, "", &labels()).is_err());
        assert!(parse_scene(p, "soap 1 1 2 2\n", &labels()).is_err());
        let e = parse_scene(p, "image 10 10\nshampoo 1 1 2 2\n", &labels()).unwrap_err();
        assert!(matches!(e, Error::Format { location: Location::Line(2), .. }));
        assert!(parse_scene(p, "image 10 10\nsoap 1 1 2 2\nsoap 3 3 4 4\n", &labels()).is_err());
        assert!(parse_scene(p, "image 10 10\nsoap 1 1 2 nan\n", &labels()).is_err());
    }

    #[test]
    fn run_length_round_trip() {
        assert_eq!(run_lengths(&[]), vec![0]);
        assert_eq!(run_lengths(&[true, true, false]), vec![0, 2, 1]);
        assert_eq!(run_lengths(&[false, true]), vec![1, 1]);
        let scene = Scene {
            width: 100.0,
            height: 100.0,
            objects: vec![
                SceneObject { label: cbcl_core::ClassId(0), bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0) },
                SceneObject { label: cbcl_core::ClassId(2), bbox: BoundingBox::new(50.0, 0.0, 60.0, 10.0) },
            ],
        };
        let mut store = ArrangementStore::new(3);
        store.learn("pair", &scene).unwrap();
        store.learn("empty", &Scene { objects: vec![], ..scene.clone() }).unwrap();
        let text = encode_store(&store);
        assert!(text.starts_with("cbcl-arrangements 1 3\n"));
        assert_eq!(decode_store(Path::new("a.txt"), &text).unwrap(), store);
    }

    #[test]
    fn store_errors() {
        let p = Path::new("a.txt");
        assert!(decode_store(p, "").is_err());
        assert!(decode_store(p, "cbcl-arrangements 2 3\n").is_err());
        assert!(decode_store(p, "cbcl-arrangements 1 1\nx\t0,4\n").is_err());
        // relation bit without presence bits
        assert!(decode_store(p, "cbcl-arrangements 1 2\nx\t2,1,7\n").is_err());
    }
}

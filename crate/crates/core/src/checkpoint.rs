//! On-disk parameter format: `manifest.txt` plus `tensors.bin`.
//!
//! The manifest holds `meta key value` lines and one
//! `tensor name dims byte_offset` line per tensor, with dims joined by `x`.
//! The blob is every tensor's values as little-endian `f32`, concatenated in
//! visiting order.

use std::fs;
use std::path::Path;

use crate::tensor::TensorSet;
use crate::{Error, Result, Scalar};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "tensors.bin";
const HEADER: &str = "# mdmixer checkpoint v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn render(&self) -> String {
        let mut s = format!("{HEADER}\n");
        for (k, v) in &self.meta {
            s.push_str(&format!("meta {k} {v}\n"));
        }
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            s.push_str(&format!("tensor {} {} {}\n", t.name, dims.join("x"), t.offset));
        }
        s
    }

    fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Checkpoint("missing manifest header".into()));
        }
        let mut m = Manifest::default();
        for (i, line) in lines.enumerate() {
            let bad = || Error::Checkpoint(format!("malformed manifest line {}: '{line}'", i + 2));
            let mut parts = line.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some("meta"), Some(rest)) => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    m.meta.push((k.to_string(), v.to_string()));
                }
                (Some("tensor"), Some(rest)) => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 3 {
                        return Err(bad());
                    }
                    let shape = f[1]
                        .split('x')
                        .map(|d| d.parse::<usize>().map_err(|_| bad()))
                        .collect::<Result<Vec<_>>>()?;
                    let offset = f[2].parse().map_err(|_| bad())?;
                    m.tensors.push(TensorEntry { name: f[0].to_string(), shape, offset });
                }
                (Some(""), None) => {}
                _ => return Err(bad()),
            }
        }
        Ok(m)
    }
}

/// Writes `params` and `meta` into directory `dir`, creating it if needed.
pub fn save<T: Scalar, P: TensorSet<T>>(dir: impl AsRef<Path>, params: &P, meta: &[(String, String)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(params.num_elements() * 4);
    let mut manifest = Manifest { meta: meta.to_vec(), tensors: Vec::new() };
    params.visit(&mut |name, shape, data| {
        manifest.tensors.push(TensorEntry { name: name.to_string(), shape: shape.to_vec(), offset: blob.len() });
        for v in data {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    });
    for (k, v) in meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("meta key '{k}' must be a single token with a one-line value")));
        }
    }
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    let man_path = dir.join(MANIFEST_FILE);
    fs::write(&man_path, manifest.render()).map_err(|e| Error::io(&man_path, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::parse(&text)
}

/// Fills `params` from `dir`. Tensor names, order and shapes must match the
/// template exactly; the first mismatch is reported by name.
pub fn load_into<T: Scalar, P: TensorSet<T>>(dir: impl AsRef<Path>, params: &mut P) -> Result<Manifest> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let mut expected = Vec::new();
    params.visit(&mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
    for (i, (name, shape)) in expected.iter().enumerate() {
        match manifest.tensors.get(i) {
            Some(t) if &t.name == name && &t.shape == shape => {
                if t.offset + 4 * t.len() > blob.len() {
                    return Err(Error::Checkpoint(format!("tensor '{name}' extends past the end of {BLOB_FILE}")));
                }
            }
            Some(t) => {
                return Err(Error::Shape {
                    stage: "checkpoint",
                    expected: format!("tensor '{name}' {shape:?}"),
                    got: format!("tensor '{}' {:?}", t.name, t.shape),
                })
            }
            None => {
                return Err(Error::Shape {
                    stage: "checkpoint",
                    expected: format!("tensor '{name}' {shape:?}"),
                    got: "nothing".into(),
                })
            }
        }
    }
    if let Some(extra) = manifest.tensors.get(expected.len()) {
        return Err(Error::Shape {
            stage: "checkpoint",
            expected: "no further tensors".into(),
            got: format!("tensor '{}' {:?}", extra.name, extra.shape),
        });
    }

    let mut i = 0;
    params.visit_mut(&mut |_, _, data| {
        let off = manifest.tensors[i].offset;
        for (k, v) in data.iter_mut().enumerate() {
            let at = off + 4 * k;
            let bytes: [u8; 4] = blob[at..at + 4].try_into().expect("4-byte slice");
            *v = T::of(f32::from_le_bytes(bytes) as f64);
        }
        i += 1;
    });
    Ok(manifest)
}

//! Model files.
//!
//! ```text
//! "OCRM"  u32 version  u32 header_len  header (UTF-8 JSON)
//! per tensor: u32 name_len  name  u32 rank  rank x u32 dims  f32 data
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec, Norm};
use crate::error::{Error, IoContext, Result};

const MAGIC: &[u8; 4] = b"OCRM";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    charset_hash: String,
    norm: Norm,
    lineage: Vec<String>,
    tensors: Vec<String>,
}

pub(super) fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let tensors = model.tensors();
    let header = Header {
        spec: model.spec().clone(),
        charset_hash: model.charset_hash().to_owned(),
        norm: model.norm(),
        lineage: model.lineage().to_vec(),
        tensors: tensors.iter().map(|t| t.0.clone()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + model.params().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, dims, data) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::ModelFormat(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub(super) fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::ModelFormat("bad magic (not an OCRM file)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
    let mut model = Model::zeros(header.spec, header.charset_hash, header.norm)?;
    for stage in header.lineage {
        model.push_lineage(stage);
    }
    let expected: Vec<(String, Vec<usize>, usize)> = model
        .tensors()
        .into_iter()
        .map(|(n, d, data)| (n, d, data.len()))
        .collect();
    if header.tensors.len() != expected.len()
        || header.tensors.iter().zip(&expected).any(|(a, b)| *a != b.0)
    {
        return Err(Error::ModelFormat(
            "header tensor list does not match the architecture".into(),
        ));
    }
    let mut values = Vec::with_capacity(model.params().len());
    for (name, dims, count) in &expected {
        let n = r.u32()? as usize;
        let got = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::ModelFormat("tensor name is not UTF-8".into()))?;
        if got != name {
            return Err(Error::ModelFormat(format!(
                "expected tensor {name}, found {got}"
            )));
        }
        let rank = r.u32()? as usize;
        let mut got_dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            got_dims.push(r.u32()? as usize);
        }
        if &got_dims != dims {
            return Err(Error::ModelFormat(format!(
                "tensor {name}: dims {got_dims:?}, spec implies {dims:?}"
            )));
        }
        for chunk in r.take(count * 4)?.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    model.params_mut().copy_from_slice(&values);
    Ok(model)
}

/// Writes to a temporary sibling and renames, so readers never see a
/// partial file.
pub(super) fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).at(dir)?;
        }
    }
    let tmp = path.with_extension("ocrm.partial");
    fs::write(&tmp, bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub(super) fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).at(path)?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::ModelFormat(m) => Error::ModelFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charset::Charset;

    fn model() -> Model {
        let mut m = Model::init(
            ModelSpec::preset("lenet-like").unwrap(),
            Charset::default().hash(),
            Norm {
                mean: 0.3,
                std: 0.2,
            },
            7,
        )
        .unwrap();
        m.push_lineage("source");
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ocrm");
        m.save(&p).unwrap();
        assert_eq!(Model::load(&p).unwrap(), m);
    }

    #[test]
    fn layout_follows_the_documented_format() {
        let m = model();
        let bytes = to_bytes(&m).unwrap();
        assert_eq!(&bytes[..4], b"OCRM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + hlen]).unwrap();
        assert_eq!(header["lineage"][0], "source");
        let mut p = 12 + hlen;
        let nlen = u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
        p += 4;
        assert_eq!(&bytes[p..p + nlen], b"0.conv.weight");
        p += nlen;
        assert_eq!(u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()), 4);
        p += 4 + 16;
        let first = f32::from_le_bytes(bytes[p..p + 4].try_into().unwrap());
        assert_eq!(first.to_bits(), m.params()[0].to_bits());
        let total = 12
            + hlen
            + m.tensors()
                .iter()
                .map(|(n, d, data)| 4 + n.len() + 4 + 4 * d.len() + 4 * data.len())
                .sum::<usize>();
        assert_eq!(bytes.len(), total);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = to_bytes(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(from_bytes(&long).is_err());
        let mut ver = bytes;
        ver[4] = 9;
        assert!(from_bytes(&ver)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }
}

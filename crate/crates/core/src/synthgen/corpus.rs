//! On-disk corpora.
//!
//! Character corpora live at `<root>/<split>/<class>/<index>.png` with a
//! `manifest.jsonl` at the root. Field corpora live at
//! `<root>/fields/<index>.png` with `fields.jsonl`. Manifests are written
//! under a `.incomplete` suffix and renamed once every file is on disk, so
//! an interrupted run never leaves a manifest that looks finished.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{FieldKind, FieldTextSampler, Generator, Provenance};
use crate::charset::ClassId;
use crate::error::{Error, IoContext, Result};
use crate::imaging::{write_png, BBox};
use crate::rng::{derive_seed, label_hash, SeededRng};

pub const MANIFEST: &str = "manifest.jsonl";
pub const FIELD_MANIFEST: &str = "fields.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub classes: Vec<ClassId>,
    pub splits: Vec<SplitSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the corpus root.
    pub path: String,
    pub split: String,
    pub class: ClassId,
    pub seed: u64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub path: String,
    pub text: String,
    pub boxes: Vec<BBox>,
    pub seed: u64,
    pub style: String,
    pub kind: FieldKind,
    /// Format rule describing the field, if any.
    pub rule: Option<String>,
}

/// Seed of sample `index` of `class` in `split`.
pub fn sample_seed(master: u64, split: &str, class: ClassId, index: usize) -> u64 {
    derive_seed(
        master,
        &[label_hash(split), u64::from(class.0), index as u64],
    )
}

pub fn generate_char_corpus(
    generator: &Generator,
    spec: &CorpusSpec,
    root: &Path,
    master_seed: u64,
) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for split in &spec.splits {
        for &class in &spec.classes {
            for index in 0..split.per_class {
                entries.push(ManifestEntry {
                    path: format!("{}/{}/{}.png", split.name, class, index),
                    split: split.name.clone(),
                    class,
                    seed: sample_seed(master_seed, &split.name, class, index),
                    provenance: Provenance::Synthetic,
                });
            }
        }
    }
    for split in &spec.splits {
        for class in &spec.classes {
            let dir = root.join(&split.name).join(class.to_string());
            fs::create_dir_all(&dir).at(&dir)?;
        }
    }
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let sample = generator.render_char(e.class, e.seed)?;
        write_png(&sample.image, &root.join(&e.path))
    })?;
    write_jsonl(&root.join(MANIFEST), &entries)?;
    Ok(entries)
}

/// Renders `count` fields. Field `i` is fully determined by its seed: the
/// text comes from a stream derived from it and the rendering uses it
/// directly.
pub fn generate_field_corpus(
    generator: &Generator,
    sampler: &FieldTextSampler,
    count: usize,
    root: &Path,
    master_seed: u64,
) -> Result<Vec<FieldEntry>> {
    let dir = root.join("fields");
    fs::create_dir_all(&dir).at(&dir)?;
    let entries = (0..count)
        .into_par_iter()
        .map(|i| -> Result<FieldEntry> {
            let seed = derive_seed(master_seed, &[label_hash("fields"), i as u64]);
            let (kind, text) = sampler.sample(&mut SeededRng::new(derive_seed(seed, &[1])));
            let field = generator.render_field(&text, seed)?;
            let path = format!("fields/{i}.png");
            write_png(&field.image, &root.join(&path))?;
            Ok(FieldEntry {
                path,
                text,
                boxes: field.boxes,
                seed,
                style: field.style,
                kind,
                rule: Some(kind.rule_id().to_owned()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&root.join(FIELD_MANIFEST), &entries)?;
    Ok(entries)
}

/// Writes one JSON object per line, atomically with respect to readers.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let partial = path.with_extension("jsonl.incomplete");
    {
        let file = fs::File::create(&partial).at(&partial)?;
        let mut out = BufWriter::new(file);
        for item in items {
            serde_json::to_writer(&mut out, item)?;
            out.write_all(b"\n").at(&partial)?;
        }
        out.flush().at(&partial)?;
    }
    fs::rename(&partial, path).at(path)
}

/// Writes pretty JSON with a trailing newline via a temporary sibling.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let partial = path.with_extension("json.incomplete");
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(&partial, bytes).at(&partial)?;
    fs::rename(&partial, path).at(path)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let incomplete = path.with_extension("jsonl.incomplete");
    if incomplete.exists() && !path.exists() {
        return Err(Error::Corpus {
            path: path.to_owned(),
            reason: "manifest is incomplete (interrupted write)".into(),
        });
    }
    let file = fs::File::open(path).at(path)?;
    let mut items = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| Error::Corpus {
            path: path.to_owned(),
            reason: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(items)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    read_jsonl(&root.join(MANIFEST))
}

pub fn read_field_manifest(root: &Path) -> Result<Vec<FieldEntry>> {
    read_jsonl(&root.join(FIELD_MANIFEST))
}

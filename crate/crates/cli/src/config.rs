//! Run configuration: built-in defaults, then the TOML file, then
//! `IDOCR_*` environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use idocr::bootstrap::BootstrapConfig;
use idocr::charset::ClassSubset;
use idocr::classify::{LinearConfig, ModelSpec, TrainConfig};
use idocr::rng::{derive_seed, label_hash};
use idocr::segment::SegmentParams;
use idocr::synthgen::GenParams;

pub const ENV_PREFIX: &str = "IDOCR_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub fonts: PathBuf,
    /// Corpora, models and bootstrap runs are written below this directory.
    pub work: PathBuf,
    pub rules: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSizes {
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Pseudo-real fields mined during bootstrapping.
    pub mine_fields: usize,
    /// Pseudo-real fields mined once for the frozen character test set.
    pub test_fields: usize,
    /// Pseudo-real fields for end-to-end evaluation.
    pub eval_fields: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub classes: ClassSubset,
    /// Preset trained by `train` and bootstrapped by `bootstrap`.
    pub model: String,
    pub paths: Paths,
    pub corpus: CorpusSizes,
    pub source: GenParams,
    pub pseudo_real: GenParams,
    pub train: TrainConfig,
    pub linear: LinearConfig,
    pub bootstrap: BootstrapConfig,
    pub segment: SegmentParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: ClassSubset::Desk,
            model: "cifarnet-like".into(),
            paths: Paths {
                fonts: "fonts/fonts.toml".into(),
                work: "work".into(),
                rules: "configs/rules.toml".into(),
            },
            corpus: CorpusSizes {
                train_per_class: 2000,
                test_per_class: 200,
                mine_fields: 4000,
                test_fields: 1200,
                eval_fields: 320,
            },
            source: GenParams::source(),
            pseudo_real: GenParams::pseudo_real(),
            train: TrainConfig::default(),
            linear: LinearConfig::default(),
            bootstrap: BootstrapConfig::default(),
            segment: SegmentParams::default(),
        }
    }
}

/// Recursively overlays `over` onto `base`; tables merge, anything else
/// replaces.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `IDOCR_TRAIN__EPOCHS=3` sets `train.epochs`; `__` separates levels. The
/// value is read as a TOML value, falling back to a plain string.
fn env_overrides(vars: impl Iterator<Item = (String, String)>) -> Result<toml::Value> {
    let mut root = toml::Table::new();
    let mut pairs: Vec<_> = vars.filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    pairs.sort();
    for (key, raw) in pairs {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_ascii_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            bail!("malformed override variable {key}");
        }
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or(toml::Value::String(raw));
        let mut table = &mut root;
        for part in &path[..path.len() - 1] {
            table = table
                .entry(part.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .with_context(|| format!("override {key} conflicts with another variable"))?;
        }
        table.insert(path[path.len() - 1].clone(), value);
    }
    Ok(toml::Value::Table(root))
}

impl RunConfig {
    /// Layers the file at `path` (if any) and `IDOCR_*` variables over the
    /// defaults.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        Self::load_with(path, std::env::vars())
    }

    pub fn load_with(
        path: Option<&Path>,
        vars: impl Iterator<Item = (String, String)>,
    ) -> Result<RunConfig> {
        let mut value = toml::Value::try_from(RunConfig::default())?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let file: toml::Table = text.parse().map_err(|e: toml::de::Error| {
                anyhow::anyhow!("{}: {}", path.display(), e.message())
            })?;
            merge(&mut value, toml::Value::Table(file));
        }
        merge(&mut value, env_overrides(vars)?);
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| {
            anyhow::anyhow!("invalid configuration: {}", e.message())
        })?;
        Ok(cfg)
    }

    /// Derives every component seed from the master seed. Derived seeds use
    /// the full `u64` range, so only the unseeded form is written to TOML.
    pub fn seeded(mut self) -> Self {
        let s = |tag: &str| derive_seed(self.seed, &[label_hash(tag)]);
        self.train.seed = s("train");
        self.linear.seed = s("linear");
        self.bootstrap.seed = s("bootstrap");
        self
    }

    pub fn corpus_seed(&self, corpus: &str) -> u64 {
        derive_seed(self.seed, &[label_hash("corpus"), label_hash(corpus)])
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if i64::try_from(self.seed).is_err() {
            p.push(format!("seed must be at most {}", i64::MAX));
        }
        let split = |prefix: &str, r: idocr::Result<()>, p: &mut Vec<String>| {
            if let Err(e) = r {
                let msg = e.to_string();
                let msg = msg
                    .strip_prefix("invalid configuration: ")
                    .unwrap_or(&msg)
                    .to_owned();
                p.extend(msg.split("; ").map(|m| format!("{prefix}{m}")));
            }
        };
        for (name, path) in [
            ("paths.fonts", &self.paths.fonts),
            ("paths.rules", &self.paths.rules),
        ] {
            if !path.is_file() {
                p.push(format!("{name}: {} does not exist", path.display()));
            }
        }
        if let Err(e) = ModelSpec::preset(&self.model) {
            p.push(format!("model: {e}"));
        }
        let c = &self.corpus;
        for (name, v) in [
            ("train_per_class", c.train_per_class),
            ("test_per_class", c.test_per_class),
            ("mine_fields", c.mine_fields),
            ("test_fields", c.test_fields),
            ("eval_fields", c.eval_fields),
        ] {
            if v == 0 {
                p.push(format!("corpus.{name} must be positive"));
            }
        }
        split("source: ", self.source.validate(), &mut p);
        split("pseudo_real: ", self.pseudo_real.validate(), &mut p);
        split("train: ", self.train.validate(usize::MAX), &mut p);
        split("linear: ", self.linear.validate(), &mut p);
        p.extend(self.bootstrap.problems());
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if !p.is_empty() {
            bail!("invalid configuration: {}", p.join("; "));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_beside(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.resolved.toml");
        std::fs::write(&path, self.to_toml()?)
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn corpora_dir(&self) -> PathBuf {
        self.paths.work.join("corpora")
    }

    pub fn corpus_dir(&self, name: &str) -> PathBuf {
        self.corpora_dir().join(name)
    }
}

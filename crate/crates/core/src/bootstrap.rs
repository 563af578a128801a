//! Iterative bootstrapping of the character classifier: mine character
//! patches from ground-truthed field images, label them by position,
//! augment, merge with a shrinking synthetic share and fine-tune.
//!
//! A run directory holds `stage-<k>/{dataset.jsonl, model.ocrm,
//! report.json}` per completed stage and `summary.json`. A stage counts as
//! complete once its report exists; rerunning resumes after the last one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charset::{Charset, ClassId};
use crate::classify::{argmax_lowest, fine_tune, Dataset, EpochRecord, Model, TrainConfig};
use crate::error::{Error, IoContext, Result};
use crate::imaging::{read_png, warp_affine, AffineTransform, GrayImage, PATCH_SIDE};
use crate::rng::{derive_seed, label_hash, SeededRng};
use crate::segment::{segment_field, SegmentParams};
use crate::synthgen::{
    read_field_manifest, read_jsonl, write_json, write_jsonl, CharSample, FieldEntry, Generator,
    Provenance, RealRange,
};

pub const SKIP_COUNT_MISMATCH: &str = "count mismatch";
pub const SKIP_UNREADABLE: &str = "unreadable image";
pub const SKIP_SEGMENTATION: &str = "segmentation failed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    /// Rotation is drawn from `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    pub max_translation_px: f64,
    pub scale: RealRange,
    pub gain: RealRange,
    pub max_bias: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            max_rotation_deg: 3.0,
            max_translation_px: 3.0,
            scale: RealRange::new(0.9, 1.1),
            gain: RealRange::new(0.8, 1.2),
            max_bias: 20.0,
        }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            max_rotation_deg: 0.0,
            max_translation_px: 0.0,
            scale: RealRange::new(1.0, 1.0),
            gain: RealRange::new(1.0, 1.0),
            max_bias: 0.0,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        for (name, v) in [
            ("max_rotation_deg", self.max_rotation_deg),
            ("max_translation_px", self.max_translation_px),
            ("max_bias", self.max_bias),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                p.push(format!("augment.{name} must be a finite value >= 0"));
            }
        }
        for (name, r) in [("scale", self.scale), ("gain", self.gain)] {
            if !(r.min.is_finite() && r.max.is_finite() && r.min > 0.0 && r.min <= r.max) {
                p.push(format!("augment.{name} must satisfy 0 < min <= max"));
            }
        }
        p
    }
}

/// Applies one random affine and gray-value transform to `img`.
pub fn augment_image(img: &GrayImage, spec: &AugmentSpec, seed: u64) -> Result<GrayImage> {
    let mut rng = SeededRng::new(seed);
    let sym = |rng: &mut SeededRng, m: f64| if m > 0.0 { rng.real_in(-m, m) } else { 0.0 };
    let rotation = sym(&mut rng, spec.max_rotation_deg);
    let dx = sym(&mut rng, spec.max_translation_px);
    let dy = sym(&mut rng, spec.max_translation_px);
    let scale = spec.scale.sample(&mut rng);
    let gain = spec.gain.sample(&mut rng);
    let bias = sym(&mut rng, spec.max_bias);
    let (cx, cy) = (
        (img.width() as f64 - 1.0) / 2.0,
        (img.height() as f64 - 1.0) / 2.0,
    );
    let t = AffineTransform::content_motion(cx, cy, rotation, scale, dx, dy)?;
    let mut out = warp_affine(img, &t, img.border_median())?;
    for v in out.data_mut() {
        *v = (f64::from(*v) * gain + bias).round().clamp(0.0, 255.0) as u8;
    }
    Ok(out)
}

/// One augmented copy per input, labels kept.
pub fn augment(samples: &[CharSample], spec: &AugmentSpec, seed: u64) -> Result<Vec<CharSample>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = derive_seed(seed, &[i as u64, s.seed]);
            Ok(CharSample {
                image: augment_image(&s.image, spec, seed)?,
                label: s.label,
                provenance: Provenance::Augmented,
                seed,
            })
        })
        .collect()
}

/// A character patch cut from a field, labelled with the ground-truth
/// symbol at its position.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedSample {
    pub sample: CharSample,
    pub field: usize,
    pub position: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MineLog {
    pub fields: usize,
    pub accepted_fields: usize,
    pub skipped: BTreeMap<String, usize>,
    /// Accepted patches whose prediction differed from their label.
    pub corrected: usize,
    /// Accepted patches of classes outside the active set, discarded.
    pub inactive: usize,
}

enum FieldOutcome {
    Skipped(&'static str),
    Accepted {
        samples: Vec<MinedSample>,
        corrected: usize,
        inactive: usize,
    },
}

fn mine_field(
    model: &Model,
    root: &Path,
    index: usize,
    entry: &FieldEntry,
    active: &[bool],
    charset: &Charset,
    params: &SegmentParams,
) -> Result<FieldOutcome> {
    let truth = charset.encode(&entry.text.replace(' ', ""))?;
    let image = match read_png(&root.join(&entry.path)) {
        Ok(img) => img,
        Err(e) => {
            log::warn!("field {index}: {e}");
            return Ok(FieldOutcome::Skipped(SKIP_UNREADABLE));
        }
    };
    let seg = match segment_field(&image, params) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("field {index}: {e}");
            return Ok(FieldOutcome::Skipped(SKIP_SEGMENTATION));
        }
    };
    if seg.char_count() != truth.len() {
        return Ok(FieldOutcome::Skipped(SKIP_COUNT_MISMATCH));
    }
    let (mut samples, mut corrected, mut inactive) = (Vec::new(), 0, 0);
    for (position, (patch, &label)) in seg.chars().zip(&truth).enumerate() {
        if !active[label.index()] {
            inactive += 1;
            continue;
        }
        if argmax_lowest(&model.forward(&patch.patch)?.probabilities) != label {
            corrected += 1;
        }
        samples.push(MinedSample {
            sample: CharSample {
                image: patch.patch.clone(),
                label,
                provenance: Provenance::Mined,
                seed: entry.seed,
            },
            field: index,
            position,
        });
    }
    Ok(FieldOutcome::Accepted {
        samples,
        corrected,
        inactive,
    })
}

/// Segments the leading `fraction` of the fields of the corpus at `root`
/// (all of them at 1.0) and keeps the patches of
/// fields whose character count equals the ground-truth length (spaces
/// excluded), each labelled with the symbol at its position. Patches of
/// classes outside `active` are dropped.
pub fn mine_patches(
    model: &Model,
    root: &Path,
    active: &[ClassId],
    params: &SegmentParams,
    fraction: f64,
) -> Result<(Vec<MinedSample>, MineLog)> {
    let charset = Charset::default();
    model.check_charset(&charset.hash())?;
    let mut entries = read_field_manifest(root)?;
    entries.truncate((fraction * entries.len() as f64).ceil() as usize);
    let mut mask = vec![false; charset.len()];
    for c in active {
        mask[c.index()] = true;
    }
    let outcomes = entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| mine_field(model, root, i, e, &mask, &charset, params))
        .collect::<Result<Vec<_>>>()?;
    let mut log = MineLog {
        fields: entries.len(),
        ..MineLog::default()
    };
    let mut mined = Vec::new();
    for outcome in outcomes {
        match outcome {
            FieldOutcome::Skipped(reason) => {
                *log.skipped.entry(reason.to_owned()).or_default() += 1
            }
            FieldOutcome::Accepted {
                samples,
                corrected,
                inactive,
            } => {
                log.accepted_fields += 1;
                log.corrected += corrected;
                log.inactive += inactive;
                mined.extend(samples);
            }
        }
    }
    Ok((mined, log))
}

/// Settings shared by all stages of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub stages: usize,
    /// Samples per class in every stage dataset.
    pub quota: usize,
    pub initial_synthetic_share: f64,
    /// Once halving would drop the share below this, it stays here.
    pub synthetic_floor: f64,
    pub train_fraction: f64,
    /// Stage k mines the first (k+1)/stages of the mining corpus instead of
    /// all of it.
    pub cumulative_mining: bool,
    pub augment: AugmentSpec,
    pub fine_tune: TrainConfig,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            quota: 2000,
            initial_synthetic_share: 0.5,
            synthetic_floor: 0.05,
            train_fraction: 0.9,
            cumulative_mining: true,
            augment: AugmentSpec::default(),
            fine_tune: TrainConfig {
                epochs: 3,
                fine_tune: true,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.stages == 0 {
            p.push("bootstrap.stages must be at least 1".into());
        }
        if self.quota == 0 {
            p.push("bootstrap.quota must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.initial_synthetic_share) {
            p.push("bootstrap.initial_synthetic_share must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.synthetic_floor) {
            p.push("bootstrap.synthetic_floor must lie in [0, 1]".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            p.push("bootstrap.train_fraction must lie in (0, 1)".into());
        }
        p.extend(self.augment.problems());
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    pub fn stage(&self, index: usize) -> StageConfig {
        let halved = self.initial_synthetic_share * 0.5f64.powi(index as i32);
        StageConfig {
            index,
            quota: self.quota,
            synthetic_share: if halved < self.synthetic_floor {
                self.synthetic_floor
            } else {
                halved
            },
            train_fraction: self.train_fraction,
            mine_fraction: if self.cumulative_mining {
                (index + 1).min(self.stages) as f64 / self.stages as f64
            } else {
                1.0
            },
            augment: self.augment.clone(),
            train: TrainConfig {
                seed: derive_seed(self.seed, &[label_hash("fine-tune"), index as u64]),
                ..self.fine_tune.clone()
            },
            seed: derive_seed(self.seed, &[label_hash("stage"), index as u64]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub index: usize,
    pub quota: usize,
    pub synthetic_share: f64,
    pub train_fraction: f64,
    /// Leading fraction of the mining corpus this stage mines.
    pub mine_fraction: f64,
    pub augment: AugmentSpec,
    pub train: TrainConfig,
    pub seed: u64,
}

/// How a stage-dataset sample was obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub split: String,
    pub class: ClassId,
    pub provenance: Provenance,
    /// Source field and character position for mined and augmented samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    /// Rendering seed for synthetic samples, transform seed for augmented ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    pub real: usize,
    pub augmented: usize,
    pub synthetic: usize,
}

impl Composition {
    pub fn total(&self) -> usize {
        self.real + self.augmented + self.synthetic
    }
}

pub struct StageDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub entries: Vec<StageEntry>,
    pub composition: Composition,
}

struct Item {
    image: GrayImage,
    entry: StageEntry,
}

fn class_items(
    class: ClassId,
    pool: &[&MinedSample],
    cfg: &StageConfig,
    synth: &Generator,
) -> Result<Vec<Item>> {
    let n_synth = if pool.is_empty() {
        cfg.quota
    } else {
        (cfg.synthetic_share * cfg.quota as f64).round() as usize
    };
    let n_real = cfg.quota - n_synth;
    let cseed = |tag: &str| derive_seed(cfg.seed, &[label_hash(tag), u64::from(class.0)]);
    let entry = |provenance, src: Option<&MinedSample>, seed| StageEntry {
        split: String::new(),
        class,
        provenance,
        field: src.map(|m| m.field),
        position: src.map(|m| m.position),
        seed,
    };

    let mut items = Vec::with_capacity(cfg.quota);
    if pool.len() >= n_real {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        SeededRng::new(cseed("select")).shuffle(&mut order);
        let mut keep = order[..n_real].to_vec();
        keep.sort_unstable();
        for i in keep {
            items.push(Item {
                image: pool[i].sample.image.clone(),
                entry: entry(Provenance::Mined, Some(pool[i]), None),
            });
        }
    } else {
        for m in pool {
            items.push(Item {
                image: m.sample.image.clone(),
                entry: entry(Provenance::Mined, Some(m), None),
            });
        }
        let extra = (0..n_real - pool.len())
            .into_par_iter()
            .map(|i| {
                let src = pool[i % pool.len()];
                let seed = derive_seed(cseed("augment"), &[i as u64]);
                Ok(Item {
                    image: augment_image(&src.sample.image, &cfg.augment, seed)?,
                    entry: entry(Provenance::Augmented, Some(src), Some(seed)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        items.extend(extra);
    }
    let synthetic = (0..n_synth)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cseed("synthetic"), &[i as u64]);
            Ok(Item {
                image: synth.render_char(class, seed)?.image,
                entry: entry(Provenance::Synthetic, None, Some(seed)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    items.extend(synthetic);
    SeededRng::new(cseed("split")).shuffle(&mut items);
    Ok(items)
}

/// Fills `quota` samples for every class in `classes`: `(1 - share)` of
/// them mined, topped up with augmented copies of mined ones, the rest
/// synthetic; a class with nothing mined is entirely synthetic. Each class
/// is then split into train and test parts.
pub fn build_stage_dataset(
    mined: &[MinedSample],
    cfg: &StageConfig,
    synth: &Generator,
    classes: &[ClassId],
) -> Result<StageDataset> {
    if cfg.quota == 0 || !(0.0..=1.0).contains(&cfg.synthetic_share) {
        return Err(Error::Config(format!(
            "stage {}: quota must be positive and the synthetic share in [0, 1]",
            cfg.index
        )));
    }
    let charset = synth.charset();
    let mut train = Dataset::new(PATCH_SIDE, charset);
    let mut test = Dataset::new(PATCH_SIDE, charset);
    let mut entries = Vec::with_capacity(classes.len() * cfg.quota);
    let mut composition = Composition::default();
    let n_train = ((cfg.train_fraction * cfg.quota as f64).round() as usize).min(cfg.quota);
    for &class in classes {
        let pool: Vec<&MinedSample> = mined.iter().filter(|m| m.sample.label == class).collect();
        for (i, mut item) in class_items(class, &pool, cfg, synth)?
            .into_iter()
            .enumerate()
        {
            match item.entry.provenance {
                Provenance::Mined => composition.real += 1,
                Provenance::Augmented => composition.augmented += 1,
                Provenance::Synthetic => composition.synthetic += 1,
            }
            let (split, data) = if i < n_train {
                ("train", &mut train)
            } else {
                ("test", &mut test)
            };
            item.entry.split = split.to_owned();
            data.push(&item.image, class)?;
            entries.push(item.entry);
        }
    }
    Ok(StageDataset {
        train,
        test,
        entries,
        composition,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub synthetic_share: f64,
    pub mined: usize,
    /// Mined patches per symbol.
    pub mined_per_class: BTreeMap<char, usize>,
    pub mine_log: MineLog,
    pub composition: Composition,
    pub train_size: usize,
    pub test_size: usize,
    /// Accuracy on this stage's test split before and after fine-tuning.
    pub test_accuracy_before: f64,
    pub test_accuracy: f64,
    /// Accuracy on the frozen pseudo-real character test set.
    pub pseudo_real_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePoint {
    pub stage: usize,
    pub mined: usize,
    pub synthetic_share: f64,
    pub test_accuracy: f64,
    pub pseudo_real_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frozen_test_size: usize,
    /// Pseudo-real accuracy of the initial model.
    pub initial_accuracy: f64,
    pub stages: Vec<StagePoint>,
}

/// Everything a run reads besides its configuration.
pub struct BootstrapInputs<'a> {
    pub initial: &'a Model,
    /// Field corpus mined for training data.
    pub mine_corpus: &'a Path,
    /// Disjoint field corpus mined once for the frozen test set.
    pub test_corpus: &'a Path,
    pub synth: &'a Generator,
    pub classes: &'a [ClassId],
    pub segment: &'a SegmentParams,
}

pub struct BootstrapOutcome {
    pub reports: Vec<StageReport>,
    pub model: Model,
    pub summary: Summary,
}

pub fn stage_dir(run: &Path, stage: usize) -> PathBuf {
    run.join(format!("stage-{stage}"))
}

fn frozen_test_set(inputs: &BootstrapInputs<'_>) -> Result<(Dataset, Vec<StageEntry>)> {
    let (mined, log) = mine_patches(
        inputs.initial,
        inputs.test_corpus,
        inputs.classes,
        inputs.segment,
        1.0,
    )?;
    log::info!(
        "frozen test set: {} patches from {}/{} fields",
        mined.len(),
        log.accepted_fields,
        log.fields
    );
    let mut data = Dataset::new(PATCH_SIDE, inputs.synth.charset());
    let mut entries = Vec::with_capacity(mined.len());
    for m in &mined {
        data.push(&m.sample.image, m.sample.label)?;
        entries.push(StageEntry {
            split: "frozen".into(),
            class: m.sample.label,
            provenance: Provenance::Mined,
            field: Some(m.field),
            position: Some(m.position),
            seed: None,
        });
    }
    Ok((data, entries))
}

fn load_completed(dir: &Path) -> Result<Option<(StageReport, Model)>> {
    let report_path = dir.join("report.json");
    if !report_path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(&report_path).at(&report_path)?;
    let report = serde_json::from_slice(&bytes)?;
    Ok(Some((report, Model::load(&dir.join("model.ocrm"))?)))
}

fn run_stage(
    model: &Model,
    inputs: &BootstrapInputs<'_>,
    cfg: &StageConfig,
    frozen: &Dataset,
    dir: &Path,
) -> Result<(StageReport, Model)> {
    let (mined, mine_log) = mine_patches(
        model,
        inputs.mine_corpus,
        inputs.classes,
        inputs.segment,
        cfg.mine_fraction,
    )?;
    log::info!(
        "stage {}: mined {} patches from {}/{} fields ({} relabelled)",
        cfg.index,
        mined.len(),
        mine_log.accepted_fields,
        mine_log.fields,
        mine_log.corrected
    );
    let symbols = inputs.synth.charset().symbols();
    let mut mined_per_class = BTreeMap::new();
    for m in &mined {
        *mined_per_class
            .entry(symbols[m.sample.label.index()])
            .or_default() += 1;
    }
    let data = build_stage_dataset(&mined, cfg, inputs.synth, inputs.classes)?;
    fs::create_dir_all(dir).at(dir)?;
    write_jsonl(&dir.join("dataset.jsonl"), &data.entries)?;

    let before = model.accuracy(&data.test)?;
    let outcome = fine_tune(
        model,
        &data.train,
        Some(&data.test),
        &cfg.train,
        &format!("stage-{}", cfg.index),
    )?;
    let report = StageReport {
        stage: cfg.index,
        synthetic_share: cfg.synthetic_share,
        mined: mined.len(),
        mined_per_class,
        mine_log,
        composition: data.composition,
        train_size: data.train.len(),
        test_size: data.test.len(),
        test_accuracy_before: before,
        test_accuracy: outcome.model.accuracy(&data.test)?,
        pseudo_real_accuracy: outcome.model.accuracy(frozen)?,
        history: outcome.history,
    };
    outcome.model.save(&dir.join("model.ocrm"))?;
    write_json(&dir.join("report.json"), &report)?;
    Ok((report, outcome.model))
}

/// Runs `cfg.stages` stages, skipping stages whose report already exists in
/// `run_dir`. A failing stage stops the run and leaves earlier stages intact.
pub fn run_bootstrap(
    inputs: &BootstrapInputs<'_>,
    cfg: &BootstrapConfig,
    run_dir: &Path,
) -> Result<BootstrapOutcome> {
    cfg.validate()?;
    fs::create_dir_all(run_dir).at(run_dir)?;
    let (frozen, frozen_entries) = frozen_test_set(inputs)?;
    if frozen.is_empty() {
        return Err(Error::Corpus {
            path: inputs.test_corpus.to_owned(),
            reason: "no field of the test corpus could be mined".into(),
        });
    }
    write_jsonl(&run_dir.join("frozen_test.jsonl"), &frozen_entries)?;
    let initial_accuracy = inputs.initial.accuracy(&frozen)?;
    log::info!("initial pseudo-real accuracy {initial_accuracy:.4}");

    let mut model = inputs.initial.clone();
    let mut reports = Vec::with_capacity(cfg.stages);
    for k in 0..cfg.stages {
        let dir = stage_dir(run_dir, k);
        let (report, next) = match load_completed(&dir)? {
            Some(done) => {
                log::info!("stage {k}: already complete, resuming after it");
                done
            }
            None => run_stage(&model, inputs, &cfg.stage(k), &frozen, &dir)?,
        };
        log::info!(
            "stage {k}: stage test {:.4}, pseudo-real {:.4}",
            report.test_accuracy,
            report.pseudo_real_accuracy
        );
        reports.push(report);
        model = next;
    }
    let summary = Summary {
        frozen_test_size: frozen.len(),
        initial_accuracy,
        stages: reports
            .iter()
            .map(|r| StagePoint {
                stage: r.stage,
                mined: r.mined,
                synthetic_share: r.synthetic_share,
                test_accuracy: r.test_accuracy,
                pseudo_real_accuracy: r.pseudo_real_accuracy,
            })
            .collect(),
    };
    write_json(&run_dir.join("summary.json"), &summary)?;
    Ok(BootstrapOutcome {
        reports,
        model,
        summary,
    })
}

/// Reads back a stage dataset manifest.
pub fn read_stage_manifest(dir: &Path) -> Result<Vec<StageEntry>> {
    read_jsonl(&dir.join("dataset.jsonl"))
}

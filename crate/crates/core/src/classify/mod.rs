//! Character classification: a small configurable CNN trained in-repo,
//! fine-tuning, and a HOG + linear baseline.

mod dataset;
mod format;
pub mod gradcheck;
mod hog;
mod net;
mod train;

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dataset::Dataset;
pub use hog::{hog_features, hog_linear_spec, train_linear_baseline, LinearConfig, HOG_LEN};
pub use train::{fine_tune, train, EpochRecord, TrainConfig, TrainOutcome};

use crate::charset::{ClassId, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::rng::{derive_seed, label_hash, SeededRng};
use net::{Plan, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    FullyConnected {
        out_dim: usize,
    },
    /// Marks the output as class scores; a no-op on logits.
    Softmax,
    /// Fixed HOG feature extractor (first layer only, no backward pass).
    Hog,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::FullyConnected { .. } => "fc",
            Layer::Softmax => "softmax",
            Layer::Hog => "hog",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input: Shape,
    pub layers: Vec<Layer>,
}

fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Layer {
    Layer::Conv {
        out_channels,
        kernel,
        stride,
        padding,
    }
}

fn pool2() -> Layer {
    Layer::MaxPool {
        kernel: 2,
        stride: 2,
    }
}

fn fc(out_dim: usize) -> Layer {
    Layer::FullyConnected { out_dim }
}

impl ModelSpec {
    pub const PRESETS: [&'static str; 3] = ["lenet-like", "cifarnet-like", "hog-linear"];

    pub fn preset(name: &str) -> Result<ModelSpec> {
        let input = Shape::new(1, 64, 64);
        let layers = match name {
            "lenet-like" => vec![
                conv(6, 5, 1, 0),
                Layer::Relu,
                pool2(),
                conv(16, 5, 1, 0),
                Layer::Relu,
                pool2(),
                fc(120),
                Layer::Relu,
                fc(84),
                Layer::Relu,
                fc(NUM_CLASSES),
                Layer::Softmax,
            ],
            "cifarnet-like" => vec![
                conv(32, 5, 2, 2),
                Layer::Relu,
                pool2(),
                conv(32, 5, 1, 2),
                Layer::Relu,
                pool2(),
                conv(64, 3, 1, 1),
                Layer::Relu,
                pool2(),
                fc(64),
                Layer::Relu,
                fc(NUM_CLASSES),
                Layer::Softmax,
            ],
            "hog-linear" => return Ok(hog_linear_spec()),
            other => {
                return Err(Error::Config(format!(
                    "unknown model preset {other:?} (known: {})",
                    Self::PRESETS.join(", ")
                )))
            }
        };
        Ok(ModelSpec {
            name: name.to_owned(),
            input,
            layers,
        })
    }

    /// Output shape of every layer, in order.
    pub fn infer_shapes(&self) -> Result<Vec<Shape>> {
        let plan = Plan::build(self)?;
        Ok(plan.layers.iter().map(|l| l.output).collect())
    }

    /// Shape inference plus the class-count check.
    pub fn validate(&self) -> Result<()> {
        let plan = Plan::build(self)?;
        let out = plan.output();
        if out.len() != NUM_CLASSES {
            return Err(Error::Shape(format!(
                "model {:?} ends in {} outputs, expected {NUM_CLASSES}",
                self.name,
                out.len()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(Plan::build(self)?.param_count)
    }

    /// Multiply-accumulates of one forward pass through conv and fc layers.
    pub fn forward_macs(&self) -> Result<usize> {
        let plan = Plan::build(self)?;
        Ok(plan
            .layers
            .iter()
            .map(|l| match l.layer {
                Layer::Conv { .. } => l.weight.len() * l.output.h * l.output.w,
                Layer::FullyConnected { .. } => l.weight.len(),
                _ => 0,
            })
            .sum())
    }
}

/// Input normalization: `(pixel / 255 - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub mean: f32,
    pub std: f32,
}

impl Norm {
    pub const IDENTITY: Norm = Norm {
        mean: 0.0,
        std: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: ClassId,
    pub probabilities: Vec<f32>,
}

impl Prediction {
    fn from_logits(logits: &[f32]) -> Prediction {
        let probabilities = net::softmax(logits);
        Prediction {
            class: argmax_lowest(&probabilities),
            probabilities,
        }
    }

    pub fn probability(&self) -> f32 {
        self.probabilities[self.class.index()]
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_lowest(values: &[f32]) -> ClassId {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    ClassId(best as u16)
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    plan: Plan,
    params: Vec<f32>,
    norm: Norm,
    charset_hash: String,
    lineage: Vec<String>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self
                .params
                .iter()
                .map(|v| v.to_bits())
                .eq(other.params.iter().map(|v| v.to_bits()))
            && self.norm.mean.to_bits() == other.norm.mean.to_bits()
            && self.norm.std.to_bits() == other.norm.std.to_bits()
            && self.charset_hash == other.charset_hash
            && self.lineage == other.lineage
    }
}

impl Model {
    /// All parameters zero.
    pub fn zeros(spec: ModelSpec, charset_hash: String, norm: Norm) -> Result<Model> {
        spec.validate()?;
        let plan = Plan::build(&spec)?;
        Ok(Model {
            params: vec![0.0; plan.param_count],
            spec,
            plan,
            norm,
            charset_hash,
            lineage: Vec::new(),
        })
    }

    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(spec: ModelSpec, charset_hash: String, norm: Norm, seed: u64) -> Result<Model> {
        let mut m = Model::zeros(spec, charset_hash, norm)?;
        let mut rng = SeededRng::new(derive_seed(seed, &[label_hash("init")]));
        for l in &m.plan.layers {
            if l.weight.is_empty() {
                continue;
            }
            let fan_in = l.weight.len() / l.bias.len();
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut m.params[l.weight.clone()] {
                *v = rng.real_in(-bound, bound) as f32;
            }
        }
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn charset_hash(&self) -> &str {
        &self.charset_hash
    }

    pub fn lineage(&self) -> &[String] {
        &self.lineage
    }

    pub fn push_lineage(&mut self, stage: impl Into<String>) {
        self.lineage.push(stage.into());
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn input_shape(&self) -> Shape {
        self.spec.input
    }

    /// Named tensors with their dimensions, in file order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out = Vec::new();
        for (i, l) in self.plan.layers.iter().enumerate() {
            if l.weight.is_empty() {
                continue;
            }
            let base = format!("{i}.{}", l.layer.name());
            out.push((
                format!("{base}.weight"),
                l.weight_dims.clone(),
                &self.params[l.weight.clone()],
            ));
            out.push((
                format!("{base}.bias"),
                vec![l.bias.len()],
                &self.params[l.bias.clone()],
            ));
        }
        out
    }

    /// Zeroes the last parameterized layer.
    pub fn zero_final_layer(&mut self) {
        if let Some(l) = self.plan.layers.iter().rev().find(|l| !l.weight.is_empty()) {
            let r = l.weight.start..l.bias.end;
            self.params[r].fill(0.0);
        }
    }

    pub fn check_charset(&self, charset_hash: &str) -> Result<()> {
        if self.charset_hash != charset_hash {
            return Err(Error::CharsetMismatch {
                model: self.charset_hash.clone(),
                active: charset_hash.to_owned(),
            });
        }
        Ok(())
    }

    fn check_patch(&self, w: usize, h: usize) -> Result<()> {
        let s = self.spec.input;
        if s.c != 1 || s.w != w || s.h != h {
            return Err(Error::Shape(format!("model expects {s}, got 1x{h}x{w}")));
        }
        Ok(())
    }

    pub(crate) fn plan(&self) -> &Plan {
        &self.plan
    }

    pub(crate) fn workspace(&self) -> Workspace {
        Workspace::new(&self.plan)
    }

    /// Loads pixel bytes into the workspace input, normalized.
    pub(crate) fn load_pixels(&self, pixels: &[u8], ws: &mut Workspace) {
        let (mean, inv) = (self.norm.mean, 1.0 / self.norm.std);
        for (d, &p) in ws.input_mut().iter_mut().zip(pixels) {
            *d = (f32::from(p) / 255.0 - mean) * inv;
        }
    }

    pub(crate) fn run(&self, ws: &mut Workspace) {
        net::forward(&self.plan, &self.params, ws);
    }

    pub fn forward(&self, patch: &GrayImage) -> Result<Prediction> {
        self.check_patch(patch.width(), patch.height())?;
        let mut ws = self.workspace();
        self.load_pixels(patch.data(), &mut ws);
        self.run(&mut ws);
        Ok(Prediction::from_logits(ws.logits()))
    }

    /// Forward pass on intensities already scaled to [0, 1] (row-major).
    pub fn forward_unit(&self, values: &[f32]) -> Result<Prediction> {
        if values.len() != self.spec.input.len() {
            return Err(Error::Shape(format!(
                "model expects {} values, got {}",
                self.spec.input.len(),
                values.len()
            )));
        }
        let mut ws = self.workspace();
        let (mean, inv) = (self.norm.mean, 1.0 / self.norm.std);
        for (d, &v) in ws.input_mut().iter_mut().zip(values) {
            *d = (v - mean) * inv;
        }
        self.run(&mut ws);
        Ok(Prediction::from_logits(ws.logits()))
    }

    /// Predictions for many patches, in parallel; order follows the input.
    pub fn predict_batch(&self, patches: &[GrayImage]) -> Result<Vec<Prediction>> {
        patches.par_iter().map(|p| self.forward(p)).collect()
    }

    /// Top-1 accuracy on a dataset.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.check_patch(data.side(), data.side())?;
        let correct: usize = (0..data.len())
            .into_par_iter()
            .map_init(
                || self.workspace(),
                |ws, i| {
                    self.load_pixels(data.pixels(i), ws);
                    self.run(ws);
                    usize::from(argmax_lowest(ws.logits()) == data.label(i))
                },
            )
            .sum();
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        format::save(self, path)
    }

    pub fn load(path: &Path) -> Result<Model> {
        format::load(path)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        format::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        format::from_bytes(bytes)
    }
}

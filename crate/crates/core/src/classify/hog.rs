//! Histogram-of-oriented-gradients features and the linear baseline.
//!
//! Layout: 9 unsigned orientation bins (centres 0°, 20°, ..., 160°, linear
//! vote between the two nearest), 8x8-pixel cells, blocks of 2x2 cells
//! advancing one cell at a time, each block L2-normalized. A 64x64 patch
//! gives 7x7 blocks of 36 values.

use serde::{Deserialize, Serialize};

use super::{Dataset, Layer, Model, ModelSpec, Norm, Shape};
use crate::charset::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::imaging::{GrayImage, PATCH_SIDE};
use crate::rng::{derive_seed, label_hash, SeededRng};

pub const HOG_BINS: usize = 9;
pub const HOG_CELL: usize = 8;
pub const HOG_LEN: usize = 1764;
const BLOCK_EPS: f32 = 1e-3;

/// Features of a 64x64 patch, computed on intensities scaled to [0, 1].
pub fn hog_features(patch: &GrayImage) -> Result<Vec<f32>> {
    if patch.width() != PATCH_SIDE || patch.height() != PATCH_SIDE {
        return Err(Error::Shape(format!(
            "hog expects {PATCH_SIDE}x{PATCH_SIDE}, got {}x{}",
            patch.width(),
            patch.height()
        )));
    }
    let mut out = vec![0.0; HOG_LEN];
    hog_into(&patch.to_unit_f32(), PATCH_SIDE, PATCH_SIDE, &mut out);
    Ok(out)
}

/// `w` and `h` must be multiples of the cell size, at least two cells each.
pub(crate) fn hog_into(values: &[f32], w: usize, h: usize, out: &mut [f32]) {
    let (cw, ch) = (w / HOG_CELL, h / HOG_CELL);
    let mut cells = vec![0.0f32; cw * ch * HOG_BINS];
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        values[y * w + x]
    };
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = at(xi + 1, yi) - at(xi - 1, yi);
            let gy = at(xi, yi + 1) - at(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            if angle >= 180.0 {
                angle -= 180.0;
            }
            let pos = angle / (180.0 / HOG_BINS as f32);
            let lo = (pos.floor() as usize) % HOG_BINS;
            let frac = pos - pos.floor();
            let hi = (lo + 1) % HOG_BINS;
            let cell = ((y / HOG_CELL) * cw + x / HOG_CELL) * HOG_BINS;
            cells[cell + lo] += mag * (1.0 - frac);
            cells[cell + hi] += mag * frac;
        }
    }
    let mut o = 0;
    for by in 0..ch - 1 {
        for bx in 0..cw - 1 {
            let start = o;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let c = ((by + dy) * cw + bx + dx) * HOG_BINS;
                out[o..o + HOG_BINS].copy_from_slice(&cells[c..c + HOG_BINS]);
                o += HOG_BINS;
            }
            let block = &mut out[start..o];
            let norm = (block.iter().map(|v| v * v).sum::<f32>() + BLOCK_EPS * BLOCK_EPS).sqrt();
            for v in block.iter_mut() {
                *v /= norm;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty on the weights.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.01,
            lambda: 1e-5,
            seed: 0,
        }
    }
}

impl LinearConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be positive".to_owned());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push("learning_rate must be positive".to_owned());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            problems.push("lambda must be non-negative".to_owned());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Spec of the baseline: HOG features followed by one linear layer.
pub fn hog_linear_spec() -> ModelSpec {
    ModelSpec {
        name: "hog-linear".into(),
        input: Shape::new(1, PATCH_SIDE, PATCH_SIDE),
        layers: vec![
            Layer::Hog,
            Layer::FullyConnected {
                out_dim: NUM_CLASSES,
            },
            Layer::Softmax,
        ],
    }
}

/// One-vs-rest hinge loss on HOG features, minimized by per-sample SGD
/// with a step size decaying as `lr / (1 + t / n)`.
pub fn train_linear_baseline(data: &Dataset, cfg: &LinearConfig) -> Result<Model> {
    use rayon::prelude::*;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let spec = hog_linear_spec();
    let mut model = Model::zeros(spec, data.charset_hash().to_owned(), Norm::IDENTITY)?;
    let feats: Vec<Vec<f32>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut f = vec![0.0; HOG_LEN];
            let unit: Vec<f32> = data
                .pixels(i)
                .iter()
                .map(|&p| f32::from(p) / 255.0)
                .collect();
            hog_into(&unit, data.side(), data.side(), &mut f);
            f
        })
        .collect();

    let d = HOG_LEN;
    let (w, b) = model.params_mut().split_at_mut(NUM_CLASSES * d);
    let n = data.len();
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        SeededRng::new(derive_seed(cfg.seed, &[label_hash("linear"), epoch as u64]))
            .shuffle(&mut order);
        let mut violations = 0usize;
        for &i in &order {
            let lr = (cfg.learning_rate / (1.0 + step as f64 / n as f64)) as f32;
            step += 1;
            let x = &feats[i];
            let label = data.label(i).index();
            let shrink = 1.0 - lr * cfg.lambda as f32;
            for c in 0..NUM_CLASSES {
                let wc = &mut w[c * d..(c + 1) * d];
                let margin = b[c] + wc.iter().zip(x).map(|(a, v)| a * v).sum::<f32>();
                let y = if c == label { 1.0 } else { -1.0 };
                for v in wc.iter_mut() {
                    *v *= shrink;
                }
                if y * margin < 1.0 {
                    violations += 1;
                    for (v, &xv) in wc.iter_mut().zip(x) {
                        *v += lr * y * xv;
                    }
                    b[c] += lr * y;
                }
            }
        }
        log::info!(
            "linear epoch {}/{}: {} margin violations",
            epoch + 1,
            cfg.epochs,
            violations
        );
    }
    Ok(model)
}

use std::path::Path;

use rayon::prelude::*;

use super::Norm;
use crate::charset::{Charset, ClassId};
use crate::error::{Error, Result};
use crate::imaging::{read_png, GrayImage};
use crate::synthgen::read_manifest;

/// Labelled square patches held in memory as raw bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    side: usize,
    pixels: Vec<u8>,
    labels: Vec<ClassId>,
    charset_hash: String,
}

impl Dataset {
    pub fn new(side: usize, charset: &Charset) -> Self {
        Self::with_hash(side, charset.hash())
    }

    pub fn with_hash(side: usize, charset_hash: String) -> Self {
        Self {
            side,
            pixels: Vec::new(),
            labels: Vec::new(),
            charset_hash,
        }
    }

    pub fn push(&mut self, image: &GrayImage, label: ClassId) -> Result<()> {
        if image.width() != self.side || image.height() != self.side {
            return Err(Error::Shape(format!(
                "dataset holds {0}x{0} patches, got {1}x{2}",
                self.side,
                image.width(),
                image.height()
            )));
        }
        self.pixels.extend_from_slice(image.data());
        self.labels.push(label);
        Ok(())
    }

    /// Loads the entries of `split` from a character corpus.
    pub fn from_manifest(root: &Path, split: &str, charset: &Charset) -> Result<Self> {
        let entries: Vec<_> = read_manifest(root)?
            .into_iter()
            .filter(|e| e.split == split)
            .collect();
        let images = entries
            .par_iter()
            .map(|e| read_png(&root.join(&e.path)))
            .collect::<Result<Vec<_>>>()?;
        let side = images
            .first()
            .map_or(crate::imaging::PATCH_SIDE, |i| i.width());
        let mut data = Self::new(side, charset);
        for (img, e) in images.iter().zip(&entries) {
            data.push(img, e.class)?;
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn charset_hash(&self) -> &str {
        &self.charset_hash
    }

    pub fn pixels(&self, i: usize) -> &[u8] {
        let n = self.side * self.side;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> GrayImage {
        GrayImage::from_vec(self.side, self.side, self.pixels(i).to_vec())
            .expect("stored patches are square")
    }

    pub fn label(&self, i: usize) -> ClassId {
        self.labels[i]
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<ClassId> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Mean and standard deviation of all intensities scaled to [0, 1].
    pub fn norm_stats(&self) -> Norm {
        let mut hist = [0u64; 256];
        for &p in &self.pixels {
            hist[p as usize] += 1;
        }
        let n = self.pixels.len().max(1) as f64;
        let mean = hist
            .iter()
            .enumerate()
            .map(|(v, &c)| v as f64 / 255.0 * c as f64)
            .sum::<f64>()
            / n;
        let var = hist
            .iter()
            .enumerate()
            .map(|(v, &c)| (v as f64 / 255.0 - mean).powi(2) * c as f64)
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        Norm {
            mean: mean as f32,
            std: if std > 1e-6 { std as f32 } else { 1.0 },
        }
    }
}

//! Field-level evaluation: edit distance, field accuracy, class-wise
//! accuracy, confusion matrices and classification latency.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::charset::{Charset, NUM_CLASSES};
use crate::classify::Model;
use crate::error::{Error, Result};
use crate::imaging::GrayImage;

pub const MIN_BENCH_SAMPLES: usize = 100;
pub const WARMUP_CALLS: usize = 10;

/// Unit-cost edit distance over Unicode scalar values, using one row of
/// `min(|a|, |b|) + 1` cells.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, &lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &sc) in short.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if lc == sc {
                diag
            } else {
                1 + diag.min(above).min(row[j])
            };
            diag = above;
        }
    }
    row[short.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub calls: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank statistics over per-call durations in milliseconds.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.len() < MIN_BENCH_SAMPLES {
            return Err(Error::InsufficientSamples {
                needed: MIN_BENCH_SAMPLES,
                got: samples.len(),
            });
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = (0.95 * sorted.len() as f64).ceil() as usize;
        Ok(Self {
            calls: sorted.len(),
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p95_ms: sorted[rank.clamp(1, sorted.len()) - 1],
            min_ms: sorted[0],
            max_ms: sorted[sorted.len() - 1],
        })
    }
}

/// Times `n` single forward passes on the calling thread, cycling through
/// `patches`, after [`WARMUP_CALLS`] untimed calls.
pub fn benchmark_latency(model: &Model, patches: &[GrayImage], n: usize) -> Result<LatencyStats> {
    if n < MIN_BENCH_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_BENCH_SAMPLES,
            got: n,
        });
    }
    if patches.is_empty() {
        return Err(Error::EmptyInput);
    }
    for i in 0..WARMUP_CALLS {
        model.forward(&patches[i % patches.len()])?;
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let patch = &patches[i % patches.len()];
        let t = Instant::now();
        let p = model.forward(patch)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(p);
    }
    LatencyStats::from_samples(&samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub field_count: usize,
    pub correct_count: usize,
    pub correct_rate: f64,
    pub mean_distance: f64,
    /// Fields whose recognized length equals the ground-truth length; only
    /// these contribute to the per-class statistics.
    pub aligned_fields: usize,
    pub skipped_fields: usize,
    /// Recall per class; `None` where a class never occurs.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Unweighted mean of the defined per-class recalls.
    pub class_wise_accuracy: f64,
    /// Correct aligned characters over all aligned characters.
    pub character_accuracy: f64,
    /// Rows are ground-truth classes, columns recognized classes.
    pub confusion: Vec<Vec<u64>>,
    pub latency: Option<LatencyStats>,
}

fn symbols(text: &str) -> Vec<char> {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Scores recognized texts against their ground truths.
pub fn evaluate_fields<P, T>(predicted: &[P], truth: &[T], charset: &Charset) -> Result<EvalReport>
where
    P: AsRef<str>,
    T: AsRef<str>,
{
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch(predicted.len(), truth.len()));
    }
    let mut confusion = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
    let (mut correct, mut distance_sum, mut aligned) = (0usize, 0usize, 0usize);
    for (p, t) in predicted.iter().zip(truth) {
        let (p, t) = (p.as_ref(), t.as_ref());
        let d = levenshtein(p, t);
        distance_sum += d;
        if d == 0 {
            correct += 1;
        }
        let (ps, ts) = (symbols(p), symbols(t));
        if ps.len() != ts.len() {
            continue;
        }
        aligned += 1;
        for (&pc, &tc) in ps.iter().zip(&ts) {
            let row = charset.class_of(tc)?.index();
            let col = charset.class_of(pc)?.index();
            confusion[row][col] += 1;
        }
    }
    let n = predicted.len();
    let per_class_accuracy: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let support: u64 = row.iter().sum();
            (support > 0).then(|| row[i] as f64 / support as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class_accuracy.iter().flatten().copied().collect();
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(EvalReport {
        field_count: n,
        correct_count: correct,
        correct_rate: ratio(correct as f64, n as f64),
        mean_distance: ratio(distance_sum as f64, n as f64),
        aligned_fields: aligned,
        skipped_fields: n - aligned,
        class_wise_accuracy: ratio(defined.iter().sum(), defined.len() as f64),
        per_class_accuracy,
        character_accuracy: ratio(trace as f64, total as f64),
        confusion,
        latency: None,
    })
}

impl EvalReport {
    /// Confusion matrix as CSV with the charset symbols as headers.
    pub fn confusion_csv(&self, charset: &Charset) -> String {
        let mut out = String::from("truth\\predicted");
        for &c in charset.symbols() {
            out.push(',');
            out.push(c);
        }
        out.push('\n');
        for (row, &c) in self.confusion.iter().zip(charset.symbols()) {
            out.push(c);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

//! Mini-batch SGD with momentum.
//!
//! A batch is cut into fixed chunks of `CHUNK` samples. Chunks are processed
//! in parallel, each accumulating its samples' gradients in index order,
//! and the chunk sums are combined by a fixed pairwise tree. The chunking
//! depends only on the batch, so results are bit-identical for any thread
//! count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{self, Workspace};
use super::{argmax_lowest, Dataset, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, label_hash, SeededRng};

const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fractions of the run after which the rate is multiplied by `lr_gamma`.
    pub lr_milestones: Vec<f64>,
    pub lr_gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Start from given weights at a tenth of `learning_rate`.
    pub fine_tune: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.01,
            lr_milestones: vec![0.5, 0.75],
            lr_gamma: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            fine_tune: false,
        }
    }
}

impl TrainConfig {
    /// Checks every field and reports all problems at once.
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let mut p = Vec::new();
        if self.batch_size == 0 {
            p.push("batch_size must be positive".to_owned());
        } else if self.batch_size > dataset_len {
            p.push(format!(
                "batch_size {} exceeds dataset size {dataset_len}",
                self.batch_size
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            p.push("learning_rate must be positive".to_owned());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            p.push("momentum must lie in [0, 1)".to_owned());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            p.push("weight_decay must be non-negative".to_owned());
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma.is_finite()) {
            p.push("lr_gamma must be positive".to_owned());
        }
        if self.lr_milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            p.push("lr_milestones must lie in [0, 1]".to_owned());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    pub fn effective_rate(&self, epoch: usize) -> f64 {
        let base = if self.fine_tune {
            self.learning_rate * 0.1
        } else {
            self.learning_rate
        };
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&m| epoch as f64 >= m * self.epochs as f64)
            .count();
        base * self.lr_gamma.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Trains `spec` from a seeded initialization. Normalization statistics
/// come from `data`.
pub fn train(
    spec: &ModelSpec,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let model = Model::init(
        spec.clone(),
        data.charset_hash().to_owned(),
        data.norm_stats(),
        cfg.seed,
    )?;
    run(model, data, test, cfg)
}

/// Continues training all weights of `model` and appends `stage` to its
/// lineage. `cfg.fine_tune` is forced on.
pub fn fine_tune(
    model: &Model,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    stage: &str,
) -> Result<TrainOutcome> {
    model.check_charset(data.charset_hash())?;
    let cfg = TrainConfig {
        fine_tune: true,
        ..cfg.clone()
    };
    let mut outcome = run(model.clone(), data, test, &cfg)?;
    outcome.model.push_lineage(stage);
    Ok(outcome)
}

struct ChunkState {
    ws: Workspace,
    grad: Vec<f32>,
    d_logits: Vec<f32>,
    loss: f64,
    correct: usize,
}

fn run(
    mut model: Model,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    cfg.validate(data.len())?;
    let s = model.input_shape();
    if s.c != 1 || s.h != data.side() || s.w != data.side() {
        return Err(Error::Shape(format!(
            "model expects {s}, dataset holds {0}x{0} patches",
            data.side()
        )));
    }
    if model
        .spec()
        .layers
        .iter()
        .any(|l| matches!(l, super::Layer::Hog))
    {
        return Err(Error::Config(
            "hog models are trained with train_linear_baseline".into(),
        ));
    }

    let n_params = model.params().len();
    let mut decay_mask = vec![0.0f32; n_params];
    for l in &model.plan().layers {
        decay_mask[l.weight.clone()].fill(1.0);
    }
    let mut velocity = vec![0.0f32; n_params];
    let max_chunks = cfg.batch_size.div_ceil(CHUNK);
    let mut states: Vec<ChunkState> = (0..max_chunks)
        .map(|_| ChunkState {
            ws: model.workspace(),
            grad: vec![0.0; n_params],
            d_logits: vec![0.0; model.plan().output().len()],
            loss: 0.0,
            correct: 0,
        })
        .collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.effective_rate(epoch) as f32;
        let momentum = cfg.momentum as f32;
        let wd = cfg.weight_decay as f32;
        order.sort_unstable();
        SeededRng::new(derive_seed(
            cfg.seed,
            &[label_hash("shuffle"), epoch as u64],
        ))
        .shuffle(&mut order);

        let mut epoch_loss = 0.0f64;
        let mut epoch_correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
            let active = &mut states[..chunks.len()];
            active
                .par_iter_mut()
                .zip(chunks.par_iter())
                .for_each(|(st, idx)| {
                    st.grad.fill(0.0);
                    st.loss = 0.0;
                    st.correct = 0;
                    for &i in idx.iter() {
                        model.load_pixels(data.pixels(i), &mut st.ws);
                        model.run(&mut st.ws);
                        let label = data.label(i).index();
                        let logits = st.ws.logits();
                        if argmax_lowest(logits).index() == label {
                            st.correct += 1;
                        }
                        st.loss +=
                            f64::from(net::softmax_cross_entropy(logits, label, &mut st.d_logits));
                        net::backward(
                            model.plan(),
                            model.params(),
                            &mut st.ws,
                            &st.d_logits,
                            &mut st.grad,
                        );
                    }
                });
            tree_reduce(active);
            let batch_loss = active[0].loss;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(epoch + 1));
            }
            epoch_loss += batch_loss;
            epoch_correct += active[0].correct;

            let scale = 1.0 / batch.len() as f32;
            let grad = &active[0].grad;
            let params = model.params_mut();
            for j in 0..n_params {
                let g = grad[j] * scale + wd * decay_mask[j] * params[j];
                velocity[j] = momentum * velocity[j] + g;
                params[j] -= lr * velocity[j];
            }
        }
        if model.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(epoch + 1));
        }
        let test_accuracy = match test {
            Some(t) if !t.is_empty() => Some(model.accuracy(t)?),
            _ => None,
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            learning_rate: f64::from(lr),
            train_loss: epoch_loss / data.len() as f64,
            train_accuracy: epoch_correct as f64 / data.len() as f64,
            test_accuracy,
        };
        log::info!(
            "epoch {}/{}: lr {:.5} loss {:.4} train acc {:.4}{}",
            rec.epoch,
            cfg.epochs,
            rec.learning_rate,
            rec.train_loss,
            rec.train_accuracy,
            rec.test_accuracy
                .map(|a| format!(" test acc {a:.4}"))
                .unwrap_or_default()
        );
        history.push(rec);
    }
    Ok(TrainOutcome { model, history })
}

/// Sums chunk results into `states[0]` along a fixed binary tree.
fn tree_reduce(states: &mut [ChunkState]) {
    let n = states.len();
    let mut stride = 1;
    while stride < n {
        let mut i = 0;
        while i + stride < n {
            let (lo, hi) = states.split_at_mut(i + stride);
            let (dst, src) = (&mut lo[i], &hi[0]);
            for (a, b) in dst.grad.iter_mut().zip(&src.grad) {
                *a += b;
            }
            dst.loss += src.loss;
            dst.correct += src.correct;
            i += 2 * stride;
        }
        stride *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charset::{Charset, ClassId};
    use crate::classify::{Layer, Shape};
    use crate::imaging::GrayImage;

    fn small_spec() -> ModelSpec {
        ModelSpec {
            name: "small".into(),
            input: Shape::new(1, 16, 16),
            layers: vec![
                Layer::Conv {
                    out_channels: 4,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                Layer::Relu,
                Layer::MaxPool {
                    kernel: 2,
                    stride: 2,
                },
                Layer::FullyConnected { out_dim: 74 },
                Layer::Softmax,
            ],
        }
    }

    /// Two classes: a bright bar in the top half or in the bottom half.
    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = SeededRng::new(seed);
        let mut d = Dataset::new(16, &Charset::default());
        for i in 0..n {
            let class = i % 2;
            let mut img = GrayImage::new(16, 16, 0);
            for p in img.data_mut() {
                *p = rng.int_in(0, 60) as u8;
            }
            let y0 = if class == 0 { 2 } else { 10 };
            let x0 = rng.int_in(1, 6) as usize;
            for y in y0..y0 + 3 {
                for x in x0..x0 + 8 {
                    img.set(x, y, 220);
                }
            }
            d.push(&img, ClassId(class as u16)).unwrap();
        }
        d
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 50,
            batch_size: 10,
            learning_rate: 0.05,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn overfits_a_toy_set() {
        let data = toy(20, 1);
        let out = train(&small_spec(), &data, None, &quick_cfg()).unwrap();
        assert_eq!(out.model.accuracy(&data).unwrap(), 1.0);
        assert_eq!(out.history.len(), 50);
        assert!(out.history.last().unwrap().train_loss < out.history[0].train_loss);
    }

    #[test]
    fn same_seed_gives_identical_tensors() {
        let data = toy(40, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let a = train(&small_spec(), &data, None, &cfg).unwrap().model;
        let b = train(&small_spec(), &data, None, &cfg).unwrap().model;
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let c = train(&small_spec(), &data, None, &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.to_bytes().unwrap(), c.model.to_bytes().unwrap());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let data = toy(40, 3);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let run_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(&small_spec(), &data, None, &cfg).unwrap().model)
        };
        assert_eq!(
            run_with(1).to_bytes().unwrap(),
            run_with(3).to_bytes().unwrap()
        );
    }

    #[test]
    fn fine_tune_with_zero_epochs_keeps_weights() {
        let data = toy(20, 4);
        let base = train(&small_spec(), &data, None, &quick_cfg())
            .unwrap()
            .model;
        let cfg = TrainConfig {
            epochs: 0,
            ..quick_cfg()
        };
        let tuned = fine_tune(&base, &data, None, &cfg, "stage-0")
            .unwrap()
            .model;
        assert_eq!(tuned.params(), base.params());
        assert_eq!(tuned.lineage().len(), base.lineage().len() + 1);
        assert_eq!(tuned.lineage().last().unwrap(), "stage-0");
    }

    #[test]
    fn fine_tune_rejects_other_charsets() {
        let data = toy(20, 4);
        let base = train(
            &small_spec(),
            &data,
            None,
            &TrainConfig {
                epochs: 1,
                ..quick_cfg()
            },
        )
        .unwrap()
        .model;
        let mut other = Dataset::with_hash(16, "other".into());
        other.push(&GrayImage::new(16, 16, 0), ClassId(0)).unwrap();
        let err = fine_tune(&base, &other, None, &quick_cfg(), "x").unwrap_err();
        assert!(matches!(err, Error::CharsetMismatch { .. }));
    }

    #[test]
    fn huge_rate_reports_divergence() {
        let data = toy(20, 5);
        let cfg = TrainConfig {
            learning_rate: 1e30,
            epochs: 5,
            batch_size: 10,
            ..TrainConfig::default()
        };
        let err = train(&small_spec(), &data, None, &cfg).unwrap_err();
        assert!(err.to_string().starts_with("diverged at epoch"), "{err}");
    }

    #[test]
    fn config_errors_are_all_listed() {
        let cfg = TrainConfig {
            batch_size: 100,
            learning_rate: -1.0,
            momentum: 1.5,
            ..TrainConfig::default()
        };
        let msg = cfg.validate(10).unwrap_err().to_string();
        assert!(
            msg.contains("batch_size") && msg.contains("learning_rate") && msg.contains("momentum")
        );
    }

    #[test]
    fn schedule_decays_at_milestones() {
        let cfg = TrainConfig::default();
        let rates: Vec<f64> = (0..10).map(|e| cfg.effective_rate(e)).collect();
        assert_eq!(rates[4], 0.01);
        assert!((rates[5] - 0.001).abs() < 1e-12);
        assert!((rates[7] - 0.001).abs() < 1e-12);
        assert!((rates[8] - 0.0001).abs() < 1e-12);
        let ft = TrainConfig {
            fine_tune: true,
            ..cfg
        };
        assert!((ft.effective_rate(0) - 0.001).abs() < 1e-12);
    }
}

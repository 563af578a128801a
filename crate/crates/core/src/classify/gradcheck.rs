//! Finite-difference check of the analytic gradients.
//!
//! Backpropagation runs in f32 as in training. Numeric derivatives come
//! from a separate, plain f64 forward pass over the same parameters, using
//! Ridders' extrapolation over a shrinking central-difference step. In f32
//! the rounding noise of the loss divided by the step reaches the tolerance
//! for gradients near 1e-5.

use super::net::{self, Plan, Workspace};
use super::{Layer, Model, ModelSpec, Norm, Shape};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

/// Relative-error bound every parameter must meet.
pub const TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms: the relative
/// error of two values that are both numerically zero is meaningless.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub params: usize,
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Parameters whose relative error reaches the tolerance.
    pub failures: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// One 3x3 convolution with two channels, then a fully connected layer, on
/// 8x8 inputs.
pub fn tiny_spec() -> ModelSpec {
    ModelSpec {
        name: "gradcheck".into(),
        input: Shape::new(1, 8, 8),
        layers: vec![
            Layer::Conv {
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 0,
            },
            Layer::FullyConnected {
                out_dim: crate::charset::NUM_CLASSES,
            },
        ],
    }
}

fn loss_f64(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    sum.ln() + max - logits[label]
}

/// Direct-loop f64 forward pass over the flat parameter vector.
fn reference_logits(plan: &Plan, params: &[f64], input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for l in &plan.layers {
        let (s, o) = (l.input, l.output);
        let (w, b) = (&params[l.weight.clone()], &params[l.bias.clone()]);
        x = match l.layer {
            Layer::Conv {
                kernel: k,
                stride,
                padding,
                ..
            } => {
                let mut y = vec![0.0; o.len()];
                for oc in 0..o.c {
                    for oy in 0..o.h {
                        for ox in 0..o.w {
                            let mut acc = b[oc];
                            for ic in 0..s.c {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = (oy * stride + ky) as isize - padding as isize;
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if iy < 0
                                            || ix < 0
                                            || iy >= s.h as isize
                                            || ix >= s.w as isize
                                        {
                                            continue;
                                        }
                                        acc += w[((oc * s.c + ic) * k + ky) * k + kx]
                                            * x[(ic * s.h + iy as usize) * s.w + ix as usize];
                                    }
                                }
                            }
                            y[(oc * o.h + oy) * o.w + ox] = acc;
                        }
                    }
                }
                y
            }
            Layer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
            Layer::MaxPool { kernel: k, stride } => {
                let mut y = vec![f64::NEG_INFINITY; o.len()];
                for c in 0..o.c {
                    for oy in 0..o.h {
                        for ox in 0..o.w {
                            let out = &mut y[(c * o.h + oy) * o.w + ox];
                            for ky in 0..k {
                                for kx in 0..k {
                                    let v =
                                        x[(c * s.h + oy * stride + ky) * s.w + ox * stride + kx];
                                    *out = out.max(v);
                                }
                            }
                        }
                    }
                }
                y
            }
            Layer::FullyConnected { out_dim } => {
                let n = x.len();
                (0..out_dim)
                    .map(|r| {
                        b[r] + w[r * n..(r + 1) * n]
                            .iter()
                            .zip(&x)
                            .map(|(a, v)| a * v)
                            .sum::<f64>()
                    })
                    .collect()
            }
            Layer::Softmax => x,
            Layer::Hog => unreachable!("rejected before the check"),
        };
    }
    x
}

struct Probe<'a> {
    plan: &'a Plan,
    params: Vec<f64>,
    input: Vec<f64>,
    label: usize,
}

impl Probe<'_> {
    fn loss_at(&mut self, j: usize, value: f64) -> f64 {
        let saved = self.params[j];
        self.params[j] = value;
        let logits = reference_logits(self.plan, &self.params, &self.input);
        self.params[j] = saved;
        loss_f64(&logits, self.label)
    }

    /// Ridders' method: a tableau of central differences with the step
    /// shrinking by `CON`, extrapolated towards zero step.
    fn derivative(&mut self, j: usize, h0: f64) -> f64 {
        const CON: f64 = 1.4;
        const CON2: f64 = CON * CON;
        const NTAB: usize = 10;
        const SAFE: f64 = 2.0;
        let x = self.params[j];
        let mut a = [[0.0f64; NTAB]; NTAB];
        let central = |probe: &mut Self, h: f64| {
            (probe.loss_at(j, x + h) - probe.loss_at(j, x - h)) / (2.0 * h)
        };
        let mut h = h0;
        a[0][0] = central(self, h);
        let mut err = f64::MAX;
        let mut ans = a[0][0];
        for i in 1..NTAB {
            h /= CON;
            a[0][i] = central(self, h);
            let mut fac = CON2;
            for k in 1..=i {
                a[k][i] = (a[k - 1][i] * fac - a[k - 1][i - 1]) / (fac - 1.0);
                fac *= CON2;
                let errt = (a[k][i] - a[k - 1][i])
                    .abs()
                    .max((a[k][i] - a[k - 1][i - 1]).abs());
                if errt <= err {
                    err = errt;
                    ans = a[k][i];
                }
            }
            if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
                break;
            }
        }
        ans
    }
}

/// Compares backpropagated gradients with numeric derivatives for every
/// parameter of a seeded model on a random input and label.
pub fn check_gradients(spec: &ModelSpec, seed: u64) -> Result<GradCheck> {
    check_gradients_with_step(spec, seed, 0.1)
}

/// As [`check_gradients`] with a chosen initial step. Networks with ReLU or
/// max pooling need a step small enough not to cross a kink.
pub fn check_gradients_with_step(spec: &ModelSpec, seed: u64, h0: f64) -> Result<GradCheck> {
    if spec.layers.contains(&Layer::Hog) {
        return Err(Error::Shape(
            "hog layers have no backward pass to check".into(),
        ));
    }
    let hash = crate::charset::Charset::default().hash();
    let mut model = Model::init(spec.clone(), hash, Norm::IDENTITY, seed)?;
    let mut rng = SeededRng::new(derive_seed(seed, &[0x6772_6164]));
    // Non-zero biases so their gradients are exercised away from the init.
    for l in &model.plan().layers.clone() {
        for v in &mut model.params_mut()[l.bias.clone()] {
            *v = rng.real_in(-0.1, 0.1) as f32;
        }
    }
    let input: Vec<f32> = (0..spec.input.len()).map(|_| rng.unit() as f32).collect();
    let out_len = model.plan().output().len();
    let label = rng.index(out_len);

    let plan = model.plan().clone();
    let mut ws = Workspace::new(&plan);
    ws.input_mut().copy_from_slice(&input);
    net::forward(&plan, model.params(), &mut ws);
    let mut d_logits = vec![0.0; out_len];
    net::softmax_cross_entropy(ws.logits(), label, &mut d_logits);
    let mut grad = vec![0.0f32; model.params().len()];
    net::backward(&plan, model.params(), &mut ws, &d_logits, &mut grad);

    let mut probe = Probe {
        plan: &plan,
        params: model.params().iter().map(|&v| f64::from(v)).collect(),
        input: input.iter().map(|&v| f64::from(v)).collect(),
        label,
    };
    let mut report = GradCheck {
        params: grad.len(),
        max_rel_error: 0.0,
        worst: 0,
        analytic: 0.0,
        numeric: 0.0,
        failures: 0,
    };
    for (j, &g) in grad.iter().enumerate() {
        let numeric = probe.derivative(j, h0);
        let analytic = f64::from(g);
        let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        if rel >= TOLERANCE {
            report.failures += 1;
        }
        if rel > report.max_rel_error {
            report = GradCheck {
                max_rel_error: rel,
                worst: j,
                analytic,
                numeric,
                ..report
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_network_gradients_match() {
        for seed in 0..3 {
            let r = check_gradients(&tiny_spec(), seed).unwrap();
            assert!(r.passed(), "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn pooled_relu_network_gradients_match() {
        let spec = ModelSpec {
            name: "gc2".into(),
            input: Shape::new(1, 8, 8),
            layers: vec![
                Layer::Conv {
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                Layer::Relu,
                Layer::MaxPool {
                    kernel: 2,
                    stride: 2,
                },
                Layer::Conv {
                    out_channels: 2,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
                Layer::FullyConnected { out_dim: 74 },
                Layer::Softmax,
            ],
        };
        // Finite differences straddling a ReLU or pooling kink are not
        // derivatives; require agreement on all but 1% of parameters.
        for seed in [11, 12] {
            let r = check_gradients_with_step(&spec, seed, 1e-2).unwrap();
            assert!(r.failures * 100 <= r.params, "{r:?}");
        }
    }
}

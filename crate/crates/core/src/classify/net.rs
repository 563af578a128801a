//! Layer kernels and the per-sample forward/backward pass.
//!
//! Parameters live in one flat `Vec<f32>`; each layer owns a weight range
//! and a bias range in it. Convolutions run as im2col followed by sgemm.

use std::ops::Range;

use super::hog::{hog_into, HOG_CELL};
use super::{Layer, ModelSpec, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct LayerPlan {
    pub layer: Layer,
    pub input: Shape,
    pub output: Shape,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    /// Dimensions of the weight tensor as stored in model files.
    pub weight_dims: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub input: Shape,
    pub layers: Vec<LayerPlan>,
    pub param_count: usize,
}

impl Plan {
    pub fn build(spec: &ModelSpec) -> Result<Plan> {
        let mut shape = spec.input;
        if shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::Shape(format!("empty input shape {shape}")));
        }
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut offset = 0;
        for (i, layer) in spec.layers.iter().enumerate() {
            let input = shape;
            let bad = |msg: String| Error::Shape(format!("layer {i} ({}): {msg}", layer.name()));
            let (output, wlen, blen, weight_dims) = match *layer {
                Layer::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(bad("zero-sized parameter".into()));
                    }
                    if input.h + 2 * padding < kernel || input.w + 2 * padding < kernel {
                        return Err(bad(format!("kernel {kernel} exceeds padded input {input}")));
                    }
                    let out = Shape::new(
                        out_channels,
                        (input.h + 2 * padding - kernel) / stride + 1,
                        (input.w + 2 * padding - kernel) / stride + 1,
                    );
                    let k = input.c * kernel * kernel;
                    (
                        out,
                        out_channels * k,
                        out_channels,
                        vec![out_channels, input.c, kernel, kernel],
                    )
                }
                Layer::Relu | Layer::Softmax => (input, 0, 0, Vec::new()),
                Layer::MaxPool { kernel, stride } => {
                    if kernel == 0 || stride == 0 {
                        return Err(bad("zero-sized parameter".into()));
                    }
                    if input.h < kernel || input.w < kernel {
                        return Err(bad(format!("window {kernel} exceeds input {input}")));
                    }
                    let out = Shape::new(
                        input.c,
                        (input.h - kernel) / stride + 1,
                        (input.w - kernel) / stride + 1,
                    );
                    (out, 0, 0, Vec::new())
                }
                Layer::FullyConnected { out_dim } => {
                    if out_dim == 0 {
                        return Err(bad("zero output dimension".into()));
                    }
                    let n = input.len();
                    (
                        Shape::new(out_dim, 1, 1),
                        out_dim * n,
                        out_dim,
                        vec![out_dim, n],
                    )
                }
                Layer::Hog => {
                    if i != 0 || input.c != 1 {
                        return Err(bad(
                            "hog must be the first layer on a 1-channel input".into()
                        ));
                    }
                    if !input.h.is_multiple_of(HOG_CELL)
                        || !input.w.is_multiple_of(HOG_CELL)
                        || input.h < 2 * HOG_CELL
                        || input.w < 2 * HOG_CELL
                    {
                        return Err(bad(format!(
                            "input {input} is not a grid of 2x2 or more cells"
                        )));
                    }
                    let blocks = (input.h / HOG_CELL - 1) * (input.w / HOG_CELL - 1);
                    (Shape::new(blocks * 36, 1, 1), 0, 0, Vec::new())
                }
            };
            if matches!(layer, Layer::Softmax) && i + 1 != spec.layers.len() {
                return Err(bad("softmax must be the last layer".into()));
            }
            let weight = offset..offset + wlen;
            let bias = weight.end..weight.end + blen;
            offset = bias.end;
            layers.push(LayerPlan {
                layer: layer.clone(),
                input,
                output,
                weight,
                bias,
                weight_dims,
            });
            shape = output;
        }
        Ok(Plan {
            input: spec.input,
            layers,
            param_count: offset,
        })
    }

    pub fn output(&self) -> Shape {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    fn has_backward(&self) -> bool {
        !self.layers.iter().any(|l| matches!(l.layer, Layer::Hog))
    }
}

/// Scratch buffers for one sample at a time.
pub(crate) struct Workspace {
    /// `acts[0]` is the normalized input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f32>>,
    cols: Vec<Vec<f32>>,
    argmax: Vec<Vec<u32>>,
    d_out: Vec<f32>,
    d_in: Vec<f32>,
}

impl Workspace {
    pub fn new(plan: &Plan) -> Self {
        let mut acts = vec![vec![0.0; plan.input.len()]];
        let mut cols = Vec::new();
        let mut argmax = Vec::new();
        let mut widest = plan.input.len();
        for l in &plan.layers {
            acts.push(vec![0.0; l.output.len()]);
            widest = widest.max(l.output.len());
            cols.push(match l.layer {
                Layer::Conv { kernel, .. } => {
                    vec![0.0; l.input.c * kernel * kernel * l.output.h * l.output.w]
                }
                _ => Vec::new(),
            });
            argmax.push(match l.layer {
                Layer::MaxPool { .. } => vec![0; l.output.len()],
                _ => Vec::new(),
            });
        }
        Self {
            acts,
            cols,
            argmax,
            d_out: vec![0.0; widest],
            d_in: vec![0.0; widest],
        }
    }

    pub fn input_mut(&mut self) -> &mut [f32] {
        &mut self.acts[0]
    }

    pub fn logits(&self) -> &[f32] {
        self.acts.last().expect("at least the input")
    }
}

/// Runs all layers on `ws.input_mut()`; the result is `ws.logits()`.
pub(crate) fn forward(plan: &Plan, params: &[f32], ws: &mut Workspace) {
    for (i, l) in plan.layers.iter().enumerate() {
        let (before, after) = ws.acts.split_at_mut(i + 1);
        let x = &before[i];
        let y = &mut after[0];
        let w = &params[l.weight.clone()];
        let b = &params[l.bias.clone()];
        match l.layer {
            Layer::Conv {
                kernel,
                stride,
                padding,
                ..
            } => {
                let col = &mut ws.cols[i];
                im2col(x, l.input, kernel, stride, padding, l.output, col);
                let k = l.input.c * kernel * kernel;
                let n = l.output.h * l.output.w;
                let m = l.output.c;
                for (o, row) in y.chunks_exact_mut(n).enumerate() {
                    row.fill(b[o]);
                }
                gemm(m, k, n, w, (k, 1), col, (n, 1), 1.0, y, n);
            }
            Layer::Relu => {
                for (o, &v) in y.iter_mut().zip(x.iter()) {
                    *o = v.max(0.0);
                }
            }
            Layer::MaxPool { kernel, stride } => {
                maxpool(x, l.input, kernel, stride, l.output, y, &mut ws.argmax[i]);
            }
            Layer::FullyConnected { .. } => {
                let n = x.len();
                for (o, out) in y.iter_mut().enumerate() {
                    *out = b[o] + dot(&w[o * n..(o + 1) * n], x);
                }
            }
            Layer::Softmax => y.copy_from_slice(x),
            Layer::Hog => hog_into(x, l.input.w, l.input.h, y),
        }
    }
}

/// Backpropagates `d_logits` and adds parameter gradients into `grad`.
pub(crate) fn backward(
    plan: &Plan,
    params: &[f32],
    ws: &mut Workspace,
    d_logits: &[f32],
    grad: &mut [f32],
) {
    debug_assert!(plan.has_backward());
    let out_len = plan.output().len();
    ws.d_out[..out_len].copy_from_slice(d_logits);
    // Input gradients are not needed below the first parameterized layer.
    let first_param = plan
        .layers
        .iter()
        .position(|l| !l.weight.is_empty())
        .unwrap_or(plan.layers.len());
    for i in (first_param..plan.layers.len()).rev() {
        let l = &plan.layers[i];
        let x = &ws.acts[i];
        let y = &ws.acts[i + 1];
        let nin = l.input.len();
        let nout = l.output.len();
        let need_dx = i > first_param;
        let d_out = &ws.d_out[..nout];
        let d_in = &mut ws.d_in[..nin];
        match l.layer {
            Layer::Conv {
                kernel,
                stride,
                padding,
                ..
            } => {
                let k = l.input.c * kernel * kernel;
                let n = l.output.h * l.output.w;
                let m = l.output.c;
                let col = &ws.cols[i];
                let (gw, gb) = grad[l.weight.start..l.bias.end].split_at_mut(l.weight.len());
                // dW += dY * col^T
                gemm(m, n, k, d_out, (n, 1), col, (1, n), 1.0, gw, k);
                for (o, row) in d_out.chunks_exact(n).enumerate() {
                    gb[o] += row.iter().sum::<f32>();
                }
                if need_dx {
                    // dcol = W^T * dY, then scatter back.
                    let mut dcol = vec![0.0; k * n];
                    let w = &params[l.weight.clone()];
                    gemm(k, m, n, w, (1, k), d_out, (n, 1), 0.0, &mut dcol, n);
                    col2im(&dcol, l.input, kernel, stride, padding, l.output, d_in);
                }
            }
            Layer::Relu => {
                if need_dx {
                    for ((d, &g), &v) in d_in.iter_mut().zip(d_out).zip(y.iter()) {
                        *d = if v > 0.0 { g } else { 0.0 };
                    }
                }
            }
            Layer::MaxPool { .. } => {
                if need_dx {
                    d_in.fill(0.0);
                    for (&g, &src) in d_out.iter().zip(ws.argmax[i].iter()) {
                        d_in[src as usize] += g;
                    }
                }
            }
            Layer::FullyConnected { .. } => {
                let w = &params[l.weight.clone()];
                let (gw, gb) = grad[l.weight.start..l.bias.end].split_at_mut(l.weight.len());
                for (o, &g) in d_out.iter().enumerate() {
                    gb[o] += g;
                    if g != 0.0 {
                        axpy(g, x, &mut gw[o * nin..(o + 1) * nin]);
                    }
                }
                if need_dx {
                    d_in.fill(0.0);
                    for (o, &g) in d_out.iter().enumerate() {
                        if g != 0.0 {
                            axpy(g, &w[o * nin..(o + 1) * nin], d_in);
                        }
                    }
                }
            }
            Layer::Softmax => {
                if need_dx {
                    d_in.copy_from_slice(d_out);
                }
            }
            Layer::Hog => unreachable!("hog has no backward pass"),
        }
        std::mem::swap(&mut ws.d_out, &mut ws.d_in);
    }
}

/// Softmax cross-entropy via log-sum-exp. Writes `softmax - onehot` into
/// `grad` and returns the loss.
pub(crate) fn softmax_cross_entropy(logits: &[f32], label: usize, grad: &mut [f32]) -> f32 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g = (z - max).exp();
        sum += *g;
    }
    for g in grad.iter_mut() {
        *g /= sum;
    }
    let loss = sum.ln() - (logits[label] - max);
    grad[label] -= 1.0;
    loss
}

pub(crate) fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&z| f64::from(z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / sum) as f32).collect()
}

/// `c = a * b + beta * c` with row/column strides given as `(row, col)`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    rsc: usize,
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m == 0 || n == 0 || (m - 1) * rsc + n - 1 < c.len());
    // SAFETY: the asserts above keep every strided access in bounds, and
    // `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent accumulators so the loop vectorizes; the summation
    // order is fixed, so results do not depend on the machine's vector width.
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

fn im2col(x: &[f32], s: Shape, k: usize, stride: usize, pad: usize, out: Shape, col: &mut [f32]) {
    let n = out.h * out.w;
    for c in 0..s.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * n..][..n];
                for oy in 0..out.h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut row[oy * out.w..(oy + 1) * out.w];
                    if iy < 0 || iy >= s.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * s.h + iy as usize) * s.w..][..s.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= s.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], s: Shape, k: usize, stride: usize, pad: usize, out: Shape, dx: &mut [f32]) {
    dx.fill(0.0);
    let n = out.h * out.w;
    for c in 0..s.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * n..][..n];
                for oy in 0..out.h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * s.h + iy as usize) * s.w..][..s.w];
                    for ox in 0..out.w {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < s.w as isize {
                            dst[ix as usize] += row[oy * out.w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn maxpool(
    x: &[f32],
    s: Shape,
    k: usize,
    stride: usize,
    out: Shape,
    y: &mut [f32],
    argmax: &mut [u32],
) {
    for c in 0..s.c {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let mut best = f32::NEG_INFINITY;
                let mut at = 0;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = (c * s.h + oy * stride + ky) * s.w + ox * stride + kx;
                        if x[idx] > best {
                            best = x[idx];
                            at = idx;
                        }
                    }
                }
                let o = (c * out.h + oy) * out.w + ox;
                y[o] = best;
                argmax[o] = at as u32;
            }
        }
    }
}

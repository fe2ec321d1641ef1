//! Small convolutional network with hand-written backpropagation.
//!
//! All parameters live in one flat vector `theta` so the optimizers work on
//! plain slices. Samples are processed in sub-batches with channel-last
//! activations (`[sample][y][x][channel]`): each convolution becomes one
//! patch-matrix product and each dense layer one matrix product. Conv
//! weights are laid out `[out][ky][kx][in]`, dense weights `[out][in]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hpspace::{Activation, Point};

/// Upper bound on the floats of one sub-batch's largest patch matrix.
const PATCH_BUDGET: usize = 1 << 20;
const MAX_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("convolutional layer {layer} does not fit a {side}x{side} input")]
    Collapsed { layer: usize, side: usize },
    #[error("network needs at least one input feature and one class")]
    Empty,
}

#[derive(Debug, Clone)]
struct ConvShape {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    pool: bool,
    in_side: usize,
    conv_side: usize,
    out_side: usize,
    weights: usize,
    bias: usize,
}

impl ConvShape {
    fn conv_len(&self) -> usize {
        self.out_channels * self.conv_side * self.conv_side
    }

    fn out_len(&self) -> usize {
        self.out_channels * self.out_side * self.out_side
    }

    fn in_len(&self) -> usize {
        self.in_channels * self.in_side * self.in_side
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    /// Range of output columns whose receptive field reads input column
    /// `kx`-offset positions inside `[0, in_side)`.
    fn valid_range(&self, k: usize) -> (usize, usize) {
        let (p, s, n) = (self.padding as isize, self.stride as isize, self.in_side as isize);
        let k = k as isize;
        // ix = o * s + k - p must satisfy 0 <= ix < n
        let lo = if p - k > 0 { (p - k + s - 1) / s } else { 0 };
        let hi = if n + p - k > 0 { (n + p - k + s - 1) / s } else { 0 };
        (lo as usize, (hi as usize).min(self.conv_side))
    }

    /// Patch matrix `[sample][oy][ox] x [ky][kx][in]` of a channel-last
    /// batch, zero where the window covers padding.
    fn patches(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (is, os, ic, len) = (self.in_side, self.conv_side, self.in_channels, self.patch_len());
        let mut out = vec![0.0; batch * os * os * len];
        for (image, rows) in x.chunks_exact(self.in_len()).zip(out.chunks_exact_mut(os * os * len)) {
            for oy in 0..os {
                for ox in 0..os {
                    let row = &mut rows[(oy * os + ox) * len..][..len];
                    for ky in 0..k {
                        let Some(iy) = (oy * s + ky).checked_sub(p).filter(|&iy| iy < is) else {
                            continue;
                        };
                        for kx in 0..k {
                            let Some(ix) = (ox * s + kx).checked_sub(p).filter(|&ix| ix < is) else {
                                continue;
                            };
                            let src = (iy * is + ix) * ic;
                            row[(ky * k + kx) * ic..][..ic].copy_from_slice(&image[src..src + ic]);
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`ConvShape::patches`]: sum patch gradients back onto the
    /// input positions they were copied from.
    fn scatter_patches(&self, grad: &[f64], batch: usize) -> Vec<f64> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (is, os, ic, len) = (self.in_side, self.conv_side, self.in_channels, self.patch_len());
        let mut out = vec![0.0; batch * self.in_len()];
        for (image, rows) in out
            .chunks_exact_mut(self.in_len())
            .zip(grad.chunks_exact(os * os * len))
        {
            for oy in 0..os {
                for ox in 0..os {
                    let row = &rows[(oy * os + ox) * len..][..len];
                    for ky in 0..k {
                        let Some(iy) = (oy * s + ky).checked_sub(p).filter(|&iy| iy < is) else {
                            continue;
                        };
                        for kx in 0..k {
                            let Some(ix) = (ox * s + kx).checked_sub(p).filter(|&ix| ix < is) else {
                                continue;
                            };
                            let dst = (iy * is + ix) * ic;
                            image[dst..dst + ic]
                                .iter_mut()
                                .zip(&row[(ky * k + kx) * ic..][..ic])
                                .for_each(|(d, g)| *d += g);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct DenseShape {
    inputs: usize,
    outputs: usize,
    hidden: bool,
    weights: usize,
    bias: usize,
}

/// Count of kernel placements along one axis, found by sliding the kernel.
fn slide_count(side: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    let padded = side + 2 * padding;
    let mut count = 0;
    let mut start = 0;
    while stride > 0 && kernel > 0 && start + kernel <= padded {
        count += 1;
        start += stride;
    }
    count
}

/// `c = a * b + beta * c` for row/column-strided views: `a` is `m x k`,
/// `b` is `k x n`, `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(c.len() > last(m, n, rsc, csc), "gemm: output too short");
    if k > 0 {
        assert!(a.len() > last(m, k, rsa, csa), "gemm: left operand too short");
        assert!(b.len() > last(k, n, rsb, csb), "gemm: right operand too short");
    }
    // SAFETY: every index reached through the strides was bounds-checked above.
    unsafe {
        matrixmultiply::dgemm(
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
            csc as isize,
        );
    }
}

/// Weights, biases and layer geometry of one network.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub theta: Vec<f64>,
    pub activation: Activation,
    pub dropout: f64,
    conv: Vec<ConvShape>,
    dense: Vec<DenseShape>,
    input_side: usize,
    input_channels: usize,
    num_classes: usize,
    chunk: usize,
}

/// Intermediate values of one forward pass over a batch, kept for
/// backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    batch: usize,
    conv_input_lens: Vec<usize>,
    patches: Vec<Vec<f64>>,
    conv_outputs: Vec<Vec<f64>>,
    pool_argmax: Vec<Vec<usize>>,
    dense_inputs: Vec<Vec<f64>>,
    dense_outputs: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    /// `[sample][class]`, row-major.
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    /// Side length after every convolution and every pooling, measured on the
    /// buffers the pass produced.
    pub fn feature_sizes(&self, net: &NetworkParams) -> Vec<usize> {
        let mut sizes = Vec::new();
        for (i, shape) in net.conv.iter().enumerate() {
            let side = |len: usize| ((len / self.batch / shape.out_channels) as f64).sqrt().round() as usize;
            sizes.push(side(self.conv_outputs[i].len()));
            if shape.pool {
                let next = match self.conv_input_lens.get(i + 1) {
                    Some(&len) => len,
                    None => self.dense_inputs[0].len(),
                };
                sizes.push(side(next));
            }
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
}

fn activate(activation: Activation, x: &mut [f64]) {
    match activation {
        Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Sigmoid => x.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
        Activation::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
    }
}

/// Multiply `grad` by the activation derivative, expressed through the
/// activation output `y`.
fn activate_backward(activation: Activation, y: &[f64], grad: &mut [f64]) {
    match activation {
        Activation::Relu => grad.iter_mut().zip(y).for_each(|(g, &y)| {
            if y <= 0.0 {
                *g = 0.0
            }
        }),
        Activation::Sigmoid => grad.iter_mut().zip(y).for_each(|(g, &y)| *g *= y * (1.0 - y)),
        Activation::Tanh => grad.iter_mut().zip(y).for_each(|(g, &y)| *g *= 1.0 - y * y),
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// 2-D cross-correlation of a single-sample tensor `[channels][side][side]`
/// with weights `[out][in][ky][kx]`, computed directly.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f64],
    in_channels: usize,
    in_side: usize,
    weights: &[f64],
    bias: &[f64],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> (Vec<f64>, usize) {
    let out_channels = bias.len();
    let conv_side = slide_count(in_side, kernel, stride, padding);
    let shape = ConvShape {
        in_channels,
        out_channels,
        kernel,
        stride,
        padding,
        pool: false,
        in_side,
        conv_side,
        out_side: conv_side,
        weights: 0,
        bias: 0,
    };
    let (k, s, p) = (kernel, stride, padding);
    let (is, os) = (in_side, conv_side);
    let mut out = vec![0.0; shape.conv_len()];
    for oc in 0..out_channels {
        let o = &mut out[oc * os * os..(oc + 1) * os * os];
        o.fill(bias[oc]);
        for ic in 0..in_channels {
            let plane = &input[ic * is * is..(ic + 1) * is * is];
            for ky in 0..k {
                let (oy_lo, oy_hi) = shape.valid_range(ky);
                for kx in 0..k {
                    let wv = weights[((oc * in_channels + ic) * k + ky) * k + kx];
                    let (ox_lo, ox_hi) = shape.valid_range(kx);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let row = &plane[iy * is..(iy + 1) * is];
                        let orow = &mut o[oy * os..(oy + 1) * os];
                        for ox in ox_lo..ox_hi {
                            orow[ox] += wv * row[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
    (out, conv_side)
}

/// 2x2 max pooling with stride 2 of one `[channels][side][side]` tensor.
pub fn max_pool2(input: &[f64], channels: usize, side: usize) -> (Vec<f64>, Vec<usize>, usize) {
    let out_side = side / 2;
    let mut out = Vec::with_capacity(channels * out_side * out_side);
    let mut idx = Vec::with_capacity(out.capacity());
    for c in 0..channels {
        let base = c * side * side;
        for oy in 0..out_side {
            for ox in 0..out_side {
                let mut best = base + 2 * oy * side + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * oy + dy) * side + 2 * ox + dx;
                    if input[j] > input[best] {
                        best = j;
                    }
                }
                out.push(input[best]);
                idx.push(best);
            }
        }
    }
    (out, idx, out_side)
}

/// 2x2 max pooling of a channel-last batch; indices point into `input`.
fn max_pool2_channel_last(input: &[f64], batch: usize, side: usize, channels: usize) -> (Vec<f64>, Vec<usize>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(batch * half * half * channels);
    let mut idx = Vec::with_capacity(out.capacity());
    let at = |b: usize, y: usize, x: usize, c: usize| ((b * side + y) * side + x) * channels + c;
    for b in 0..batch {
        for oy in 0..half {
            for ox in 0..half {
                for c in 0..channels {
                    let mut best = at(b, 2 * oy, 2 * ox, c);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = at(b, 2 * oy + dy, 2 * ox + dx, c);
                        if input[j] > input[best] {
                            best = j;
                        }
                    }
                    out.push(input[best]);
                    idx.push(best);
                }
            }
        }
    }
    (out, idx)
}

/// Append `[channels][side][side]` pixels to `out` in `[side][side][channels]`
/// order.
fn push_channel_last(input: &[f64], channels: usize, side: usize, out: &mut Vec<f64>) {
    if channels == 1 {
        out.extend_from_slice(input);
        return;
    }
    let plane = side * side;
    for i in 0..plane {
        out.extend((0..channels).map(|c| input[c * plane + i]));
    }
}

impl NetworkParams {
    /// Build the network described by `p` and draw its initial weights
    /// uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn build(
        p: &Point,
        input_side: usize,
        input_channels: usize,
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, BuildError> {
        let mut offset = 0;
        let mut alloc = |n: usize| {
            let start = offset;
            offset += n;
            start
        };

        let mut conv = Vec::with_capacity(p.n_conv());
        let (mut side, mut channels) = (input_side, input_channels);
        for (layer, group) in p.conv.iter().enumerate() {
            let (k, s, pad) = (group.kernel as usize, group.stride as usize, group.padding as usize);
            let conv_side = slide_count(side, k, s, pad);
            if conv_side == 0 {
                return Err(BuildError::Collapsed { layer, side });
            }
            let out_side = if group.do_pool { conv_side / 2 } else { conv_side };
            if out_side == 0 {
                return Err(BuildError::Collapsed { layer, side });
            }
            let out_channels = group.out_channels as usize;
            conv.push(ConvShape {
                in_channels: channels,
                out_channels,
                kernel: k,
                stride: s,
                padding: pad,
                pool: group.do_pool,
                in_side: side,
                conv_side,
                out_side,
                weights: alloc(out_channels * channels * k * k),
                bias: alloc(out_channels),
            });
            side = out_side;
            channels = out_channels;
        }

        let mut inputs = channels * side * side;
        if inputs == 0 || num_classes == 0 {
            return Err(BuildError::Empty);
        }
        let mut dense = Vec::with_capacity(p.n_fc() + 1);
        let sizes = p.fc.iter().map(|&n| (n as usize, true)).chain([(num_classes, false)]);
        for (outputs, hidden) in sizes {
            if outputs == 0 {
                return Err(BuildError::Empty);
            }
            dense.push(DenseShape {
                inputs,
                outputs,
                hidden,
                weights: alloc(outputs * inputs),
                bias: alloc(outputs),
            });
            inputs = outputs;
        }

        let mut theta = vec![0.0; offset];
        for c in &conv {
            let bound = 1.0 / (c.patch_len() as f64).sqrt();
            for v in &mut theta[c.weights..c.bias + c.out_channels] {
                *v = rng.random_range(-bound..bound);
            }
        }
        for d in &dense {
            let bound = 1.0 / (d.inputs as f64).sqrt();
            for v in &mut theta[d.weights..d.bias + d.outputs] {
                *v = rng.random_range(-bound..bound);
            }
        }

        let widest = conv
            .iter()
            .map(|c| c.conv_side * c.conv_side * c.patch_len().max(c.out_channels))
            .chain(dense.iter().map(|d| d.inputs.max(d.outputs)))
            .max()
            .unwrap_or(1);
        let chunk = (PATCH_BUDGET / widest.max(1)).clamp(1, MAX_CHUNK);

        Ok(NetworkParams {
            theta,
            activation: p.activation,
            dropout: p.dropout_rate,
            conv,
            dense,
            input_side,
            input_channels,
            num_classes,
            chunk,
        })
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_side * self.input_side
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Forward pass for one sample `[channels][side][side]`.
    pub fn forward(&self, input: &[f64], rng: Option<&mut ChaCha8Rng>) -> ForwardTrace {
        self.forward_batch(&[input], rng)
    }

    /// Forward pass for a batch of samples. Dropout masks are drawn only
    /// when `rng` is given (training passes).
    pub fn forward_batch(&self, inputs: &[&[f64]], mut rng: Option<&mut ChaCha8Rng>) -> ForwardTrace {
        let batch = inputs.len();
        let th = &self.theta;
        let mut x = Vec::with_capacity(batch * self.input_len());
        for input in inputs {
            assert_eq!(input.len(), self.input_len(), "input length");
            push_channel_last(input, self.input_channels, self.input_side, &mut x);
        }

        let mut conv_input_lens = Vec::with_capacity(self.conv.len());
        let mut patches = Vec::with_capacity(self.conv.len());
        let mut conv_outputs = Vec::with_capacity(self.conv.len());
        let mut pool_argmax = Vec::with_capacity(self.conv.len());
        for c in &self.conv {
            conv_input_lens.push(x.len());
            let cols = c.patches(&x, batch);
            let rows = batch * c.conv_side * c.conv_side;
            let (len, oc) = (c.patch_len(), c.out_channels);
            let mut y = th[c.bias..c.bias + oc].repeat(rows);
            let w = &th[c.weights..c.weights + c.weight_len()];
            gemm((rows, len, oc), &cols, (len, 1), w, (1, len), 1.0, &mut y, (oc, 1));
            activate(self.activation, &mut y);
            x = if c.pool {
                let (pooled, idx) = max_pool2_channel_last(&y, batch, c.conv_side, oc);
                pool_argmax.push(idx);
                pooled
            } else {
                pool_argmax.push(Vec::new());
                y.clone()
            };
            debug_assert_eq!(x.len(), batch * c.out_len());
            patches.push(cols);
            conv_outputs.push(y);
        }

        let mut dense_inputs = Vec::with_capacity(self.dense.len());
        let mut dense_outputs = Vec::with_capacity(self.dense.len());
        let mut masks = Vec::with_capacity(self.dense.len());
        for d in &self.dense {
            let w = &th[d.weights..d.weights + d.outputs * d.inputs];
            let mut y = th[d.bias..d.bias + d.outputs].repeat(batch);
            gemm(
                (batch, d.inputs, d.outputs),
                &x,
                (d.inputs, 1),
                w,
                (1, d.inputs),
                1.0,
                &mut y,
                (d.outputs, 1),
            );
            let mut mask = None;
            if d.hidden {
                activate(self.activation, &mut y);
                dense_outputs.push(y.clone());
                if let Some(rng) = rng.as_deref_mut() {
                    if self.dropout > 0.0 {
                        let keep = 1.0 - self.dropout;
                        let m: Vec<f64> = (0..y.len())
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        y.iter_mut().zip(&m).for_each(|(v, m)| *v *= m);
                        mask = Some(m);
                    }
                }
            } else {
                dense_outputs.push(y.clone());
            }
            masks.push(mask);
            dense_inputs.push(std::mem::replace(&mut x, y));
        }

        ForwardTrace {
            batch,
            conv_input_lens,
            patches,
            conv_outputs,
            pool_argmax,
            dense_inputs,
            dense_outputs,
            masks,
            logits: x,
        }
    }

    /// Class scores (logits) for a batch.
    pub fn scores(&self, batch: &[&[f64]]) -> Vec<Vec<f64>> {
        batch
            .chunks(self.chunk)
            .flat_map(|part| {
                let logits = self.forward_batch(part, None).logits;
                logits
                    .chunks_exact(self.num_classes)
                    .map(<[f64]>::to_vec)
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn predict(&self, input: &[f64]) -> usize {
        argmax(&self.forward(input, None).logits)
    }

    /// Predicted class of every sample.
    pub fn predict_batch(&self, inputs: &[&[f64]]) -> Vec<usize> {
        inputs
            .chunks(self.chunk)
            .flat_map(|part| {
                let logits = self.forward_batch(part, None).logits;
                logits.chunks_exact(self.num_classes).map(argmax).collect::<Vec<_>>()
            })
            .collect()
    }

    /// Backpropagate `grad_logits` (`[sample][class]`) through `trace`,
    /// accumulating into `grad`.
    fn backward(&self, trace: &ForwardTrace, grad_logits: Vec<f64>, grad: &mut [f64]) {
        let th = &self.theta;
        let batch = trace.batch;
        let mut g = grad_logits;
        for (i, d) in self.dense.iter().enumerate().rev() {
            if let Some(mask) = &trace.masks[i] {
                g.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
            }
            if d.hidden {
                activate_backward(self.activation, &trace.dense_outputs[i], &mut g);
            }
            for row in g.chunks_exact(d.outputs) {
                grad[d.bias..d.bias + d.outputs]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(b, g)| *b += g);
            }
            let x = &trace.dense_inputs[i];
            let gw = &mut grad[d.weights..d.weights + d.outputs * d.inputs];
            gemm(
                (d.outputs, batch, d.inputs),
                &g,
                (1, d.outputs),
                x,
                (d.inputs, 1),
                1.0,
                gw,
                (d.inputs, 1),
            );
            if i == 0 && self.conv.is_empty() {
                return;
            }
            let w = &th[d.weights..d.weights + d.outputs * d.inputs];
            let mut gx = vec![0.0; batch * d.inputs];
            gemm(
                (batch, d.outputs, d.inputs),
                &g,
                (d.outputs, 1),
                w,
                (d.inputs, 1),
                0.0,
                &mut gx,
                (d.inputs, 1),
            );
            g = gx;
        }
        for (i, c) in self.conv.iter().enumerate().rev() {
            let mut gy = if c.pool {
                let mut unpooled = vec![0.0; batch * c.conv_len()];
                for (&j, &gv) in trace.pool_argmax[i].iter().zip(&g) {
                    unpooled[j] += gv;
                }
                unpooled
            } else {
                g
            };
            activate_backward(self.activation, &trace.conv_outputs[i], &mut gy);
            let rows = batch * c.conv_side * c.conv_side;
            let (len, oc) = (c.patch_len(), c.out_channels);
            for row in gy.chunks_exact(oc) {
                grad[c.bias..c.bias + oc].iter_mut().zip(row).for_each(|(b, g)| *b += g);
            }
            let gw = &mut grad[c.weights..c.weights + c.weight_len()];
            gemm(
                (oc, rows, len),
                &gy,
                (1, oc),
                &trace.patches[i],
                (len, 1),
                1.0,
                gw,
                (len, 1),
            );
            if i == 0 {
                return;
            }
            let w = &th[c.weights..c.weights + c.weight_len()];
            let mut gp = vec![0.0; rows * len];
            gemm((rows, oc, len), &gy, (oc, 1), w, (len, 1), 0.0, &mut gp, (len, 1));
            g = c.scatter_patches(&gp, batch);
        }
    }

    /// Mean cross-entropy over `batch`; accumulates `d loss / d theta` into
    /// `grad` (which is not cleared). Dropout is active when `rng` is given.
    pub fn loss_and_gradient(
        &self,
        batch: &[(&[f64], usize)],
        grad: &mut [f64],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> BatchStats {
        assert_eq!(grad.len(), self.theta.len());
        let nc = self.num_classes;
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut loss = 0.0;
        let mut correct = 0;
        for part in batch.chunks(self.chunk) {
            let inputs: Vec<&[f64]> = part.iter().map(|&(x, _)| x).collect();
            let trace = self.forward_batch(&inputs, rng.as_deref_mut());
            let mut grad_logits = vec![0.0; part.len() * nc];
            for ((&(_, label), logits), gl) in part
                .iter()
                .zip(trace.logits.chunks_exact(nc))
                .zip(grad_logits.chunks_exact_mut(nc))
            {
                let probs = softmax(logits);
                loss -= probs[label].max(f64::MIN_POSITIVE).ln();
                if argmax(logits) == label {
                    correct += 1;
                }
                gl.iter_mut().zip(&probs).for_each(|(g, p)| *g = p * scale);
                gl[label] -= scale;
            }
            self.backward(&trace, grad_logits, grad);
        }
        BatchStats {
            loss: loss * scale,
            correct,
        }
    }

    /// Mean cross-entropy without dropout.
    pub fn loss(&self, batch: &[(&[f64], usize)]) -> f64 {
        let mut total = 0.0;
        for part in batch.chunks(self.chunk) {
            let inputs: Vec<&[f64]> = part.iter().map(|&(x, _)| x).collect();
            let trace = self.forward_batch(&inputs, None);
            for (&(_, label), logits) in part.iter().zip(trace.logits.chunks_exact(self.num_classes)) {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                total += lse - logits[label];
            }
        }
        total / batch.len().max(1) as f64
    }
}

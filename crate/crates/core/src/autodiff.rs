//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive op in execution order; nodes are
//! addressed by [`Var`] handles. [`Tape::backward`] walks the tape in reverse
//! and accumulates adjoints only for nodes that depend on a leaf created with
//! `requires_grad`. A fresh tape is built for every forward pass.

use crate::error::{ensure, Error, Result};
use crate::tensor::{col2im, gemm, im2col, Tensor, Window};

/// Default negative slope for [`Tape::leaky_relu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.2;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        win: Window,
        cols: Vec<f64>,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        /// Window of the equivalent forward convolution over the *output*.
        win: Window,
    },
    ChannelBias {
        input: Var,
        bias: Var,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Softmax(Var),
    Mse(Var, Var),
    Mix {
        maps: Var,
        proposals: Vec<Var>,
    },
    SpatialMean(Var),
    SpatialBroadcast(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of primitive ops.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` if the loss does not depend on it
    /// through a differentiable path.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Some(Tensor::new(&self.shapes[var.0], g.clone()).expect("gradient shape"))
    }

    pub fn get_slice(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0)?.as_deref()
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    ensure!(
        a.shape() == b.shape(),
        Dimension,
        "{what}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; [`Tape::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (c_in, h, w) = self.value(input).chw()?;
        let ks = self.value(kernel).shape().to_vec();
        ensure!(
            ks.len() == 4 && ks[2] == ks[3],
            Dimension,
            "conv2d kernel must be [C_out,C_in,k,k], got {ks:?}"
        );
        ensure!(
            ks[1] == c_in,
            Dimension,
            "conv2d kernel expects {} input channels, input has {c_in}",
            ks[1]
        );
        let win = Window::new(c_in, h, w, ks[2], stride, padding).ok_or_else(|| {
            Error::Dimension(format!(
                "conv2d: {h}x{w} input with padding {padding} is smaller than kernel {}",
                ks[2]
            ))
        })?;
        let cols = im2col(self.value(input).data(), &win);
        let c_out = ks[0];
        let mut out = vec![0.0; c_out * win.col_cols()];
        gemm(
            c_out,
            win.col_rows(),
            win.col_cols(),
            self.value(kernel).data(),
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        let value = Tensor::new(&[c_out, win.out_height, win.out_width], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                win,
                cols,
            },
            &[input, kernel],
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (c_in, h, w) = self.value(input).chw()?;
        let ks = self.value(kernel).shape().to_vec();
        ensure!(
            ks.len() == 4 && ks[2] == ks[3],
            Dimension,
            "conv_transpose2d kernel must be [C_in,C_out,k,k], got {ks:?}"
        );
        ensure!(
            ks[0] == c_in,
            Dimension,
            "conv_transpose2d kernel expects {} input channels, input has {c_in}",
            ks[0]
        );
        ensure!(stride > 0, Dimension, "stride must be positive");
        let (c_out, k) = (ks[1], ks[2]);
        let out_h = ((h - 1) * stride + k)
            .checked_sub(2 * padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Dimension("conv_transpose2d output would be empty".into()))?;
        let out_w = ((w - 1) * stride + k)
            .checked_sub(2 * padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Dimension("conv_transpose2d output would be empty".into()))?;
        let win = Window::new(c_out, out_h, out_w, k, stride, padding)
            .filter(|win| win.out_height == h && win.out_width == w)
            .ok_or_else(|| Error::Dimension("conv_transpose2d geometry mismatch".into()))?;
        let mut cols = vec![0.0; win.col_rows() * win.col_cols()];
        gemm(
            win.col_rows(),
            c_in,
            win.col_cols(),
            self.value(kernel).data(),
            true,
            self.value(input).data(),
            false,
            0.0,
            &mut cols,
        );
        let value = Tensor::new(&[c_out, out_h, out_w], col2im(&cols, &win))?;
        Ok(self.push(value, Op::ConvTranspose2d { input, kernel, win }, &[input, kernel]))
    }

    /// Adds `bias[c]` to every pixel of channel `c`.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        ensure!(
            self.value(bias).numel() == c,
            Dimension,
            "bias has {} entries for {c} channels",
            self.value(bias).numel()
        );
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(input).clone();
        for (ch, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
            plane.iter_mut().for_each(|x| *x += b[ch]);
        }
        Ok(self.push(out, Op::ChannelBias { input, bias }, &[input, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(x, slope), &[x])
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(self.value(a), self.value(b), what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.value(a).shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor), &[x])
    }

    /// Concatenate `[C_i,H,W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Dimension, "concat of zero tensors");
        let (_, h, w) = self.value(parts[0]).chw()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw()?;
            ensure!(
                (ph, pw) == (h, w),
                Dimension,
                "concat: spatial {ph}x{pw} vs {h}x{w}"
            );
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(&[channels, h, w], data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Per-pixel softmax across channels, stabilised by max subtraction.
    pub fn softmax_channels(&mut self, logits: Var) -> Result<Var> {
        let (c, h, w) = self.value(logits).chw()?;
        ensure!(c >= 1, Dimension, "softmax over zero channels");
        let value = softmax_channels(self.value(logits).data(), c, h * w);
        let value = Tensor::new(&[c, h, w], value)?;
        Ok(self.push(value, Op::Softmax(logits), &[logits]))
    }

    /// Mean of squared differences, as a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape(self.value(pred), self.value(target), "mse")?;
        let n = self.value(pred).numel() as f64;
        let total: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(Tensor::scalar(total / n), Op::Mse(pred, target), &[pred, target]))
    }

    /// `out[c,p] = Σ_k maps[k,p] * proposals[k][c,p]`: per-pixel weighted sum
    /// of images with the weights broadcast across colour channels.
    pub fn mix(&mut self, maps: Var, proposals: &[Var]) -> Result<Var> {
        let (k, h, w) = self.value(maps).chw()?;
        ensure!(
            k == proposals.len(),
            Dimension,
            "{k} weight maps for {} proposals",
            proposals.len()
        );
        let (c, ph, pw) = self.value(proposals[0]).chw()?;
        ensure!((ph, pw) == (h, w), Dimension, "maps {h}x{w} vs images {ph}x{pw}");
        let hw = h * w;
        let mut out = vec![0.0; c * hw];
        for (i, &p) in proposals.iter().enumerate() {
            let img = self.value(p);
            ensure!(
                img.shape() == [c, h, w],
                Dimension,
                "proposal {i} has shape {:?}",
                img.shape()
            );
            let m = &self.value(maps).data()[i * hw..(i + 1) * hw];
            for ch in 0..c {
                let src = &img.data()[ch * hw..(ch + 1) * hw];
                for ((o, &x), &wt) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(src).zip(m) {
                    *o += wt * x;
                }
            }
        }
        let value = Tensor::new(&[c, h, w], out)?;
        let mut inputs = vec![maps];
        inputs.extend_from_slice(proposals);
        Ok(self.push(
            value,
            Op::Mix {
                maps,
                proposals: proposals.to_vec(),
            },
            &inputs,
        ))
    }

    /// `[C,H,W] -> [C,1,1]` spatial average.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / (h * w) as f64)
            .collect();
        Ok(self.push(Tensor::new(&[c, 1, 1], data)?, Op::SpatialMean(x), &[x]))
    }

    /// `[C,1,1] -> [C,H,W]` by repetition.
    pub fn spatial_broadcast(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (c, xh, xw) = self.value(x).chw()?;
        ensure!((xh, xw) == (1, 1), Dimension, "broadcast needs [C,1,1]");
        let mut data = Vec::with_capacity(c * h * w);
        for &v in self.value(x).data() {
            data.extend(std::iter::repeat_n(v, h * w));
        }
        Ok(self.push(Tensor::new(&[c, h, w], data)?, Op::SpatialBroadcast(x), &[x]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        ensure!(
            lv.numel() == 1,
            Contract,
            "backward needs a scalar loss, got shape {:?}",
            lv.shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |var: Var, contribution: &dyn Fn(&mut [f64])| {
            if !self.nodes[var.0].requires_grad {
                return;
            }
            let slot = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.numel()]);
            contribution(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                win,
                cols,
            } => {
                let c_out = node.value.shape()[0];
                acc(*kernel, &|dk| {
                    gemm(c_out, win.col_cols(), win.col_rows(), g, false, cols, true, 1.0, dk)
                });
                acc(*input, &|dx| {
                    let mut dcols = vec![0.0; win.col_rows() * win.col_cols()];
                    gemm(
                        win.col_rows(),
                        c_out,
                        win.col_cols(),
                        self.nodes[kernel.0].value.data(),
                        true,
                        g,
                        false,
                        0.0,
                        &mut dcols,
                    );
                    add_into(dx, &col2im(&dcols, win));
                });
            }
            Op::ConvTranspose2d { input, kernel, win } => {
                let gcols = im2col(g, win);
                let c_in = self.nodes[input.0].value.shape()[0];
                acc(*kernel, &|dk| {
                    gemm(
                        c_in,
                        win.col_cols(),
                        win.col_rows(),
                        self.nodes[input.0].value.data(),
                        false,
                        &gcols,
                        true,
                        1.0,
                        dk,
                    )
                });
                acc(*input, &|dx| {
                    gemm(
                        c_in,
                        win.col_rows(),
                        win.col_cols(),
                        self.nodes[kernel.0].value.data(),
                        false,
                        &gcols,
                        false,
                        1.0,
                        dx,
                    )
                });
            }
            Op::ChannelBias { input, bias } => {
                acc(*input, &|dx| add_into(dx, g));
                let c = node.value.shape()[0];
                let hw = g.len() / c;
                acc(*bias, &|db| {
                    for (ch, plane) in g.chunks(hw).enumerate() {
                        db[ch] += plane.iter().sum::<f64>();
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.nodes[x.0].value.data();
                acc(*x, &|dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.nodes[x.0].value.data();
                acc(*x, &|dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += if v > 0.0 { gv } else { slope * gv };
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|d| add_into(d, g));
                acc(*b, &|d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|d| add_into(d, g));
                acc(*b, &|d| d.iter_mut().zip(g).for_each(|(d, gv)| *d -= gv));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                acc(*a, &|d| {
                    for ((d, gv), y) in d.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                acc(*b, &|d| {
                    for ((d, gv), x) in d.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }
            Op::Scale(x, f) => acc(*x, &|d| d.iter_mut().zip(g).for_each(|(d, gv)| *d += f * gv)),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.numel();
                    let slice = &g[offset..offset + n];
                    acc(*p, &|d| add_into(d, slice));
                    offset += n;
                }
            }
            Op::Softmax(x) => {
                let s = node.value.data();
                let c = node.value.shape()[0];
                let hw = s.len() / c;
                acc(*x, &|d| {
                    for p in 0..hw {
                        let dot: f64 = (0..c).map(|k| g[k * hw + p] * s[k * hw + p]).sum();
                        for k in 0..c {
                            let i = k * hw + p;
                            d[i] += s[i] * (g[i] - dot);
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                let scale = 2.0 * g[0] / av.len() as f64;
                acc(*a, &|d| {
                    for ((d, x), y) in d.iter_mut().zip(av).zip(bv) {
                        *d += scale * (x - y);
                    }
                });
                acc(*b, &|d| {
                    for ((d, x), y) in d.iter_mut().zip(av).zip(bv) {
                        *d -= scale * (x - y);
                    }
                });
            }
            Op::Mix { maps, proposals } => {
                let mv = self.nodes[maps.0].value.data();
                let hw = mv.len() / proposals.len();
                let c = node.value.shape()[0];
                acc(*maps, &|d| {
                    for (k, p) in proposals.iter().enumerate() {
                        let img = self.nodes[p.0].value.data();
                        let dk = &mut d[k * hw..(k + 1) * hw];
                        for ch in 0..c {
                            let gs = &g[ch * hw..(ch + 1) * hw];
                            let xs = &img[ch * hw..(ch + 1) * hw];
                            for ((dv, gv), xv) in dk.iter_mut().zip(gs).zip(xs) {
                                *dv += gv * xv;
                            }
                        }
                    }
                });
                for (k, p) in proposals.iter().enumerate() {
                    let m = &mv[k * hw..(k + 1) * hw];
                    acc(*p, &|d| {
                        for ch in 0..c {
                            let gs = &g[ch * hw..(ch + 1) * hw];
                            for ((dv, gv), wv) in d[ch * hw..(ch + 1) * hw].iter_mut().zip(gs).zip(m) {
                                *dv += gv * wv;
                            }
                        }
                    });
                }
            }
            Op::SpatialMean(x) => {
                let hw = self.nodes[x.0].value.numel() / g.len();
                acc(*x, &|d| {
                    for (plane, gv) in d.chunks_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|v| *v += gv / hw as f64);
                    }
                });
            }
            Op::SpatialBroadcast(x) => {
                let hw = g.len() / self.nodes[x.0].value.numel();
                acc(*x, &|d| {
                    for (dv, plane) in d.iter_mut().zip(g.chunks(hw)) {
                        *dv += plane.iter().sum::<f64>();
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Channel-wise softmax of a `[C, HW]` buffer.
pub fn softmax_channels(logits: &[f64], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * hw];
    for p in 0..hw {
        let max = (0..c).map(|k| logits[k * hw + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in 0..c {
            let e = (logits[k * hw + p] - max).exp();
            out[k * hw + p] = e;
            total += e;
        }
        for k in 0..c {
            out[k * hw + p] /= total;
        }
    }
    out
}

//! The U-Net augmentation generator and the small heatmap estimator.
//!
//! Both networks keep their weights as a flat `Vec<Tensor>` in a fixed
//! layout. Forward passes take the weights as tape [`Var`]s so callers pick
//! per pass whether a network is trainable (`Tape::param`) or frozen
//! (`Tape::constant`).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, LEAKY_RELU_SLOPE};
use crate::error::{ensure, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Bind weights onto a tape, trainable or frozen.
pub fn bind(tape: &mut Tape, params: &[Tensor], trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|p| {
            if trainable {
                tape.param(p.clone())
            } else {
                tape.constant(p.clone())
            }
        })
        .collect()
}

fn he_normal(shape: &[usize], fan_in: f64, rng: &mut Rng) -> Tensor {
    let std = (2.0 / fan_in).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gaussian(0.0, std)).collect()).expect("init shape")
}

/// Largest `n` with `2^n` dividing both sides and the bottleneck at least
/// 3 pixels on its short side.
pub fn generator_blocks(height: usize, width: usize) -> Result<usize> {
    ensure!(
        height >= 8 && width >= 8,
        Validation,
        "generator input {height}x{width} is smaller than 8x8"
    );
    let mut n = 0;
    while (height % (1 << (n + 1)) == 0)
        && (width % (1 << (n + 1)) == 0)
        && height.min(width) / (1 << (n + 1)) >= 3
    {
        n += 1;
    }
    ensure!(n >= 1, Validation, "{height}x{width} cannot form a single stride-2 block");
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub height: usize,
    pub width: usize,
    pub image_channels: usize,
    /// Number of mixing inputs, `K + 1`.
    pub proposals: usize,
    pub n_blocks: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// One weight per proposal per image instead of per pixel.
    pub image_level: bool,
}

impl GeneratorArch {
    pub fn new(height: usize, width: usize, k: usize, base_channels: usize) -> Result<Self> {
        ensure!(k >= 1, Validation, "K must be at least 1");
        ensure!(base_channels >= 1, Validation, "base_channels must be positive");
        Ok(Self {
            height,
            width,
            image_channels: 3,
            proposals: k + 1,
            n_blocks: generator_blocks(height, width)?,
            base_channels,
            max_channels: base_channels * 8,
            image_level: false,
        })
    }

    fn channels(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.max_channels)
    }

    fn input_channels(&self) -> usize {
        self.image_channels * self.proposals
    }

    /// Spatial size after `n_blocks` stride-2 convolutions.
    pub fn bottleneck(&self) -> (usize, usize) {
        (self.height >> self.n_blocks, self.width >> self.n_blocks)
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.n_blocks >= 1, Validation, "generator needs at least one block");
        let scale = 1 << self.n_blocks;
        ensure!(
            self.height % scale == 0 && self.width % scale == 0,
            Validation,
            "{}x{} is not divisible by 2^{}",
            self.height,
            self.width,
            self.n_blocks
        );
        ensure!(self.proposals >= 2, Validation, "need at least two mixing inputs");
        Ok(())
    }

    /// Parameter shapes in storage order: encoder (kernel, bias) pairs,
    /// decoder pairs from the bottleneck outwards, then the 1x1 head.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let n = self.n_blocks;
        let mut shapes = Vec::new();
        for i in 0..n {
            let cin = if i == 0 { self.input_channels() } else { self.channels(i - 1) };
            shapes.push(vec![self.channels(i), cin, 4, 4]);
            shapes.push(vec![self.channels(i)]);
        }
        for level in (0..n).rev() {
            let cin = if level == n - 1 { self.channels(n - 1) } else { 2 * self.channels(level) };
            let cout = self.decoder_channels(level);
            shapes.push(vec![cin, cout, 4, 4]);
            shapes.push(vec![cout]);
        }
        let head_in = self.decoder_channels(0) + self.input_channels();
        shapes.push(vec![self.proposals, head_in, 1, 1]);
        shapes.push(vec![self.proposals]);
        shapes
    }

    fn decoder_channels(&self, level: usize) -> usize {
        if level == 0 {
            self.base_channels
        } else {
            self.channels(level - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    arch: GeneratorArch,
    params: Vec<Tensor>,
}

/// Size the generator from the input resolution and initialise it.
pub fn build_generator(input_hw: (usize, usize), k: usize, base_channels: usize, rng: &mut Rng) -> Result<GeneratorNet> {
    GeneratorNet::new(GeneratorArch::new(input_hw.0, input_hw.1, k, base_channels)?, rng)
}

impl GeneratorNet {
    /// He-normal kernels, zero biases, zero head (uniform maps at start).
    pub fn new(arch: GeneratorArch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.param_shapes();
        let last = shapes.len() - 2;
        let params = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.len() == 1 || i >= last {
                    Tensor::zeros(s)
                } else if i < 2 * arch.n_blocks {
                    he_normal(s, (s[1] * 16) as f64, rng)
                } else {
                    // a stride-2 transposed conv sees a quarter of its taps
                    he_normal(s, (s[0] * 4) as f64, rng)
                }
            })
            .collect();
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: GeneratorArch, params: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        check_shapes(&arch.param_shapes(), &params)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn n_blocks(&self) -> usize {
        self.arch.n_blocks
    }

    /// Indices of the head kernel and bias within [`Self::params`].
    pub fn head_indices(&self) -> (usize, usize) {
        (self.params.len() - 2, self.params.len() - 1)
    }

    /// Raw `[K+1, H, W]` logits for channel-concatenated proposals.
    pub fn logits(&self, tape: &mut Tape, params: &[Var], proposals: &[Var]) -> Result<Var> {
        let a = &self.arch;
        ensure!(
            proposals.len() == a.proposals,
            Validation,
            "generator expects {} proposals, got {}",
            a.proposals,
            proposals.len()
        );
        for &p in proposals {
            ensure!(
                tape.value(p).shape() == [a.image_channels, a.height, a.width],
                Dimension,
                "proposal shape {:?} vs {}x{}x{}",
                tape.value(p).shape(),
                a.image_channels,
                a.height,
                a.width
            );
        }
        let input = tape.concat_channels(proposals)?;
        let n = a.n_blocks;
        let mut skips = Vec::with_capacity(n);
        let mut x = input;
        for i in 0..n {
            let y = tape.conv2d(x, params[2 * i], 2, 1)?;
            let y = tape.channel_bias(y, params[2 * i + 1])?;
            x = tape.relu(y);
            skips.push(x);
        }
        for (j, level) in (0..n).rev().enumerate() {
            let idx = 2 * n + 2 * j;
            let y = tape.conv_transpose2d(x, params[idx], 2, 1)?;
            let y = tape.channel_bias(y, params[idx + 1])?;
            let y = tape.leaky_relu(y, LEAKY_RELU_SLOPE);
            let skip = if level == 0 { input } else { skips[level - 1] };
            x = tape.concat_channels(&[y, skip])?;
        }
        let (hw, hb) = self.head_indices();
        let y = tape.conv2d(x, params[hw], 1, 0)?;
        tape.channel_bias(y, params[hb])
    }

    /// Attention maps: a per-pixel simplex over the `K+1` inputs. The
    /// image-level variant pools the logits before the softmax and
    /// broadcasts one weight per input.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], proposals: &[Var]) -> Result<Var> {
        let logits = self.logits(tape, params, proposals)?;
        if self.arch.image_level {
            let pooled = tape.spatial_mean(logits)?;
            let weights = tape.softmax_channels(pooled)?;
            tape.spatial_broadcast(weights, self.arch.height, self.arch.width)
        } else {
            tape.softmax_channels(logits)
        }
    }

    /// Gradient-free convenience pass.
    pub fn attention_maps(&self, proposals: &[Image]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = bind(&mut tape, &self.params, false);
        let inputs: Vec<Var> = proposals.iter().map(|p| tape.constant(p.to_tensor())).collect();
        let maps = self.forward(&mut tape, &params, &inputs)?;
        Ok(tape.value(maps).clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoseArch {
    pub height: usize,
    pub width: usize,
    pub image_channels: usize,
    pub joints: usize,
    pub channels: usize,
}

impl PoseArch {
    pub fn new(height: usize, width: usize, joints: usize, channels: usize) -> Result<Self> {
        let arch = Self {
            height,
            width,
            image_channels: 3,
            joints,
            channels,
        };
        arch.validate()?;
        Ok(arch)
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.height % 4 == 0 && self.width % 4 == 0 && self.height >= 8 && self.width >= 8,
            Validation,
            "pose input {}x{} must be a multiple of 4 and at least 8",
            self.height,
            self.width
        );
        ensure!(self.joints >= 1 && self.channels >= 1, Validation, "empty pose network");
        Ok(())
    }

    pub fn heatmap_hw(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }

    /// `(kernel shape, stride, padding)` of the five convolutions.
    fn layers(&self) -> [([usize; 4], usize, usize); 5] {
        let c = self.channels;
        [
            ([c, self.image_channels, 3, 3], 1, 1),
            ([2 * c, c, 3, 3], 2, 1),
            ([2 * c, 2 * c, 3, 3], 2, 1),
            ([2 * c, 2 * c, 3, 3], 1, 1),
            ([self.joints, 2 * c, 1, 1], 1, 0),
        ]
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers()
            .iter()
            .flat_map(|(k, _, _)| [k.to_vec(), vec![k[0]]])
            .collect()
    }
}

/// Four 3x3 convolutions (two of them stride 2) and a 1x1 heatmap head.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseNet {
    arch: PoseArch,
    params: Vec<Tensor>,
}

impl PoseNet {
    pub fn new(arch: PoseArch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let params = arch
            .param_shapes()
            .iter()
            .map(|s| {
                if s.len() == 1 {
                    Tensor::zeros(s)
                } else {
                    he_normal(s, (s[1] * s[2] * s[3]) as f64, rng)
                }
            })
            .collect();
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: PoseArch, params: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        check_shapes(&arch.param_shapes(), &params)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &PoseArch {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Raw `[J, H/4, W/4]` heatmaps.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], image: Var) -> Result<Var> {
        let a = &self.arch;
        ensure!(
            tape.value(image).shape() == [a.image_channels, a.height, a.width],
            Dimension,
            "pose input {:?} vs {}x{}x{}",
            tape.value(image).shape(),
            a.image_channels,
            a.height,
            a.width
        );
        let layers = a.layers();
        let mut x = image;
        for (i, (_, stride, pad)) in layers.iter().enumerate() {
            let y = tape.conv2d(x, params[2 * i], *stride, *pad)?;
            let y = tape.channel_bias(y, params[2 * i + 1])?;
            x = if i + 1 < layers.len() { tape.relu(y) } else { y };
        }
        Ok(x)
    }

    /// Gradient-free inference.
    pub fn predict(&self, image: &Image) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = bind(&mut tape, &self.params, false);
        let x = tape.constant(image.to_rgb().to_tensor());
        let out = self.forward(&mut tape, &params, x)?;
        Ok(tape.value(out).clone())
    }
}

fn check_shapes(expected: &[Vec<usize>], params: &[Tensor]) -> Result<()> {
    ensure!(
        expected.len() == params.len(),
        Dimension,
        "expected {} parameter tensors, got {}",
        expected.len(),
        params.len()
    );
    for (i, (s, p)) in expected.iter().zip(params).enumerate() {
        ensure!(
            p.shape() == s.as_slice(),
            Dimension,
            "parameter {i}: shape {:?}, expected {:?}",
            p.shape(),
            s
        );
    }
    Ok(())
}

//! `ImageTensor`: planar `[C,H,W]` float64 images in `[0,1]`, plus the
//! resampling and filtering helpers shared by corruptions and augmentations.

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == channels * height * width,
            Dimension,
            "{channels}x{height}x{width} image needs {} values, got {}",
            channels * height * width,
            data.len()
        );
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.plane_len()..(c + 1) * self.plane_len()]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn clamp01(mut self) -> Image {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Grayscale images are replicated to three channels; RGB passes through.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let plane = self.plane(0).to_vec();
        let mut data = Vec::with_capacity(3 * plane.len());
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Image {
            channels: 3,
            data,
            ..*self
        }
    }

    /// Round to the nearest 8-bit level, as when stored to disk.
    pub fn quantize_u8(&self) -> Image {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }

    pub fn to_bytes_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.channels, self.height, self.width], self.data.clone())
            .expect("image dims")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let (c, h, w) = t.chw()?;
        Image::new(c, h, w, t.data().to_vec())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Reflect an index into `0..n` (mirror without repeating the edge pixel).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Bilinear sample of one plane at fractional `(y, x)` with reflect borders.
pub fn sample_bilinear(plane: &[f64], height: usize, width: usize, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |yy: isize, xx: isize| plane[reflect(yy, height) * width + reflect(xx, width)];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resample every channel through an inverse coordinate map
/// `(y, x) -> (src_y, src_x)`.
pub fn warp(image: &Image, map: impl Fn(usize, usize) -> (f64, f64)) -> Image {
    let (h, w) = (image.height(), image.width());
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = map(y, x);
            for c in 0..image.channels() {
                let v = sample_bilinear(image.plane(c), h, w, sy, sx);
                out.set(c, y, x, v);
            }
        }
    }
    out
}

/// 2-D correlation of each channel with a square odd-sized kernel,
/// reflect-padded borders.
pub fn convolve(image: &Image, kernel: &[f64], size: usize) -> Image {
    debug_assert_eq!(kernel.len(), size * size);
    debug_assert!(size % 2 == 1);
    let r = (size / 2) as isize;
    let (h, w) = (image.height(), image.width());
    let mut out = image.clone();
    for c in 0..image.channels() {
        let src = image.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..size {
                    let sy = reflect(y as isize + ky as isize - r, h);
                    let row = &src[sy * w..(sy + 1) * w];
                    for kx in 0..size {
                        let wgt = kernel[ky * size + kx];
                        if wgt != 0.0 {
                            acc += wgt * row[reflect(x as isize + kx as isize - r, w)];
                        }
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    }
    out
}

/// Separable Gaussian blur (reflect borders). `sigma <= 0` is the identity.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / total).collect();
    let (h, w) = (image.height(), image.width());
    let mut tmp = image.clone();
    for c in 0..image.channels() {
        let src = image.plane(c);
        let dst = tmp.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * src[y * w + reflect(x as isize + i as isize - radius, w)])
                    .sum();
            }
        }
    }
    let mut out = tmp.clone();
    for c in 0..image.channels() {
        let src = tmp.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * src[reflect(y as isize + i as isize - radius, h) * w + x])
                    .sum();
            }
        }
    }
    out
}

/// Blur a single-channel field stored as a flat `h*w` buffer.
pub fn gaussian_blur_plane(plane: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let img = Image::new(1, height, width, plane.to_vec()).expect("plane dims");
    gaussian_blur(&img, sigma).data
}

pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

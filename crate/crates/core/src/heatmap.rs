//! Keypoint annotations and their Gaussian heatmap encoding.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// 0 = not labelled, anything else = visible.
    pub v: u8,
}

impl Keypoint {
    pub fn visible(x: f64, y: f64) -> Self {
        Self { x, y, v: 2 }
    }

    pub fn is_visible(&self) -> bool {
        self.v > 0
    }
}

/// Ground truth for one figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub joints: Vec<Keypoint>,
    /// Head diameter in pixels, the PCKh normaliser.
    pub head_size: f64,
    /// `[x, y, w, h]` figure bounding box; OKS uses `sqrt(w*h)` as scale.
    pub bbox: [f64; 4],
}

impl KeypointSet {
    pub fn scale(&self) -> f64 {
        (self.bbox[2] * self.bbox[3]).sqrt()
    }
}

/// A decoded keypoint with the heatmap peak as confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// Image coordinate to heatmap coordinate along one axis.
#[inline]
pub fn to_heatmap(coord: f64, image_len: usize, heatmap_len: usize) -> f64 {
    coord * heatmap_len as f64 / image_len as f64
}

/// `[J, h, w]` Gaussian targets. Invisible joints give all-zero channels.
pub fn encode_heatmaps(
    joints: &[Keypoint],
    heatmap_hw: (usize, usize),
    image_hw: (usize, usize),
    sigma: f64,
) -> Result<Tensor> {
    ensure!(sigma > 0.0, Validation, "heatmap sigma must be positive, got {sigma}");
    let (h, w) = heatmap_hw;
    let mut data = vec![0.0; joints.len() * h * w];
    for (j, kp) in joints.iter().enumerate() {
        if !kp.is_visible() {
            continue;
        }
        let cx = to_heatmap(kp.x, image_hw.1, w);
        let cy = to_heatmap(kp.y, image_hw.0, h);
        let plane = &mut data[j * h * w..(j + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                plane[y * w + x] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    Tensor::new(&[joints.len(), h, w], data)
}

/// Argmax decoding with a quarter-cell shift toward the larger neighbour.
/// Ties go to the first cell in row-major order.
pub fn decode_heatmaps(heatmaps: &Tensor, image_hw: (usize, usize)) -> Result<Vec<Detection>> {
    let (j, h, w) = heatmaps.chw()?;
    ensure!(h * w > 0, Dimension, "empty heatmap");
    let mut out = Vec::with_capacity(j);
    for plane in heatmaps.data().chunks(h * w) {
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = i;
            }
        }
        let (py, px) = (best / w, best % w);
        let mut x = px as f64;
        let mut y = py as f64;
        if px > 0 && px + 1 < w {
            x += quarter(plane[best + 1] - plane[best - 1]);
        }
        if py > 0 && py + 1 < h {
            y += quarter(plane[best + w] - plane[best - w]);
        }
        out.push(Detection {
            x: x * image_hw.1 as f64 / w as f64,
            y: y * image_hw.0 as f64 / h as f64,
            confidence: plane[best],
        });
    }
    Ok(out)
}

fn quarter(diff: f64) -> f64 {
    if diff > 0.0 {
        0.25
    } else if diff < 0.0 {
        -0.25
    } else {
        0.0
    }
}

//! Random augmentation chains whose outputs become mixing proposals.
//!
//! The op pool holds Grid-Mask plus an AutoAugment-style subset. Ops that
//! overlap benchmark corruptions (contrast, color, brightness, sharpness)
//! have no representation here at all; their names are dropped when a
//! policy is parsed from config.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::{warp, Image};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    GridMask,
    Posterize,
    Equalize,
    Solarize,
    Invert,
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

/// Names rejected from any policy because the benchmark measures them.
pub const EXCLUDED_OPS: [&str; 5] = ["contrast", "color", "brightness", "sharpness", "autocontrast"];

impl AugOp {
    pub const ALL: [AugOp; 10] = [
        AugOp::GridMask,
        AugOp::Posterize,
        AugOp::Equalize,
        AugOp::Solarize,
        AugOp::Invert,
        AugOp::Rotate,
        AugOp::ShearX,
        AugOp::ShearY,
        AugOp::TranslateX,
        AugOp::TranslateY,
    ];

    pub fn is_geometric(self) -> bool {
        matches!(
            self,
            AugOp::Rotate | AugOp::ShearX | AugOp::ShearY | AugOp::TranslateX | AugOp::TranslateY
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            AugOp::GridMask => "grid_mask",
            AugOp::Posterize => "posterize",
            AugOp::Equalize => "equalize",
            AugOp::Solarize => "solarize",
            AugOp::Invert => "invert",
            AugOp::Rotate => "rotate",
            AugOp::ShearX => "shear_x",
            AugOp::ShearY => "shear_y",
            AugOp::TranslateX => "translate_x",
            AugOp::TranslateY => "translate_y",
        }
    }

    /// Parse a policy entry. `Ok(None)` for excluded ops.
    pub fn parse_policy_name(name: &str) -> Result<Option<AugOp>> {
        let norm = name.trim().to_ascii_lowercase().replace('-', "_");
        if EXCLUDED_OPS.contains(&norm.as_str()) {
            return Ok(None);
        }
        norm.parse().map(Some)
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        AugOp::ALL
            .into_iter()
            .find(|op| op.name() == norm || op.name().replace('_', "") == norm)
            .ok_or_else(|| Error::Validation(format!("unknown augmentation op `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationOpSpec {
    pub op: AugOp,
    /// Normalised strength in `[0,1]`.
    pub magnitude: f64,
    /// Chance that the op fires when its chain is applied.
    pub probability: f64,
}

impl AugmentationOpSpec {
    pub fn new(op: AugOp, magnitude: f64, probability: f64) -> Result<Self> {
        ensure!(
            (0.0..=1.0).contains(&magnitude) && (0.0..=1.0).contains(&probability),
            Validation,
            "{op}: magnitude {magnitude} and probability {probability} must lie in [0,1]"
        );
        Ok(Self {
            op,
            magnitude,
            probability,
        })
    }
}

/// The default pool: every op at full magnitude range, firing with p = 0.9.
pub fn default_policy() -> Vec<AugmentationOpSpec> {
    AugOp::ALL
        .into_iter()
        .map(|op| AugmentationOpSpec {
            op,
            magnitude: 1.0,
            probability: 0.9,
        })
        .collect()
}

/// Build a policy from config names, dropping excluded ops.
pub fn policy_from_names(names: &[String], probability: f64) -> Result<Vec<AugmentationOpSpec>> {
    let mut out = Vec::new();
    for name in names {
        if let Some(op) = AugOp::parse_policy_name(name)? {
            out.push(AugmentationOpSpec::new(op, 1.0, probability)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationChain {
    ops: Vec<AugmentationOpSpec>,
    geometric_allowed: bool,
}

pub const MAX_CHAIN_LEN: usize = 3;

impl AugmentationChain {
    pub fn new(ops: Vec<AugmentationOpSpec>, geometric_allowed: bool) -> Result<Self> {
        ensure!(
            (1..=MAX_CHAIN_LEN).contains(&ops.len()),
            Validation,
            "chain length {} outside 1..={MAX_CHAIN_LEN}",
            ops.len()
        );
        ensure!(
            geometric_allowed || ops.iter().all(|o| !o.op.is_geometric()),
            Validation,
            "geometric op in a chain that forbids them"
        );
        Ok(Self {
            ops,
            geometric_allowed,
        })
    }

    pub fn ops(&self) -> &[AugmentationOpSpec] {
        &self.ops
    }

    pub fn geometric_allowed(&self) -> bool {
        self.geometric_allowed
    }
}

/// Sample a chain: length uniform in `1..=3`, each op uniform over the
/// filtered pool, magnitude uniform in `[0, pool magnitude]`.
pub fn sample_chain(
    rng: &mut Rng,
    policy: &[AugmentationOpSpec],
    geometric_allowed: bool,
) -> Result<AugmentationChain> {
    let pool: Vec<&AugmentationOpSpec> = policy
        .iter()
        .filter(|s| geometric_allowed || !s.op.is_geometric())
        .collect();
    ensure!(
        !pool.is_empty(),
        Validation,
        "augmentation policy is empty after filtering"
    );
    let len = 1 + rng.below(MAX_CHAIN_LEN as u64) as usize;
    let ops = (0..len)
        .map(|_| {
            let base = pool[rng.below(pool.len() as u64) as usize];
            AugmentationOpSpec {
                op: base.op,
                magnitude: base.magnitude * rng.uniform(),
                probability: base.probability,
            }
        })
        .collect();
    AugmentationChain::new(ops, geometric_allowed)
}

/// Apply the chain in order; each op fires with its own probability.
pub fn apply_chain(image: &Image, chain: &AugmentationChain, rng: &mut Rng) -> Result<Image> {
    let mut out = image.clone();
    for spec in chain.ops() {
        if !rng.bernoulli(spec.probability) {
            continue;
        }
        out = apply_op(&out, spec.op, spec.magnitude, rng)?;
    }
    Ok(out.clamp01())
}

/// Default Grid-Mask keep ratio.
pub const GRID_KEEP_RATIO: f64 = 0.6;

fn apply_op(img: &Image, op: AugOp, magnitude: f64, rng: &mut Rng) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let sign = |rng: &mut Rng| if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    Ok(match op {
        AugOp::GridMask => {
            let min_dim = h.min(w);
            let lo = (min_dim / 8).max(2);
            let hi = (min_dim / 4).max(lo);
            let d = rng.int_inclusive(lo as i64, hi as i64) as usize;
            let offset = (rng.below(d as u64) as usize, rng.below(d as u64) as usize);
            grid_mask(img, d, GRID_KEEP_RATIO, offset)?
        }
        AugOp::Posterize => posterize(img, 8 - (magnitude * 5.0).round() as u32),
        AugOp::Equalize => equalize(img),
        AugOp::Solarize => solarize(img, 1.0 - magnitude),
        AugOp::Invert => img.map(|v| 1.0 - v),
        AugOp::Rotate => {
            let angle = sign(rng) * magnitude * 30f64.to_radians();
            let (s, c) = angle.sin_cos();
            warp(img, |y, x| {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                (cy + c * dy - s * dx, cx + s * dy + c * dx)
            })
        }
        AugOp::ShearX => {
            let k = sign(rng) * magnitude * 0.3;
            warp(img, |y, x| (y as f64, x as f64 + k * (y as f64 - cy)))
        }
        AugOp::ShearY => {
            let k = sign(rng) * magnitude * 0.3;
            warp(img, |y, x| (y as f64 + k * (x as f64 - cx), x as f64))
        }
        AugOp::TranslateX => {
            let t = sign(rng) * magnitude * 0.3 * w as f64;
            warp(img, |y, x| (y as f64, x as f64 - t))
        }
        AugOp::TranslateY => {
            let t = sign(rng) * magnitude * 0.3 * h as f64;
            warp(img, |y, x| (y as f64 - t, x as f64))
        }
    })
}

/// Zero square holes of side `round(d * (1 - keep_ratio))` on a `d`-pitch
/// lattice whose first hole starts at `offset = (dy, dx)`.
pub fn grid_mask(image: &Image, unit_d: usize, keep_ratio: f64, offset: (usize, usize)) -> Result<Image> {
    ensure!(unit_d >= 2, Validation, "grid mask unit must be at least 2, got {unit_d}");
    ensure!(
        keep_ratio > 0.0 && keep_ratio <= 1.0,
        Validation,
        "keep ratio {keep_ratio} outside (0,1]"
    );
    let hole = (unit_d as f64 * (1.0 - keep_ratio)).round() as usize;
    let mut out = image.clone();
    if hole == 0 {
        return Ok(out);
    }
    let (h, w) = (image.height(), image.width());
    let (oy, ox) = (offset.0 % unit_d, offset.1 % unit_d);
    let in_hole = |p: usize, o: usize| (p + unit_d - o) % unit_d < hole;
    for y in 0..h {
        if !in_hole(y, oy) {
            continue;
        }
        for x in 0..w {
            if in_hole(x, ox) {
                for c in 0..image.channels() {
                    out.set(c, y, x, 0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Keep `bits` bits per channel: `min(floor(x * 2^b), 2^b - 1) / (2^b - 1)`.
pub fn posterize(img: &Image, bits: u32) -> Image {
    let bits = bits.clamp(1, 8);
    let levels = (1u32 << bits) as f64;
    img.map(|v| (v * levels).floor().min(levels - 1.0).max(0.0) / (levels - 1.0))
}

/// Pixels at or above `threshold` are inverted.
pub fn solarize(img: &Image, threshold: f64) -> Image {
    img.map(|v| if v >= threshold { 1.0 - v } else { v })
}

/// Per-channel histogram equalisation over 256 bins.
pub fn equalize(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels() {
        let plane = img.plane(c);
        let bins: Vec<usize> = plane
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as usize)
            .collect();
        let mut hist = [0usize; 256];
        bins.iter().for_each(|&b| hist[b] += 1);
        let mut cdf = [0usize; 256];
        let mut run = 0;
        for (i, &n) in hist.iter().enumerate() {
            run += n;
            cdf[i] = run;
        }
        let cdf_min = cdf.iter().copied().find(|&v| v > 0).unwrap_or(0);
        let total = plane.len();
        if total == cdf_min {
            continue;
        }
        let dst = out.plane_mut(c);
        for (d, &b) in dst.iter_mut().zip(&bins) {
            *d = (cdf[b] - cdf_min) as f64 / (total - cdf_min) as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Image {
        Image::new(1, 1, 101, (0..=100).map(|i| i as f64 / 100.0).collect()).unwrap()
    }

    #[test]
    fn grid_mask_counts() {
        let ones = Image::filled(1, 8, 8, 1.0);
        let out = grid_mask(&ones, 4, 0.5, (0, 0)).unwrap();
        assert_eq!(out.data().iter().filter(|&&v| v == 0.0).count(), 16);
        assert_eq!(out.data().iter().filter(|&&v| v == 1.0).count(), 48);
        // the first hole sits at the offset
        assert_eq!(out.get(0, 0, 0), 0.0);
        assert_eq!(out.get(0, 1, 1), 0.0);
        assert_eq!(out.get(0, 2, 2), 1.0);
    }

    #[test]
    fn grid_mask_tiny_hole_is_identity() {
        let mut rng = Rng::new(1);
        let img = Image::new(3, 6, 6, (0..108).map(|_| rng.uniform()).collect()).unwrap();
        assert_eq!(grid_mask(&img, 4, 0.95, (1, 2)).unwrap(), img);
    }

    #[test]
    fn grid_mask_masked_zero_unmasked_identical() {
        let mut rng = Rng::new(2);
        let img = Image::new(3, 12, 10, (0..360).map(|_| 0.1 + 0.9 * rng.uniform()).collect()).unwrap();
        let out = grid_mask(&img, 5, 0.6, (3, 1)).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!(*b == 0.0 || a.to_bits() == b.to_bits());
        }
    }

    #[test]
    fn grid_mask_rejects_degenerate_unit() {
        let img = Image::filled(1, 4, 4, 1.0);
        assert!(grid_mask(&img, 1, 0.5, (0, 0)).is_err());
    }

    #[test]
    fn excluded_names_never_reach_the_pool() {
        let names: Vec<String> = ["contrast", "Color", "invert", "sharpness", "brightness", "posterize"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let pool = policy_from_names(&names, 1.0).unwrap();
        let ops: Vec<AugOp> = pool.iter().map(|s| s.op).collect();
        assert_eq!(ops, vec![AugOp::Invert, AugOp::Posterize]);
        assert!(policy_from_names(&["blur".to_string()], 1.0).is_err());
    }

    #[test]
    fn sample_is_deterministic_and_label_safe() {
        let policy = default_policy();
        let a = sample_chain(&mut Rng::new(5), &policy, false).unwrap();
        let b = sample_chain(&mut Rng::new(5), &policy, false).unwrap();
        assert_eq!(a, b);
        let mut rng = Rng::new(6);
        for _ in 0..1000 {
            let c = sample_chain(&mut rng, &policy, false).unwrap();
            assert!((1..=3).contains(&c.ops().len()));
            assert!(c.ops().iter().all(|o| !o.op.is_geometric()));
        }
    }

    #[test]
    fn empty_pool_is_an_error() {
        let geo = vec![AugmentationOpSpec::new(AugOp::Rotate, 1.0, 1.0).unwrap()];
        assert!(sample_chain(&mut Rng::new(0), &geo, false).is_err());
        assert!(sample_chain(&mut Rng::new(0), &[], true).is_err());
    }

    #[test]
    fn op_frequencies_are_uniform() {
        let policy = default_policy();
        let mut rng = Rng::new(12);
        let mut counts = std::collections::BTreeMap::new();
        let mut total = 0usize;
        for _ in 0..10_000 {
            for o in sample_chain(&mut rng, &policy, false).unwrap().ops() {
                *counts.entry(o.op).or_insert(0usize) += 1;
                total += 1;
            }
        }
        let k = counts.len() as f64;
        assert_eq!(k, 5.0);
        let p = 1.0 / k;
        let sd = (total as f64 * p * (1.0 - p)).sqrt();
        for (op, &n) in &counts {
            assert!((n as f64 - total as f64 * p).abs() < 3.0 * sd, "{op}: {n} of {total}");
        }
    }

    #[test]
    fn no_firing_leaves_image() {
        let chain = AugmentationChain::new(
            vec![AugmentationOpSpec::new(AugOp::Invert, 1.0, 0.0).unwrap(); 3],
            false,
        )
        .unwrap();
        let img = ramp();
        assert_eq!(apply_chain(&img, &chain, &mut Rng::new(1)).unwrap(), img);
    }

    #[test]
    fn invert_chain() {
        let chain = AugmentationChain::new(
            vec![AugmentationOpSpec::new(AugOp::Invert, 0.3, 1.0).unwrap()],
            false,
        )
        .unwrap();
        let img = ramp();
        let out = apply_chain(&img, &chain, &mut Rng::new(1)).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert_eq!(*b, 1.0 - a);
        }
    }

    #[test]
    fn posterize_three_bits_matches_quantisation_oracle() {
        // magnitude 1 maps to 3 bits
        let chain = AugmentationChain::new(
            vec![AugmentationOpSpec::new(AugOp::Posterize, 1.0, 1.0).unwrap()],
            false,
        )
        .unwrap();
        let img = ramp();
        let out = apply_chain(&img, &chain, &mut Rng::new(1)).unwrap();
        for (x, y) in img.data().iter().zip(out.data()) {
            let level = ((x * 8.0).floor() as i64).min(7);
            assert!((y - level as f64 / 7.0).abs() < 1e-15, "x={x} y={y}");
        }
    }

    #[test]
    fn geometric_chain_rejected_when_disallowed() {
        let op = AugmentationOpSpec::new(AugOp::ShearX, 0.5, 1.0).unwrap();
        assert!(AugmentationChain::new(vec![op], false).is_err());
        assert!(AugmentationChain::new(vec![op], true).is_ok());
        assert!(AugmentationChain::new(vec![], true).is_err());
    }

    #[test]
    fn every_op_stays_in_range() {
        let mut rng = Rng::new(4);
        let img = Image::new(3, 16, 12, (0..576).map(|_| rng.uniform()).collect()).unwrap();
        for op in AugOp::ALL {
            let chain =
                AugmentationChain::new(vec![AugmentationOpSpec::new(op, 1.0, 1.0).unwrap()], true)
                    .unwrap();
            let out = apply_chain(&img, &chain, &mut rng).unwrap();
            assert!(out.same_dims(&img));
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)), "{op}");
        }
    }
}

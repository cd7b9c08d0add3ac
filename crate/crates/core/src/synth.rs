//! Procedural stick figures with exact joint annotations.
//!
//! Joints in order: head, left hand, right hand, left foot, right foot.
//! Limbs are colour coded so left and right can be told apart.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample, Split};
use crate::error::{ensure, Error, Result};
use crate::heatmap::{Keypoint, KeypointSet};
use crate::image::Image;
use crate::rng::{derive_stream, domain, splitmix64, Rng};
use crate::texture::value_noise;

pub const JOINT_NAMES: [&str; 5] = ["head", "left_hand", "right_hand", "left_foot", "right_foot"];

const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticFigureSpec {
    pub height: usize,
    pub width: usize,
    pub torso: (f64, f64),
    pub arm: (f64, f64),
    pub leg: (f64, f64),
    pub head_radius: (f64, f64),
    pub thickness: (f64, f64),
    /// Arm angle from straight down, degrees, mirrored for the right arm.
    pub arm_angle: (f64, f64),
    /// Leg angle from straight down, degrees, outward.
    pub leg_angle: (f64, f64),
    /// Torso lean from vertical, degrees.
    pub lean: (f64, f64),
    /// Coarsest background noise cell, pixels.
    pub background_cell: f64,
    /// Joints keep at least this distance from the image border.
    pub margin: f64,
}

impl Default for SyntheticFigureSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 48,
            torso: (12.0, 18.0),
            arm: (9.0, 15.0),
            leg: (12.0, 18.0),
            head_radius: (3.0, 4.5),
            thickness: (2.0, 3.0),
            arm_angle: (20.0, 160.0),
            leg_angle: (5.0, 45.0),
            lean: (-15.0, 15.0),
            background_cell: 12.0,
            margin: 2.0,
        }
    }
}

impl SyntheticFigureSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.height >= 16 && self.width >= 16, Validation, "synthetic images must be at least 16x16");
        for (name, (lo, hi)) in [
            ("torso", self.torso),
            ("arm", self.arm),
            ("leg", self.leg),
            ("head_radius", self.head_radius),
            ("thickness", self.thickness),
            ("arm_angle", self.arm_angle),
            ("leg_angle", self.leg_angle),
            ("lean", self.lean),
        ] {
            ensure!(lo <= hi && lo.is_finite() && hi.is_finite(), Validation, "{name}: range ({lo}, {hi}) is empty");
        }
        ensure!(self.head_radius.0 > 0.0 && self.thickness.0 > 0.0, Validation, "sizes must be positive");
        Ok(())
    }
}

/// Drawn pose parameters; the joints follow from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigurePose {
    pub neck: (f64, f64),
    pub hip: (f64, f64),
    pub head_centre: (f64, f64),
    pub head_radius: f64,
    pub hands: [(f64, f64); 2],
    pub feet: [(f64, f64); 2],
    pub arm_angles: [f64; 2],
    pub leg_angles: [f64; 2],
    pub thickness: f64,
}

impl FigurePose {
    pub fn joints(&self) -> [(f64, f64); 5] {
        [self.head_centre, self.hands[0], self.hands[1], self.feet[0], self.feet[1]]
    }

    fn in_bounds(&self, spec: &SyntheticFigureSpec) -> bool {
        let (w, h, m) = (spec.width as f64, spec.height as f64, spec.margin);
        let r = self.head_radius;
        let inside = |(x, y): (f64, f64), pad: f64| x >= m + pad && y >= m + pad && x <= w - 1.0 - m - pad && y <= h - 1.0 - m - pad;
        self.joints().iter().all(|&p| inside(p, 0.0)) && inside(self.head_centre, r)
    }

    fn bbox(&self) -> [f64; 4] {
        let r = self.head_radius;
        let pad = self.thickness / 2.0;
        let mut pts = self.joints().to_vec();
        pts.extend([self.neck, self.hip]);
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts {
            x0 = x0.min(x - pad);
            y0 = y0.min(y - pad);
            x1 = x1.max(x + pad);
            y1 = y1.max(y + pad);
        }
        let (hx, hy) = self.head_centre;
        x0 = x0.min(hx - r);
        y0 = y0.min(hy - r);
        x1 = x1.max(hx + r);
        [x0, y0, x1 - x0, y1 - y0]
    }
}

/// Draw one pose; may fall outside the image (callers retry).
pub fn sample_pose(rng: &mut Rng, spec: &SyntheticFigureSpec) -> FigurePose {
    let u = |rng: &mut Rng, (lo, hi): (f64, f64)| rng.uniform_range(lo, hi);
    let torso = u(rng, spec.torso);
    let lean = u(rng, spec.lean).to_radians();
    let head_radius = u(rng, spec.head_radius);
    let thickness = u(rng, spec.thickness);
    let arms = [u(rng, spec.arm), u(rng, spec.arm)];
    let legs = [u(rng, spec.leg), u(rng, spec.leg)];
    let arm_angles = [u(rng, spec.arm_angle), u(rng, spec.arm_angle)];
    let leg_angles = [u(rng, spec.leg_angle), u(rng, spec.leg_angle)];
    let neck = (
        u(rng, (spec.width as f64 * 0.3, spec.width as f64 * 0.7)),
        u(rng, (spec.height as f64 * 0.15, spec.height as f64 * 0.45)),
    );
    let (sin, cos) = lean.sin_cos();
    let hip = (neck.0 + torso * sin, neck.1 + torso * cos);
    let head_centre = (neck.0 - (head_radius + 1.0) * sin, neck.1 - (head_radius + 1.0) * cos);
    // left limbs point to the image right (the figure faces the viewer)
    let limb = |from: (f64, f64), len: f64, deg: f64, side: f64| {
        let a = deg.to_radians();
        (from.0 + side * len * a.sin(), from.1 + len * a.cos())
    };
    FigurePose {
        neck,
        hip,
        head_centre,
        head_radius,
        hands: [limb(neck, arms[0], arm_angles[0], 1.0), limb(neck, arms[1], arm_angles[1], -1.0)],
        feet: [limb(hip, legs[0], leg_angles[0], 1.0), limb(hip, legs[1], leg_angles[1], -1.0)],
        arm_angles,
        leg_angles,
        thickness,
    }
}

/// Draw poses until one fits inside the image.
pub fn sample_pose_in_bounds(rng: &mut Rng, spec: &SyntheticFigureSpec) -> Result<FigurePose> {
    for _ in 0..MAX_ATTEMPTS {
        let pose = sample_pose(rng, spec);
        if pose.in_bounds(spec) {
            return Ok(pose);
        }
    }
    Err(Error::Validation(format!(
        "no in-bounds figure after {MAX_ATTEMPTS} attempts; the figure spec does not fit {}x{}",
        spec.height, spec.width
    )))
}

const LIMB_COLOURS: [[f64; 3]; 5] = [
    [0.95, 0.95, 0.95], // torso
    [0.95, 0.15, 0.15], // left arm
    [0.15, 0.85, 0.20], // right arm
    [0.20, 0.35, 0.95], // left leg
    [0.95, 0.85, 0.10], // right leg
];
const HEAD_COLOUR: [f64; 3] = [0.98, 0.75, 0.55];

/// Render a pose over a value-noise background.
pub fn render(pose: &FigurePose, spec: &SyntheticFigureSpec, rng: &mut Rng) -> Image {
    let (h, w) = (spec.height, spec.width);
    let mut img = Image::filled(3, h, w, 0.0);
    let noise = value_noise(rng, h, w, spec.background_cell, 3);
    let tint: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.15, 0.55)).collect();
    let spread = rng.uniform_range(0.1, 0.3);
    for c in 0..3 {
        for (d, n) in img.plane_mut(c).iter_mut().zip(&noise) {
            *d = tint[c] + spread * (n - 0.5);
        }
    }
    let segments = [
        (pose.neck, pose.hip, 0),
        (pose.neck, pose.hands[0], 1),
        (pose.neck, pose.hands[1], 2),
        (pose.hip, pose.feet[0], 3),
        (pose.hip, pose.feet[1], 4),
    ];
    let half = pose.thickness / 2.0;
    for y in 0..h {
        for x in 0..w {
            let p = (x as f64, y as f64);
            for &(a, b, colour) in &segments {
                let cover = (half + 0.5 - segment_distance(p, a, b)).clamp(0.0, 1.0);
                if cover > 0.0 {
                    blend(&mut img, y, x, LIMB_COLOURS[colour], cover);
                }
            }
            let dh = ((p.0 - pose.head_centre.0).powi(2) + (p.1 - pose.head_centre.1).powi(2)).sqrt();
            let cover = (pose.head_radius + 0.5 - dh).clamp(0.0, 1.0);
            if cover > 0.0 {
                blend(&mut img, y, x, HEAD_COLOUR, cover);
            }
        }
    }
    img.clamp01()
}

fn blend(img: &mut Image, y: usize, x: usize, colour: [f64; 3], alpha: f64) {
    for (c, &v) in colour.iter().enumerate() {
        let old = img.get(c, y, x);
        img.set(c, y, x, old * (1.0 - alpha) + v * alpha);
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// One annotated sample from its own stream.
pub fn synth_sample(spec: &SyntheticFigureSpec, seed: u64, id: u64) -> Result<Sample> {
    let mut rng = derive_stream(seed, domain::SYNTH_SAMPLE, id);
    let pose = sample_pose_in_bounds(&mut rng, spec)?;
    let image = render(&pose, spec, &mut rng);
    let joints = pose.joints().iter().map(|&(x, y)| Keypoint::visible(x, y)).collect();
    Ok(Sample {
        id,
        image,
        keypoints: KeypointSet {
            joints,
            head_size: 2.0 * pose.head_radius,
            bbox: pose.bbox(),
        },
    })
}

/// Split assignment from a hash of `(seed, id)`.
pub fn split_of(seed: u64, id: u64, val_percent: u64) -> Split {
    if splitmix64(splitmix64(seed ^ domain::SYNTH_SPLIT) ^ id) % 100 < val_percent {
        Split::Val
    } else {
        Split::Train
    }
}

/// Walk ids `0, 1, 2, ...`, routing each to its hashed split, until both
/// splits hold the requested counts. Ids landing in a full split are
/// skipped, so each split's contents depend only on `(spec, seed)`.
pub fn generate_synthetic_dataset(
    n_train: usize,
    n_val: usize,
    spec: &SyntheticFigureSpec,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    ensure!(n_train + n_val >= 1, Validation, "dataset size must be at least 1");
    spec.validate()?;
    let total = (n_train + n_val) as u64;
    let val_percent = if n_val == 0 {
        0
    } else if n_train == 0 {
        100
    } else {
        (100 * n_val as u64 / total).clamp(1, 99)
    };
    let (mut train_ids, mut val_ids) = (Vec::new(), Vec::new());
    let mut id = 0u64;
    while train_ids.len() < n_train || val_ids.len() < n_val {
        match split_of(seed, id, val_percent) {
            Split::Train if train_ids.len() < n_train => train_ids.push(id),
            Split::Val if val_ids.len() < n_val => val_ids.push(id),
            _ => {}
        }
        id += 1;
    }
    let build = |ids: &[u64]| -> Result<Vec<Sample>> { ids.par_iter().map(|&i| synth_sample(spec, seed, i)).collect() };
    Ok((
        Dataset::new(build(&train_ids)?, Split::Train)?,
        Dataset::new(build(&val_ids)?, Split::Val)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_bounds() {
        let spec = SyntheticFigureSpec::default();
        let (a_train, a_val) = generate_synthetic_dataset(30, 10, &spec, 5).unwrap();
        let (b_train, b_val) = generate_synthetic_dataset(30, 10, &spec, 5).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_val, b_val);
        assert_eq!((a_train.len(), a_val.len()), (30, 10));
        for s in a_train.samples().iter().chain(a_val.samples()) {
            assert_eq!(s.keypoints.joints.len(), 5);
            for j in &s.keypoints.joints {
                assert!(j.x >= 0.0 && j.x <= 47.0 && j.y >= 0.0 && j.y <= 63.0);
            }
            assert!(s.keypoints.head_size >= 6.0 && s.keypoints.head_size <= 9.0);
            assert!(s.keypoints.scale() > 0.0);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let ids: std::collections::BTreeSet<u64> =
            a_train.samples().iter().chain(a_val.samples()).map(|s| s.id).collect();
        assert_eq!(ids.len(), 40);
    }

    #[test]
    fn angle_ranges_are_covered() {
        let spec = SyntheticFigureSpec::default();
        let mut rng = Rng::new(77);
        let bins = 10;
        let mut arm_hist = vec![0usize; bins];
        let mut leg_hist = vec![0usize; bins];
        for _ in 0..10_000 {
            let pose = sample_pose_in_bounds(&mut rng, &spec).unwrap();
            for (angle, (lo, hi), hist) in [
                (pose.arm_angles[0], spec.arm_angle, &mut arm_hist),
                (pose.leg_angles[1], spec.leg_angle, &mut leg_hist),
            ] {
                assert!(angle >= lo && angle <= hi);
                let b = (((angle - lo) / (hi - lo)) * bins as f64).min(bins as f64 - 1.0) as usize;
                hist[b] += 1;
            }
            // hand lies at the drawn angle from the neck
            let (dx, dy) = (pose.hands[0].0 - pose.neck.0, pose.hands[0].1 - pose.neck.1);
            assert!((dx.atan2(dy).to_degrees() - pose.arm_angles[0]).abs() < 1e-9);
        }
        assert!(arm_hist.iter().all(|&n| n > 100), "{arm_hist:?}");
        assert!(leg_hist.iter().all(|&n| n > 100), "{leg_hist:?}");
    }

    #[test]
    fn impossible_spec_fails_cleanly() {
        let spec = SyntheticFigureSpec {
            torso: (200.0, 210.0),
            ..SyntheticFigureSpec::default()
        };
        assert!(synth_sample(&spec, 0, 0).is_err());
    }

    #[test]
    fn head_is_drawn_at_the_head_joint() {
        let s = synth_sample(&SyntheticFigureSpec::default(), 1, 3).unwrap();
        let head = s.keypoints.joints[0];
        let (x, y) = (head.x.round() as usize, head.y.round() as usize);
        let px: Vec<f64> = (0..3).map(|c| s.image.get(c, y, x)).collect();
        for (p, h) in px.iter().zip(HEAD_COLOUR) {
            assert!((p - h).abs() < 0.05, "{px:?}");
        }
    }
}

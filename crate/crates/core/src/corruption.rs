//! The fifteen benchmark corruptions at five severities.
//!
//! Every corruption is a pure function of `(image, parameters, rng)`; the
//! stochastic ones draw exclusively from the supplied [`Rng`]. Parameters
//! come from a [`SeverityTable`], which ships with desk-scale defaults
//! (tuned for images around 64x48 px) and can be overridden from the
//! `[corruptions.<kind>]` sections of a config file.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::{
    convolve, gaussian_blur, gaussian_blur_plane, hsv_to_rgb, rgb_to_hsv, warp, Image,
};
use crate::rng::{derive_stream, Rng};
use crate::texture::{plasma, value_noise};

pub const NUM_KINDS: usize = 15;
pub const NUM_SEVERITIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Noise,
    Blur,
    Weather,
    Digital,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    Snow,
    Frost,
    Fog,
    Brightness,
    Contrast,
    Elastic,
    Pixelate,
    Jpeg,
}

impl CorruptionKind {
    /// Benchmark column order.
    pub const ALL: [CorruptionKind; NUM_KINDS] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::GlassBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::ZoomBlur,
        CorruptionKind::Snow,
        CorruptionKind::Frost,
        CorruptionKind::Fog,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Elastic,
        CorruptionKind::Pixelate,
        CorruptionKind::Jpeg,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn category(self) -> Category {
        use CorruptionKind::*;
        match self {
            GaussianNoise | ShotNoise | ImpulseNoise => Category::Noise,
            DefocusBlur | GlassBlur | MotionBlur | ZoomBlur => Category::Blur,
            Snow | Frost | Fog | Brightness => Category::Weather,
            Contrast | Elastic | Pixelate | Jpeg => Category::Digital,
        }
    }

    pub fn name(self) -> &'static str {
        use CorruptionKind::*;
        match self {
            GaussianNoise => "gaussian_noise",
            ShotNoise => "shot_noise",
            ImpulseNoise => "impulse_noise",
            DefocusBlur => "defocus_blur",
            GlassBlur => "glass_blur",
            MotionBlur => "motion_blur",
            ZoomBlur => "zoom_blur",
            Snow => "snow",
            Frost => "frost",
            Fog => "fog",
            Brightness => "brightness",
            Contrast => "contrast",
            Elastic => "elastic",
            Pixelate => "pixelate",
            Jpeg => "jpeg",
        }
    }

    /// Short column label used in report tables.
    pub fn label(self) -> &'static str {
        use CorruptionKind::*;
        match self {
            GaussianNoise => "Gauss",
            ShotNoise => "Shot",
            ImpulseNoise => "Impulse",
            DefocusBlur => "Defocus",
            GlassBlur => "Glass",
            MotionBlur => "Motion",
            ZoomBlur => "Zoom",
            Snow => "Snow",
            Frost => "Frost",
            Fog => "Fog",
            Brightness => "Bright",
            Contrast => "Contrast",
            Elastic => "Elastic",
            Pixelate => "Pixel",
            Jpeg => "JPEG",
        }
    }

    /// Domain tag for [`crate::rng::derive_stream`]: `kind * 8 + severity`.
    pub fn stream_tag(self, severity: u8) -> u64 {
        self.index() as u64 * 8 + severity as u64
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        CorruptionKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == norm || k.label().to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::Validation(format!("unknown corruption kind `{s}`")))
    }
}

/// One cell of the kinds x severities grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        validate_severity(severity as i64)?;
        Ok(Self { kind, severity })
    }

    /// All 75 cells in row-major (kind, severity) order.
    pub fn grid() -> impl Iterator<Item = CorruptionSpec> {
        CorruptionKind::ALL.into_iter().flat_map(|kind| {
            (1..=NUM_SEVERITIES as u8).map(move |severity| CorruptionSpec { kind, severity })
        })
    }
}

pub fn validate_severity(severity: i64) -> Result<()> {
    ensure!(
        (1..=NUM_SEVERITIES as i64).contains(&severity),
        Validation,
        "severity must be in 1..=5, got {severity}"
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlassParams {
    pub sigma: f64,
    pub max_delta: u32,
    pub iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnowParams {
    pub density: f64,
    pub length: f64,
    pub image_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrostParams {
    pub image_weight: f64,
    pub frost_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FogParams {
    pub strength: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    pub alpha: f64,
    pub sigma: f64,
}

/// Parameter record for one (kind, severity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeverityParams {
    GaussianNoise { sigma: f64 },
    ShotNoise { photons: f64 },
    ImpulseNoise { amount: f64 },
    DefocusBlur { radius: f64 },
    GlassBlur(GlassParams),
    MotionBlur { length: f64 },
    ZoomBlur { max_zoom: f64 },
    Snow(SnowParams),
    Frost(FrostParams),
    Fog(FogParams),
    Brightness { shift: f64 },
    Contrast { factor: f64 },
    Elastic(ElasticParams),
    Pixelate { scale: f64 },
    Jpeg { quality: u8 },
}

impl SeverityParams {
    pub fn kind(&self) -> CorruptionKind {
        use CorruptionKind as K;
        match self {
            SeverityParams::GaussianNoise { .. } => K::GaussianNoise,
            SeverityParams::ShotNoise { .. } => K::ShotNoise,
            SeverityParams::ImpulseNoise { .. } => K::ImpulseNoise,
            SeverityParams::DefocusBlur { .. } => K::DefocusBlur,
            SeverityParams::GlassBlur(_) => K::GlassBlur,
            SeverityParams::MotionBlur { .. } => K::MotionBlur,
            SeverityParams::ZoomBlur { .. } => K::ZoomBlur,
            SeverityParams::Snow(_) => K::Snow,
            SeverityParams::Frost(_) => K::Frost,
            SeverityParams::Fog(_) => K::Fog,
            SeverityParams::Brightness { .. } => K::Brightness,
            SeverityParams::Contrast { .. } => K::Contrast,
            SeverityParams::Elastic(_) => K::Elastic,
            SeverityParams::Pixelate { .. } => K::Pixelate,
            SeverityParams::Jpeg { .. } => K::Jpeg,
        }
    }

    /// Scalar that grows with degradation strength; used for the
    /// monotonicity check of a table.
    fn strength(&self) -> f64 {
        match *self {
            SeverityParams::GaussianNoise { sigma } => sigma,
            SeverityParams::ShotNoise { photons } => -photons,
            SeverityParams::ImpulseNoise { amount } => amount,
            SeverityParams::DefocusBlur { radius } => radius,
            SeverityParams::GlassBlur(p) => p.sigma,
            SeverityParams::MotionBlur { length } => length,
            SeverityParams::ZoomBlur { max_zoom } => max_zoom,
            SeverityParams::Snow(p) => p.density,
            SeverityParams::Frost(p) => p.frost_weight,
            SeverityParams::Fog(p) => p.strength,
            SeverityParams::Brightness { shift } => shift,
            SeverityParams::Contrast { factor } => -factor,
            SeverityParams::Elastic(p) => p.alpha,
            SeverityParams::Pixelate { scale } => -scale,
            SeverityParams::Jpeg { quality } => -(quality as f64),
        }
    }
}

/// Five parameter records for one kind, severity 1 first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Levels<T> {
    pub levels: [T; NUM_SEVERITIES],
}

impl<T> Levels<T> {
    const fn of(levels: [T; NUM_SEVERITIES]) -> Self {
        Self { levels }
    }
}

/// Per-kind severity ladders. Serialises as `<kind>.levels = [...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeverityTable {
    pub gaussian_noise: Levels<f64>,
    pub shot_noise: Levels<f64>,
    pub impulse_noise: Levels<f64>,
    pub defocus_blur: Levels<f64>,
    pub glass_blur: Levels<GlassParams>,
    pub motion_blur: Levels<f64>,
    pub zoom_blur: Levels<f64>,
    pub snow: Levels<SnowParams>,
    pub frost: Levels<FrostParams>,
    pub fog: Levels<FogParams>,
    pub brightness: Levels<f64>,
    pub contrast: Levels<f64>,
    pub elastic: Levels<ElasticParams>,
    pub pixelate: Levels<f64>,
    pub jpeg: Levels<u8>,
}

impl Default for SeverityTable {
    fn default() -> Self {
        let glass = |sigma, max_delta, iterations| GlassParams {
            sigma,
            max_delta,
            iterations,
        };
        let snow = |density, length, image_weight| SnowParams {
            density,
            length,
            image_weight,
        };
        let frost = |image_weight, frost_weight| FrostParams {
            image_weight,
            frost_weight,
        };
        let fog = |strength, decay| FogParams { strength, decay };
        let elastic = |alpha, sigma| ElasticParams { alpha, sigma };
        Self {
            gaussian_noise: Levels::of([0.04, 0.06, 0.09, 0.13, 0.20]),
            shot_noise: Levels::of([60.0, 25.0, 12.0, 5.0, 3.0]),
            impulse_noise: Levels::of([0.03, 0.06, 0.09, 0.17, 0.27]),
            defocus_blur: Levels::of([0.8, 1.2, 1.6, 2.2, 3.0]),
            glass_blur: Levels::of([
                glass(0.4, 1, 1),
                glass(0.5, 1, 2),
                glass(0.6, 1, 3),
                glass(0.7, 2, 2),
                glass(0.9, 2, 3),
            ]),
            motion_blur: Levels::of([2.0, 3.0, 4.0, 6.0, 8.0]),
            zoom_blur: Levels::of([0.10, 0.15, 0.20, 0.25, 0.30]),
            snow: Levels::of([
                snow(0.01, 2.0, 0.9),
                snow(0.02, 3.0, 0.8),
                snow(0.03, 3.0, 0.7),
                snow(0.05, 4.0, 0.6),
                snow(0.07, 5.0, 0.5),
            ]),
            frost: Levels::of([
                frost(1.0, 0.4),
                frost(0.8, 0.6),
                frost(0.7, 0.7),
                frost(0.65, 0.7),
                frost(0.6, 0.75),
            ]),
            fog: Levels::of([
                fog(1.5, 2.0),
                fog(2.0, 2.0),
                fog(2.5, 1.7),
                fog(2.5, 1.5),
                fog(3.0, 1.4),
            ]),
            brightness: Levels::of([0.1, 0.2, 0.3, 0.4, 0.5]),
            contrast: Levels::of([0.4, 0.3, 0.2, 0.1, 0.05]),
            elastic: Levels::of([
                elastic(0.5, 3.0),
                elastic(1.0, 3.0),
                elastic(1.5, 2.5),
                elastic(2.0, 2.5),
                elastic(2.5, 2.0),
            ]),
            pixelate: Levels::of([0.6, 0.5, 0.4, 0.3, 0.25]),
            jpeg: Levels::of([25, 18, 15, 10, 7]),
        }
    }
}

impl SeverityTable {
    /// Table row for `(kind, severity)`.
    pub fn params(&self, kind: CorruptionKind, severity: u8) -> Result<SeverityParams> {
        validate_severity(severity as i64)?;
        let i = severity as usize - 1;
        use CorruptionKind as K;
        Ok(match kind {
            K::GaussianNoise => SeverityParams::GaussianNoise {
                sigma: self.gaussian_noise.levels[i],
            },
            K::ShotNoise => SeverityParams::ShotNoise {
                photons: self.shot_noise.levels[i],
            },
            K::ImpulseNoise => SeverityParams::ImpulseNoise {
                amount: self.impulse_noise.levels[i],
            },
            K::DefocusBlur => SeverityParams::DefocusBlur {
                radius: self.defocus_blur.levels[i],
            },
            K::GlassBlur => SeverityParams::GlassBlur(self.glass_blur.levels[i]),
            K::MotionBlur => SeverityParams::MotionBlur {
                length: self.motion_blur.levels[i],
            },
            K::ZoomBlur => SeverityParams::ZoomBlur {
                max_zoom: self.zoom_blur.levels[i],
            },
            K::Snow => SeverityParams::Snow(self.snow.levels[i]),
            K::Frost => SeverityParams::Frost(self.frost.levels[i]),
            K::Fog => SeverityParams::Fog(self.fog.levels[i]),
            K::Brightness => SeverityParams::Brightness {
                shift: self.brightness.levels[i],
            },
            K::Contrast => SeverityParams::Contrast {
                factor: self.contrast.levels[i],
            },
            K::Elastic => SeverityParams::Elastic(self.elastic.levels[i]),
            K::Pixelate => SeverityParams::Pixelate {
                scale: self.pixelate.levels[i],
            },
            K::Jpeg => SeverityParams::Jpeg {
                quality: self.jpeg.levels[i],
            },
        })
    }

    /// Checks that every ladder degrades monotonically and that values are in
    /// their legal ranges.
    pub fn validate(&self) -> Result<()> {
        for kind in CorruptionKind::ALL {
            let rows: Vec<SeverityParams> = (1..=5)
                .map(|s| self.params(kind, s))
                .collect::<Result<_>>()?;
            for pair in rows.windows(2) {
                ensure!(
                    pair[1].strength() >= pair[0].strength(),
                    Validation,
                    "severity ladder for {kind} is not monotone"
                );
            }
            for row in &rows {
                check_params(row)?;
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: SeverityTable = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }
}

fn check_params(p: &SeverityParams) -> Result<()> {
    let ok = match *p {
        SeverityParams::GaussianNoise { sigma } => sigma >= 0.0,
        SeverityParams::ShotNoise { photons } => photons > 0.0,
        SeverityParams::ImpulseNoise { amount } => (0.0..=1.0).contains(&amount),
        SeverityParams::DefocusBlur { radius } => radius >= 0.0,
        SeverityParams::GlassBlur(g) => g.sigma >= 0.0,
        SeverityParams::MotionBlur { length } => length >= 0.0,
        SeverityParams::ZoomBlur { max_zoom } => max_zoom >= 0.0,
        SeverityParams::Snow(s) => {
            (0.0..=1.0).contains(&s.density) && (0.0..=1.0).contains(&s.image_weight)
        }
        SeverityParams::Frost(f) => f.image_weight >= 0.0 && f.frost_weight >= 0.0,
        SeverityParams::Fog(f) => f.strength >= 0.0 && f.decay > 1.0,
        SeverityParams::Brightness { shift } => shift.abs() <= 1.0,
        SeverityParams::Contrast { factor } => factor >= 0.0,
        SeverityParams::Elastic(e) => e.alpha >= 0.0 && e.sigma > 0.0,
        SeverityParams::Pixelate { scale } => scale > 0.0 && scale <= 1.0,
        SeverityParams::Jpeg { quality } => (1..=100).contains(&quality),
    };
    ensure!(ok, Validation, "illegal corruption parameters {p:?}");
    Ok(())
}

/// Row of the shipped default table.
pub fn severity_params(kind: CorruptionKind, severity: u8) -> Result<SeverityParams> {
    SeverityTable::default().params(kind, severity)
}

/// Corrupt `image` with the default table.
pub fn apply_corruption(image: &Image, spec: CorruptionSpec, rng: &mut Rng) -> Result<Image> {
    CorruptionEngine::default().apply(image, spec, rng)
}

#[derive(Debug, Clone, Default)]
pub struct CorruptionEngine {
    pub table: SeverityTable,
}

impl CorruptionEngine {
    pub fn new(table: SeverityTable) -> Result<Self> {
        table.validate()?;
        Ok(Self { table })
    }

    pub fn apply(&self, image: &Image, spec: CorruptionSpec, rng: &mut Rng) -> Result<Image> {
        let params = self.table.params(spec.kind, spec.severity)?;
        apply_with_params(image, &params, rng)
    }

    /// The benchmark form of one image: corrupted with the stream derived
    /// from `(seed, kind*8 + severity, id)` and rounded to 8 bits.
    pub fn benchmark_image(&self, image: &Image, spec: CorruptionSpec, seed: u64, id: u64) -> Result<Image> {
        let mut rng = derive_stream(seed, spec.kind.stream_tag(spec.severity), id);
        Ok(self.apply(image, spec, &mut rng)?.quantize_u8())
    }
}

/// Corrupt with an explicit parameter record (bypassing the table).
pub fn apply_with_params(image: &Image, params: &SeverityParams, rng: &mut Rng) -> Result<Image> {
    check_params(params)?;
    let rgb = image.to_rgb();
    let out = match *params {
        SeverityParams::GaussianNoise { sigma } => rgb.map_with(rng, |v, r| v + sigma * r.normal()),
        SeverityParams::ShotNoise { photons } => {
            rgb.map_with(rng, |v, r| r.poisson(v.max(0.0) * photons) / photons)
        }
        SeverityParams::ImpulseNoise { amount } => rgb.map_with(rng, |v, r| {
            if r.uniform() < amount {
                if r.uniform() < 0.5 {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        }),
        SeverityParams::DefocusBlur { radius } => defocus(&rgb, radius),
        SeverityParams::GlassBlur(p) => glass(&rgb, p, rng),
        SeverityParams::MotionBlur { length } => {
            let angle = rng.uniform_range(-45.0, 45.0).to_radians();
            motion(&rgb, length, angle)
        }
        SeverityParams::ZoomBlur { max_zoom } => zoom(&rgb, max_zoom),
        SeverityParams::Snow(p) => snow(&rgb, p, rng),
        SeverityParams::Frost(p) => frost(&rgb, p, rng),
        SeverityParams::Fog(p) => fog(&rgb, p, rng),
        SeverityParams::Brightness { shift } => brightness(&rgb, shift),
        SeverityParams::Contrast { factor } => contrast(&rgb, factor),
        SeverityParams::Elastic(p) => elastic(&rgb, p, rng),
        SeverityParams::Pixelate { scale } => pixelate(&rgb, scale),
        SeverityParams::Jpeg { quality } => jpeg_round_trip(&rgb, quality)?,
    };
    Ok(out.clamp01())
}

impl Image {
    fn map_with(&self, rng: &mut Rng, mut f: impl FnMut(f64, &mut Rng) -> f64) -> Image {
        let mut out = self.clone();
        out.data_mut().iter_mut().for_each(|v| *v = f(*v, rng));
        out
    }
}

/// Disk kernel with anti-aliased rim: weight = clamp(r + 0.5 - dist, 0, 1).
pub fn disk_kernel(radius: f64) -> (Vec<f64>, usize) {
    let half = (radius + 0.5).ceil() as isize;
    let size = (2 * half + 1) as usize;
    let mut k = vec![0.0; size * size];
    for y in -half..=half {
        for x in -half..=half {
            let d = ((x * x + y * y) as f64).sqrt();
            k[((y + half) as usize) * size + (x + half) as usize] = (radius + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    (k, size)
}

fn defocus(img: &Image, radius: f64) -> Image {
    let (k, size) = disk_kernel(radius);
    convolve(img, &k, size)
}

fn glass(img: &Image, p: GlassParams, rng: &mut Rng) -> Image {
    let (h, w) = (img.height(), img.width());
    let d = p.max_delta as usize;
    let mut out = img.clone();
    if d > 0 && h > 2 * d && w > 2 * d {
        for _ in 0..p.iterations {
            for y in (d..h - d).rev() {
                for x in (d..w - d).rev() {
                    let dy = rng.int_inclusive(-(d as i64), d as i64 - 1);
                    let dx = rng.int_inclusive(-(d as i64), d as i64 - 1);
                    let (sy, sx) = ((y as i64 + dy) as usize, (x as i64 + dx) as usize);
                    for c in 0..out.channels() {
                        let a = out.get(c, y, x);
                        let b = out.get(c, sy, sx);
                        out.set(c, y, x, b);
                        out.set(c, sy, sx, a);
                    }
                }
            }
        }
    }
    gaussian_blur(&out, p.sigma)
}

/// Centred line kernel of the given length and orientation, rasterised by
/// bilinear splatting of sub-pixel samples.
pub fn line_kernel(length: f64, angle: f64) -> (Vec<f64>, usize) {
    let half = (length / 2.0).ceil() as isize + 1;
    let size = (2 * half + 1) as usize;
    let mut k = vec![0.0; size * size];
    let samples = ((length * 4.0).ceil() as usize).max(1);
    let (s, c) = angle.sin_cos();
    for i in 0..=samples {
        let t = if samples == 0 {
            0.0
        } else {
            -length / 2.0 + length * i as f64 / samples as f64
        };
        let (fx, fy) = (half as f64 + t * c, half as f64 + t * s);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (ax, ay) = (fx - x0, fy - y0);
        for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
            for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
                let (yy, xx) = (y0 as usize + dy, x0 as usize + dx);
                if yy < size && xx < size {
                    k[yy * size + xx] += wy * wx;
                }
            }
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    (k, size)
}

fn motion(img: &Image, length: f64, angle: f64) -> Image {
    if length <= 0.0 {
        return img.clone();
    }
    let (k, size) = line_kernel(length, angle);
    convolve(img, &k, size)
}

const ZOOM_STEPS: usize = 8;

fn zoom(img: &Image, max_zoom: f64) -> Image {
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut acc = img.clone();
    for i in 1..=ZOOM_STEPS {
        let f = 1.0 + max_zoom * i as f64 / ZOOM_STEPS as f64;
        let zoomed = warp(img, |y, x| (cy + (y as f64 - cy) / f, cx + (x as f64 - cx) / f));
        acc.data_mut()
            .iter_mut()
            .zip(zoomed.data())
            .for_each(|(a, z)| *a += z);
    }
    let n = (ZOOM_STEPS + 1) as f64;
    acc.data_mut().iter_mut().for_each(|v| *v /= n);
    acc
}

fn gray_plane(img: &Image) -> Vec<f64> {
    (0..img.plane_len())
        .map(|i| 0.299 * img.plane(0)[i] + 0.587 * img.plane(1)[i] + 0.114 * img.plane(2)[i])
        .collect()
}

fn snow(img: &Image, p: SnowParams, rng: &mut Rng) -> Image {
    let (h, w) = (img.height(), img.width());
    let flakes: Vec<f64> = (0..h * w)
        .map(|_| {
            if rng.uniform() < p.density {
                rng.uniform_range(0.7, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    // streaks fall roughly downward
    let angle = rng.uniform_range(60.0, 120.0).to_radians();
    let layer = Image::new(1, h, w, flakes).expect("plane dims");
    let streaks = if p.length > 0.0 {
        let (k, size) = line_kernel(p.length, angle);
        convolve(&layer, &k, size)
    } else {
        layer
    };
    let gain = 1.0 + p.length.sqrt();
    let gray = gray_plane(img);
    let mut out = img.clone();
    for c in 0..3 {
        let plane = out.plane_mut(c);
        for i in 0..h * w {
            let whitened = plane[i].max(gray[i] * 1.5 + 0.5);
            let v = p.image_weight * plane[i] + (1.0 - p.image_weight) * whitened;
            plane[i] = v + gain * streaks.data()[i];
        }
    }
    out
}

fn frost(img: &Image, p: FrostParams, rng: &mut Rng) -> Image {
    let (h, w) = (img.height(), img.width());
    let base = value_noise(rng, h, w, 6.0, 4);
    let fine = value_noise(rng, h, w, 2.0, 2);
    let tint = [0.86, 0.93, 1.0];
    let mut out = img.clone();
    for c in 0..3 {
        let plane = out.plane_mut(c);
        for i in 0..h * w {
            let crystal = ((base[i] - 0.35) * 2.5 + (fine[i] - 0.5) * 0.8).clamp(0.0, 1.0);
            let layer = (0.35 + 0.65 * crystal) * tint[c];
            plane[i] = p.image_weight * plane[i] + p.frost_weight * layer;
        }
    }
    out
}

fn fog(img: &Image, p: FogParams, rng: &mut Rng) -> Image {
    let (h, w) = (img.height(), img.width());
    let size = h.max(w).next_power_of_two().max(8);
    let field = plasma(rng, size, p.decay);
    let (_, max) = img.min_max();
    let mut out = img.clone();
    for c in 0..3 {
        let plane = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x] + p.strength * field[y * size + x];
                plane[y * w + x] = v * max / (max + p.strength);
            }
        }
    }
    out
}

fn brightness(img: &Image, shift: f64) -> Image {
    let mut out = img.clone();
    for i in 0..img.plane_len() {
        let (h, s, v) = rgb_to_hsv(img.plane(0)[i], img.plane(1)[i], img.plane(2)[i]);
        let (r, g, b) = hsv_to_rgb(h, s, (v + shift).clamp(0.0, 1.0));
        out.plane_mut(0)[i] = r;
        out.plane_mut(1)[i] = g;
        out.plane_mut(2)[i] = b;
    }
    out
}

/// Linear contrast about each channel's mean.
fn contrast(img: &Image, factor: f64) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels() {
        let plane = out.plane_mut(c);
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        plane.iter_mut().for_each(|v| *v = (*v - mean) * factor + mean);
    }
    out
}

fn elastic(img: &Image, p: ElasticParams, rng: &mut Rng) -> Image {
    let (h, w) = (img.height(), img.width());
    let field = |rng: &mut Rng| {
        let raw: Vec<f64> = (0..h * w).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let smooth = gaussian_blur_plane(&raw, h, w, p.sigma);
        let rms = (smooth.iter().map(|v| v * v).sum::<f64>() / smooth.len() as f64).sqrt();
        let scale = if rms > 0.0 { p.alpha / rms } else { 0.0 };
        smooth.into_iter().map(|v| v * scale).collect::<Vec<f64>>()
    };
    let dy = field(rng);
    let dx = field(rng);
    warp(img, |y, x| {
        let i = y * w + x;
        (y as f64 + dy[i], x as f64 + dx[i])
    })
}

/// Area-average down to `scale`, then nearest-neighbour back up, sampling
/// at pixel centres.
fn pixelate(img: &Image, scale: f64) -> Image {
    let (h, w) = (img.height(), img.width());
    let sh = ((h as f64 * scale).round() as usize).clamp(1, h);
    let sw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let mut out = img.clone();
    for c in 0..img.channels() {
        let src = img.plane(c);
        let small = area_resize(src, h, w, sh, sw);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let sy = ((2 * y + 1) * sh / (2 * h)).min(sh - 1);
            for x in 0..w {
                let sx = ((2 * x + 1) * sw / (2 * w)).min(sw - 1);
                dst[y * w + x] = small[sy * sw + sx];
            }
        }
    }
    out
}

/// Exact area-weighted box resampling of one plane.
fn area_resize(src: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f64> {
    let overlap = |n_src: usize, n_dst: usize, i: usize| -> Vec<(usize, f64)> {
        let scale = n_src as f64 / n_dst as f64;
        let (a, b) = (i as f64 * scale, (i + 1) as f64 * scale);
        (a.floor() as usize..(b.ceil() as usize).min(n_src))
            .map(|j| {
                let lo = a.max(j as f64);
                let hi = b.min(j as f64 + 1.0);
                (j, (hi - lo).max(0.0))
            })
            .collect()
    };
    let mut out = vec![0.0; nh * nw];
    for y in 0..nh {
        let ys = overlap(h, nh, y);
        for x in 0..nw {
            let xs = overlap(w, nw, x);
            let mut acc = 0.0;
            let mut total = 0.0;
            for &(sy, wy) in &ys {
                for &(sx, wx) in &xs {
                    acc += wy * wx * src[sy * w + sx];
                    total += wy * wx;
                }
            }
            out[y * nw + x] = acc / total;
        }
    }
    out
}

/// Encode to baseline JPEG at `quality` with 4:2:0 chroma subsampling and
/// decode again.
pub fn jpeg_round_trip(img: &Image, quality: u8) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    ensure!(
        h <= u16::MAX as usize && w <= u16::MAX as usize,
        Validation,
        "image too large for JPEG"
    );
    let mut interleaved = Vec::with_capacity(h * w * 3);
    let bytes = img.to_bytes_u8();
    for i in 0..h * w {
        for c in 0..3 {
            interleaved.push(bytes[c * h * w + i]);
        }
    }
    let mut encoded = Vec::new();
    let mut encoder = jpeg_encoder::Encoder::new(&mut encoded, quality);
    encoder.set_sampling_factor(jpeg_encoder::SamplingFactor::R_4_2_0);
    encoder
        .encode(&interleaved, w as u16, h as u16, jpeg_encoder::ColorType::Rgb)
        .map_err(|e| Error::Validation(format!("jpeg encode: {e}")))?;
    let options = zune_jpeg::zune_core::options::DecoderOptions::default()
        .jpeg_set_out_colorspace(zune_jpeg::zune_core::colorspace::ColorSpace::RGB);
    let mut decoder = zune_jpeg::JpegDecoder::new_with_options(
        zune_jpeg::zune_core::bytestream::ZCursor::new(&encoded),
        options,
    );
    let pixels = decoder
        .decode()
        .map_err(|e| Error::Validation(format!("jpeg decode: {e:?}")))?;
    ensure!(
        pixels.len() == h * w * 3,
        Validation,
        "jpeg decode returned {} bytes for {h}x{w}",
        pixels.len()
    );
    let mut data = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = pixels[i * 3 + c] as f64 / 255.0;
        }
    }
    Image::new(3, h, w, data)
}

/// Peak signal-to-noise ratio in dB for images in `[0,1]`;
/// `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    ensure!(
        a.same_dims(b),
        Dimension,
        "psnr: {}x{}x{} vs {}x{}x{}",
        a.channels(),
        a.height(),
        a.width(),
        b.channels(),
        b.height(),
        b.width()
    );
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

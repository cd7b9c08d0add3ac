//! Dataset manifests, PNG storage and corrupted benchmark construction.
//!
//! A dataset slice is a directory holding `manifest.json` and
//! `images/<id>.png`. A benchmark directory holds one slice per cell at
//! `<kind>/<severity>/`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ::image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::corruption::{CorruptionEngine, CorruptionSpec};
use crate::data::{Dataset, Sample, Split};
use crate::error::{ensure, Error, Result};
use crate::eval::{score_images, EvalConfig, Predictor, RobustnessGrid};
use crate::heatmap::{Keypoint, KeypointSet};
use crate::image::Image;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: u64,
    /// Relative to the manifest's directory.
    pub file: String,
    pub width: usize,
    pub height: usize,
    /// `[x, y, v]` per joint.
    pub keypoints: Vec<[f64; 3]>,
    pub head_size: f64,
    pub bbox: [f64; 4],
}

impl ManifestEntry {
    pub fn keypoint_set(&self) -> KeypointSet {
        KeypointSet {
            joints: self
                .keypoints
                .iter()
                .map(|&[x, y, v]| Keypoint { x, y, v: v as u8 })
                .collect(),
            head_size: self.head_size,
            bbox: self.bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub source_manifest: String,
    pub corruption: CorruptionSpec,
    pub global_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.format_version == MANIFEST_VERSION,
            Parse,
            "unsupported manifest version {}",
            self.format_version
        );
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            ensure!(ids.insert(e.id), Validation, "duplicate id {} in manifest", e.id);
            for &[x, y, v] in &e.keypoints {
                ensure!(
                    v == 0.0 || (x >= 0.0 && y >= 0.0 && x < e.width as f64 && y < e.height as f64),
                    Validation,
                    "entry {}: joint ({x}, {y}) outside {}x{}",
                    e.id,
                    e.width,
                    e.height
                );
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Resolve a slice directory or a manifest path to the manifest path.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let rgb = image.to_rgb();
    let (h, w) = (rgb.height(), rgb.width());
    let planar = rgb.to_bytes_u8();
    let mut interleaved = vec![0u8; 3 * h * w];
    for c in 0..3 {
        for p in 0..h * w {
            interleaved[3 * p + c] = planar[c * h * w + p];
        }
    }
    let mut bytes = Vec::new();
    RgbImage::from_raw(w as u32, h as u32, interleaved)
        .expect("buffer size")
        .write_to(&mut std::io::Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    write_atomic(path, &bytes)
}

pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = ::image::load_from_memory(&bytes).map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (p, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = px[c] as f64 / 255.0;
        }
    }
    Image::new(3, h, w, data)
}

fn image_file(id: u64) -> String {
    format!("images/{id:06}.png")
}

fn entry_for(sample: &Sample) -> ManifestEntry {
    ManifestEntry {
        id: sample.id,
        file: image_file(sample.id),
        width: sample.image.width(),
        height: sample.image.height(),
        keypoints: sample
            .keypoints
            .joints
            .iter()
            .map(|k| [k.x, k.y, k.v as f64])
            .collect(),
        head_size: sample.keypoints.head_size,
        bbox: sample.keypoints.bbox,
    }
}

/// Write images and manifest into `dir`.
pub fn write_dataset(data: &Dataset, dir: &Path, provenance: Option<Provenance>) -> Result<DatasetManifest> {
    data.samples()
        .par_iter()
        .map(|s| write_png(&dir.join(image_file(s.id)), &s.image))
        .collect::<Result<()>>()?;
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        split: data.split(),
        entries: data.samples().iter().map(entry_for).collect(),
        provenance,
    };
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// Load a slice from its directory or manifest path.
pub fn load_dataset(path: &Path) -> Result<(Dataset, DatasetManifest)> {
    let mpath = manifest_path(path);
    let manifest = DatasetManifest::load(&mpath)?;
    let root = mpath.parent().unwrap_or(Path::new("."));
    let samples = manifest
        .entries
        .par_iter()
        .map(|e| {
            let image = read_png(&root.join(&e.file))?;
            ensure!(
                (image.height(), image.width()) == (e.height, e.width),
                Validation,
                "{}: image is {}x{}, manifest says {}x{}",
                e.file,
                image.height(),
                image.width(),
                e.height,
                e.width
            );
            Ok(Sample {
                id: e.id,
                image,
                keypoints: e.keypoint_set(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::new(samples, manifest.split)?, manifest))
}

pub fn slice_dir(out: &Path, spec: CorruptionSpec) -> PathBuf {
    out.join(spec.kind.name()).join(spec.severity.to_string())
}

/// Corrupt every image of the clean slice for one cell and write it.
pub fn build_slice(
    clean: &Dataset,
    source: &Path,
    out: &Path,
    spec: CorruptionSpec,
    engine: &CorruptionEngine,
    seed: u64,
) -> Result<DatasetManifest> {
    let dir = slice_dir(out, spec);
    let samples = clean
        .samples()
        .par_iter()
        .map(|s| {
            Ok(Sample {
                id: s.id,
                image: engine.benchmark_image(&s.image, spec, seed, s.id)?,
                keypoints: s.keypoints.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let provenance = Provenance {
        source_manifest: source.display().to_string(),
        corruption: spec,
        global_seed: seed,
    };
    write_dataset(&Dataset::new(samples, clean.split())?, &dir, Some(provenance))
}

/// Build all 75 cells. Existing files are overwritten with identical
/// bytes, so an interrupted build is resumed by running it again.
pub fn build_corrupted_dataset(
    clean_manifest: &Path,
    out: &Path,
    seed: u64,
    engine: &CorruptionEngine,
) -> Result<Vec<PathBuf>> {
    let (clean, _) = load_dataset(clean_manifest)?;
    let source = manifest_path(clean_manifest);
    let cells: Vec<CorruptionSpec> = CorruptionSpec::grid().collect();
    cells
        .par_iter()
        .map(|&spec| {
            build_slice(&clean, &source, out, spec, engine, seed)?;
            Ok(slice_dir(out, spec).join(MANIFEST_FILE))
        })
        .collect()
}

/// Score a model on a clean slice and a built benchmark directory.
pub fn evaluate_bench<P: Predictor + ?Sized>(
    predictor: &P,
    clean: &Path,
    bench: &Path,
    cfg: &EvalConfig,
) -> Result<RobustnessGrid> {
    let score_slice = |path: &Path| -> Result<f64> {
        let (data, _) = load_dataset(path)?;
        let images: Vec<Image> = data.samples().iter().map(|s| s.image.clone()).collect();
        let gts: Vec<KeypointSet> = data.samples().iter().map(|s| s.keypoints.clone()).collect();
        score_images(predictor, &images, &gts, cfg)
    };
    let clean_score = score_slice(clean)?;
    let cells: Vec<CorruptionSpec> = CorruptionSpec::grid().collect();
    let scores = cells
        .par_iter()
        .map(|&spec| score_slice(&slice_dir(bench, spec)))
        .collect::<Result<Vec<f64>>>()?;
    RobustnessGrid::from_flat(cfg.metric, clean_score, &scores)
}

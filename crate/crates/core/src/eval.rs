//! Keypoint accuracy (OKS-based AP, PCKh) and the corruption-grid
//! aggregates mPC and rPC.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{CorruptionEngine, CorruptionKind, CorruptionSpec, NUM_KINDS, NUM_SEVERITIES};
use crate::data::{Dataset, Sample};
use crate::error::{ensure, Error, Result};
use crate::heatmap::{decode_heatmaps, Detection, KeypointSet};
use crate::image::Image;
use crate::nets::PoseNet;

/// Default per-joint OKS falloff.
pub const DEFAULT_OKS_K: f64 = 0.08;

/// 0.50, 0.55, ..., 0.95.
pub fn oks_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ap,
    Pckh,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ap => "ap",
            Metric::Pckh => "pckh",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ap" => Ok(Metric::Ap),
            "pckh" => Ok(Metric::Pckh),
            _ => Err(Error::Validation(format!("unknown metric `{s}` (expected ap or pckh)"))),
        }
    }
}

/// Object keypoint similarity over the visible ground-truth joints.
pub fn oks(pred: &[Detection], gt: &KeypointSet, scale: f64, falloff: &[f64]) -> Result<f64> {
    ensure!(scale > 0.0, Validation, "OKS scale must be positive, got {scale}");
    ensure!(
        pred.len() == gt.joints.len() && falloff.len() == gt.joints.len(),
        Dimension,
        "OKS: {} predicted joints, {} ground truth, {} falloffs",
        pred.len(),
        gt.joints.len(),
        falloff.len()
    );
    let mut total = 0.0;
    let mut visible = 0usize;
    for ((p, g), k) in pred.iter().zip(&gt.joints).zip(falloff) {
        if !g.is_visible() {
            continue;
        }
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        total += (-d2 / (2.0 * scale * scale * k * k)).exp();
        visible += 1;
    }
    ensure!(visible > 0, Validation, "OKS needs at least one visible ground-truth joint");
    Ok(total / visible as f64)
}

/// One scored pose hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub joints: Vec<Detection>,
    pub score: f64,
}

impl Prediction {
    /// Score is the mean joint confidence.
    pub fn from_detections(joints: Vec<Detection>) -> Self {
        let score = joints.iter().map(|d| d.confidence).sum::<f64>() / joints.len().max(1) as f64;
        Self { joints, score }
    }
}

/// Everything known about one image at scoring time.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub gts: Vec<KeypointSet>,
    pub preds: Vec<Prediction>,
}

/// Matching outcome of one prediction at one OKS threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub image: usize,
    pub prediction: usize,
    pub score: f64,
    /// Index of the matched ground truth, if any.
    pub gt: Option<usize>,
    pub oks: f64,
}

fn pairwise_oks(img: &ImageResult, falloff: &[f64]) -> Result<Vec<Vec<f64>>> {
    img.preds
        .iter()
        .map(|p| img.gts.iter().map(|g| oks(&p.joints, g, g.scale(), falloff)).collect())
        .collect()
}

/// Order of predictions within an image: score descending, then index.
fn confidence_order(preds: &[Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    order
}

/// Greedy matching: predictions in descending confidence each take the
/// unmatched ground truth with the highest OKS, if it clears `threshold`.
pub fn match_predictions(images: &[ImageResult], falloff: &[f64], threshold: f64) -> Result<Vec<MatchResult>> {
    let mut out = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let table = pairwise_oks(img, falloff)?;
        let mut taken = vec![false; img.gts.len()];
        for p in confidence_order(&img.preds) {
            let mut best: Option<(usize, f64)> = None;
            for (g, &o) in table[p].iter().enumerate() {
                if taken[g] || o < threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            out.push(MatchResult {
                image: i,
                prediction: p,
                score: img.preds[p].score,
                gt: best.map(|(g, _)| g),
                oks: best.map_or(0.0, |(_, o)| o),
            });
        }
    }
    Ok(out)
}

/// 101-point interpolated precision over the recall axis, in `[0,1]`.
pub fn interpolated_ap(matches: &[MatchResult], total_gt: usize) -> f64 {
    if total_gt == 0 || matches.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.sort_by(|&a, &b| {
        matches[b]
            .score
            .total_cmp(&matches[a].score)
            .then(matches[a].image.cmp(&matches[b].image))
            .then(matches[a].prediction.cmp(&matches[b].prediction))
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    for &i in &order {
        if matches[i].gt.is_some() {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let total: f64 = (0..=100)
        .map(|r| {
            let r = r as f64 / 100.0;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    total / 101.0
}

/// Mean AP over the ten OKS thresholds, on the 0-100 scale.
pub fn average_precision(images: &[ImageResult], falloff: &[f64]) -> Result<f64> {
    let total_gt: usize = images.iter().map(|i| i.gts.len()).sum();
    ensure!(total_gt > 0, Validation, "average precision over an empty dataset");
    let mut sum = 0.0;
    for t in oks_thresholds() {
        let m = match_predictions(images, falloff, t)?;
        sum += interpolated_ap(&m, total_gt);
    }
    Ok(100.0 * sum / oks_thresholds().len() as f64)
}

/// Percentage of visible joints within `ratio * head_size` (inclusive).
pub fn pckh(preds: &[Vec<Detection>], gts: &[KeypointSet], ratio: f64) -> Result<f64> {
    ensure!(
        preds.len() == gts.len(),
        Dimension,
        "{} predictions for {} ground truths",
        preds.len(),
        gts.len()
    );
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        ensure!(
            g.head_size > 0.0 && g.head_size.is_finite(),
            Validation,
            "PCKh needs a positive head size, got {}",
            g.head_size
        );
        ensure!(p.len() == g.joints.len(), Dimension, "joint count mismatch");
        for (d, j) in p.iter().zip(&g.joints) {
            if !j.is_visible() {
                continue;
            }
            total += 1;
            if (d.x - j.x).hypot(d.y - j.y) <= ratio * g.head_size {
                hit += 1;
            }
        }
    }
    ensure!(total > 0, Validation, "PCKh over zero visible joints");
    Ok(100.0 * hit as f64 / total as f64)
}

/// Anything that maps an image to one pose hypothesis.
pub trait Predictor: Sync {
    fn predict(&self, image: &Image) -> Result<Prediction>;
}

impl Predictor for PoseNet {
    fn predict(&self, image: &Image) -> Result<Prediction> {
        let hm = PoseNet::predict(self, image)?;
        let dets = decode_heatmaps(&hm, (image.height(), image.width()))?;
        Ok(Prediction::from_detections(dets))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metric: Metric,
    pub pckh_ratio: f64,
    /// One falloff constant for every joint.
    pub oks_k: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Pckh,
            pckh_ratio: 0.5,
            oks_k: DEFAULT_OKS_K,
            seed: 0,
        }
    }
}

/// Score already-loaded images against their annotations.
pub fn score_images<P: Predictor + ?Sized>(
    predictor: &P,
    images: &[Image],
    gts: &[KeypointSet],
    cfg: &EvalConfig,
) -> Result<f64> {
    ensure!(!images.is_empty(), Validation, "cannot score an empty image set");
    let preds: Vec<Prediction> = images.iter().map(|im| predictor.predict(im)).collect::<Result<_>>()?;
    match cfg.metric {
        Metric::Pckh => {
            let dets: Vec<Vec<Detection>> = preds.into_iter().map(|p| p.joints).collect();
            pckh(&dets, gts, cfg.pckh_ratio)
        }
        Metric::Ap => {
            let results: Vec<ImageResult> = preds
                .into_iter()
                .zip(gts)
                .map(|(p, g)| ImageResult {
                    gts: vec![g.clone()],
                    preds: vec![p],
                })
                .collect();
            let falloff = vec![cfg.oks_k; gts[0].joints.len()];
            average_precision(&results, &falloff)
        }
    }
}

/// Score a dataset with its images quantised to 8 bits, as when read from
/// PNG.
pub fn score_dataset<P: Predictor + ?Sized>(predictor: &P, data: &Dataset, cfg: &EvalConfig) -> Result<f64> {
    let images: Vec<Image> = data.samples().iter().map(|s| s.image.quantize_u8()).collect();
    let gts: Vec<KeypointSet> = data.samples().iter().map(|s| s.keypoints.clone()).collect();
    score_images(predictor, &images, &gts, cfg)
}

/// One grid cell: corrupt every validation image with its own stream,
/// quantise, score.
pub fn evaluate_cell<P: Predictor + ?Sized>(
    predictor: &P,
    clean_val: &Dataset,
    engine: &CorruptionEngine,
    spec: CorruptionSpec,
    cfg: &EvalConfig,
) -> Result<f64> {
    let images: Vec<Image> = clean_val
        .samples()
        .iter()
        .map(|s: &Sample| engine.benchmark_image(&s.image, spec, cfg.seed, s.id))
        .collect::<Result<_>>()?;
    let gts: Vec<KeypointSet> = clean_val.samples().iter().map(|s| s.keypoints.clone()).collect();
    score_images(predictor, &images, &gts, cfg)
}

pub fn evaluate_grid<P: Predictor + ?Sized>(
    predictor: &P,
    clean_val: &Dataset,
    engine: &CorruptionEngine,
    cfg: &EvalConfig,
) -> Result<RobustnessGrid> {
    let clean = score_dataset(predictor, clean_val, cfg)?;
    let cells: Vec<CorruptionSpec> = CorruptionSpec::grid().collect();
    let scores: Vec<f64> = cells
        .par_iter()
        .map(|&spec| evaluate_cell(predictor, clean_val, engine, spec, cfg))
        .collect::<Result<_>>()?;
    RobustnessGrid::from_flat(cfg.metric, clean, &scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub corruption: CorruptionKind,
    pub scores: [f64; NUM_SEVERITIES],
}

/// Metric per (corruption, severity) plus the clean reference score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessGrid {
    pub metric: Metric,
    pub clean_score: f64,
    pub rows: Vec<GridRow>,
}

impl RobustnessGrid {
    pub fn new(metric: Metric, clean_score: f64, scores: [[f64; NUM_SEVERITIES]; NUM_KINDS]) -> Result<Self> {
        let grid = Self {
            metric,
            clean_score,
            rows: CorruptionKind::ALL
                .iter()
                .zip(scores)
                .map(|(&corruption, scores)| GridRow { corruption, scores })
                .collect(),
        };
        grid.validate()?;
        Ok(grid)
    }

    /// From 75 scores in (kind, severity) row-major order.
    pub fn from_flat(metric: Metric, clean_score: f64, scores: &[f64]) -> Result<Self> {
        ensure!(
            scores.len() == NUM_KINDS * NUM_SEVERITIES,
            Dimension,
            "grid needs {} cells, got {}",
            NUM_KINDS * NUM_SEVERITIES,
            scores.len()
        );
        let rows = std::array::from_fn(|k| std::array::from_fn(|s| scores[k * NUM_SEVERITIES + s]));
        Self::new(metric, clean_score, rows)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.rows.len() == NUM_KINDS, Validation, "grid has {} rows, expected 15", self.rows.len());
        for (row, kind) in self.rows.iter().zip(CorruptionKind::ALL) {
            ensure!(
                row.corruption == kind,
                Validation,
                "grid row {} out of order (expected {kind})",
                row.corruption
            );
            ensure!(
                row.scores.iter().all(|v| v.is_finite() && (0.0..=100.0).contains(v)),
                Validation,
                "{kind}: scores must lie in [0,100]"
            );
        }
        ensure!(
            self.clean_score.is_finite() && (0.0..=100.0).contains(&self.clean_score),
            Validation,
            "clean score {} outside [0,100]",
            self.clean_score
        );
        Ok(())
    }

    pub fn score(&self, spec: CorruptionSpec) -> f64 {
        self.rows[spec.kind.index()].scores[spec.severity as usize - 1]
    }

    pub fn cells(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().flat_map(|r| r.scores)
    }

    /// Severity-averaged score per corruption kind.
    pub fn row_means(&self) -> Vec<(CorruptionKind, f64)> {
        self.rows
            .iter()
            .map(|r| (r.corruption, r.scores.iter().sum::<f64>() / NUM_SEVERITIES as f64))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let grid: Self = serde_json::from_str(text).map_err(|e| Error::Parse(format!("grid JSON: {e}")))?;
        grid.validate()?;
        Ok(grid)
    }
}

/// Mean over all 75 cells.
pub fn mpc(grid: &RobustnessGrid) -> f64 {
    grid.cells().sum::<f64>() / (NUM_KINDS * NUM_SEVERITIES) as f64
}

/// `100 * mpc / clean`.
pub fn rpc(mpc: f64, clean_score: f64) -> Result<f64> {
    ensure!(
        clean_score > 0.0,
        Validation,
        "rPC is undefined for a clean score of {clean_score}"
    );
    Ok(100.0 * mpc / clean_score)
}

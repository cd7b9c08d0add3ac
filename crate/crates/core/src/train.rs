//! Adversarial augmentation mixing: a generator learns per-pixel weights
//! over the original image and `K` augmented copies to maximise the pose
//! loss, the pose network minimises it, optionally distilling from a
//! frozen teacher on clean inputs.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamState};
use crate::augment::{
    apply_chain, default_policy, policy_from_names, sample_chain, AugmentationChain, AugmentationOpSpec,
};
use crate::autodiff::{Tape, Var};
use crate::checkpoint::weights_hash;
use crate::data::{Dataset, Sample};
use crate::error::{ensure, Error, Result};
use crate::eval::{score_dataset, EvalConfig};
use crate::heatmap::encode_heatmaps;
use crate::image::Image;
use crate::nets::{bind, GeneratorArch, GeneratorNet, PoseArch, PoseNet};
use crate::rng::{derive_stream, domain, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MixStrategy {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "advmix")]
    AdvMix,
    #[serde(rename = "advmix_image")]
    AdvMixImage,
    #[serde(rename = "equal_mix")]
    EqualMix,
    #[serde(rename = "dirichlet_mix")]
    DirichletMix,
    #[serde(rename = "sequential_mix")]
    SequentialMix,
}

impl MixStrategy {
    pub const ALL: [MixStrategy; 6] = [
        MixStrategy::Standard,
        MixStrategy::AdvMix,
        MixStrategy::AdvMixImage,
        MixStrategy::EqualMix,
        MixStrategy::DirichletMix,
        MixStrategy::SequentialMix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MixStrategy::Standard => "standard",
            MixStrategy::AdvMix => "advmix",
            MixStrategy::AdvMixImage => "advmix_image",
            MixStrategy::EqualMix => "equal_mix",
            MixStrategy::DirichletMix => "dirichlet_mix",
            MixStrategy::SequentialMix => "sequential_mix",
        }
    }

    pub fn uses_generator(self) -> bool {
        matches!(self, MixStrategy::AdvMix | MixStrategy::AdvMixImage)
    }
}

impl fmt::Display for MixStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        MixStrategy::ALL
            .into_iter()
            .find(|m| m.name().replace('_', "") == norm)
            .ok_or_else(|| Error::Validation(format!("unknown mix strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Op names; benchmark-overlapping names are dropped.
    pub ops: Vec<String>,
    pub geometric: bool,
    pub probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            ops: default_policy().iter().map(|s| s.op.name().to_string()).collect(),
            geometric: false,
            probability: default_policy()[0].probability,
        }
    }
}

impl AugmentConfig {
    pub fn policy(&self) -> Result<Vec<AugmentationOpSpec>> {
        policy_from_names(&self.ops, self.probability)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvMixConfig {
    /// Augmented proposals per image.
    pub k: usize,
    /// Distillation weight.
    pub alpha: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub total_epochs: usize,
    /// Epochs at which both learning rates are multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub kd_enabled: bool,
    pub mix_strategy: MixStrategy,
    pub seed: u64,
    /// Global-norm gradient clip for both players.
    pub clip_norm: f64,
    pub generator_channels: usize,
    pub pose_channels: usize,
    pub heatmap_sigma: f64,
    pub augment: AugmentConfig,
}

impl Default for AdvMixConfig {
    fn default() -> Self {
        let total = 42;
        Self {
            k: 2,
            alpha: 0.1,
            lr_g: 1e-3,
            lr_d: 1e-3,
            total_epochs: total,
            decay_epochs: scaled_decay_epochs(total),
            decay_factor: 0.1,
            batch_size: 16,
            kd_enabled: true,
            mix_strategy: MixStrategy::AdvMix,
            seed: 0,
            clip_norm: 5.0,
            generator_channels: 16,
            pose_channels: 16,
            heatmap_sigma: 1.0,
            augment: AugmentConfig::default(),
        }
    }
}

/// Decay epochs at 170/210 and 200/210 of a `total`-epoch run.
pub fn scaled_decay_epochs(total: usize) -> Vec<usize> {
    [170.0, 200.0]
        .iter()
        .map(|f| (total as f64 * f / 210.0).round() as usize)
        .collect()
}

impl AdvMixConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 1, Validation, "K must be at least 1");
        ensure!((0.0..=1.0).contains(&self.alpha), Validation, "alpha {} outside [0,1]", self.alpha);
        ensure!(
            self.lr_g >= 0.0 && self.lr_d >= 0.0 && self.lr_g.is_finite() && self.lr_d.is_finite(),
            Validation,
            "learning rates must be finite and non-negative"
        );
        ensure!(self.batch_size >= 1, Validation, "batch size must be at least 1");
        ensure!(self.clip_norm > 0.0, Validation, "clip norm must be positive");
        ensure!(self.heatmap_sigma > 0.0, Validation, "heatmap sigma must be positive");
        ensure!(self.decay_factor > 0.0, Validation, "decay factor must be positive");
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(format!("training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Learning-rate multiplier in force during `epoch` (0-based).
    pub fn lr_scale(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.decay_factor.powi(decays as i32)
    }
}

/// Per-pixel convex combination `sum_k maps[k] * inputs[k]`, where
/// `inputs[0]` is the original and the rest are the augmented proposals.
pub fn mix_images(original: &Image, proposals: &[Image], maps: &Tensor) -> Result<Image> {
    let mut tape = Tape::new();
    let m = tape.constant(maps.clone());
    let mut inputs = vec![tape.constant(original.to_rgb().to_tensor())];
    inputs.extend(proposals.iter().map(|p| tape.constant(p.to_rgb().to_tensor())));
    let out = tape.mix(m, &inputs)?;
    Image::from_tensor(tape.value(out))
}

/// Per-image weights broadcast over the pixel grid.
pub fn constant_maps(weights: &[f64], height: usize, width: usize) -> Tensor {
    let mut data = Vec::with_capacity(weights.len() * height * width);
    for &w in weights {
        data.extend(std::iter::repeat_n(w, height * width));
    }
    Tensor::new(&[weights.len(), height, width], data).expect("map shape")
}

pub fn uniform_maps(count: usize, height: usize, width: usize) -> Tensor {
    constant_maps(&vec![1.0 / count as f64; count], height, width)
}

/// The original followed by one augmented copy per chain.
pub fn proposals_for(original: &Image, chains: &[AugmentationChain], rng: &mut Rng) -> Result<Vec<Image>> {
    chains.iter().map(|c| apply_chain(original, c, rng)).collect()
}

/// The non-adversarial mixing baselines, plus the generator strategies
/// when a generator is supplied.
pub fn baseline_mix(
    strategy: MixStrategy,
    original: &Image,
    chains: &[AugmentationChain],
    rng: &mut Rng,
    generator: Option<&GeneratorNet>,
) -> Result<Image> {
    let original = original.to_rgb();
    let (h, w) = (original.height(), original.width());
    match strategy {
        MixStrategy::Standard => Ok(original),
        MixStrategy::SequentialMix => {
            let mut img = original;
            for c in chains {
                img = apply_chain(&img, c, rng)?;
            }
            Ok(img)
        }
        MixStrategy::EqualMix => {
            let props = proposals_for(&original, chains, rng)?;
            mix_images(&original, &props, &uniform_maps(chains.len() + 1, h, w))
        }
        MixStrategy::DirichletMix => {
            let props = proposals_for(&original, chains, rng)?;
            let weights = rng.dirichlet_flat(chains.len() + 1);
            mix_images(&original, &props, &constant_maps(&weights, h, w))
        }
        MixStrategy::AdvMix | MixStrategy::AdvMixImage => {
            let g = generator.ok_or_else(|| Error::Validation(format!("{strategy} needs a generator")))?;
            let props = proposals_for(&original, chains, rng)?;
            let mut all = vec![original.clone()];
            all.extend(props.iter().cloned());
            let maps = g.attention_maps(&all)?;
            mix_images(&original, &props, &maps)
        }
    }
}

/// Loss handles of one student pass.
#[derive(Debug, Clone, Copy)]
pub struct PoseLoss {
    pub total: Var,
    pub star: Var,
    pub kd: Option<Var>,
}

/// `L_D = (1 - alpha) * mse(D(mixed), target) + alpha * mse(D(clean), T(clean))`.
/// With distillation off the total is the first term alone and the
/// teacher is never evaluated.
#[allow(clippy::too_many_arguments)]
pub fn pose_loss(
    tape: &mut Tape,
    student: &PoseNet,
    student_params: &[Var],
    teacher: Option<&PoseNet>,
    clean: Var,
    mixed: Var,
    target: Var,
    alpha: f64,
    kd_enabled: bool,
) -> Result<PoseLoss> {
    let pred = student.forward(tape, student_params, mixed)?;
    let star = tape.mse(pred, target)?;
    if !kd_enabled {
        return Ok(PoseLoss { total: star, star, kd: None });
    }
    let teacher = teacher.ok_or_else(|| Error::Validation("distillation is enabled but no teacher was given".into()))?;
    let teacher_params = bind(tape, teacher.params(), false);
    let t_out = teacher.forward(tape, &teacher_params, clean)?;
    let t_out = tape.constant(tape.value(t_out).clone());
    let s_clean = student.forward(tape, student_params, clean)?;
    let kd = tape.mse(s_clean, t_out)?;
    let a = tape.scale(star, 1.0 - alpha);
    let b = tape.scale(kd, alpha);
    let total = tape.add(a, b)?;
    Ok(PoseLoss { total, star, kd: Some(kd) })
}

/// `L_G = -L_D*`.
pub fn generator_loss(tape: &mut Tape, l_d_star: Var) -> Var {
    tape.scale(l_d_star, -1.0)
}

/// One training example ready for a step.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub original: Tensor,
    /// Generator inputs (original first); empty for fixed strategies.
    pub proposals: Vec<Tensor>,
    /// Student input for strategies without a generator.
    pub fixed_input: Option<Tensor>,
    pub target: Tensor,
}

/// Build proposals (or the fixed mixed input) for one sample. Every draw
/// comes from the stream keyed by `(seed, epoch, sample id)`.
pub fn prepare_sample(
    sample: &Sample,
    target: &Tensor,
    cfg: &AdvMixConfig,
    policy: &[AugmentationOpSpec],
    epoch: usize,
) -> Result<PreparedSample> {
    let mut rng = derive_stream(cfg.seed, domain::PROPOSALS, ((epoch as u64) << 32) ^ sample.id);
    let original = sample.image.to_rgb();
    let chains = match cfg.mix_strategy {
        MixStrategy::Standard => Vec::new(),
        _ => (0..cfg.k)
            .map(|_| sample_chain(&mut rng, policy, cfg.augment.geometric))
            .collect::<Result<Vec<_>>>()?,
    };
    let out = |proposals: Vec<Tensor>, fixed: Option<Image>| PreparedSample {
        original: original.to_tensor(),
        proposals,
        fixed_input: fixed.map(|i| i.to_tensor()),
        target: target.clone(),
    };
    if cfg.mix_strategy.uses_generator() {
        let props = proposals_for(&original, &chains, &mut rng)?;
        let mut all = vec![original.to_tensor()];
        all.extend(props.iter().map(Image::to_tensor));
        Ok(out(all, None))
    } else {
        let mixed = baseline_mix(cfg.mix_strategy, &original, &chains, &mut rng, None)?;
        Ok(out(Vec::new(), Some(mixed)))
    }
}

/// Mean `L_D*` over the batch and its gradient with respect to the
/// generator weights, with the student frozen.
pub fn generator_objective(
    generator: &GeneratorNet,
    student: &PoseNet,
    batch: &[PreparedSample],
) -> Result<(f64, Vec<Tensor>)> {
    ensure!(!batch.is_empty(), Validation, "empty batch");
    let scale = 1.0 / batch.len() as f64;
    let per_sample: Vec<(f64, Vec<Tensor>)> = batch
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new();
            let gp = bind(&mut tape, generator.params(), true);
            let sp = bind(&mut tape, student.params(), false);
            let props: Vec<Var> = s.proposals.iter().map(|p| tape.constant(p.clone())).collect();
            let maps = generator.forward(&mut tape, &gp, &props)?;
            let mixed = tape.mix(maps, &props)?;
            let pred = student.forward(&mut tape, &sp, mixed)?;
            let target = tape.constant(s.target.clone());
            let star = tape.mse(pred, target)?;
            let scaled = tape.scale(star, scale);
            let grads = tape.backward(scaled)?;
            let g = gp
                .iter()
                .zip(generator.params())
                .map(|(&v, p)| grads.get(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            Ok((tape.value(star).item(), g))
        })
        .collect::<Result<_>>()?;
    Ok(reduce(per_sample, scale))
}

fn reduce(per_sample: Vec<(f64, Vec<Tensor>)>, scale: f64) -> (f64, Vec<Tensor>) {
    let mut iter = per_sample.into_iter();
    let (mut loss, mut acc) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (a, b) in acc.iter_mut().zip(g) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }
    (loss * scale, acc)
}

/// Losses of a student pass, batch means.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StudentLosses {
    pub l_d: f64,
    pub l_d_star: f64,
    pub l_dkd: f64,
}

/// Batch-mean student losses and their gradient with respect to the
/// student weights. `inputs[i]` is the image the student sees for
/// `batch[i]`.
pub fn student_objective(
    student: &PoseNet,
    teacher: Option<&PoseNet>,
    batch: &[PreparedSample],
    inputs: &[Tensor],
    alpha: f64,
    kd_enabled: bool,
) -> Result<(StudentLosses, Vec<Tensor>)> {
    ensure!(!batch.is_empty() && batch.len() == inputs.len(), Validation, "batch/input mismatch");
    let scale = 1.0 / batch.len() as f64;
    let per_sample: Vec<(StudentLosses, Vec<Tensor>)> = batch
        .par_iter()
        .zip(inputs.par_iter())
        .map(|(s, input)| {
            let mut tape = Tape::new();
            let sp = bind(&mut tape, student.params(), true);
            let clean = tape.constant(s.original.clone());
            let mixed = tape.constant(input.clone());
            let target = tape.constant(s.target.clone());
            let loss = pose_loss(&mut tape, student, &sp, teacher, clean, mixed, target, alpha, kd_enabled)?;
            let scaled = tape.scale(loss.total, scale);
            let grads = tape.backward(scaled)?;
            let g = sp
                .iter()
                .zip(student.params())
                .map(|(&v, p)| grads.get(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            let losses = StudentLosses {
                l_d: tape.value(loss.total).item(),
                l_d_star: tape.value(loss.star).item(),
                l_dkd: loss.kd.map_or(0.0, |v| tape.value(v).item()),
            };
            Ok((losses, g))
        })
        .collect::<Result<_>>()?;
    let mut total = StudentLosses::default();
    let mut flat = Vec::with_capacity(per_sample.len());
    for (l, g) in per_sample {
        total.l_d += l.l_d;
        total.l_d_star += l.l_d_star;
        total.l_dkd += l.l_dkd;
        flat.push((0.0, g));
    }
    let (_, grads) = reduce(flat, scale);
    total.l_d *= scale;
    total.l_d_star *= scale;
    total.l_dkd *= scale;
    Ok((total, grads))
}

/// Rescale `grads` in place so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= f);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Student losses after the generator update.
    pub student: StudentLosses,
    /// The game value the generator ascended: `L_D*` before its update.
    pub l_d_star_adv: f64,
    /// Always exactly `-l_d_star_adv`.
    pub l_g: f64,
}

/// Both players plus optimiser state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub student: PoseNet,
    pub generator: Option<GeneratorNet>,
    pub teacher: Option<PoseNet>,
    pub adam_d: AdamState,
    pub adam_g: Option<AdamState>,
    pub epoch: usize,
    pub step: u64,
}

impl TrainState {
    /// Fresh players initialised from the config seed; an explicit
    /// `student` replaces the random pose network.
    pub fn new(cfg: &AdvMixConfig, arch: PoseArch, student: Option<PoseNet>, teacher: Option<PoseNet>) -> Result<Self> {
        cfg.validate()?;
        let student = match student {
            Some(s) => {
                ensure!(*s.arch() == arch, Validation, "initial student architecture does not match the data");
                s
            }
            None => PoseNet::new(arch, &mut derive_stream(cfg.seed, domain::INIT_ESTIMATOR, 0))?,
        };
        if let Some(t) = &teacher {
            ensure!(t.arch() == student.arch(), Validation, "teacher and student architectures differ");
        }
        ensure!(
            !cfg.kd_enabled || teacher.is_some(),
            Validation,
            "distillation is enabled but no teacher was given"
        );
        let generator = if cfg.mix_strategy.uses_generator() {
            let mut garch = GeneratorArch::new(arch.height, arch.width, cfg.k, cfg.generator_channels)?;
            garch.image_level = cfg.mix_strategy == MixStrategy::AdvMixImage;
            Some(GeneratorNet::new(garch, &mut derive_stream(cfg.seed, domain::INIT_GENERATOR, 0))?)
        } else {
            None
        };
        Ok(Self {
            adam_d: AdamState::new(student.params(), cfg.lr_d),
            adam_g: generator.as_ref().map(|g| AdamState::new(g.params(), cfg.lr_g)),
            student,
            generator,
            teacher,
            epoch: 0,
            step: 0,
        })
    }
}

fn finite(v: f64, what: &str, step: u64) -> Result<()> {
    ensure!(v.is_finite(), NonFinite, "{what} = {v} at step {step}");
    Ok(())
}

/// One alternating update on a prepared batch: generator ascent on
/// `L_D*`, then student descent on `L_D` with the updated maps held fixed.
pub fn train_step(state: &mut TrainState, batch: &[PreparedSample], cfg: &AdvMixConfig) -> Result<StepMetrics> {
    ensure!(!batch.is_empty(), Validation, "empty batch");
    let lr_scale = cfg.lr_scale(state.epoch);
    let mut adv = None;
    let inputs: Vec<Tensor> = match (&mut state.generator, &mut state.adam_g) {
        (Some(generator), Some(adam_g)) => {
            let (star, mut grads) = generator_objective(generator, &state.student, batch)?;
            finite(star, "generator L_D*", state.step)?;
            // ascend L_D*: descend L_G = -L_D*
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v = -*v));
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam_g.lr = cfg.lr_g * lr_scale;
            let grads: Vec<Option<Tensor>> = grads.into_iter().map(Some).collect();
            adam_step(generator.params_mut(), &grads, adam_g)?;
            adv = Some(star);
            batch
                .par_iter()
                .map(|s| {
                    let mut tape = Tape::new();
                    let gp = bind(&mut tape, generator.params(), false);
                    let props: Vec<Var> = s.proposals.iter().map(|p| tape.constant(p.clone())).collect();
                    let maps = generator.forward(&mut tape, &gp, &props)?;
                    let mixed = tape.mix(maps, &props)?;
                    Ok(tape.value(mixed).clone())
                })
                .collect::<Result<_>>()?
        }
        _ => batch
            .iter()
            .map(|s| {
                s.fixed_input
                    .clone()
                    .ok_or_else(|| Error::Contract("fixed strategy sample without an input".into()))
            })
            .collect::<Result<_>>()?,
    };
    let teacher = if cfg.kd_enabled { state.teacher.as_ref() } else { None };
    let (losses, mut grads) = student_objective(&state.student, teacher, batch, &inputs, cfg.alpha, cfg.kd_enabled)?;
    finite(losses.l_d, "L_D", state.step)?;
    clip_global_norm(&mut grads, cfg.clip_norm);
    state.adam_d.lr = cfg.lr_d * lr_scale;
    let grads: Vec<Option<Tensor>> = grads.into_iter().map(Some).collect();
    adam_step(state.student.params_mut(), &grads, &mut state.adam_d)?;
    state.step += 1;
    let l_d_star_adv = adv.unwrap_or(losses.l_d_star);
    Ok(StepMetrics {
        student: losses,
        l_d_star_adv,
        l_g: -l_d_star_adv,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_d: f64,
    pub l_d_star: f64,
    pub l_dkd: f64,
    pub l_g: f64,
    /// Clean validation PCKh, NaN without a validation set.
    pub clean_metric: f64,
}

pub const HISTORY_HEADER: &str = "epoch,L_D,L_D*,L_Dkd,L_G,clean_metric";

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.l_d, self.l_d_star, self.l_dkd, self.l_g, self.clean_metric
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: PoseNet,
    pub generator: Option<GeneratorNet>,
    pub history: Vec<EpochRecord>,
    /// Teacher weight hash before and after the run.
    pub teacher_hash: Option<(String, String)>,
}

/// Heatmap targets for every sample.
pub fn targets(data: &Dataset, arch: &PoseArch, sigma: f64) -> Result<Vec<Tensor>> {
    data.samples()
        .iter()
        .map(|s| encode_heatmaps(&s.keypoints.joints, arch.heatmap_hw(), (arch.height, arch.width), sigma))
        .collect()
}

/// Full schedule. `on_epoch` sees every record as soon as it exists.
pub fn train(
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &AdvMixConfig,
    student: Option<PoseNet>,
    teacher: Option<PoseNet>,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure!(!data.is_empty(), Validation, "training set is empty");
    let (h, w) = data.image_hw().expect("non-empty");
    let arch = PoseArch::new(h, w, data.joints().expect("non-empty"), cfg.pose_channels)?;
    let arch = student.as_ref().map_or(arch, |s| *s.arch());
    let mut state = TrainState::new(cfg, arch, student, teacher)?;
    let before = state.teacher.as_ref().map(|t| weights_hash(t.params()));
    let policy = if cfg.mix_strategy == MixStrategy::Standard { Vec::new() } else { cfg.augment.policy()? };
    let targets = targets(data, &arch, cfg.heatmap_sigma)?;
    let eval_cfg = EvalConfig::default();
    let mut history = Vec::with_capacity(cfg.total_epochs);
    for epoch in 0..cfg.total_epochs {
        state.epoch = epoch;
        let mut order: Vec<usize> = (0..data.len()).collect();
        derive_stream(cfg.seed, domain::SHUFFLE, epoch as u64).shuffle(&mut order);
        let mut sums = [0.0; 4];
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .par_iter()
                .map(|&i| prepare_sample(&data.samples()[i], &targets[i], cfg, &policy, epoch))
                .collect::<Result<Vec<_>>>()?;
            let m = train_step(&mut state, &batch, cfg)?;
            sums[0] += m.student.l_d;
            sums[1] += m.student.l_d_star;
            sums[2] += m.student.l_dkd;
            sums[3] += m.l_g;
            steps += 1;
        }
        let clean_metric = match val {
            Some(v) if !v.is_empty() => score_dataset(&state.student, v, &eval_cfg)?,
            _ => f64::NAN,
        };
        let n = steps.max(1) as f64;
        let record = EpochRecord {
            epoch,
            l_d: sums[0] / n,
            l_d_star: sums[1] / n,
            l_dkd: sums[2] / n,
            l_g: sums[3] / n,
            clean_metric,
        };
        on_epoch(&record)?;
        history.push(record);
    }
    let after = state.teacher.as_ref().map(|t| weights_hash(t.params()));
    let teacher_hash = before.zip(after);
    if let Some((b, a)) = &teacher_hash {
        ensure!(b == a, Contract, "teacher weights changed during training");
    }
    Ok(TrainOutcome {
        student: state.student,
        generator: state.generator,
        history,
        teacher_hash,
    })
}

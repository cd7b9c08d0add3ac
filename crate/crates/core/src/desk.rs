//! Small end-to-end comparison on synthetic figures: a plainly trained
//! student against AdvMix students with and without distillation, scored
//! on the clean validation split and the full corruption grid.

use serde::{Deserialize, Serialize};

use crate::corruption::CorruptionEngine;
use crate::error::Result;
use crate::eval::{evaluate_grid, mpc, EvalConfig, RobustnessGrid};
use crate::synth::{generate_synthetic_dataset, SyntheticFigureSpec};
use crate::train::{scaled_decay_epochs, train, AdvMixConfig, AugmentConfig, MixStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub figure: SyntheticFigureSpec,
    /// Start the AdvMix students from the plain student's weights rather
    /// than a fresh init.
    pub warm_start: bool,
    /// Shared by all three runs; strategy, distillation and seed are set
    /// per run.
    pub train: AdvMixConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        let epochs = 20;
        Self {
            n_train: 500,
            n_val: 100,
            figure: SyntheticFigureSpec::default(),
            warm_start: true,
            train: AdvMixConfig {
                total_epochs: epochs,
                decay_epochs: scaled_decay_epochs(epochs),
                batch_size: 8,
                lr_d: 3e-3,
                lr_g: 3e-5,
                pose_channels: 8,
                generator_channels: 4,
                augment: AugmentConfig {
                    probability: 0.5,
                    ..AugmentConfig::default()
                },
                ..AdvMixConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskResult {
    pub seed: u64,
    pub standard: RobustnessGrid,
    pub advmix: RobustnessGrid,
    pub advmix_no_kd: RobustnessGrid,
}

impl DeskResult {
    pub fn standard_mpc(&self) -> f64 {
        mpc(&self.standard)
    }

    pub fn advmix_mpc(&self) -> f64 {
        mpc(&self.advmix)
    }
}

/// Train the three students for one seed and score them. The plain run
/// doubles as the distillation teacher and, with `warm_start`, as the
/// starting point of both AdvMix runs.
pub fn run_desk_seed(cfg: &DeskConfig, seed: u64) -> Result<DeskResult> {
    let (train_set, val) = generate_synthetic_dataset(cfg.n_train, cfg.n_val, &cfg.figure, seed)?;
    let run = |strategy: MixStrategy, kd: bool, init, teacher| {
        let c = AdvMixConfig {
            mix_strategy: strategy,
            kd_enabled: kd,
            seed,
            ..cfg.train.clone()
        };
        train(&train_set, Some(&val), &c, init, teacher, &mut |_| Ok(()))
    };
    let standard = run(MixStrategy::Standard, false, None, None)?.student;
    let init = || cfg.warm_start.then(|| standard.clone());
    let advmix = run(MixStrategy::AdvMix, true, init(), Some(standard.clone()))?.student;
    let advmix_no_kd = run(MixStrategy::AdvMix, false, init(), None)?.student;
    let engine = CorruptionEngine::default();
    let eval = EvalConfig { seed, ..EvalConfig::default() };
    Ok(DeskResult {
        seed,
        standard: evaluate_grid(&standard, &val, &engine, &eval)?,
        advmix: evaluate_grid(&advmix, &val, &engine, &eval)?,
        advmix_no_kd: evaluate_grid(&advmix_no_kd, &val, &engine, &eval)?,
    })
}

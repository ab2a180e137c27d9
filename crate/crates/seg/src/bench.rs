//! Synthetic benchmark: both variants trained on clear phantoms, tested on
//! phantoms with one lung hidden under a background-like opacity.

use std::io::Write;

use vimpute_core::dataset::Split;
use vimpute_core::metrics;
use vimpute_core::model::Variant;
use vimpute_core::phantom::generate_phantoms;
use vimpute_core::preprocess::PreprocessConfig;

use crate::config::RunConfig;
use crate::error::Result;
use crate::run::{ablation_config, preprocess_dataset, train_datasets, AUGMENT_ROWS};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub closing_radius: usize,
    /// Minimum test Dice for the proposed model.
    pub dice_floor: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            size: 128,
            n_train: 200,
            n_val: 50,
            n_test: 30,
            learning_rate: 1e-3,
            max_epochs: 6,
            patience: 4,
            closing_radius: 2,
            dice_floor: 0.85,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Baseline trained with standard augmentation only.
    pub baseline_dice: f64,
    /// Proposed model trained with block and diffuse augmentation.
    pub proposed_dice: f64,
}

impl SeedOutcome {
    pub fn passes(&self, dice_floor: f64) -> bool {
        self.proposed_dice >= dice_floor && self.proposed_dice > self.baseline_dice
    }
}

/// Run configuration shared by both arms of the benchmark.
pub fn bench_run_config(cfg: &BenchConfig, seed: u64) -> RunConfig {
    let mut run = RunConfig::for_variant(Variant::Proposed);
    run.seed = seed;
    run.preprocess = PreprocessConfig { target_height: cfg.size, target_width: cfg.size, ..PreprocessConfig::default() };
    run.train.learning_rate = cfg.learning_rate;
    run.train.max_epochs = cfg.max_epochs;
    run.train.patience = cfg.patience;
    run.post.closing_radius = cfg.closing_radius;
    run
}

pub fn phantom_benchmark(cfg: &BenchConfig, seed: u64, log: &mut dyn Write) -> Result<SeedOutcome> {
    let canvas = (cfg.size, cfg.size);
    let base = bench_run_config(cfg, seed);
    let data_seed = seed.wrapping_mul(3);
    let prep = |n, frac, offset: u64, split| -> Result<_> {
        let ds = generate_phantoms(n, canvas, frac, data_seed.wrapping_add(offset))?.with_split(split);
        preprocess_dataset(ds, &base.preprocess)
    };
    let train = prep(cfg.n_train, 0.0, 1, Split::Train)?;
    let val = prep(cfg.n_val, 0.0, 2, Split::Val)?;
    let test = prep(cfg.n_test, 1.0, 3, Split::Test)?;
    let mut score = |variant, row: usize| -> Result<f64> {
        let run = ablation_config(&base, variant, row);
        let _ = writeln!(log, "seed {seed}: {}", run.run_name);
        let trained = train_datasets(&run, &train, &val, None, log)?;
        Ok(metrics::evaluate(&trained.best, &test, &run.post)?.dice_mean)
    };
    let baseline_dice = score(Variant::Baseline, 0)?;
    let proposed_dice = score(Variant::Proposed, AUGMENT_ROWS.len() - 1)?;
    Ok(SeedOutcome { seed, baseline_dice, proposed_dice })
}

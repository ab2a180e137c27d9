//! Run configuration: plain `key = value` text with dotted keys.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; [`RunConfig::to_text`] writes the fully resolved set, which
//! parses back to an identical configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use vimpute_core::augment::AugmentConfig;
use vimpute_core::model::{ModelConfig, Variant};
use vimpute_core::postprocess::{Connectivity, PostprocessConfig};
use vimpute_core::preprocess::PreprocessConfig;
use vimpute_core::train::TrainConfig;

use crate::error::{Error, IoContext, Result};

/// Environment variable naming the default `data.root`.
pub const DATA_ROOT_ENV: &str = "VIMPUTE_DATA_ROOT";

/// Per-purpose offsets added to `run.seed`.
pub const SEED_OFFSET_INIT: u64 = 1;
pub const SEED_OFFSET_TRAIN: u64 = 2;
pub const SEED_OFFSET_SPLIT: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run_name: String,
    pub seed: u64,
    /// Directory with `train/`, `test/` and optionally `val/` datasets.
    pub data_root: PathBuf,
    /// Used to carve validation data out of `train/` when `val/` is absent.
    pub val_fraction: f64,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub post: PostprocessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data_root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
        Self {
            run_name: "run".into(),
            seed: 0,
            data_root,
            val_fraction: 0.25,
            preprocess: PreprocessConfig::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::proposed(),
            train: TrainConfig { checkpoint_dir: "runs".into(), ..TrainConfig::default() },
            post: PostprocessConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::ConfigValue { key: key.into(), value: value.into(), reason: e.to_string() })
}

fn bad(key: &str, value: &str, reason: &str) -> Error {
    Error::ConfigValue { key: key.into(), value: value.into(), reason: reason.into() }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|s| parse(key, s.trim())).collect()
}

impl RunConfig {
    /// Configuration for `variant` with defaults everywhere else.
    pub fn for_variant(variant: Variant) -> Self {
        Self { model: ModelConfig::for_variant(variant), ..Self::default() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigSyntax { line: i + 1, reason: format!("expected `key = value`, got `{line}`") })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::ConfigSyntax { line: 0, reason: format!("override `{kv}` is not `key=value`") })?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let a = &mut self.augment;
        match key {
            "run.name" => {
                let ok = !v.is_empty() && v.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && v != "." && v != "..";
                if !ok {
                    return Err(bad(key, v, "use letters, digits, '-', '_' or '.'"));
                }
                self.run_name = v.into();
            }
            "run.seed" => self.seed = parse(key, v)?,
            "data.root" => self.data_root = PathBuf::from(v),
            "data.val_fraction" => self.val_fraction = parse(key, v)?,
            "preprocess.height" => self.preprocess.target_height = parse(key, v)?,
            "preprocess.width" => self.preprocess.target_width = parse(key, v)?,
            "preprocess.equalize" => self.preprocess.equalize = parse_bool(key, v)?,
            "preprocess.bins" => self.preprocess.n_bins = parse(key, v)?,
            "augment.p_aug" => a.p_aug = parse(key, v)?,
            "augment.standard" => a.enable_standard = parse_bool(key, v)?,
            "augment.block" => a.enable_block = parse_bool(key, v)?,
            "augment.diffuse" => a.enable_diffuse = parse_bool(key, v)?,
            "augment.rotation_max_deg" => a.rotation_max_deg = parse(key, v)?,
            "augment.strauss.beta" => a.strauss.beta = parse(key, v)?,
            "augment.strauss.gamma" => a.strauss.gamma = parse(key, v)?,
            "augment.strauss.radius" => a.strauss.interaction_radius_px = parse(key, v)?,
            "augment.strauss.steps" => a.strauss.mcmc_steps = parse(key, v)?,
            "augment.radius_min" => a.disk_radius_range.0 = parse(key, v)?,
            "augment.radius_max" => a.disk_radius_range.1 = parse(key, v)?,
            "augment.sigma" => a.gaussian_sigma_px = parse(key, v)?,
            "augment.saturation" => a.saturation_level = parse(key, v)?,
            "model.variant" => {
                self.model.variant = Variant::parse(v).ok_or_else(|| bad(key, v, "expected baseline or proposed"))?
            }
            "model.base_features" => self.model.base_features = parse(key, v)?,
            "model.kernel_size" => self.model.kernel_size = parse(key, v)?,
            "model.n_resolutions" => self.model.n_resolutions = parse(key, v)?,
            "model.down_factors" => self.model.down_factors = parse_list(key, v)?,
            "model.latent_dim" => self.model.latent_dim = parse(key, v)?,
            "model.n_1d_conv_layers" => self.model.n_1d_conv_layers = parse(key, v)?,
            "model.norm_groups" => self.model.norm_groups = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.max_epochs" => self.train.max_epochs = parse(key, v)?,
            "train.patience" => self.train.patience = parse(key, v)?,
            "train.checkpoint_dir" => self.train.checkpoint_dir = v.into(),
            "post.threshold" => self.post.threshold = parse(key, v)?,
            "post.min_area_frac" => self.post.min_area_frac = parse(key, v)?,
            "post.closing_radius" => self.post.closing_radius = parse(key, v)?,
            "post.connectivity" => {
                self.post.connectivity = Connectivity::from_count(parse(key, v)?).ok_or_else(|| bad(key, v, "expected 4 or 8"))?
            }
            _ => return Err(Error::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.augment.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.post.validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(bad("data.val_fraction", &self.val_fraction.to_string(), "must lie strictly between 0 and 1"));
        }
        let f = self.model.total_downsampling();
        if self.preprocess.target_height % f != 0 || self.preprocess.target_width % f != 0 {
            return Err(bad(
                "preprocess.height",
                &format!("{}x{}", self.preprocess.target_height, self.preprocess.target_width),
                &format!("working resolution must be divisible by {f}"),
            ));
        }
        Ok(())
    }

    /// Directory owned by this run.
    pub fn run_dir(&self) -> PathBuf {
        Path::new(&self.train.checkpoint_dir).join(&self.run_name)
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(SEED_OFFSET_INIT)
    }

    /// Training configuration with its seed derived from `run.seed`.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed.wrapping_add(SEED_OFFSET_TRAIN), ..self.train.clone() }
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(SEED_OFFSET_SPLIT)
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let a = &self.augment;
        let m = &self.model;
        let factors: Vec<String> = m.down_factors.iter().map(|f| f.to_string()).collect();
        let lines = [
            ("run.name", self.run_name.clone()),
            ("run.seed", self.seed.to_string()),
            ("data.root", self.data_root.display().to_string()),
            ("data.val_fraction", self.val_fraction.to_string()),
            ("preprocess.height", self.preprocess.target_height.to_string()),
            ("preprocess.width", self.preprocess.target_width.to_string()),
            ("preprocess.equalize", self.preprocess.equalize.to_string()),
            ("preprocess.bins", self.preprocess.n_bins.to_string()),
            ("augment.p_aug", a.p_aug.to_string()),
            ("augment.standard", a.enable_standard.to_string()),
            ("augment.block", a.enable_block.to_string()),
            ("augment.diffuse", a.enable_diffuse.to_string()),
            ("augment.rotation_max_deg", a.rotation_max_deg.to_string()),
            ("augment.strauss.beta", a.strauss.beta.to_string()),
            ("augment.strauss.gamma", a.strauss.gamma.to_string()),
            ("augment.strauss.radius", a.strauss.interaction_radius_px.to_string()),
            ("augment.strauss.steps", a.strauss.mcmc_steps.to_string()),
            ("augment.radius_min", a.disk_radius_range.0.to_string()),
            ("augment.radius_max", a.disk_radius_range.1.to_string()),
            ("augment.sigma", a.gaussian_sigma_px.to_string()),
            ("augment.saturation", a.saturation_level.to_string()),
            ("model.variant", m.variant.name().to_string()),
            ("model.base_features", m.base_features.to_string()),
            ("model.kernel_size", m.kernel_size.to_string()),
            ("model.n_resolutions", m.n_resolutions.to_string()),
            ("model.down_factors", factors.join(",")),
            ("model.latent_dim", m.latent_dim.to_string()),
            ("model.n_1d_conv_layers", m.n_1d_conv_layers.to_string()),
            ("model.norm_groups", m.norm_groups.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.learning_rate", self.train.learning_rate.to_string()),
            ("train.max_epochs", self.train.max_epochs.to_string()),
            ("train.patience", self.train.patience.to_string()),
            ("train.checkpoint_dir", self.train.checkpoint_dir.clone()),
            ("post.threshold", self.post.threshold.to_string()),
            ("post.min_area_frac", self.post.min_area_frac.to_string()),
            ("post.closing_radius", self.post.closing_radius.to_string()),
            ("post.connectivity", self.post.connectivity.count().to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

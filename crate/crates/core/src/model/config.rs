use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Which of the two segmenters to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Plain U-Net.
    Baseline,
    /// U-Net whose decoder also receives a latent sample from a variational encoder.
    Proposed,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Proposed => "proposed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Variant::Baseline),
            "proposed" => Some(Variant::Proposed),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Channels of the first stage; doubled after every downsampling.
    pub base_features: usize,
    pub kernel_size: usize,
    /// Number of downsampling operations.
    pub n_resolutions: usize,
    pub down_factors: Vec<usize>,
    pub latent_dim: usize,
    /// Length of the 1-D convolution stack in the variational head.
    pub n_1d_conv_layers: usize,
    /// Upper bound on group-norm groups (the actual count divides the width).
    pub norm_groups: usize,
}

impl ModelConfig {
    pub fn baseline() -> Self {
        Self {
            variant: Variant::Baseline,
            base_features: 24,
            kernel_size: 3,
            n_resolutions: 4,
            down_factors: vec![4, 4, 2, 2],
            latent_dim: 8,
            n_1d_conv_layers: 4,
            norm_groups: 8,
        }
    }

    pub fn proposed() -> Self {
        Self { variant: Variant::Proposed, base_features: 16, ..Self::baseline() }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Baseline => Self::baseline(),
            Variant::Proposed => Self::proposed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.down_factors.len() != self.n_resolutions {
            return Err(config_err(
                "model.down_factors",
                format!("{} factors for {} resolutions", self.down_factors.len(), self.n_resolutions),
            ));
        }
        if self.n_resolutions == 0 {
            return Err(config_err("model.n_resolutions", "must be positive"));
        }
        if self.down_factors.iter().any(|&f| f == 0) {
            return Err(config_err("model.down_factors", "factors must be positive"));
        }
        if self.base_features == 0 {
            return Err(config_err("model.base_features", "must be positive"));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(config_err("model.kernel_size", "must be a positive odd number"));
        }
        if self.latent_dim == 0 {
            return Err(config_err("model.latent_dim", "must be positive"));
        }
        if self.n_1d_conv_layers == 0 {
            return Err(config_err("model.n_1d_conv_layers", "must be positive"));
        }
        if self.norm_groups == 0 {
            return Err(config_err("model.norm_groups", "must be positive"));
        }
        Ok(())
    }

    /// Product of all downsampling factors; input sides must be multiples of it.
    pub fn total_downsampling(&self) -> usize {
        self.down_factors.iter().product()
    }

    /// Channel width of stage `level` (0 = full resolution).
    pub fn width(&self, level: usize) -> usize {
        self.base_features << level
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::baseline().validate().unwrap();
        ModelConfig::proposed().validate().unwrap();
        assert_eq!(ModelConfig::baseline().total_downsampling(), 64);
    }

    #[test]
    fn factor_count_must_match_resolutions() {
        let cfg = ModelConfig { down_factors: vec![2, 2], ..ModelConfig::baseline() };
        assert!(cfg.validate().is_err());
    }
}

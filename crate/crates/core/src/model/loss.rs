//! The segmentation objective: pixelwise binary cross-entropy plus the KL
//! divergence of the diagonal-Gaussian posterior from a standard normal prior.

use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::config::Variant;
use super::network::ForwardOutput;
use crate::error::{Error, Result};
use crate::image::{check_same_dims, BinaryMask, SoftMask};

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Mean and log-variance of the approximate posterior over the latent code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl LatentStats {
    /// Validates lengths and finiteness and clamps the log-variance.
    pub fn new(mu: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mu.len() != logvar.len() {
            return Err(Error::LengthMismatch(mu.len(), logvar.len()));
        }
        if mu.iter().chain(&logvar).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent statistics"));
        }
        let logvar = logvar.into_iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
        Ok(Self { mu, logvar })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// The latent code actually fed to the decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSample {
    pub z: Vec<f64>,
}

/// `KL[N(mu, exp(logvar)) || N(0, I)] = -1/2 sum(1 + logvar - mu^2 - exp(logvar))`.
pub fn kl_divergence(latent: &LatentStats) -> Result<f64> {
    if latent.mu.len() != latent.logvar.len() {
        return Err(Error::LengthMismatch(latent.mu.len(), latent.logvar.len()));
    }
    let mut kl = 0.0;
    for (&m, &lv) in latent.mu.iter().zip(&latent.logvar) {
        if !m.is_finite() || !lv.is_finite() {
            return Err(Error::NonFinite("latent statistics"));
        }
        kl += -0.5 * (1.0 + lv - m * m - Float::exp(lv));
    }
    // Each term is >= 0 analytically; rounding can leave a tiny negative.
    Ok(kl.max(0.0))
}

/// Mean binary cross-entropy between predicted probabilities and a binary target.
pub fn reconstruction_loss(pred: &SoftMask, target: &BinaryMask) -> Result<f64> {
    check_same_dims(pred.dims(), target.dims())?;
    let n = pred.pixels().len() as f64;
    let sum: f64 = pred
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(&p, &s)| {
            let p = (p as f64).clamp(BCE_EPS, 1.0 - BCE_EPS);
            if s != 0 {
                -Float::ln(p)
            } else {
                -Float::ln(1.0 - p)
            }
        })
        .sum();
    Ok(sum / n)
}

/// Reconstruction loss, plus the unit-weight KL term for the proposed variant.
pub fn loss(out: &ForwardOutput, target: &BinaryMask) -> Result<f64> {
    let rec = reconstruction_loss(&out.soft_mask, target)?;
    match out.variant {
        Variant::Baseline => Ok(rec),
        Variant::Proposed => {
            let latent = out.latent.as_ref().ok_or(Error::MissingLatent)?;
            Ok(rec + kl_divergence(latent)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn kl_of_prior_is_zero() {
        let s = LatentStats::new(vec![0.0; 8], vec![0.0; 8]).unwrap();
        assert_eq!(kl_divergence(&s).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_mean_shift() {
        let mut mu = vec![0.0; 8];
        mu[0] = 1.0;
        let s = LatentStats::new(mu, vec![0.0; 8]).unwrap();
        assert!((kl_divergence(&s).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_non_finite() {
        let s = LatentStats { mu: vec![f64::NAN], logvar: vec![0.0] };
        assert_eq!(kl_divergence(&s), Err(Error::NonFinite("latent statistics")));
        assert!(LatentStats::new(vec![f64::INFINITY], vec![0.0]).is_err());
    }

    #[test]
    fn bce_half_is_ln2() {
        let pred = SoftMask::new(2, 3, vec![0.5; 6]).unwrap();
        let target = BinaryMask::from_fn(2, 3, |y, x| (x + y) % 2 == 0);
        assert!((reconstruction_loss(&pred, &target).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_bounded_by_clamp() {
        let target = BinaryMask::from_fn(3, 3, |y, _| y == 1);
        let pred = SoftMask::new(3, 3, target.to_f32()).unwrap();
        let l = reconstruction_loss(&pred, &target).unwrap();
        assert!(l >= 0.0 && l <= -Float::ln(1.0 - BCE_EPS) + 1e-12);
    }

    #[test]
    fn bce_two_by_two_brute_force() {
        let pred = SoftMask::new(2, 2, vec![0.9, 0.1, 0.8, 0.2]).unwrap();
        let target = BinaryMask::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        // Per-pixel terms, summed independently of the implementation.
        let terms = [-(0.9f64.ln()), -(0.9f64.ln()), -(0.8f64.ln()), -(0.8f64.ln())];
        let expect = terms.iter().sum::<f64>() / 4.0;
        let got = reconstruction_loss(&pred, &target).unwrap();
        assert!((got - expect).abs() < 1e-7, "{got} vs {expect}");
        assert!((got - 0.1643).abs() < 5e-5);
    }

    #[test]
    fn bce_dimension_mismatch() {
        let pred = SoftMask::new(2, 2, vec![0.5; 4]).unwrap();
        let target = BinaryMask::empty(2, 3);
        assert!(matches!(reconstruction_loss(&pred, &target), Err(Error::DimensionMismatch { .. })));
    }
}

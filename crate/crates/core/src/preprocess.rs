//! Input canonicalization: resize to the working resolution, then global
//! histogram equalization.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::image::{BinaryMask, GrayImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_height: usize,
    pub target_width: usize,
    pub equalize: bool,
    pub n_bins: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { target_height: 640, target_width: 512, equalize: true, n_bins: 256 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_height == 0 {
            return Err(config_err("preprocess.height", "must be positive"));
        }
        if self.target_width == 0 {
            return Err(config_err("preprocess.width", "must be positive"));
        }
        if self.n_bins < 2 {
            return Err(config_err("preprocess.bins", "need at least 2 bins"));
        }
        Ok(())
    }
}

/// Maps output pixel centres onto input coordinates (half-pixel convention).
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    let s = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    s.clamp(0.0, (src_len - 1) as f64)
}

/// Bilinear resize.
pub fn resize(img: &GrayImage, h: usize, w: usize) -> Result<GrayImage> {
    if h == 0 || w == 0 {
        return Err(config_err("resize", "target dimensions must be positive"));
    }
    let (ih, iw) = img.dims();
    let px = img.pixels();
    let xs: Vec<(usize, usize, f32)> = (0..w)
        .map(|x| {
            let s = source_coord(x, iw, w);
            let x0 = Float::floor(s) as usize;
            (x0, (x0 + 1).min(iw - 1), (s - x0 as f64) as f32)
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let s = source_coord(y, ih, h);
        let y0 = Float::floor(s) as usize;
        let y1 = (y0 + 1).min(ih - 1);
        let fy = (s - y0 as f64) as f32;
        let (r0, r1) = (&px[y0 * iw..(y0 + 1) * iw], &px[y1 * iw..(y1 + 1) * iw]);
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bot - top) * fy);
        }
    }
    GrayImage::from_clamped(h, w, out)
}

/// Nearest-neighbour resize; keeps mask values in `{0, 1}`.
pub fn resize_mask(mask: &BinaryMask, h: usize, w: usize) -> Result<BinaryMask> {
    if h == 0 || w == 0 {
        return Err(config_err("resize", "target dimensions must be positive"));
    }
    let (ih, iw) = mask.dims();
    let nearest = |d: usize, src: usize, dst: usize| (((d as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1);
    let xs: Vec<usize> = (0..w).map(|x| nearest(x, iw, w)).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let sy = nearest(y, ih, h);
        out.extend(xs.iter().map(|&sx| mask.pixels()[sy * iw + sx]));
    }
    BinaryMask::new(h, w, out)
}

fn bin_of(v: f32, n_bins: usize) -> usize {
    ((v * n_bins as f32) as usize).min(n_bins - 1)
}

/// Global histogram equalization: each pixel is replaced by the image's own
/// empirical CDF evaluated at its intensity bin.
pub fn equalize_histogram(img: &GrayImage, n_bins: usize) -> Result<GrayImage> {
    if n_bins < 2 {
        return Err(config_err("preprocess.bins", "need at least 2 bins"));
    }
    let mut hist = vec![0usize; n_bins];
    for &v in img.pixels() {
        hist[bin_of(v, n_bins)] += 1;
    }
    let total = img.pixels().len() as f64;
    let mut acc = 0usize;
    let cdf: Vec<f32> = hist
        .iter()
        .map(|&c| {
            acc += c;
            (acc as f64 / total) as f32
        })
        .collect();
    Ok(img.map_clamped(|_, v| cdf[bin_of(v, n_bins)]))
}

/// Resize followed by optional equalization.
pub fn preprocess_image(img: &GrayImage, cfg: &PreprocessConfig) -> Result<GrayImage> {
    cfg.validate()?;
    let resized = if img.dims() == (cfg.target_height, cfg.target_width) {
        img.clone()
    } else {
        resize(img, cfg.target_height, cfg.target_width)?
    };
    if cfg.equalize {
        equalize_histogram(&resized, cfg.n_bins)
    } else {
        Ok(resized)
    }
}

pub fn preprocess_mask(mask: &BinaryMask, cfg: &PreprocessConfig) -> Result<BinaryMask> {
    if mask.dims() == (cfg.target_height, cfg.target_width) {
        Ok(mask.clone())
    } else {
        resize_mask(mask, cfg.target_height, cfg.target_width)
    }
}

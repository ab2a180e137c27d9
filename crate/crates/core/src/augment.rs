//! Occlusion-simulating augmentation.
//!
//! Three families, each gated by an independent Bernoulli(`p_aug`) draw:
//! standard geometric transforms (applied to image and mask alike), block
//! masking (one image half blanked) and diffused noise (Gaussian-smoothed
//! disks placed by a Strauss point process and added to the image). The
//! occlusion families only ever touch the image: the label still says the
//! lung is there.
//!
//! Pixel-valued parameters are expressed at the 640×512 working resolution
//! and rescaled with the image diagonal for other sizes.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::filter::gaussian_blur;
use crate::image::{BinaryMask, GrayImage};

/// Resolution at which pixel-valued augmentation parameters are specified.
pub const REFERENCE_DIMS: (usize, usize) = (640, 512);

/// Fill value for blanked image halves.
pub const BLOCK_FILL: f32 = 0.0;

/// Pairwise-interaction point process parameters (pixel units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StraussParams {
    /// Intensity per px²; the default yields about six points on a 640×512 window.
    pub beta: f64,
    /// Interaction strength: 0 is hard-core, 1 is Poisson.
    pub gamma: f64,
    pub interaction_radius_px: f64,
    pub mcmc_steps: usize,
}

impl Default for StraussParams {
    fn default() -> Self {
        Self {
            beta: 7.0 / (REFERENCE_DIMS.0 * REFERENCE_DIMS.1) as f64,
            gamma: 0.5,
            interaction_radius_px: 100.0,
            mcmc_steps: 2000,
        }
    }
}

impl StraussParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(config_err("augment.strauss.beta", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(config_err("augment.strauss.gamma", "must lie in [0, 1]"));
        }
        if !(self.interaction_radius_px > 0.0) {
            return Err(config_err("augment.strauss.radius", "must be positive"));
        }
        Ok(())
    }

    /// Same process on a window scaled by `s` in both axes.
    pub fn scaled(&self, s: f64) -> Self {
        Self { beta: self.beta / (s * s), interaction_radius_px: self.interaction_radius_px * s, ..self.clone() }
    }
}

/// Points `(x, y)` in pixel coordinates inside a `(height, width)` window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    pub points: Vec<(f64, f64)>,
    pub window: (usize, usize),
}

impl PointPattern {
    /// Number of unordered pairs closer than `r`.
    pub fn close_pairs(&self, r: f64) -> usize {
        let r2 = r * r;
        let mut n = 0;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                if dist2(*a, *b) < r2 {
                    n += 1;
                }
            }
        }
        n
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

/// Strauss process realization via birth-death Metropolis-Hastings, started
/// from the empty pattern and run for `mcmc_steps` proposals.
///
/// Target density relative to a unit-rate Poisson process:
/// `beta^n * gamma^s(x)`, `s` = number of pairs closer than the interaction radius.
pub fn sample_strauss<R: Rng + ?Sized>(params: &StraussParams, window: (usize, usize), rng: &mut R) -> PointPattern {
    let (h, w) = (window.0 as f64, window.1 as f64);
    let mass = params.beta * h * w;
    let r2 = params.interaction_radius_px * params.interaction_radius_px;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let neighbours = |pts: &[(f64, f64)], p: (f64, f64), skip: Option<usize>| {
        pts.iter().enumerate().filter(|&(j, q)| Some(j) != skip && dist2(p, *q) < r2).count() as i32
    };
    for _ in 0..params.mcmc_steps {
        if rng.random_bool(0.5) {
            let p = (rng.random::<f64>() * w, rng.random::<f64>() * h);
            let t = neighbours(&pts, p, None);
            let ratio = mass * Float::powi(params.gamma, t) / (pts.len() + 1) as f64;
            if rng.random::<f64>() < ratio {
                pts.push(p);
            }
        } else if !pts.is_empty() {
            let i = rng.random_range(0..pts.len());
            let t = neighbours(&pts, pts[i], Some(i));
            let weight = Float::powi(params.gamma, t);
            let u = rng.random::<f64>();
            // ratio = n / (mass * gamma^t); written multiplicatively so gamma = 0 is safe.
            if u * mass * weight < pts.len() as f64 {
                pts.swap_remove(i);
            }
        }
    }
    PointPattern { points: pts, window }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub p_aug: f64,
    pub enable_standard: bool,
    pub enable_block: bool,
    pub enable_diffuse: bool,
    pub rotation_max_deg: f64,
    pub strauss: StraussParams,
    pub disk_radius_range: (f64, f64),
    pub gaussian_sigma_px: f64,
    pub saturation_level: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_aug: 0.9,
            enable_standard: true,
            enable_block: true,
            enable_diffuse: true,
            rotation_max_deg: 10.0,
            strauss: StraussParams::default(),
            disk_radius_range: (20.0, 80.0),
            gaussian_sigma_px: 16.0,
            saturation_level: 0.95,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_aug) {
            return Err(config_err("augment.p_aug", "must lie in [0, 1]"));
        }
        let (lo, hi) = self.disk_radius_range;
        if !(lo > 0.0) || !(hi >= lo) {
            return Err(config_err("augment.radius_min", "need 0 < min <= max"));
        }
        if !(self.gaussian_sigma_px > 0.0) {
            return Err(config_err("augment.sigma", "must be positive"));
        }
        if !(self.rotation_max_deg >= 0.0) {
            return Err(config_err("augment.rotation_max_deg", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.saturation_level) {
            return Err(config_err("augment.saturation", "must lie in [0, 1]"));
        }
        self.strauss.validate()
    }

    /// Only the given families enabled.
    pub fn with_families(&self, standard: bool, block: bool, diffuse: bool) -> Self {
        Self { enable_standard: standard, enable_block: block, enable_diffuse: diffuse, ..self.clone() }
    }
}

/// Linear scale of an image relative to [`REFERENCE_DIMS`].
pub fn reference_scale(dims: (usize, usize)) -> f64 {
    let (rh, rw) = REFERENCE_DIMS;
    Float::sqrt((dims.0 * dims.1) as f64 / (rh * rw) as f64)
}

/// Smoothed disk field for `pattern`, normalized to a maximum of 1.
pub fn noise_field<R: Rng + ?Sized>(
    dims: (usize, usize),
    pattern: &PointPattern,
    radius_range: (f64, f64),
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    let (h, w) = dims;
    let mut field = vec![0.0f64; h * w];
    if pattern.points.is_empty() {
        return field;
    }
    for &(px, py) in &pattern.points {
        let (lo, hi) = radius_range;
        let r = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let (y0, y1) = ((py - r).max(0.0) as usize, Float::ceil(py + r).min(h as f64 - 1.0) as usize);
        let (x0, x1) = ((px - r).max(0.0) as usize, Float::ceil(px + r).min(w as f64 - 1.0) as usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if dist2((x as f64, y as f64), (px, py)) <= r * r {
                    field[y * w + x] = 1.0;
                }
            }
        }
    }
    let mut smooth = gaussian_blur(&field, h, w, sigma);
    let max = smooth.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut smooth {
            *v /= max;
        }
    }
    smooth
}

/// Adds the saturating noise field of `pattern` to `img`.
pub fn diffused_noise_with_pattern<R: Rng + ?Sized>(
    img: &GrayImage,
    cfg: &AugmentConfig,
    pattern: &PointPattern,
    rng: &mut R,
) -> GrayImage {
    if pattern.points.is_empty() {
        return img.clone();
    }
    let s = reference_scale(img.dims());
    let (lo, hi) = cfg.disk_radius_range;
    let field = noise_field(img.dims(), pattern, (lo * s, hi * s), cfg.gaussian_sigma_px * s, rng);
    let sat = cfg.saturation_level;
    img.map_clamped(|i, v| (v as f64 + sat * field[i]) as f32)
}

/// Diffused-noise augmentation: Strauss-placed disks, Gaussian smoothing,
/// saturating addition.
pub fn diffused_noise<R: Rng + ?Sized>(img: &GrayImage, cfg: &AugmentConfig, rng: &mut R) -> GrayImage {
    let s = reference_scale(img.dims());
    let pattern = sample_strauss(&cfg.strauss.scaled(s), img.dims(), rng);
    diffused_noise_with_pattern(img, cfg, &pattern, rng)
}

/// Which half of the image block masking blanks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Half {
    Top,
    Bottom,
    Left,
    Right,
}

impl Half {
    pub const ALL: [Half; 4] = [Half::Top, Half::Bottom, Half::Left, Half::Right];

    /// Whether pixel `(y, x)` of an `h × w` image lies in this half.
    pub fn contains(self, y: usize, x: usize, h: usize, w: usize) -> bool {
        match self {
            Half::Top => y < h / 2,
            Half::Bottom => y >= h / 2,
            Half::Left => x < w / 2,
            Half::Right => x >= w / 2,
        }
    }
}

pub fn block_mask_half(img: &GrayImage, half: Half) -> GrayImage {
    let (h, w) = img.dims();
    img.map_clamped(|i, v| if half.contains(i / w, i % w, h, w) { BLOCK_FILL } else { v })
}

/// Blanks one uniformly chosen half of the image.
pub fn block_mask<R: Rng + ?Sized>(img: &GrayImage, rng: &mut R) -> GrayImage {
    block_mask_half(img, Half::ALL[rng.random_range(0..4)])
}

pub fn flip_horizontal(img: &GrayImage) -> GrayImage {
    let w = img.width();
    let px = img.pixels();
    img.map_clamped(|i, _| px[(i / w) * w + (w - 1 - i % w)])
}

pub fn flip_vertical(img: &GrayImage) -> GrayImage {
    let (h, w) = img.dims();
    let px = img.pixels();
    img.map_clamped(|i, _| px[(h - 1 - i / w) * w + i % w])
}

fn flip_mask(mask: &BinaryMask, horizontal: bool) -> BinaryMask {
    let (h, w) = mask.dims();
    BinaryMask::from_fn(h, w, |y, x| if horizontal { mask.get(y, w - 1 - x) } else { mask.get(h - 1 - y, x) })
}

/// Source coordinates of output pixel `(y, x)` under a rotation by `angle`
/// radians about the image centre.
fn rotate_source(y: usize, x: usize, h: usize, w: usize, (sin, cos): (f64, f64)) -> (f64, f64) {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
    (cy - sin * dx + cos * dy, cx + cos * dx + sin * dy)
}

/// Bilinear rotation; samples falling outside the image read as 0.
pub fn rotate_image(img: &GrayImage, angle: f64) -> GrayImage {
    if angle == 0.0 {
        return img.clone();
    }
    let (h, w) = img.dims();
    let sc = (Float::sin(angle), Float::cos(angle));
    let px = img.pixels();
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            px[y as usize * w + x as usize] as f64
        }
    };
    img.map_clamped(|i, _| {
        let (sy, sx) = rotate_source(i / w, i % w, h, w, sc);
        let (y0, x0) = (Float::floor(sy), Float::floor(sx));
        let (fy, fx) = (sy - y0, sx - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
        let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    })
}

/// Nearest-neighbour rotation; outside samples are background.
pub fn rotate_mask(mask: &BinaryMask, angle: f64) -> BinaryMask {
    if angle == 0.0 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    let sc = (Float::sin(angle), Float::cos(angle));
    BinaryMask::from_fn(h, w, |y, x| {
        let (sy, sx) = rotate_source(y, x, h, w, sc);
        let (ry, rx) = (Float::round(sy), Float::round(sx));
        ry >= 0.0 && rx >= 0.0 && ry < h as f64 && rx < w as f64 && mask.get(ry as usize, rx as usize)
    })
}

/// Random horizontal/vertical flips (each with probability 1/2) and a
/// rotation uniform in `±rotation_max_deg`, applied identically to both.
pub fn standard_augment<R: Rng + ?Sized>(
    img: &GrayImage,
    mask: &BinaryMask,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (GrayImage, BinaryMask) {
    let hflip = rng.random_bool(0.5);
    let vflip = rng.random_bool(0.5);
    let max = cfg.rotation_max_deg.to_radians();
    let angle = if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
    let (mut im, mut m) = (img.clone(), mask.clone());
    if hflip {
        im = flip_horizontal(&im);
        m = flip_mask(&m, true);
    }
    if vflip {
        im = flip_vertical(&im);
        m = flip_mask(&m, false);
    }
    (rotate_image(&im, angle), rotate_mask(&m, angle))
}

/// Which families fired for one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Applied {
    pub standard: bool,
    pub block: bool,
    pub diffuse: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub applied: Applied,
}

/// Applies each enabled family with probability `p_aug`, in the order
/// standard, block, diffuse. Three gate draws are consumed per call whether
/// or not a family is enabled.
pub fn apply<R: Rng + ?Sized>(img: &GrayImage, mask: &BinaryMask, cfg: &AugmentConfig, rng: &mut R) -> Augmented {
    let mut gate = || rng.random::<f64>() < cfg.p_aug;
    let gates = (gate(), gate(), gate());
    let applied = Applied {
        standard: cfg.enable_standard && gates.0,
        block: cfg.enable_block && gates.1,
        diffuse: cfg.enable_diffuse && gates.2,
    };
    let (mut image, mut m) = (img.clone(), mask.clone());
    if applied.standard {
        (image, m) = standard_augment(&image, &m, cfg, rng);
    }
    if applied.block {
        image = block_mask(&image, rng);
    }
    if applied.diffuse {
        image = diffused_noise(&image, cfg, rng);
    }
    Augmented { image, mask: m, applied }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> GrayImage {
        GrayImage::new(h, w, (0..h * w).map(|i| (i % 251) as f32 / 250.0).collect()).unwrap()
    }

    #[test]
    fn hard_core_never_violated() {
        let params = StraussParams { gamma: 0.0, ..StraussParams::default() };
        for seed in 0..20 {
            let p = sample_strauss(&params, (640, 512), &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(p.close_pairs(params.interaction_radius_px), 0);
            assert!(p.points.iter().all(|&(x, y)| (0.0..512.0).contains(&x) && (0.0..640.0).contains(&y)));
        }
    }

    #[test]
    fn strauss_is_deterministic() {
        let params = StraussParams::default();
        let a = sample_strauss(&params, (640, 512), &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_strauss(&params, (640, 512), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn default_strauss_gives_about_six_points() {
        let params = StraussParams::default();
        let n: usize = (0..400)
            .map(|s| sample_strauss(&params, (640, 512), &mut ChaCha8Rng::seed_from_u64(s)).points.len())
            .sum();
        let mean = n as f64 / 400.0;
        assert!((5.0..=7.0).contains(&mean), "{mean}");
    }

    #[test]
    fn empty_pattern_leaves_image_unchanged() {
        let img = ramp(32, 32);
        let pat = PointPattern { points: vec![], window: (32, 32) };
        let out = diffused_noise_with_pattern(&img, &AugmentConfig::default(), &pat, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out, img);
    }

    #[test]
    fn single_disk_on_black_peaks_at_saturation() {
        let img = GrayImage::filled(128, 128, 0.0).unwrap();
        let cfg = AugmentConfig::default();
        let pat = PointPattern { points: vec![(64.0, 64.0)], window: (128, 128) };
        let out = diffused_noise_with_pattern(&img, &cfg, &pat, &mut ChaCha8Rng::seed_from_u64(1));
        let centre = out.get(64, 64) as f64;
        assert!(centre >= 0.9 * cfg.saturation_level, "{centre}");
    }

    #[test]
    fn diffused_noise_is_monotone_and_bounded() {
        let img = ramp(64, 64);
        for seed in 0..5 {
            let out = diffused_noise(&img, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed));
            for (a, b) in img.pixels().iter().zip(out.pixels()) {
                assert!(b >= a && (0.0..=1.0).contains(b));
            }
            assert!(out.mean() >= img.mean());
        }
    }

    #[test]
    fn block_mask_covers_half_the_pixels() {
        let img = GrayImage::filled(640, 512, 0.5).unwrap();
        for half in Half::ALL {
            let out = block_mask_half(&img, half);
            assert_eq!(out.pixels().iter().filter(|&&v| v == BLOCK_FILL).count(), 640 * 512 / 2);
        }
        let odd = GrayImage::filled(9, 11, 0.5).unwrap();
        for half in Half::ALL {
            let n = block_mask_half(&odd, half).pixels().iter().filter(|&&v| v == BLOCK_FILL).count();
            let expected = match half {
                Half::Top => 4 * 11,
                Half::Bottom => 5 * 11,
                Half::Left => 9 * 5,
                Half::Right => 9 * 6,
            };
            assert_eq!(n, expected, "{half:?}");
        }
    }

    #[test]
    fn block_mask_fixed_seed_and_fixed_point() {
        let img = ramp(16, 16);
        let a = block_mask(&img, &mut ChaCha8Rng::seed_from_u64(5));
        let b = block_mask(&img, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let black = GrayImage::filled(16, 16, BLOCK_FILL).unwrap();
        assert_eq!(block_mask(&black, &mut ChaCha8Rng::seed_from_u64(5)), black);
    }

    #[test]
    fn flips_are_involutions_and_zero_rotation_is_identity() {
        let img = ramp(12, 10);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
        assert_eq!(flip_vertical(&flip_vertical(&img)), img);
        assert_eq!(rotate_image(&img, 0.0), img);
        let m = BinaryMask::from_fn(12, 10, |y, x| y < x);
        assert_eq!(rotate_mask(&m, 0.0), m);
    }

    #[test]
    fn standard_augment_keeps_mask_binary() {
        let img = ramp(32, 32);
        let m = BinaryMask::from_fn(32, 32, |y, x| (8..24).contains(&y) && (4..20).contains(&x));
        for seed in 0..10 {
            let (_, out) = standard_augment(&img, &m, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(out.pixels().iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn gating_extremes() {
        let img = ramp(32, 32);
        let m = BinaryMask::from_fn(32, 32, |y, _| y > 10);
        let off = AugmentConfig { p_aug: 0.0, ..AugmentConfig::default() };
        let out = apply(&img, &m, &off, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((out.image, out.mask), (img.clone(), m.clone()));

        let block_only = AugmentConfig { p_aug: 1.0, ..AugmentConfig::default() }.with_families(false, true, false);
        for seed in 0..10 {
            let out = apply(&img, &m, &block_only, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(out.applied.block);
            let blanked = Half::ALL.iter().any(|&h| {
                (0..32 * 32).all(|i| !h.contains(i / 32, i % 32, 32, 32) || out.image.pixels()[i] == BLOCK_FILL)
            });
            assert!(blanked);
            assert_eq!(out.mask, m);
        }
    }

    #[test]
    fn occlusion_families_never_touch_the_mask() {
        let img = ramp(64, 64);
        let m = BinaryMask::from_fn(64, 64, |y, x| (y as i32 - 32).pow(2) + (x as i32 - 20).pow(2) < 150);
        let cfg = AugmentConfig { p_aug: 1.0, ..AugmentConfig::default() }.with_families(false, true, true);
        for seed in 0..5 {
            assert_eq!(apply(&img, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).mask, m);
        }
    }
}

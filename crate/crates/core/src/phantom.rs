//! Synthetic chest-radiograph phantoms: two dark elliptical lung fields on a
//! brighter textured background, separated by a bright mediastinal band.
//! Optionally one lung is washed out by a smooth opacity.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample, Split};
use crate::error::{config_err, Result};
use crate::filter::gaussian_blur;
use crate::image::{BinaryMask, GrayImage};

const BACKGROUND: f64 = 0.6;
const LUNG: f64 = 0.22;
const MEDIASTINUM_GAIN: f64 = 0.25;
const TEXTURE_AMPLITUDE: f64 = 0.08;
const OCCLUSION_MARGIN: f64 = 0.02;

/// Rotated ellipse in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    /// Rotation in radians.
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        self.level(y, x) <= 1.0
    }

    /// Squared normalized radius: 1 on the boundary.
    pub fn level(&self, y: f64, x: f64) -> f64 {
        let (s, c) = (Float::sin(self.angle), Float::cos(self.angle));
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u * u / (self.rx * self.rx) + v * v / (self.ry * self.ry)
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extent(&self) -> (f64, f64) {
        let (s, c) = (Float::sin(self.angle), Float::cos(self.angle));
        let hy = Float::sqrt(self.ry * self.ry * c * c + self.rx * self.rx * s * s);
        let hx = Float::sqrt(self.rx * self.rx * c * c + self.ry * self.ry * s * s);
        (hy, hx)
    }
}

/// Opacity raising one lung toward background intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    /// Index into `lung_ellipses`.
    pub lung: usize,
    pub cy: f64,
    pub cx: f64,
    /// Gap between the raised lung and the local background at the bump peak.
    pub margin: f64,
    /// Width of the flat-topped bump `exp(-(r / sigma)^4 / 2)`, with `r`
    /// measured in units of the lung's semi-axes.
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub canvas: (usize, usize),
    pub lung_ellipses: [Ellipse; 2],
    pub background_texture_seed: u64,
    pub occlusion: Option<Occlusion>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.canvas;
        if h < 8 || w < 8 {
            return Err(config_err("phantom.canvas", "sides must be at least 8 px"));
        }
        for e in &self.lung_ellipses {
            if !(e.rx > 0.0 && e.ry > 0.0) {
                return Err(config_err("phantom.ellipse", "semi-axes must be positive"));
            }
            let (hy, hx) = e.half_extent();
            if e.cy - hy < 0.0 || e.cx - hx < 0.0 || e.cy + hy > (h - 1) as f64 || e.cx + hx > (w - 1) as f64 {
                return Err(config_err("phantom.ellipse", "ellipse leaves the canvas"));
            }
        }
        if let Some(o) = &self.occlusion {
            if o.lung > 1 || !(o.sigma > 0.0) || !(o.margin >= 0.0) {
                return Err(config_err("phantom.occlusion", "need lung index 0 or 1, positive sigma, non-negative margin"));
            }
        }
        Ok(())
    }

    /// Union of the two ellipse interiors sampled at pixel centres.
    pub fn mask(&self) -> BinaryMask {
        let (h, w) = self.canvas;
        let [a, b] = self.lung_ellipses;
        BinaryMask::from_fn(h, w, |y, x| {
            let (y, x) = (y as f64, x as f64);
            a.contains(y, x) || b.contains(y, x)
        })
    }

    pub fn render(&self) -> Result<GrayImage> {
        self.validate()?;
        let (h, w) = self.canvas;
        let texture = texture_field(self.canvas, self.background_texture_seed);
        let [a, b] = self.lung_ellipses;
        let mid = 0.5 * (a.cx + b.cx);
        let spread = 0.5 * (b.cx - a.cx).abs().max(1.0) * 0.35;
        let mut px = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (fy, fx) = (y as f64, x as f64);
                let t = texture[y * w + x];
                let d = (fx - mid) / spread;
                let band = MEDIASTINUM_GAIN * Float::exp(-0.5 * d * d);
                let bg = BACKGROUND + band + t;
                let lung = self.lung_ellipses.iter().position(|e| e.contains(fy, fx));
                let v = match lung {
                    None => bg,
                    Some(i) => {
                        let base = LUNG + 0.5 * t;
                        match &self.occlusion {
                            Some(o) if o.lung == i => {
                                let e = &self.lung_ellipses[i];
                                let (dy, dx) = ((fy - o.cy) / e.ry, (fx - o.cx) / e.rx);
                                let r2 = (dy * dy + dx * dx) / (o.sigma * o.sigma);
                                let bump = Float::exp(-0.5 * r2 * r2);
                                base + (bg - o.margin - base).max(0.0) * bump
                            }
                            _ => base,
                        }
                    }
                };
                px.push(v as f32);
            }
        }
        GrayImage::from_clamped(h, w, px)
    }
}

/// Smoothed uniform noise scaled to `±TEXTURE_AMPLITUDE`.
fn texture_field(canvas: (usize, usize), seed: u64) -> Vec<f64> {
    let (h, w) = canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sigma = (h.min(w) as f64 / 32.0).max(1.5);
    let mut f = gaussian_blur(&noise, h, w, sigma);
    let peak = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut f {
            *v *= TEXTURE_AMPLITUDE / peak;
        }
    }
    f
}

/// Random lung geometry for a canvas; always passes [`PhantomSpec::validate`].
pub fn random_spec<R: Rng + ?Sized>(canvas: (usize, usize), occluded: bool, rng: &mut R) -> PhantomSpec {
    let (h, w) = (canvas.0 as f64, canvas.1 as f64);
    let mid = w * (0.5 + rng.random_range(-0.03..0.03));
    let gap = w * rng.random_range(0.10..0.16);
    let cy = h * rng.random_range(0.45..0.55);
    let angle = rng.random_range(0.0..0.15);
    let mut lungs = [Ellipse { cy, cx: 0.0, ry: 0.0, rx: 0.0, angle: 0.0 }; 2];
    for (i, side) in [-1.0, 1.0].into_iter().enumerate() {
        let scale = rng.random_range(0.9..1.05);
        let mut e = Ellipse {
            cy: cy + h * rng.random_range(-0.02..0.02),
            cx: 0.0,
            ry: h * rng.random_range(0.28..0.35) * scale,
            rx: w * rng.random_range(0.12..0.16) * scale,
            angle: -side * angle,
        };
        let (_, hx) = e.half_extent();
        e.cx = mid + side * (0.5 * gap + hx);
        lungs[i] = e;
    }
    let lung = rng.random_range(0..2);
    let e = lungs[lung];
    let occlusion = Occlusion {
        lung,
        cy: e.cy + e.ry * rng.random_range(-0.2..0.2),
        cx: e.cx + e.rx * rng.random_range(-0.2..0.2),
        sigma: rng.random_range(1.5..1.8),
        margin: OCCLUSION_MARGIN,
    };
    PhantomSpec {
        canvas,
        lung_ellipses: lungs,
        background_texture_seed: rng.random(),
        occlusion: occluded.then_some(occlusion),
    }
}

/// `n` phantoms; the first `round(n * occluded_fraction)` entries of a
/// seeded permutation are occluded. Geometry does not depend on the fraction.
pub fn generate_phantoms(n: usize, canvas: (usize, usize), occluded_fraction: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(config_err("phantoms.n", "need at least one phantom"));
    }
    if !(0.0..=1.0).contains(&occluded_fraction) {
        return Err(config_err("phantoms.occluded_fraction", "must lie in [0, 1]"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    pick.set_stream(u64::MAX);
    order.shuffle(&mut pick);
    let n_occ = Float::round(n as f64 * occluded_fraction) as usize;
    let mut occluded = alloc::vec![false; n];
    for &i in &order[..n_occ] {
        occluded[i] = true;
    }
    let items = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let spec = random_spec(canvas, occluded[i], &mut rng);
            Sample::new(format!("phantom_{i:04}"), spec.render()?, spec.mask())
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(items, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_specs_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for canvas in [(128, 128), (64, 96), (640, 512)] {
            for _ in 0..50 {
                random_spec(canvas, true, &mut rng).validate().unwrap();
            }
        }
    }

    #[test]
    fn fraction_out_of_range_is_rejected() {
        assert!(generate_phantoms(3, (32, 32), 1.5, 0).is_err());
        assert!(generate_phantoms(3, (32, 32), -0.1, 0).is_err());
    }

    #[test]
    fn occluded_count_is_rounded_fraction() {
        let a = generate_phantoms(10, (32, 32), 0.0, 4).unwrap();
        let b = generate_phantoms(10, (32, 32), 0.3, 4).unwrap();
        let changed = a.items().iter().zip(b.items()).filter(|(x, y)| x.image != y.image).count();
        assert_eq!(changed, 3);
        for (x, y) in a.items().iter().zip(b.items()) {
            assert_eq!(x.mask, y.mask);
        }
    }

    #[test]
    fn lungs_darker_than_background() {
        let ds = generate_phantoms(4, (128, 128), 0.0, 1).unwrap();
        for s in ds.items() {
            let (mut inside, mut outside, mut ni, mut no) = (0.0, 0.0, 0, 0);
            for (v, m) in s.image.pixels().iter().zip(s.mask.pixels()) {
                if *m == 1 {
                    inside += *v as f64;
                    ni += 1;
                } else {
                    outside += *v as f64;
                    no += 1;
                }
            }
            assert!(inside / (ni as f64) + 0.2 < outside / (no as f64));
        }
    }
}

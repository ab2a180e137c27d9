//! Separable Gaussian smoothing of real-valued fields.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

/// Normalized 1-D Gaussian kernel truncated at `3 * sigma`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = Float::ceil(3.0 * sigma).max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            Float::exp(-0.5 * d * d / (sigma * sigma))
        })
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Gaussian blur with zero extension outside the field.
pub fn gaussian_blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(field.len(), h * w);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &field[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sx = x as isize + i as isize - r;
                if sx >= 0 && (sx as usize) < w {
                    acc += kv * row[sx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (i, kv) in k.iter().enumerate() {
            let sy = y as isize + i as isize - r;
            if sy < 0 || sy as usize >= h {
                continue;
            }
            let src = &tmp[sy as usize * w..(sy as usize + 1) * w];
            for (o, s) in out[y * w..(y + 1) * w].iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    out
}

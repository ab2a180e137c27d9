//! Soft mask to clean binary mask: threshold, drop small connected
//! components, then close small holes with a disk.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::image::{BinaryMask, SoftMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub threshold: f32,
    /// Smallest kept component, as a fraction of the image area.
    pub min_area_frac: f64,
    pub closing_radius: usize,
    pub connectivity: Connectivity,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { threshold: 0.5, min_area_frac: 1.0 / 64.0, closing_radius: 10, connectivity: Connectivity::Four }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(config_err("post.threshold", "must lie strictly between 0 and 1"));
        }
        if !(0.0..=1.0).contains(&self.min_area_frac) {
            return Err(config_err("post.min_area_frac", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Minimum component area in pixels for an image of `dims`.
    pub fn min_area(&self, dims: (usize, usize)) -> usize {
        Float::ceil(self.min_area_frac * (dims.0 * dims.1) as f64) as usize
    }
}

/// Pixel is foreground iff its probability strictly exceeds `threshold`.
pub fn binarize(soft: &SoftMask, threshold: f32) -> BinaryMask {
    let (h, w) = soft.dims();
    let px = soft.pixels();
    BinaryMask::from_fn(h, w, |y, x| px[y * w + x] > threshold)
}

/// Connected-component labels (0 = background, components numbered from 1)
/// and the area of each component (`areas[k - 1]` for label `k`).
pub fn label_components(mask: &BinaryMask, conn: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let (h, w) = mask.dims();
    let px = mask.pixels();
    let mut labels = vec![0u32; h * w];
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if px[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut area = 0;
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for &(dy, dx) in conn.offsets() {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if px[j] == 1 && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// Clears every foreground component with fewer than `min_area` pixels.
pub fn remove_small_components(mask: &BinaryMask, min_area: usize, conn: Connectivity) -> BinaryMask {
    let (labels, areas) = label_components(mask, conn);
    let (h, w) = mask.dims();
    BinaryMask::from_fn(h, w, |y, x| {
        let l = labels[y * w + x];
        l != 0 && areas[l as usize - 1] >= min_area
    })
}

/// Half-widths of the rasterized disk `{dx² + dy² ≤ r²}` per row offset `dy = -r..=r`.
fn disk_spans(r: usize) -> Vec<usize> {
    let r = r as i64;
    (-r..=r)
        .map(|dy| {
            let rem = r * r - dy * dy;
            let mut k = Float::sqrt(rem as f64) as i64;
            while k * k > rem {
                k -= 1;
            }
            while (k + 1) * (k + 1) <= rem {
                k += 1;
            }
            k as usize
        })
        .collect()
}

/// Row-wise prefix sums of a `h × w` binary field.
fn row_prefix(field: &[u8], h: usize, w: usize) -> Vec<u32> {
    let mut p = vec![0u32; h * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            p[y * (w + 1) + x + 1] = p[y * (w + 1) + x] + field[y * w + x] as u32;
        }
    }
    p
}

/// `dilate = true`: any foreground under the disk; otherwise all foreground.
/// Pixels outside the field count as background.
fn disk_filter(field: &[u8], h: usize, w: usize, r: usize, dilate: bool) -> Vec<u8> {
    let spans = disk_spans(r);
    let prefix = row_prefix(field, h, w);
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut hit = !dilate;
            for (j, &k) in spans.iter().enumerate() {
                let yy = y as isize + j as isize - r as isize;
                let (lo, hi) = (x as isize - k as isize, x as isize + k as isize);
                let full = (hi - lo + 1) as u32;
                let sum = if yy < 0 || yy >= h as isize {
                    0
                } else {
                    let row = &prefix[yy as usize * (w + 1)..(yy as usize + 1) * (w + 1)];
                    let (a, b) = (lo.max(0) as usize, (hi + 1).min(w as isize) as usize);
                    row[b] - row[a]
                };
                if dilate && sum > 0 {
                    hit = true;
                    break;
                }
                if !dilate && sum < full {
                    hit = false;
                    break;
                }
            }
            out[y * w + x] = hit as u8;
        }
    }
    out
}

/// Dilation followed by erosion with a disk of `radius`. Computed on a
/// canvas padded by `radius` so the result matches closing in the
/// unbounded plane, cropped back to the image.
pub fn morphological_close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    let (ph, pw) = (h + 2 * radius, w + 2 * radius);
    let mut canvas = vec![0u8; ph * pw];
    for y in 0..h {
        canvas[(y + radius) * pw + radius..(y + radius) * pw + radius + w]
            .copy_from_slice(&mask.pixels()[y * w..(y + 1) * w]);
    }
    let dilated = disk_filter(&canvas, ph, pw, radius, true);
    let closed = disk_filter(&dilated, ph, pw, radius, false);
    BinaryMask::from_fn(h, w, |y, x| closed[(y + radius) * pw + x + radius] == 1)
}

/// Threshold, component removal and closing, in that order. Closing can
/// leave detached slivers in narrow gaps between regions; a second size
/// filter drops them. Components holding a retained region are never
/// affected, since they already meet the size bound.
pub fn postprocess(soft: &SoftMask, cfg: &PostprocessConfig) -> BinaryMask {
    let bin = binarize(soft, cfg.threshold);
    let min_area = cfg.min_area(soft.dims());
    let kept = remove_small_components(&bin, min_area, cfg.connectivity);
    let closed = morphological_close(&kept, cfg.closing_radius);
    remove_small_components(&closed, min_area, cfg.connectivity)
}

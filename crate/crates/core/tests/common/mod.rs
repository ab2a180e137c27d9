//! Reference implementations used only by tests. None of them call into the
//! library code they check.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- KL

fn log_normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((std::f64::consts::TAU * var).ln() + (x - mu) * (x - mu) / var)
}

/// Acklam's rational approximation of the standard normal quantile
/// (relative error below 1.2e-9).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2, 1.383577518672690e2, -3.066479806614716e1, 2.506628277459239];
    const B: [f64; 5] = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838, -2.549732539343734, 4.374664141464968, 2.938163982698783];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let tail = |q: f64| (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0);
    if p < 0.02425 {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - 0.02425 {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Monte-Carlo `E_q[log q(z) - log p(z)]` for `q = N(mu, diag(exp(logvar)))`,
/// `p = N(0, I)`, from `n` Latin-hypercube samples: each coordinate's
/// standard-normal noise takes one draw from each of `n` equal-probability
/// strata, in an independently shuffled order.
pub fn kl_monte_carlo<R: Rng>(mu: &[f64], logvar: &[f64], n: usize, rng: &mut R) -> f64 {
    let mut total = 0.0;
    let mut strata: Vec<usize> = (0..n).collect();
    for k in 0..mu.len() {
        let sd = (0.5 * logvar[k]).exp();
        strata.shuffle(rng);
        for &j in &strata {
            let u = (j as f64 + rng.random::<f64>()) / n as f64;
            let z = mu[k] + sd * inverse_normal_cdf(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
            total += log_normal_pdf(z, mu[k], sd * sd) - log_normal_pdf(z, 0.0, 1.0);
        }
    }
    total / n as f64
}

// ---------------------------------------------------------------- point processes

/// Knuth's multiplication method.
pub fn poisson_count<R: Rng>(lambda: f64, rng: &mut R) -> usize {
    let limit = (-lambda).exp();
    let mut k = 0;
    let mut p: f64 = rng.random();
    while p > limit {
        k += 1;
        p *= rng.random::<f64>();
    }
    k
}

/// Homogeneous Poisson process with intensity `beta` per px² on `(h, w)`.
pub fn poisson_pattern<R: Rng>(beta: f64, window: (usize, usize), rng: &mut R) -> Vec<(f64, f64)> {
    let (h, w) = (window.0 as f64, window.1 as f64);
    let n = poisson_count(beta * h * w, rng);
    (0..n).map(|_| (rng.random::<f64>() * w, rng.random::<f64>() * h)).collect()
}

pub fn pairs_closer_than(points: &[(f64, f64)], r: f64) -> usize {
    let mut n = 0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
            if (dx * dx + dy * dy).sqrt() < r {
                n += 1;
            }
        }
    }
    n
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

// ---------------------------------------------------------------- binomial

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

pub fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// Central acceptance interval `[lo, hi]` with at most `alpha / 2` of the
/// exact binomial mass on each side outside it.
pub fn binomial_interval(n: usize, p: f64, alpha: f64) -> (usize, usize) {
    let pmf: Vec<f64> = (0..=n).map(|k| binomial_pmf(n, k, p)).collect();
    let mut lo = 0;
    let mut below = 0.0;
    while below + pmf[lo] <= alpha / 2.0 {
        below += pmf[lo];
        lo += 1;
    }
    let mut hi = n;
    let mut above = 0.0;
    while above + pmf[hi] <= alpha / 2.0 {
        above += pmf[hi];
        hi -= 1;
    }
    (lo, hi)
}

// ---------------------------------------------------------------- Student t

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Two-sided tail `P(|T| >= |t|)` for Student's t with `df` degrees of
/// freedom. With `x = sqrt(df) tan(theta)` the density becomes
/// proportional to `cos(theta)^(df - 1)` on `[0, pi/2)`, which both
/// integrals below evaluate by quadrature.
pub fn t_two_sided_quadrature(t: f64, df: f64) -> f64 {
    let f = |th: f64| th.cos().powf(df - 1.0);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let theta0 = (t.abs() / df.sqrt()).atan();
    let n = 200_000;
    simpson(f, theta0, half_pi, n) / simpson(f, 0.0, half_pi, n)
}

pub fn paired_t_statistic(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
    m / (sd / n.sqrt())
}

// ---------------------------------------------------------------- masks

/// Connected components of pixels equal to `value`, by breadth-first flood fill.
pub fn flood_components(bits: &[u8], h: usize, w: usize, value: u8, eight: bool) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if seen[start] || bits[start] != value {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([(start / w, start % w)]);
        let mut comp = Vec::new();
        while let Some((y, x)) = queue.pop_front() {
            comp.push((y, x));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dy == 0 && dx == 0) || (!eight && dy != 0 && dx != 0) {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && bits[j] == value {
                        seen[j] = true;
                        queue.push_back((ny as usize, nx as usize));
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Offsets of the digital disk `dx² + dy² <= r²`.
pub fn disk_offsets(r: usize) -> Vec<(i64, i64)> {
    let r = r as i64;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                v.push((dy, dx));
            }
        }
    }
    v
}

fn on(bits: &[u8], h: usize, w: usize, y: i64, x: i64) -> bool {
    y >= 0 && x >= 0 && y < h as i64 && x < w as i64 && bits[y as usize * w + x as usize] != 0
}

/// Dilation then erosion by the disk, straight from the definitions, in the
/// unbounded plane (everything outside the raster is background).
pub fn close_direct(bits: &[u8], h: usize, w: usize, r: usize) -> Vec<u8> {
    let disk = disk_offsets(r);
    let dilated = |y: i64, x: i64| disk.iter().any(|&(dy, dx)| on(bits, h, w, y + dy, x + dx));
    let mut out = vec![0u8; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            out[y as usize * w + x as usize] = disk.iter().all(|&(dy, dx)| dilated(y + dy, x + dx)) as u8;
        }
    }
    out
}

/// Every 4-connected background component contains the in-raster part of
/// some radius-`r` disk translate that avoids the foreground entirely
/// (outside the raster counts as background). A hole that fails this is one
/// a closing of radius `r` should have filled.
pub fn background_components_hold_disks(bits: &[u8], h: usize, w: usize, r: usize) -> bool {
    let disk = disk_offsets(r);
    let ri = r as i64;
    let mut covered = vec![false; h * w];
    for cy in -ri..(h as i64 + ri) {
        for cx in -ri..(w as i64 + ri) {
            if disk.iter().all(|&(dy, dx)| !on(bits, h, w, cy + dy, cx + dx)) {
                for &(dy, dx) in &disk {
                    let (y, x) = (cy + dy, cx + dx);
                    if y >= 0 && x >= 0 && y < h as i64 && x < w as i64 {
                        covered[y as usize * w + x as usize] = true;
                    }
                }
            }
        }
    }
    flood_components(bits, h, w, 0, false).iter().all(|c| c.iter().any(|&(y, x)| covered[y * w + x]))
}

/// Random test masks: a few rectangles and disks, salt noise and pinholes.
pub fn random_mask_bits<R: Rng>(h: usize, w: usize, rng: &mut R) -> Vec<u8> {
    let mut bits = vec![0u8; h * w];
    for _ in 0..rng.random_range(0..6) {
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (bh, bw) = (rng.random_range(1..h / 2), rng.random_range(1..w / 2));
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                bits[y * w + x] = 1;
            }
        }
    }
    for _ in 0..rng.random_range(0..6) {
        let (cy, cx) = (rng.random_range(0..h) as i64, rng.random_range(0..w) as i64);
        let r = rng.random_range(1..h as i64 / 3);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if (y - cy).pow(2) + (x - cx).pow(2) <= r * r {
                    bits[y as usize * w + x as usize] = 1;
                }
            }
        }
    }
    let salt = rng.random_range(0.0..0.08);
    let pepper = rng.random_range(0.0..0.08);
    for b in bits.iter_mut() {
        if rng.random_bool(salt) {
            *b = 1;
        } else if *b == 1 && rng.random_bool(pepper) {
            *b = 0;
        }
    }
    bits
}

//! Layer kernels with hand-written backward passes.
//!
//! Layers own no storage: weights live in one flat parameter vector and each
//! layer records its offsets into it. Backward functions accumulate into a
//! gradient vector of the same layout.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{gemm, MatRef, Real, Tensor};

/// Upper bound on the im2col scratch buffer, in elements.
const COL_BUDGET: usize = 1 << 21;

/// 2-D convolution, stride 1, "same" zero padding (odd kernels).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Conv2d {
    /// Lays out a new layer at `*offset` and advances it past the layer.
    pub fn alloc(offset: &mut usize, cin: usize, cout: usize, kh: usize, kw: usize) -> Self {
        let weight = *offset;
        let bias = weight + cout * cin * kh * kw;
        *offset = bias + cout;
        Self { cin, cout, kh, kw, weight, bias }
    }

    pub fn n_params(&self) -> usize {
        self.cout * self.fan_in() + self.cout
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn weight_range(&self) -> core::ops::Range<usize> {
        self.weight..self.bias
    }

    pub fn bias_range(&self) -> core::ops::Range<usize> {
        self.bias..self.bias + self.cout
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    fn band_rows(&self, h: usize, w: usize) -> usize {
        (COL_BUDGET / (self.fan_in() * w).max(1)).clamp(1, h)
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let k = self.fan_in();
        let mut y = Tensor::zeros(self.cout, h, w);
        for (co, b) in p[self.bias_range()].iter().enumerate() {
            y.channel_mut(co).fill(*b);
        }
        let wmat = MatRef::row_major(&p[self.weight_range()], self.cout, k);
        if self.is_pointwise() {
            gemm(wmat, MatRef::row_major(&x.data, k, hw), T::one(), &mut y.data, hw);
            return y;
        }
        let band = self.band_rows(h, w);
        let mut col = vec![T::zero(); k * band * w];
        let mut r0 = 0;
        while r0 < h {
            let rows = band.min(h - r0);
            let n = rows * w;
            self.im2col(x, r0, rows, &mut col[..k * n]);
            gemm(wmat, MatRef::row_major(&col[..k * n], k, n), T::one(), &mut y.data[r0 * w..], hw);
            r0 += rows;
        }
        y
    }

    /// Accumulates weight/bias gradients into `g`; returns the input gradient
    /// when `need_dx` is set.
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let k = self.fan_in();
        for co in 0..self.cout {
            let s: T = dy.channel(co).iter().copied().sum();
            g[self.bias + co] += s;
        }
        let wmat = MatRef::row_major(&p[self.weight_range()], self.cout, k);
        let mut dx = need_dx.then(|| Tensor::zeros(self.cin, h, w));
        if self.is_pointwise() {
            let dymat = MatRef::row_major(&dy.data, self.cout, hw);
            let xmat = MatRef::row_major(&x.data, k, hw);
            gemm(dymat, xmat.t(), T::one(), &mut g[self.weight_range()], k);
            if let Some(dx) = dx.as_mut() {
                gemm(wmat.t(), dymat, T::zero(), &mut dx.data, hw);
            }
            return dx;
        }
        let band = self.band_rows(h, w);
        let mut col = vec![T::zero(); k * band * w];
        let mut r0 = 0;
        while r0 < h {
            let rows = band.min(h - r0);
            let n = rows * w;
            let dyband = MatRef { data: &dy.data[r0 * w..], rows: self.cout, cols: n, rs: hw, cs: 1 };
            self.im2col(x, r0, rows, &mut col[..k * n]);
            gemm(dyband, MatRef::row_major(&col[..k * n], k, n).t(), T::one(), &mut g[self.weight_range()], k);
            if let Some(dx) = dx.as_mut() {
                gemm(wmat.t(), dyband, T::zero(), &mut col[..k * n], n);
                self.col2im(&col[..k * n], r0, rows, dx);
            }
            r0 += rows;
        }
        dx
    }

    fn im2col<T: Real>(&self, x: &Tensor<T>, r0: usize, rows: usize, col: &mut [T]) {
        let (h, w) = (x.h as isize, x.w);
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let n = rows * w;
        for ci in 0..self.cin {
            let src = x.channel(ci);
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[r * n..(r + 1) * n];
                    let dxo = kx as isize - pw;
                    for yy in 0..rows {
                        let out = &mut dst[yy * w..(yy + 1) * w];
                        let sy = (r0 + yy) as isize + ky as isize - ph;
                        if sy < 0 || sy >= h {
                            out.fill(T::zero());
                            continue;
                        }
                        let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                        shifted_copy(out, srow, dxo);
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], r0: usize, rows: usize, dx: &mut Tensor<T>) {
        let (h, w) = (dx.h as isize, dx.w);
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let n = rows * w;
        for ci in 0..self.cin {
            let dst = dx.channel_mut(ci);
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let src = &col[r * n..(r + 1) * n];
                    let dxo = kx as isize - pw;
                    for yy in 0..rows {
                        let sy = (r0 + yy) as isize + ky as isize - ph;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                        shifted_add(drow, &src[yy * w..(yy + 1) * w], dxo);
                    }
                }
            }
        }
    }
}

/// `out[x] = src[x + shift]`, zero outside `src`.
fn shifted_copy<T: Real>(out: &mut [T], src: &[T], shift: isize) {
    let w = out.len() as isize;
    let lo = (-shift).clamp(0, w) as usize;
    let hi = (w - shift).clamp(0, w) as usize;
    out[..lo].fill(T::zero());
    if lo < hi {
        let s0 = (lo as isize + shift) as usize;
        out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
    }
    out[hi.max(lo)..].fill(T::zero());
}

/// `dst[x + shift] += src[x]` wherever both indices are valid.
fn shifted_add<T: Real>(dst: &mut [T], src: &[T], shift: isize) {
    let w = src.len() as isize;
    let lo = (-shift).clamp(0, w) as usize;
    let hi = (w - shift).clamp(0, w) as usize;
    if lo < hi {
        let d0 = (lo as isize + shift) as usize;
        for (d, s) in dst[d0..d0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
            *d += *s;
        }
    }
}

/// Group normalization with per-channel affine parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupNorm {
    pub c: usize,
    pub groups: usize,
    pub gamma: usize,
    pub beta: usize,
}

pub struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

const NORM_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn alloc(offset: &mut usize, c: usize, max_groups: usize) -> Self {
        let groups = gcd(c, max_groups.max(1));
        let gamma = *offset;
        let beta = gamma + c;
        *offset = beta + c;
        Self { c, groups, gamma, beta }
    }

    pub fn n_params(&self) -> usize {
        2 * self.c
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
        assert_eq!(x.c, self.c);
        let plane = x.plane();
        let per = self.c / self.groups;
        let m = T::from_usize(per * plane).unwrap();
        let eps = T::from_f64c(NORM_EPS);
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut y = Tensor::zeros(x.c, x.h, x.w);
        let mut inv_std = Vec::with_capacity(self.groups);
        for gi in 0..self.groups {
            let span = gi * per * plane..(gi + 1) * per * plane;
            let xs = &x.data[span.clone()];
            let mean = xs.iter().copied().sum::<T>() / m;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let istd = (var + eps).sqrt().recip();
            inv_std.push(istd);
            for (o, &v) in xhat[span].iter_mut().zip(xs) {
                *o = (v - mean) * istd;
            }
            for c in gi * per..(gi + 1) * per {
                let (ga, be) = (p[self.gamma + c], p[self.beta + c]);
                let span = c * plane..(c + 1) * plane;
                for (o, &v) in y.data[span.clone()].iter_mut().zip(&xhat[span]) {
                    *o = ga * v + be;
                }
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward<T: Real>(&self, p: &[T], cache: &NormCache<T>, dy: &Tensor<T>, g: &mut [T]) -> Tensor<T> {
        let plane = dy.plane();
        let per = self.c / self.groups;
        let m = T::from_usize(per * plane).unwrap();
        let mut dx = Tensor::zeros(dy.c, dy.h, dy.w);
        for gi in 0..self.groups {
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for c in gi * per..(gi + 1) * per {
                let ga = p[self.gamma + c];
                let span = c * plane..(c + 1) * plane;
                let (mut dg, mut db) = (T::zero(), T::zero());
                for (&d, &xh) in dy.data[span.clone()].iter().zip(&cache.xhat[span.clone()]) {
                    dg += d * xh;
                    db += d;
                    let dxh = d * ga;
                    sum_d += dxh;
                    sum_dx += dxh * xh;
                }
                g[self.gamma + c] += dg;
                g[self.beta + c] += db;
                for (o, &d) in dx.data[span].iter_mut().zip(&dy.data[c * plane..(c + 1) * plane]) {
                    *o = d * ga;
                }
            }
            let mean_d = sum_d / m;
            let mean_dx = sum_dx / m;
            let istd = cache.inv_std[gi];
            let span = gi * per * plane..(gi + 1) * per * plane;
            for (o, &xh) in dx.data[span.clone()].iter_mut().zip(&cache.xhat[span]) {
                *o = (*o - mean_d - xh * mean_dx) * istd;
            }
        }
        dx
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// SiLU, `x * sigmoid(x)`.
pub fn silu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data.iter().map(|&v| v * sigmoid(v)).collect();
    Tensor::from_vec(x.c, x.h, x.w, data)
}

/// Gradient of [`silu`] evaluated at the pre-activation `x`.
pub fn silu_backward<T: Real>(x: &Tensor<T>, mut dy: Tensor<T>) -> Tensor<T> {
    for (d, &v) in dy.data.iter_mut().zip(&x.data) {
        let s = sigmoid(v);
        *d *= s * (T::one() + v * (T::one() - s));
    }
    dy
}

/// Mean pooling over non-overlapping `f × f` windows.
pub fn avg_pool<T: Real>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    assert!(x.h % f == 0 && x.w % f == 0, "pool factor must divide spatial dims");
    let (oh, ow) = (x.h / f, x.w / f);
    let scale = T::from_usize(f * f).unwrap().recip();
    let mut y = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = y.channel_mut(c);
        for yy in 0..x.h {
            let orow = &mut dst[(yy / f) * ow..(yy / f + 1) * ow];
            for (xx, &v) in src[yy * x.w..(yy + 1) * x.w].iter().enumerate() {
                orow[xx / f] += v;
            }
        }
        for v in dst.iter_mut() {
            *v *= scale;
        }
    }
    y
}

pub fn avg_pool_backward<T: Real>(dy: &Tensor<T>, f: usize) -> Tensor<T> {
    let scale = T::from_usize(f * f).unwrap().recip();
    let mut dx = upsample(dy, f);
    for v in &mut dx.data {
        *v *= scale;
    }
    dx
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample<T: Real>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let (oh, ow) = (x.h * f, x.w * f);
    let mut y = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = y.channel_mut(c);
        for yy in 0..oh {
            let srow = &src[(yy / f) * x.w..(yy / f + 1) * x.w];
            for (xx, o) in dst[yy * ow..(yy + 1) * ow].iter_mut().enumerate() {
                *o = srow[xx / f];
            }
        }
    }
    y
}

pub fn upsample_backward<T: Real>(dy: &Tensor<T>, f: usize) -> Tensor<T> {
    let (h, w) = (dy.h / f, dy.w / f);
    let mut dx = Tensor::zeros(dy.c, h, w);
    for c in 0..dy.c {
        let src = dy.channel(c);
        let dst = dx.channel_mut(c);
        for yy in 0..dy.h {
            let orow = &mut dst[(yy / f) * w..(yy / f + 1) * w];
            for (xx, &v) in src[yy * dy.w..(yy + 1) * dy.w].iter().enumerate() {
                orow[xx / f] += v;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    /// Direct-summation convolution used as the reference.
    fn conv_direct(conv: &Conv2d, p: &[f64], x: &Tensor<f64>) -> Tensor<f64> {
        let mut y = Tensor::zeros(conv.cout, x.h, x.w);
        let (ph, pw) = ((conv.kh / 2) as isize, (conv.kw / 2) as isize);
        for co in 0..conv.cout {
            for yy in 0..x.h {
                for xx in 0..x.w {
                    let mut acc = p[conv.bias + co];
                    for ci in 0..conv.cin {
                        for ky in 0..conv.kh {
                            for kx in 0..conv.kw {
                                let sy = yy as isize + ky as isize - ph;
                                let sx = xx as isize + kx as isize - pw;
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                let wi = conv.weight + ((co * conv.cin + ci) * conv.kh + ky) * conv.kw + kx;
                                acc += p[wi] * x.data[(ci * x.h + sy as usize) * x.w + sx as usize];
                            }
                        }
                    }
                    y.data[(co * x.h + yy) * x.w + xx] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut r = lcg(3);
        for &(kh, kw) in &[(3, 3), (1, 3), (1, 1), (5, 5)] {
            let mut off = 0;
            let conv = Conv2d::alloc(&mut off, 3, 4, kh, kw);
            let p: Vec<f64> = (0..off).map(|_| r()).collect();
            let x = Tensor::from_vec(3, 5, 7, (0..105).map(|_| r()).collect());
            let y = conv.forward(&p, &x);
            let e = conv_direct(&conv, &p, &x);
            for (a, b) in y.data.iter().zip(&e.data) {
                assert!((a - b).abs() < 1e-12, "{kh}x{kw}");
            }
        }
    }

    /// Checks `<dy, J dx>` identities: the backward pass is the adjoint of the
    /// (linear in x, linear in params) forward map.
    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        let mut r = lcg(9);
        let mut off = 0;
        let conv = Conv2d::alloc(&mut off, 2, 3, 3, 3);
        let p: Vec<f64> = (0..off).map(|_| r()).collect();
        let x = Tensor::from_vec(2, 6, 5, (0..60).map(|_| r()).collect());
        let dy = Tensor::from_vec(3, 6, 5, (0..90).map(|_| r()).collect());
        let mut g = vec![0.0; off];
        let dx = conv.backward(&p, &x, &dy, &mut g, true).unwrap();
        // d/dx <dy, conv(x)> == dx: perturb one input coordinate.
        let dot = |y: &Tensor<f64>| y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum::<f64>();
        for idx in [0, 7, 33, 59] {
            let mut xp = x.clone();
            xp.data[idx] += 1.0;
            let diff = dot(&conv.forward(&p, &xp)) - dot(&conv.forward(&p, &x));
            assert!((diff - dx.data[idx]).abs() < 1e-10);
        }
        for idx in [0, 5, 17, off - 1] {
            let mut pp = p.clone();
            pp[idx] += 1.0;
            let diff = dot(&conv.forward(&pp, &x)) - dot(&conv.forward(&p, &x));
            assert!((diff - g[idx]).abs() < 1e-10);
        }
    }

    #[test]
    fn group_norm_backward_matches_finite_differences() {
        let mut r = lcg(5);
        let mut off = 0;
        let norm = GroupNorm::alloc(&mut off, 4, 2);
        assert_eq!(norm.groups, 2);
        let p: Vec<f64> = (0..off).map(|_| 1.0 + 0.3 * r()).collect();
        let x = Tensor::from_vec(4, 3, 3, (0..36).map(|_| r()).collect());
        let dy = Tensor::from_vec(4, 3, 3, (0..36).map(|_| r()).collect());
        let f = |x: &Tensor<f64>, p: &[f64]| {
            let (y, _) = norm.forward(p, x);
            y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = norm.forward(&p, &x);
        let mut g = vec![0.0; off];
        let dx = norm.backward(&p, &cache, &dy, &mut g);
        let h = 1e-6;
        for idx in 0..36 {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data[idx] += h;
            b.data[idx] -= h;
            let fd = (f(&a, &p) - f(&b, &p)) / (2.0 * h);
            assert!((fd - dx.data[idx]).abs() < 1e-7, "x[{idx}]");
        }
        for idx in 0..off {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[idx] += h;
            b[idx] -= h;
            let fd = (f(&x, &a) - f(&x, &b)) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-7, "p[{idx}]");
        }
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let mut r = lcg(1);
        let x = Tensor::from_vec(2, 8, 4, (0..64).map(|_| r()).collect());
        let pooled = avg_pool(&x, 4);
        assert_eq!((pooled.h, pooled.w), (2, 1));
        let dy = Tensor::from_vec(2, 2, 1, (0..4).map(|_| r()).collect());
        let lhs: f64 = pooled.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&avg_pool_backward(&dy, 4).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let up = upsample(&dy, 4);
        let lhs: f64 = up.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = dy.data.iter().zip(&upsample_backward(&x, 4).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn silu_gradient() {
        let x = Tensor::from_vec(1, 1, 3, vec![-2.0f64, 0.0, 1.5]);
        let g = silu_backward(&x, Tensor::from_vec(1, 1, 3, vec![1.0; 3]));
        for (i, &v) in x.data.iter().enumerate() {
            let f = |t: f64| t / (1.0 + (-t).exp());
            let fd = (f(v + 1e-6) - f(v - 1e-6)) / 2e-6;
            assert!((fd - g.data[i]).abs() < 1e-8);
        }
    }
}

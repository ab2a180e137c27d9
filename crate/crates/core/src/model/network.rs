//! The U-Net segmenter and its variational-imputation extension.
//!
//! Parameter layout is contiguous per group: segmentation encoder, then the
//! variational encoder with its 1-D head (proposed variant only), then the
//! shared decoder. The decoder exists once and consumes the concatenation of
//! the encoder bottleneck with the spatially broadcast latent sample.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ModelConfig, Variant};
use super::layers::{
    avg_pool, avg_pool_backward, silu, silu_backward, upsample, upsample_backward, Conv2d, GroupNorm, NormCache,
};
use super::loss::{LatentSample, LatentStats, BCE_EPS, LOGVAR_MAX, LOGVAR_MIN};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::image::{check_same_dims, BinaryMask, GrayImage, SoftMask};

/// Whether the latent code is sampled (train) or set to the posterior mean (eval).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Index ranges of the three parameter groups in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamGroups {
    pub segmentation_encoder: Range<usize>,
    pub variational_encoder: Option<Range<usize>>,
    pub decoder: Range<usize>,
}

#[derive(Clone, Debug)]
struct Block {
    conv1: Conv2d,
    norm1: GroupNorm,
    conv2: Conv2d,
    norm2: GroupNorm,
}

struct BlockCache<T> {
    x: Tensor<T>,
    c1: NormCache<T>,
    n1: Tensor<T>,
    h1: Tensor<T>,
    c2: NormCache<T>,
    n2: Tensor<T>,
}

impl Block {
    fn alloc(off: &mut usize, cin: usize, cout: usize, k: usize, groups: usize) -> Self {
        let conv1 = Conv2d::alloc(off, cin, cout, k, k);
        let norm1 = GroupNorm::alloc(off, cout, groups);
        let conv2 = Conv2d::alloc(off, cout, cout, k, k);
        let norm2 = GroupNorm::alloc(off, cout, groups);
        Self { conv1, norm1, conv2, norm2 }
    }

    fn forward<T: Real>(&self, p: &[T], x: Tensor<T>, keep: bool) -> (Tensor<T>, Option<BlockCache<T>>) {
        let a1 = self.conv1.forward(p, &x);
        let (n1, c1) = self.norm1.forward(p, &a1);
        drop(a1);
        let h1 = silu(&n1);
        let a2 = self.conv2.forward(p, &h1);
        let (n2, c2) = self.norm2.forward(p, &a2);
        drop(a2);
        let out = silu(&n2);
        let cache = keep.then(|| BlockCache { x, c1, n1, h1, c2, n2 });
        (out, cache)
    }

    fn backward<T: Real>(
        &self,
        p: &[T],
        cache: &BlockCache<T>,
        dy: Tensor<T>,
        g: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let dn2 = silu_backward(&cache.n2, dy);
        let da2 = self.norm2.backward(p, &cache.c2, &dn2, g);
        let dh1 = self.conv2.backward(p, &cache.h1, &da2, g, true).expect("dx requested");
        let dn1 = silu_backward(&cache.n1, dh1);
        let da1 = self.norm1.backward(p, &cache.c1, &dn1, g);
        self.conv1.backward(p, &cache.x, &da1, g, need_dx)
    }

    fn convs(&self) -> [&Conv2d; 2] {
        [&self.conv1, &self.conv2]
    }

    fn norms(&self) -> [&GroupNorm; 2] {
        [&self.norm1, &self.norm2]
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    blocks: Vec<Block>,
}

struct EncoderPass<T> {
    outs: Vec<Tensor<T>>,
    caches: Vec<BlockCache<T>>,
}

impl Encoder {
    fn alloc(off: &mut usize, cfg: &ModelConfig) -> Self {
        let mut blocks = Vec::with_capacity(cfg.n_resolutions + 1);
        let mut cin = 1;
        for level in 0..=cfg.n_resolutions {
            let cout = cfg.width(level);
            blocks.push(Block::alloc(off, cin, cout, cfg.kernel_size, cfg.norm_groups));
            cin = cout;
        }
        Self { blocks }
    }

    fn forward<T: Real>(&self, p: &[T], x: Tensor<T>, factors: &[usize], keep: bool) -> EncoderPass<T> {
        let mut outs: Vec<Tensor<T>> = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::new();
        let mut input = Some(x);
        for (i, block) in self.blocks.iter().enumerate() {
            let x = match input.take() {
                Some(x) => x,
                None => avg_pool(&outs[i - 1], factors[i - 1]),
            };
            let (out, cache) = block.forward(p, x, keep);
            caches.extend(cache);
            outs.push(out);
        }
        EncoderPass { outs, caches }
    }

    /// `douts[i]` is the gradient arriving at stage `i`'s output from outside
    /// the encoder (skip connections and the bottleneck consumer).
    fn backward<T: Real>(
        &self,
        p: &[T],
        pass: &EncoderPass<T>,
        mut douts: Vec<Tensor<T>>,
        factors: &[usize],
        g: &mut [T],
    ) {
        for i in (0..self.blocks.len()).rev() {
            let dy = core::mem::replace(&mut douts[i], Tensor::zeros(0, 0, 0));
            let dx = self.blocks[i].backward(p, &pass.caches[i], dy, g, i > 0);
            if let Some(dx) = dx {
                douts[i - 1].add_assign(&avg_pool_backward(&dx, factors[i - 1]));
            }
        }
    }
}

#[derive(Clone, Debug)]
struct VarHead {
    convs: Vec<Conv2d>,
}

struct HeadPass<T> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
    bottleneck_dims: (usize, usize, usize),
}

impl VarHead {
    fn alloc(off: &mut usize, cfg: &ModelConfig) -> Self {
        let cin0 = cfg.width(cfg.n_resolutions);
        let out = 2 * cfg.latent_dim;
        let n = cfg.n_1d_conv_layers;
        let mut convs = Vec::with_capacity(n);
        let mut cin = cin0;
        for i in 0..n {
            let cout = if i + 1 == n { out } else { (cin0 >> i).max(out) };
            convs.push(Conv2d::alloc(off, cin, cout, 1, cfg.kernel_size));
            cin = cout;
        }
        Self { convs }
    }

    /// Flattens the bottleneck spatially into a 1-D signal, runs the conv
    /// stack and averages over the signal length.
    fn forward<T: Real>(&self, p: &[T], bottleneck: &Tensor<T>) -> (Vec<T>, HeadPass<T>) {
        let len = bottleneck.plane();
        let mut t = Tensor::from_vec(bottleneck.c, 1, len, bottleneck.data.clone());
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            let a = conv.forward(p, &t);
            inputs.push(t);
            if i == last {
                t = a;
            } else {
                t = silu(&a);
                pre.push(a);
            }
        }
        let inv = T::from_usize(len).unwrap().recip();
        let stats = (0..t.c).map(|c| t.channel(c).iter().copied().sum::<T>() * inv).collect();
        let pass = HeadPass { inputs, pre, bottleneck_dims: (bottleneck.c, bottleneck.h, bottleneck.w) };
        (stats, pass)
    }

    fn backward<T: Real>(&self, p: &[T], pass: &HeadPass<T>, dstats: &[T], g: &mut [T]) -> Tensor<T> {
        let (bc, bh, bw) = pass.bottleneck_dims;
        let len = bh * bw;
        let inv = T::from_usize(len).unwrap().recip();
        let mut dt = Tensor::zeros(dstats.len(), 1, len);
        for (c, &d) in dstats.iter().enumerate() {
            dt.channel_mut(c).fill(d * inv);
        }
        let last = self.convs.len() - 1;
        for i in (0..self.convs.len()).rev() {
            let da = if i == last { dt } else { silu_backward(&pass.pre[i], dt) };
            dt = self.convs[i].backward(p, &pass.inputs[i], &da, g, true).expect("dx requested");
        }
        Tensor::from_vec(bc, bh, bw, dt.data)
    }
}

#[derive(Clone, Debug)]
struct Decoder {
    /// Indexed by level; `ups[l]` maps level `l + 1` features to width `l`.
    ups: Vec<Conv2d>,
    blocks: Vec<Block>,
    out: Conv2d,
}

impl Decoder {
    fn alloc(off: &mut usize, cfg: &ModelConfig) -> Self {
        let n = cfg.n_resolutions;
        let extra = match cfg.variant {
            Variant::Baseline => 0,
            Variant::Proposed => cfg.latent_dim,
        };
        let mut ups = vec![None; n];
        let mut blocks = vec![None; n];
        for level in (0..n).rev() {
            let cin = cfg.width(level + 1) + if level + 1 == n { extra } else { 0 };
            let w = cfg.width(level);
            ups[level] = Some(Conv2d::alloc(off, cin, w, 1, 1));
            blocks[level] = Some(Block::alloc(off, 2 * w, w, cfg.kernel_size, cfg.norm_groups));
        }
        let out = Conv2d::alloc(off, cfg.width(0), 1, 1, 1);
        Self {
            ups: ups.into_iter().map(Option::unwrap).collect(),
            blocks: blocks.into_iter().map(Option::unwrap).collect(),
            out,
        }
    }
}

/// Static description of the network: layer shapes and parameter offsets.
#[derive(Clone, Debug)]
pub struct Architecture {
    cfg: ModelConfig,
    encoder: Encoder,
    var_encoder: Option<Encoder>,
    var_head: Option<VarHead>,
    decoder: Decoder,
    groups: ParamGroups,
    n_params: usize,
}

impl Architecture {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut off = 0;
        let encoder = Encoder::alloc(&mut off, cfg);
        let theta = 0..off;
        let (var_encoder, var_head, phi) = match cfg.variant {
            Variant::Baseline => (None, None, None),
            Variant::Proposed => {
                let start = off;
                let e = Encoder::alloc(&mut off, cfg);
                let h = VarHead::alloc(&mut off, cfg);
                (Some(e), Some(h), Some(start..off))
            }
        };
        let start = off;
        let decoder = Decoder::alloc(&mut off, cfg);
        let groups = ParamGroups { segmentation_encoder: theta, variational_encoder: phi, decoder: start..off };
        Ok(Self { cfg: cfg.clone(), encoder, var_encoder, var_head, decoder, groups, n_params: off })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn groups(&self) -> &ParamGroups {
        &self.groups
    }

    fn all_blocks(&self) -> impl Iterator<Item = &Block> {
        self.encoder
            .blocks
            .iter()
            .chain(self.var_encoder.iter().flat_map(|e| e.blocks.iter()))
            .chain(self.decoder.blocks.iter())
    }

    /// Deterministic initialization: uniform He-style bounds for convolutions
    /// feeding a normalization, LeCun-style bounds for the linear projections,
    /// unit scale and zero shift for the norms, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0f64; self.n_params];
        let mut fill = |p: &mut [f64], conv: &Conv2d, gain: f64| {
            let bound = Float::sqrt(gain / conv.fan_in() as f64);
            for v in &mut p[conv.weight_range()] {
                *v = rng.random_range(-bound..bound);
            }
        };
        for block in self.all_blocks() {
            for conv in block.convs() {
                fill(&mut p, conv, 6.0);
            }
        }
        for conv in self.var_head.iter().flat_map(|h| h.convs.iter()).chain(&self.decoder.ups) {
            fill(&mut p, conv, 3.0);
        }
        fill(&mut p, &self.decoder.out, 3.0);
        for block in self.all_blocks() {
            for norm in block.norms() {
                p[norm.gamma..norm.gamma + norm.c].fill(1.0);
            }
        }
        p
    }
}

/// Result of a forward pass on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub variant: Variant,
    pub soft_mask: SoftMask,
    pub latent: Option<LatentStats>,
    pub z_used: Option<LatentSample>,
}

struct LatentPass<T> {
    mu: Vec<T>,
    logvar_raw: Vec<T>,
    eps: Option<Vec<T>>,
    head: HeadPass<T>,
    var_enc: EncoderPass<T>,
}

struct Pass<T> {
    enc: EncoderPass<T>,
    latent: Option<LatentPass<T>>,
    /// Per level: input of the 1×1 projection and the block cache.
    dec: Vec<(Tensor<T>, Option<BlockCache<T>>)>,
    final_in: Tensor<T>,
    logits: Tensor<T>,
}

/// Segmentation network with its parameters.
#[derive(Clone, Debug)]
pub struct Network<T: Real = f32> {
    arch: Architecture,
    params: Vec<T>,
}

fn clamp_logvar<T: Real>(v: T) -> T {
    v.max(T::from_f64c(LOGVAR_MIN)).min(T::from_f64c(LOGVAR_MAX))
}

impl<T: Real> Network<T> {
    /// Assembles the network and initializes parameters from `seed`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::new(cfg)?;
        let params = arch.init_params(seed).into_iter().map(T::from_f64c).collect();
        Ok(Self { arch, params })
    }

    pub fn from_params(cfg: &ModelConfig, params: Vec<T>) -> Result<Self> {
        let arch = Architecture::new(cfg)?;
        if params.len() != arch.n_params {
            return Err(Error::ParamCount { expected: arch.n_params, got: params.len() });
        }
        Ok(Self { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.cfg
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn n_params(&self) -> usize {
        self.arch.n_params
    }

    pub fn groups(&self) -> &ParamGroups {
        &self.arch.groups
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<T> {
        self.params
    }

    /// Reparameterization noise for one training-mode pass.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        match self.arch.cfg.variant {
            Variant::Baseline => None,
            Variant::Proposed => Some((0..self.arch.cfg.latent_dim).map(|_| rng.sample(StandardNormal)).collect()),
        }
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &GrayImage, mode: Mode, rng: &mut R) -> Result<ForwardOutput> {
        let eps = match mode {
            Mode::Train => self.sample_noise(rng),
            Mode::Eval => None,
        };
        self.forward_with_noise(x, eps.as_deref())
    }

    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        xs: &[GrayImage],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<ForwardOutput>> {
        xs.iter().map(|x| self.forward(x, mode, rng)).collect()
    }

    /// Forward pass with explicit reparameterization noise; `None` uses the
    /// posterior mean as the latent code.
    pub fn forward_with_noise(&self, x: &GrayImage, eps: Option<&[f64]>) -> Result<ForwardOutput> {
        let pass = self.run(x, eps, false)?;
        let probs: Vec<f32> = pass
            .logits
            .data
            .iter()
            .map(|&l| {
                let p = T::one() / (T::one() + (-l).exp());
                p.to_f64c().clamp(BCE_EPS, 1.0 - BCE_EPS) as f32
            })
            .collect();
        let soft_mask = SoftMask::new(x.height(), x.width(), probs)?;
        let (latent, z_used) = match &pass.latent {
            None => (None, None),
            Some(lp) => {
                let mu: Vec<f64> = lp.mu.iter().map(|v| v.to_f64c()).collect();
                let logvar: Vec<f64> = lp.logvar_raw.iter().map(|&v| clamp_logvar(v).to_f64c()).collect();
                let z = latent_code(&lp.mu, &lp.logvar_raw, lp.eps.as_deref()).iter().map(|v| v.to_f64c()).collect();
                (Some(LatentStats { mu, logvar }), Some(LatentSample { z }))
            }
        };
        Ok(ForwardOutput { variant: self.arch.cfg.variant, soft_mask, latent, z_used })
    }

    /// Objective value (reconstruction + KL for the proposed variant).
    pub fn objective(&self, x: &GrayImage, target: &BinaryMask, eps: Option<&[f64]>) -> Result<f64> {
        check_same_dims(x.dims(), target.dims())?;
        let pass = self.run(x, eps, false)?;
        Ok(self.objective_terms(&pass, target).0)
    }

    /// Objective value, accumulating `weight * d objective / d params` into `grad`.
    pub fn objective_and_grad(
        &self,
        x: &GrayImage,
        target: &BinaryMask,
        eps: Option<&[f64]>,
        weight: f64,
        grad: &mut [T],
    ) -> Result<f64> {
        check_same_dims(x.dims(), target.dims())?;
        if grad.len() != self.params.len() {
            return Err(Error::ParamCount { expected: self.params.len(), got: grad.len() });
        }
        let pass = self.run(x, eps, true)?;
        let (loss, dlogits) = self.objective_terms(&pass, target);
        let w = T::from_f64c(weight);
        let mut dl = dlogits;
        for v in &mut dl.data {
            *v *= w;
        }
        self.backward(&pass, dl, w, grad);
        Ok(loss)
    }

    fn objective_terms(&self, pass: &Pass<T>, target: &BinaryMask) -> (f64, Tensor<T>) {
        let n = target.pixels().len();
        let inv_n = T::from_usize(n).unwrap().recip();
        let (lo, hi) = (T::from_f64c(BCE_EPS), T::from_f64c(1.0 - BCE_EPS));
        let mut bce = 0.0f64;
        let mut d = Tensor::zeros(1, pass.logits.h, pass.logits.w);
        for ((o, &l), &s) in d.data.iter_mut().zip(&pass.logits.data).zip(target.pixels()) {
            let p = T::one() / (T::one() + (-l).exp());
            let pc = p.max(lo).min(hi);
            let s_t = if s != 0 { T::one() } else { T::zero() };
            bce -= if s != 0 { pc.ln().to_f64c() } else { (T::one() - pc).ln().to_f64c() };
            *o = if p > lo && p < hi { (pc - s_t) * inv_n } else { T::zero() };
        }
        let mut loss = bce / n as f64;
        if let Some(lp) = &pass.latent {
            loss += lp
                .mu
                .iter()
                .zip(&lp.logvar_raw)
                .map(|(&m, &lv)| {
                    let (m, lv) = (m.to_f64c(), clamp_logvar(lv).to_f64c());
                    -0.5 * (1.0 + lv - m * m - Float::exp(lv))
                })
                .sum::<f64>();
        }
        (loss, d)
    }

    fn check_input(&self, x: &GrayImage) -> Result<()> {
        let f = self.arch.cfg.total_downsampling();
        let (h, w) = x.dims();
        if h % f != 0 || w % f != 0 {
            return Err(Error::Resolution { h, w, factor: f });
        }
        Ok(())
    }

    fn run(&self, x: &GrayImage, eps: Option<&[f64]>, keep: bool) -> Result<Pass<T>> {
        self.check_input(x)?;
        let cfg = &self.arch.cfg;
        let p = &self.params[..];
        let factors = &cfg.down_factors[..];
        let xt = Tensor::from_vec(1, x.height(), x.width(), x.pixels().iter().map(|&v| T::from_f64c(v as f64)).collect());

        let latent = match (&self.arch.var_encoder, &self.arch.var_head) {
            (Some(venc), Some(head)) => {
                let var_enc = venc.forward(p, xt.clone(), factors, keep);
                let (stats, head_pass) = head.forward(p, var_enc.outs.last().unwrap());
                let l = cfg.latent_dim;
                let eps = match eps {
                    Some(e) if e.len() != l => {
                        return Err(Error::InvalidConfig {
                            key: "noise",
                            reason: alloc::format!("{} noise values for latent dimension {l}", e.len()),
                        })
                    }
                    Some(e) => Some(e.iter().map(|&v| T::from_f64c(v)).collect()),
                    None => None,
                };
                Some(LatentPass {
                    mu: stats[..l].to_vec(),
                    logvar_raw: stats[l..].to_vec(),
                    eps,
                    head: head_pass,
                    var_enc,
                })
            }
            _ => None,
        };

        let enc = self.arch.encoder.forward(p, xt, factors, keep);
        let n = cfg.n_resolutions;
        let mut cur = enc.outs[n].clone();
        if let Some(lp) = &latent {
            let z = latent_code(&lp.mu, &lp.logvar_raw, lp.eps.as_deref());
            let mut zmap = Tensor::zeros(z.len(), cur.h, cur.w);
            for (c, &v) in z.iter().enumerate() {
                zmap.channel_mut(c).fill(v);
            }
            cur = cur.concat(&zmap);
        }
        let mut dec = Vec::with_capacity(n);
        for level in (0..n).rev() {
            let u = upsample(&self.arch.decoder.ups[level].forward(p, &cur), factors[level]);
            let cat = u.concat(&enc.outs[level]);
            let (out, cache) = self.arch.decoder.blocks[level].forward(p, cat, keep);
            dec.push((cur, cache));
            cur = out;
        }
        let logits = self.arch.decoder.out.forward(p, &cur);
        Ok(Pass { enc, latent, dec, final_in: cur, logits })
    }

    fn backward(&self, pass: &Pass<T>, dlogits: Tensor<T>, weight: T, g: &mut [T]) {
        let cfg = &self.arch.cfg;
        let p = &self.params[..];
        let factors = &cfg.down_factors[..];
        let n = cfg.n_resolutions;
        let dec = &self.arch.decoder;

        let mut dcur = dec.out.backward(p, &pass.final_in, &dlogits, g, true).expect("dx requested");
        let mut douts: Vec<Tensor<T>> =
            pass.enc.outs.iter().map(|o| Tensor::zeros(o.c, o.h, o.w)).collect();
        // `pass.dec` is ordered from the deepest level upwards.
        for i in (0..n).rev() {
            let level = n - 1 - i;
            let (up_in, cache) = &pass.dec[i];
            let dcat = dec.blocks[level]
                .backward(p, cache.as_ref().expect("training pass"), dcur, g, true)
                .expect("dx requested");
            let (du, dskip) = dcat.split(cfg.width(level));
            douts[level].add_assign(&dskip);
            let du = upsample_backward(&du, factors[level]);
            dcur = dec.ups[level].backward(p, up_in, &du, g, true).expect("dx requested");
        }

        let bottleneck_c = cfg.width(n);
        let (dh, dzmap) = dcur.split(bottleneck_c);
        douts[n].add_assign(&dh);
        self.arch.encoder.backward(p, &pass.enc, douts, factors, g);

        if let (Some(lp), Some(venc), Some(head)) = (&pass.latent, &self.arch.var_encoder, &self.arch.var_head) {
            let half = T::from_f64c(0.5);
            let l = cfg.latent_dim;
            let mut dstats = vec![T::zero(); 2 * l];
            for i in 0..l {
                let dz: T = dzmap.channel(i).iter().copied().sum();
                let (mu, raw) = (lp.mu[i], lp.logvar_raw[i]);
                let lv = clamp_logvar(raw);
                let std = (lv * half).exp();
                let e = lp.eps.as_ref().map_or(T::zero(), |e| e[i]);
                // z = mu + std * eps; KL = -1/2 (1 + lv - mu^2 - exp(lv)).
                dstats[i] = dz + weight * mu;
                let dlv = dz * e * half * std + weight * half * (lv.exp() - T::one());
                let inside = raw >= T::from_f64c(LOGVAR_MIN) && raw <= T::from_f64c(LOGVAR_MAX);
                dstats[l + i] = if inside { dlv } else { T::zero() };
            }
            let dvb = head.backward(p, &lp.head, &dstats, g);
            let mut dvouts: Vec<Tensor<T>> =
                lp.var_enc.outs.iter().map(|o| Tensor::zeros(o.c, o.h, o.w)).collect();
            dvouts[n] = dvb;
            venc.backward(p, &lp.var_enc, dvouts, factors, g);
        }
    }
}

fn latent_code<T: Real>(mu: &[T], logvar_raw: &[T], eps: Option<&[T]>) -> Vec<T> {
    match eps {
        None => mu.to_vec(),
        Some(e) => {
            let half = T::from_f64c(0.5);
            mu.iter().zip(logvar_raw).zip(e).map(|((&m, &lv), &e)| m + (clamp_logvar(lv) * half).exp() * e).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            base_features: 2,
            kernel_size: 3,
            n_resolutions: 2,
            down_factors: vec![2, 2],
            latent_dim: 2,
            n_1d_conv_layers: 2,
            norm_groups: 2,
        }
    }

    fn image(h: usize, w: usize, phase: f32) -> GrayImage {
        let data = (0..h * w).map(|i| 0.5 + 0.4 * ((i as f32) * 0.37 + phase).sin()).collect();
        GrayImage::new(h, w, data).unwrap()
    }

    #[test]
    fn groups_partition_all_parameters() {
        let arch = Architecture::new(&ModelConfig::proposed()).unwrap();
        let g = arch.groups();
        let phi = g.variational_encoder.clone().unwrap();
        assert_eq!(g.segmentation_encoder.start, 0);
        assert_eq!(g.segmentation_encoder.end, phi.start);
        assert_eq!(phi.end, g.decoder.start);
        assert_eq!(g.decoder.end, arch.n_params());
        let base = Architecture::new(&ModelConfig::baseline()).unwrap();
        assert!(base.groups().variational_encoder.is_none());
        assert_eq!(base.groups().segmentation_encoder.end, base.groups().decoder.start);
    }

    #[test]
    fn output_shape_and_range() {
        for variant in [Variant::Baseline, Variant::Proposed] {
            let net = Network::<f32>::build(&tiny(variant), 1).unwrap();
            let out = net.forward_with_noise(&image(16, 12, 0.0), None).unwrap();
            assert_eq!(out.soft_mask.dims(), (16, 12));
            assert!(out.soft_mask.pixels().iter().all(|&p| p > 0.0 && p < 1.0));
            assert_eq!(out.latent.is_some(), variant == Variant::Proposed);
        }
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let net = Network::<f32>::build(&tiny(Variant::Baseline), 1).unwrap();
        assert!(matches!(net.forward_with_noise(&image(10, 12, 0.0), None), Err(Error::Resolution { .. })));
    }

    #[test]
    fn gradient_matches_central_differences_on_tiny_net() {
        let net = Network::<f64>::build(&tiny(Variant::Proposed), 4).unwrap();
        let x = image(8, 8, 0.3);
        let s = BinaryMask::from_fn(8, 8, |y, x| (y + x) % 3 == 0);
        let eps = [0.7, -1.2];
        let mut g = vec![0.0; net.n_params()];
        net.objective_and_grad(&x, &s, Some(&eps), 1.0, &mut g).unwrap();
        let h = 1e-5;
        for idx in (0..net.n_params()).step_by(7) {
            let mut a = net.clone();
            a.params_mut()[idx] += h;
            let mut b = net.clone();
            b.params_mut()[idx] -= h;
            let fd = (a.objective(&x, &s, Some(&eps)).unwrap() - b.objective(&x, &s, Some(&eps)).unwrap()) / (2.0 * h);
            let scale = fd.abs().max(g[idx].abs()).max(1e-6);
            assert!((fd - g[idx]).abs() / scale < 1e-4, "param {idx}: fd {fd} analytic {}", g[idx]);
        }
    }
}

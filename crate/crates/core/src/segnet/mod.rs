//! Fixed-architecture segmentation network.
//!
//! Five 3x3 conv-BN-ReLU blocks (strides 1, 2, 1, 2, 1; widths 16, 16, 32,
//! 32, 32) form the backbone. Its output is bilinearly resized back to the
//! input resolution, which gives the 32-channel feature map, and a 1x1 conv
//! head with softmax produces class probabilities.

mod io;
mod layers;
mod train;

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{train_source, TrainConfig, TrainHistory};

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::scalar::Scalar;
use layers::{
    bilinear, bilinear_adjoint, col2im, conv_backward_cols, conv_backward_weight, conv_forward,
    im2col, softmax_into, Dims, KSIZE,
};

/// Channel count `L` of the backbone feature map.
pub const FEATURE_CHANNELS: usize = 32;

/// `(output channels, stride)` of each backbone block.
pub const BACKBONE: [(usize, usize); 5] = [(16, 1), (16, 2), (32, 1), (32, 2), (32, 1)];

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Eval => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct BlockLayout {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub weight: Range<usize>,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
}

/// Offsets of every learnable tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub in_channels: usize,
    pub n_classes: usize,
    pub blocks: Vec<BlockLayout>,
    pub head_weight: Range<usize>,
    pub head_bias: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(in_channels: usize, n_classes: usize) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let mut cin = in_channels;
        let mut blocks = Vec::new();
        for &(cout, stride) in &BACKBONE {
            blocks.push(BlockLayout {
                cin,
                cout,
                stride,
                weight: take(cout * cin * KSIZE * KSIZE),
                gamma: take(cout),
                beta: take(cout),
            });
            cin = cout;
        }
        let head_weight = take(n_classes * FEATURE_CHANNELS);
        let head_bias = take(n_classes);
        Self {
            in_channels,
            n_classes,
            blocks,
            head_weight,
            head_bias,
            total: off,
        }
    }
}

/// Running batch-norm statistics of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// The segmentation network. In [`Mode::Eval`] it is a pure function of its
/// input; nothing mutates it outside of explicit `&mut` calls.
#[derive(Clone, Debug, PartialEq)]
pub struct SegModel<T> {
    layout: Layout,
    params: Vec<T>,
    running: Vec<BnStats<T>>,
    eps: T,
    momentum: T,
    mode: Mode,
}

/// Output of a forward pass for one image, all grids `H x W x _`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegOutput<T> {
    pub probs: RealGrid<T>,
    pub logits: RealGrid<T>,
    pub features: RealGrid<T>,
}

/// Intermediate activations of one forward call, kept for backward passes.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    fingerprint: u64,
    mode: Mode,
    input: Dims,
    /// Input (index 0) and post-ReLU output of every block, per image.
    acts: Vec<Vec<Vec<T>>>,
    /// Pre-BN conv outputs per image and block.
    pre_bn: Vec<Vec<Vec<T>>>,
    /// Unfolded conv inputs, train mode only.
    cols: Vec<Vec<Vec<T>>>,
    /// Upsampled backbone features per image, channel-major.
    features: Vec<Vec<T>>,
    /// Normalization statistics actually used, per block.
    stats: Vec<BnStats<T>>,
    dims: Vec<Dims>,
}

impl<T> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.acts.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

fn hwc_to_chw<T: Scalar>(x: &RealGrid<T>) -> Vec<T> {
    let (h, w, c) = x.shape();
    let mut out = vec![T::zero(); h * w * c];
    for (i, px) in x.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[ch * h * w + i] = v;
        }
    }
    out
}

fn chw_to_hwc<T: Scalar>(x: &[T], d: Dims) -> RealGrid<T> {
    let mut out = vec![T::zero(); d.len()];
    for ch in 0..d.c {
        for i in 0..d.plane() {
            out[i * d.c + ch] = x[ch * d.plane() + i];
        }
    }
    RealGrid::from_vec(d.h, d.w, d.c, out).expect("finite activations")
}

/// Randomly initialized single-channel model; see [`SegModel::init`].
pub fn init_model<T: Scalar>(seed: u64, n_classes: usize) -> Result<SegModel<T>> {
    SegModel::init(seed, 1, n_classes)
}

impl<T: Scalar> SegModel<T> {
    /// He-normal conv and head weights, unit BN scale, zero shifts and
    /// biases, running statistics at mean 0 / variance 1. Every value is
    /// representable in `f32`, so a fresh model survives a save/load cycle
    /// bit for bit.
    pub fn init(seed: u64, in_channels: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid("a segmentation model needs at least 2 classes"));
        }
        if n_classes > 255 {
            return Err(Error::invalid("at most 255 classes fit in a label file"));
        }
        if in_channels == 0 {
            return Err(Error::invalid("model needs at least one input channel"));
        }
        let layout = Layout::new(in_channels, n_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.total];
        let mut fill = |range: Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            for p in &mut params[range] {
                *p = T::lit(normal.sample(rng) as f32 as f64);
            }
        };
        for b in &layout.blocks {
            fill(b.weight.clone(), b.cin * KSIZE * KSIZE, &mut rng);
        }
        fill(layout.head_weight.clone(), FEATURE_CHANNELS, &mut rng);
        for b in &layout.blocks {
            for p in &mut params[b.gamma.clone()] {
                *p = T::one();
            }
        }
        let running = layout
            .blocks
            .iter()
            .map(|b| BnStats {
                mean: vec![T::zero(); b.cout],
                var: vec![T::one(); b.cout],
            })
            .collect();
        Ok(Self {
            layout,
            params,
            running,
            eps: T::lit(BN_EPS as f64),
            momentum: T::lit(BN_MOMENTUM as f64),
            mode: Mode::Eval,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.layout.n_classes
    }

    pub fn in_channels(&self) -> usize {
        self.layout.in_channels
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    /// Every learnable value: per block conv weight, BN scale, BN shift; then
    /// head weight and head bias.
    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[BnStats<T>] {
        &self.running
    }

    pub fn bn_eps(&self) -> T {
        self.eps
    }

    pub fn bn_momentum(&self) -> T {
        self.momentum
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn from_parts(
        in_channels: usize,
        n_classes: usize,
        params: Vec<T>,
        running: Vec<BnStats<T>>,
        eps: T,
        momentum: T,
    ) -> Result<Self> {
        let layout = Layout::new(in_channels, n_classes);
        if params.len() != layout.total || running.len() != layout.blocks.len() {
            return Err(Error::shape("model parameter layout"));
        }
        for (s, b) in running.iter().zip(&layout.blocks) {
            if s.mean.len() != b.cout || s.var.len() != b.cout {
                return Err(Error::shape("batch-norm statistics"));
            }
            if s.var.iter().any(|&v| !(v > T::zero())) {
                return Err(Error::invalid("running variance must be positive"));
            }
        }
        Ok(Self {
            layout,
            params,
            running,
            eps,
            momentum,
            mode: Mode::Eval,
        })
    }

    /// Rounds every stored value to the nearest `f32`, the precision of the
    /// weight file.
    pub fn round_to_f32(&mut self) {
        let r = |v: &mut T| *v = T::lit(v.to_f64_lossy() as f32 as f64);
        self.params.iter_mut().for_each(r);
        for s in &mut self.running {
            s.mean.iter_mut().for_each(r);
            s.var.iter_mut().for_each(r);
        }
    }

    fn state_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.params
            .iter()
            .chain(self.running.iter().flat_map(|s| s.mean.iter().chain(&s.var)))
            .chain([&self.eps, &self.momentum])
            .map(|v| v.to_f64_lossy())
    }

    /// Hex SHA-256 over weights and normalization state.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.layout.in_channels as u64).to_le_bytes());
        h.update((self.layout.n_classes as u64).to_le_bytes());
        for v in self.state_values() {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.mode.hash(&mut h);
        for v in self.state_values() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    fn check_input(&self, x: &RealGrid<T>) -> Result<()> {
        let (h, w, c) = x.shape();
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} must be non-empty multiples of 4"
            )));
        }
        if c != self.layout.in_channels {
            return Err(Error::shape(format!(
                "input has {c} channels, model expects {}",
                self.layout.in_channels
            )));
        }
        x.check_finite("model input")
    }

    /// Forward pass of a single image in the current mode.
    pub fn forward(&self, x: &RealGrid<T>) -> Result<(SegOutput<T>, ForwardCache<T>)> {
        let (mut outs, cache) = self.forward_batch(std::slice::from_ref(x))?;
        Ok((outs.remove(0), cache))
    }

    /// Forward pass of a batch. Train mode normalizes with batch statistics
    /// but does not touch the running statistics; see
    /// [`SegModel::update_running_stats`].
    pub fn forward_batch(&self, xs: &[RealGrid<T>]) -> Result<(Vec<SegOutput<T>>, ForwardCache<T>)> {
        let first = xs.first().ok_or(Error::EmptyDataset)?;
        for x in xs {
            self.check_input(x)?;
            x.ensure_shape(first.shape(), "batch image")?;
        }
        let train = self.mode == Mode::Train;
        let input = Dims {
            c: first.channels(),
            h: first.height(),
            w: first.width(),
        };
        let mut acts: Vec<Vec<Vec<T>>> = xs.par_iter().map(|x| vec![hwc_to_chw(x)]).collect();
        let mut pre_bn: Vec<Vec<Vec<T>>> = vec![Vec::new(); xs.len()];
        let mut cols: Vec<Vec<Vec<T>>> = vec![Vec::new(); xs.len()];
        let mut stats = Vec::new();
        let mut dims = vec![input];
        let mut d = input;

        for (bi, blk) in self.layout.blocks.iter().enumerate() {
            let weight = &self.params[blk.weight.clone()];
            let k = blk.cin * KSIZE * KSIZE;
            let conv: Vec<(Vec<T>, Vec<T>, Dims)> = acts
                .par_iter()
                .map(|a| {
                    let (c, ho, wo) = im2col(a.last().unwrap(), d, blk.stride);
                    let z = conv_forward(weight, blk.cout, &c, k, ho * wo);
                    let od = Dims {
                        c: blk.cout,
                        h: ho,
                        w: wo,
                    };
                    (z, if train { c } else { Vec::new() }, od)
                })
                .collect();
            let od = conv[0].2;
            let (zs, cs): (Vec<_>, Vec<_>) = conv.into_iter().map(|(z, c, _)| (z, c)).unzip();
            let st = if train {
                batch_stats(&zs, od)
            } else {
                self.running[bi].clone()
            };
            let gamma = &self.params[blk.gamma.clone()];
            let beta = &self.params[blk.beta.clone()];
            let (scale, shift) = bn_affine(&st, gamma, beta, self.eps);
            let outs: Vec<Vec<T>> = zs
                .par_iter()
                .map(|z| {
                    let mut a = z.clone();
                    for c in 0..od.c {
                        for v in &mut a[c * od.plane()..(c + 1) * od.plane()] {
                            *v = (*v * scale[c] + shift[c]).max(T::zero());
                        }
                    }
                    a
                })
                .collect();
            for (i, (z, a)) in zs.into_iter().zip(outs).enumerate() {
                pre_bn[i].push(z);
                acts[i].push(a);
            }
            for (i, c) in cs.into_iter().enumerate() {
                cols[i].push(c);
            }
            stats.push(st);
            dims.push(od);
            d = od;
        }

        let head_w = &self.params[self.layout.head_weight.clone()];
        let head_b = &self.params[self.layout.head_bias.clone()];
        let nc = self.layout.n_classes;
        let fd = Dims {
            c: FEATURE_CHANNELS,
            h: input.h,
            w: input.w,
        };
        let results: Vec<(Vec<T>, SegOutput<T>)> = acts
            .par_iter()
            .map(|a| {
                let feats = bilinear(a.last().unwrap(), d, input.h, input.w);
                let p = fd.plane();
                let mut logits = vec![T::zero(); nc * p];
                for (c, row) in logits.chunks_exact_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v = head_b[c]);
                }
                T::gemm(nc, FEATURE_CHANNELS, p, T::one(), head_w, (FEATURE_CHANNELS, 1), &feats, (p, 1), T::one(), &mut logits, (p, 1));
                let ld = Dims { c: nc, ..fd };
                let logits = chw_to_hwc(&logits, ld);
                let mut probs = logits.clone();
                for (l, o) in logits.data().chunks_exact(nc).zip(probs.data_mut().chunks_exact_mut(nc)) {
                    softmax_into(l, o);
                }
                let features = chw_to_hwc(&feats, fd);
                (
                    feats,
                    SegOutput {
                        probs,
                        logits,
                        features,
                    },
                )
            })
            .collect();
        let (features, outputs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let cache = ForwardCache {
            fingerprint: self.fingerprint(),
            mode: self.mode,
            input,
            acts,
            pre_bn,
            cols,
            features,
            stats,
            dims,
        };
        Ok((outputs, cache))
    }

    fn check_cache(&self, cache: &ForwardCache<T>, grads: &[RealGrid<T>]) -> Result<()> {
        if cache.fingerprint != self.fingerprint() {
            return Err(Error::StaleCache);
        }
        if grads.len() != cache.batch_size() {
            return Err(Error::shape(format!(
                "{} logit gradients for a batch of {}",
                grads.len(),
                cache.batch_size()
            )));
        }
        let shape = (cache.input.h, cache.input.w, self.layout.n_classes);
        for g in grads {
            g.ensure_shape(shape, "logit gradient")?;
            g.check_finite("logit gradient")?;
        }
        Ok(())
    }

    /// `dL/dx` for every image of the cached batch given `dL/dlogits`.
    /// Requires an eval-mode cache; the model is not modified.
    pub fn backward_input(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &[RealGrid<T>],
    ) -> Result<Vec<RealGrid<T>>> {
        if cache.mode != Mode::Eval || self.mode != Mode::Eval {
            return Err(Error::Mode {
                required: Mode::Eval.name(),
                actual: Mode::Train.name(),
            });
        }
        self.check_cache(cache, grad_logits)?;
        Ok(self.backward(cache, grad_logits, true, false).0)
    }

    /// Gradient of the loss w.r.t. every learnable parameter, laid out like
    /// [`SegModel::params`] and summed over the batch. Requires train mode.
    pub fn backward_weights(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &[RealGrid<T>],
    ) -> Result<Vec<T>> {
        if cache.mode != Mode::Train || self.mode != Mode::Train {
            return Err(Error::Mode {
                required: Mode::Train.name(),
                actual: Mode::Eval.name(),
            });
        }
        self.check_cache(cache, grad_logits)?;
        Ok(self.backward(cache, grad_logits, false, true).1)
    }

    /// Folds the batch statistics of a train-mode forward pass into the
    /// running statistics (unbiased variance, momentum [`BN_MOMENTUM`]).
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) -> Result<()> {
        if cache.mode != Mode::Train {
            return Err(Error::Mode {
                required: Mode::Train.name(),
                actual: Mode::Eval.name(),
            });
        }
        if cache.fingerprint != self.fingerprint() {
            return Err(Error::StaleCache);
        }
        let m = self.momentum;
        for (bi, st) in cache.stats.iter().enumerate() {
            let n = T::lit((cache.batch_size() * cache.dims[bi + 1].plane()) as f64);
            let unbias = if n > T::one() { n / (n - T::one()) } else { T::one() };
            let run = &mut self.running[bi];
            for c in 0..st.mean.len() {
                run.mean[c] = (T::one() - m) * run.mean[c] + m * st.mean[c];
                run.var[c] = (T::one() - m) * run.var[c] + m * st.var[c] * unbias;
            }
        }
        Ok(())
    }

    fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &[RealGrid<T>],
        want_input: bool,
        want_weights: bool,
    ) -> (Vec<RealGrid<T>>, Vec<T>) {
        let train = cache.mode == Mode::Train;
        let nc = self.layout.n_classes;
        let input = cache.input;
        let p = input.plane();
        let head_w = &self.params[self.layout.head_weight.clone()];
        let last = *cache.dims.last().unwrap();
        let mut dparams = vec![T::zero(); if want_weights { self.layout.total } else { 0 }];

        // head and resize
        let head: Vec<(Vec<T>, Vec<T>, Vec<T>)> = grad_logits
            .par_iter()
            .zip(&cache.features)
            .map(|(g, feats)| {
                let dl = hwc_to_chw(g);
                let mut dw = Vec::new();
                let mut db = Vec::new();
                if want_weights {
                    dw = vec![T::zero(); nc * FEATURE_CHANNELS];
                    T::gemm(nc, p, FEATURE_CHANNELS, T::one(), &dl, (p, 1), feats, (1, p), T::zero(), &mut dw, (FEATURE_CHANNELS, 1));
                    db = dl.chunks_exact(p).map(|row| row.iter().copied().sum()).collect();
                }
                let mut dfeat = vec![T::zero(); FEATURE_CHANNELS * p];
                T::gemm(FEATURE_CHANNELS, nc, p, T::one(), head_w, (1, FEATURE_CHANNELS), &dl, (p, 1), T::zero(), &mut dfeat, (p, 1));
                let dback = bilinear_adjoint(&dfeat, last, input.h, input.w);
                (dback, dw, db)
            })
            .collect();
        let mut grads: Vec<Vec<T>> = Vec::with_capacity(head.len());
        for (dback, dw, db) in head {
            if want_weights {
                add_into(&mut dparams[self.layout.head_weight.clone()], &dw);
                add_into(&mut dparams[self.layout.head_bias.clone()], &db);
            }
            grads.push(dback);
        }

        for (bi, blk) in self.layout.blocks.iter().enumerate().rev() {
            let od = cache.dims[bi + 1];
            let id = cache.dims[bi];
            let gamma = &self.params[blk.gamma.clone()];
            let st = &cache.stats[bi];
            let inv_std: Vec<T> = st.var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
            // ReLU
            grads.par_iter_mut().enumerate().for_each(|(i, g)| {
                for (gv, &a) in g.iter_mut().zip(&cache.acts[i][bi + 1]) {
                    if a <= T::zero() {
                        *gv = T::zero();
                    }
                }
            });
            // batch norm
            let xhat = |i: usize, c: usize, j: usize| (cache.pre_bn[i][bi][c * od.plane() + j] - st.mean[c]) * inv_std[c];
            let mut dgamma = vec![T::zero(); od.c];
            let mut dbeta = vec![T::zero(); od.c];
            if train || want_weights {
                for (i, g) in grads.iter().enumerate() {
                    for c in 0..od.c {
                        for j in 0..od.plane() {
                            let dy = g[c * od.plane() + j];
                            dbeta[c] += dy;
                            dgamma[c] += dy * xhat(i, c, j);
                        }
                    }
                }
            }
            if train {
                let m = T::lit((grads.len() * od.plane()) as f64);
                grads.par_iter_mut().enumerate().for_each(|(i, g)| {
                    for c in 0..od.c {
                        // dxhat = dy * gamma, sums expressed through dbeta/dgamma
                        let s1 = dbeta[c] * gamma[c] / m;
                        let s2 = dgamma[c] * gamma[c] / m;
                        for j in 0..od.plane() {
                            let v = &mut g[c * od.plane() + j];
                            *v = (*v * gamma[c] - s1 - xhat(i, c, j) * s2) * inv_std[c];
                        }
                    }
                });
            } else {
                grads.par_iter_mut().for_each(|g| {
                    for c in 0..od.c {
                        let s = gamma[c] * inv_std[c];
                        g[c * od.plane()..(c + 1) * od.plane()].iter_mut().for_each(|v| *v *= s);
                    }
                });
            }
            if want_weights {
                add_into(&mut dparams[blk.gamma.clone()], &dgamma);
                add_into(&mut dparams[blk.beta.clone()], &dbeta);
            }
            // convolution
            let weight = &self.params[blk.weight.clone()];
            let k = blk.cin * KSIZE * KSIZE;
            let need_dx = bi > 0 || want_input;
            let conv: Vec<(Vec<T>, Vec<T>)> = grads
                .par_iter()
                .enumerate()
                .map(|(i, dz)| {
                    let mut dw = Vec::new();
                    if want_weights {
                        dw = vec![T::zero(); blk.cout * k];
                        conv_backward_weight(&mut dw, blk.cout, dz, &cache.cols[i][bi], k, od.plane());
                    }
                    let dx = if need_dx {
                        let dcols = conv_backward_cols(weight, blk.cout, dz, k, od.plane());
                        col2im(&dcols, id, blk.stride)
                    } else {
                        Vec::new()
                    };
                    (dx, dw)
                })
                .collect();
            grads = Vec::with_capacity(conv.len());
            for (dx, dw) in conv {
                if want_weights {
                    add_into(&mut dparams[blk.weight.clone()], &dw);
                }
                grads.push(dx);
            }
        }

        let inputs = if want_input {
            grads.iter().map(|g| chw_to_hwc(g, input)).collect()
        } else {
            Vec::new()
        };
        (inputs, dparams)
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Per-channel mean and biased variance over a batch of activations.
fn batch_stats<T: Scalar>(zs: &[Vec<T>], d: Dims) -> BnStats<T> {
    let n = T::lit((zs.len() * d.plane()) as f64);
    let mut mean = vec![T::zero(); d.c];
    let mut var = vec![T::zero(); d.c];
    for c in 0..d.c {
        let mut s = T::zero();
        for z in zs {
            s += z[c * d.plane()..(c + 1) * d.plane()].iter().copied().sum::<T>();
        }
        let mu = s / n;
        let mut q = T::zero();
        for z in zs {
            for &v in &z[c * d.plane()..(c + 1) * d.plane()] {
                q += (v - mu) * (v - mu);
            }
        }
        mean[c] = mu;
        var[c] = q / n;
    }
    BnStats { mean, var }
}

fn bn_affine<T: Scalar>(st: &BnStats<T>, gamma: &[T], beta: &[T], eps: T) -> (Vec<T>, Vec<T>) {
    let scale: Vec<T> = st
        .var
        .iter()
        .zip(gamma)
        .map(|(&v, &g)| g / (v + eps).sqrt())
        .collect();
    let shift = st
        .mean
        .iter()
        .zip(beta)
        .zip(&scale)
        .map(|((&m, &b), &s)| b - m * s)
        .collect();
    (scale, shift)
}

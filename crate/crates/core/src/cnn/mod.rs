//! 1D-CNN classifier: four conv blocks (same-padded convolution, batch
//! norm, leaky ReLU, max-pool), then FC1, leaky ReLU, dropout, FC2 and
//! softmax. Forward and backward passes are written out by hand on top of
//! a strided GEMM.
//!
//! Tensors are flat, sample-major, channel-major buffers: element
//! `(s, c, t)` of an `n x C x L` tensor sits at `(s * C + c) * L + t`.

mod checkpoint;
pub mod gradcheck;
pub mod real;
mod train;

use std::ops::Range;

use rand::Rng as _;

use crate::dataset::LabeledWindow;
use crate::par::Exec;
use crate::rng;
pub use real::Real;
use real::{gemm, Mat};
pub use train::{predict, probabilities, train, AdamW, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum CnnError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("training diverged: loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub input_length: usize,
    pub input_channels: usize,
    pub blocks: Vec<ConvSpec>,
    pub fc1: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    /// Weight of the newest batch in the running statistics.
    pub bn_momentum: f64,
}

impl CnnConfig {
    /// 32/64/128/128 channels, kernel 5, pool 5, FC1 1024, dropout 0.5,
    /// on 30 s windows at 120 Hz.
    pub fn standard(input_channels: usize, num_classes: usize) -> Self {
        Self {
            input_length: 3600,
            input_channels,
            blocks: [32, 64, 128, 128]
                .iter()
                .map(|&c| ConvSpec {
                    out_channels: c,
                    kernel: 5,
                    pool: 5,
                })
                .collect(),
            fc1: 1024,
            dropout: 0.5,
            num_classes,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Temporal length entering each block, plus the final pooled length.
    pub fn lengths(&self) -> Vec<usize> {
        let mut l = vec![self.input_length];
        for b in &self.blocks {
            let last = *l.last().unwrap();
            l.push(last / b.pool.max(1));
        }
        l
    }

    pub fn in_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.input_channels
        } else {
            self.blocks[block - 1].out_channels
        }
    }

    pub fn flat_len(&self) -> usize {
        self.blocks.last().map_or(self.input_channels, |b| b.out_channels) * self.lengths().last().unwrap()
    }

    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |m: String| Err(CnnError::InvalidConfig(m));
        if self.blocks.len() != 4 {
            return bad(format!("expected 4 conv blocks, found {}", self.blocks.len()));
        }
        if self.input_channels == 0 || self.fc1 == 0 || self.num_classes < 2 {
            return bad("channels, fc1 width and class count must be positive (>= 2 classes)".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.kernel % 2 == 0 || b.out_channels == 0 || b.pool == 0 {
                return bad(format!("block {i}: kernel must be odd, channels and pool positive"));
            }
        }
        if let Some(l) = self.lengths().iter().position(|&l| l == 0) {
            return bad(format!("input length {} pools down to 0 at block {}", self.input_length, l - 1));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0 && self.bn_eps > 0.0) {
            return bad("bn momentum must lie in (0, 1], eps positive".into());
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let conv: usize = (0..self.blocks.len())
            .map(|i| {
                let b = &self.blocks[i];
                self.in_channels(i) * b.out_channels * b.kernel + b.out_channels + 2 * b.out_channels
            })
            .sum();
        conv + self.flat_len() * self.fc1 + self.fc1 + self.fc1 * self.num_classes + self.num_classes
    }
}

/// One named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Receives decoupled weight decay (weights only).
    pub decay: bool,
}

impl ParamBlock {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Blocks are `conv{i}.weight`, `conv{i}.bias`, `bn{i}.gamma`, `bn{i}.beta`
/// for each conv block, then `fc1.weight`, `fc1.bias`, `fc2.weight`,
/// `fc2.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
}

const FC1_W: usize = 16;
const FC1_B: usize = 17;
const FC2_W: usize = 18;
const FC2_B: usize = 19;

impl ParamLayout {
    pub fn new(cfg: &CnnConfig) -> Self {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, len: usize, decay: bool| {
            blocks.push(ParamBlock {
                name,
                offset,
                len,
                decay,
            });
            offset += len;
        };
        for (i, b) in cfg.blocks.iter().enumerate() {
            push(format!("conv{i}.weight"), cfg.in_channels(i) * b.out_channels * b.kernel, true);
            push(format!("conv{i}.bias"), b.out_channels, false);
            push(format!("bn{i}.gamma"), b.out_channels, false);
            push(format!("bn{i}.beta"), b.out_channels, false);
        }
        push("fc1.weight".into(), cfg.flat_len() * cfg.fc1, true);
        push("fc1.bias".into(), cfg.fc1, false);
        push("fc2.weight".into(), cfg.fc1 * cfg.num_classes, true);
        push("fc2.bias".into(), cfg.num_classes, false);
        Self { blocks }
    }

    pub fn total(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len)
    }

    pub fn get(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    fn r(&self, i: usize) -> Range<usize> {
        self.blocks[i].range()
    }

    /// Everything FC2 depends on: conv, batch norm and FC1.
    pub fn frozen_for_transfer(&self) -> Range<usize> {
        0..self.blocks[FC2_W].offset
    }

    pub fn fc2(&self) -> Range<usize> {
        self.blocks[FC2_W].offset..self.total()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T: Real> {
    pub config: CnnConfig,
    pub layout: ParamLayout,
    pub params: Vec<T>,
    /// Concatenated per-block batch-norm running statistics.
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Seed the weights were initialized (and trained) from.
    pub seed: u64,
}

/// A batch of inputs, `n x S x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub data: Vec<T>,
    pub n: usize,
}

impl<T: Real> Batch<T> {
    /// Transposes time-major windows into the channel-major layout.
    pub fn from_windows(windows: &[&LabeledWindow]) -> Self {
        let mut data = Vec::with_capacity(windows.iter().map(|w| w.data.len()).sum());
        for w in windows {
            for c in 0..w.channels {
                data.extend(w.data.iter().skip(c).step_by(w.channels).map(|&x| T::of(x as f64)));
            }
        }
        Self { data, n: windows.len() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
    argmax: Vec<u32>,
}

/// Intermediate values of a forward pass, needed for backward.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    blocks: Vec<BlockCache<T>>,
    flat: Vec<T>,
    h_pre: Vec<T>,
    h: Vec<T>,
    mask: Vec<T>,
    n: usize,
}

const GRAD_CHUNK: usize = 4;

impl<T: Real> CnnModel<T> {
    /// Fan-in scaled uniform initialization; batch-norm scale 1, shift 0.
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self, CnnError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![T::zero(); layout.total()];
        let mut r = rng::sub_rng(seed, "cnn-init");
        let mut fill = |range: Range<usize>, bound: f64, params: &mut [T]| {
            for p in &mut params[range] {
                *p = T::of(r.random_range(-bound..bound));
            }
        };
        for (i, b) in config.blocks.iter().enumerate() {
            let fan_in = (config.in_channels(i) * b.kernel) as f64;
            fill(layout.r(4 * i), (6.0 / fan_in).sqrt(), &mut params);
            fill(layout.r(4 * i + 1), 1.0 / fan_in.sqrt(), &mut params);
            params[layout.r(4 * i + 2)].iter_mut().for_each(|g| *g = T::one());
        }
        let f = config.flat_len() as f64;
        fill(layout.r(FC1_W), (6.0 / f).sqrt(), &mut params);
        fill(layout.r(FC1_B), 1.0 / f.sqrt(), &mut params);
        let h = config.fc1 as f64;
        fill(layout.r(FC2_W), 1.0 / h.sqrt(), &mut params);
        fill(layout.r(FC2_B), 1.0 / h.sqrt(), &mut params);
        let bn: usize = config.blocks.iter().map(|b| b.out_channels).sum();
        Ok(Self {
            config,
            layout,
            params,
            running_mean: vec![T::zero(); bn],
            running_var: vec![T::one(); bn],
            seed,
        })
    }

    /// Re-draws FC2 as a freshly initialized layer.
    pub fn reinit_fc2(&mut self, seed: u64) {
        let mut r = rng::sub_rng(seed, "fc2-init");
        let bound = 1.0 / (self.config.fc1 as f64).sqrt();
        for p in &mut self.params[self.layout.fc2()] {
            *p = T::of(r.random_range(-bound..bound));
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn bn_offset(&self, block: usize) -> usize {
        self.config.blocks[..block].iter().map(|b| b.out_channels).sum()
    }

    fn slope(&self) -> T {
        T::of(self.config.leaky_slope)
    }

    fn check_input(&self, x: &Batch<T>) -> Result<(), CnnError> {
        let per = self.config.input_channels * self.config.input_length;
        if x.n == 0 || x.data.len() != x.n * per {
            return Err(CnnError::ShapeMismatch(format!(
                "batch of {} values for {} samples of {} x {}",
                x.data.len(),
                x.n,
                self.config.input_channels,
                self.config.input_length
            )));
        }
        Ok(())
    }

    fn block_forward(&self, i: usize, x: Vec<T>, n: usize, mode: Mode, exec: Exec) -> (Vec<T>, BlockCache<T>) {
        let cfg = &self.config;
        let spec = &cfg.blocks[i];
        let (cin, cout, k, p) = (cfg.in_channels(i), spec.out_channels, spec.kernel, spec.pool);
        let lin = cfg.lengths()[i];
        let lout = lin / p;
        let w = &self.params[self.layout.r(4 * i)];
        let b = &self.params[self.layout.r(4 * i + 1)];
        let gamma = &self.params[self.layout.r(4 * i + 2)];
        let beta = &self.params[self.layout.r(4 * i + 3)];

        let mut y = vec![T::zero(); n * cout * lin];
        exec.chunks_mut(&mut y, cout * lin, |s, ys| {
            let mut col = vec![T::zero(); cin * k * lin];
            im2col(&x[s * cin * lin..(s + 1) * cin * lin], cin, k, lin, &mut col);
            gemm(cout, cin * k, lin, T::one(), Mat::rows(w, cin * k), Mat::rows(&col, lin), T::zero(), ys);
            for (c, row) in ys.chunks_mut(lin).enumerate() {
                row.iter_mut().for_each(|v| *v = *v + b[c]);
            }
        });

        let (mean, var) = match mode {
            Mode::Train => {
                let stats = exec.map_range(cout, |c| {
                    let count = (n * lin) as f64;
                    let it = || (0..n).flat_map(|s| y[(s * cout + c) * lin..(s * cout + c + 1) * lin].iter());
                    let m = it().map(|v| v.f64()).sum::<f64>() / count;
                    let v = it().map(|v| (v.f64() - m).powi(2)).sum::<f64>() / count;
                    (T::of(m), T::of(v))
                });
                stats.into_iter().unzip()
            }
            Mode::Eval => {
                let o = self.bn_offset(i);
                (self.running_mean[o..o + cout].to_vec(), self.running_var[o..o + cout].to_vec())
            }
        };
        let eps = T::of(cfg.bn_eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut out = vec![T::zero(); n * cout * lout];
        let mut argmax = vec![0u32; n * cout * lout];
        {
            let mut zipped: Vec<(&mut [T], &mut [T], &mut [u32])> = y
                .chunks_mut(cout * lin)
                .zip(out.chunks_mut(cout * lout.max(1)))
                .zip(argmax.chunks_mut(cout * lout.max(1)))
                .map(|((a, b), c)| (a, b, c))
                .collect();
            let slope = self.slope();
            exec.for_each_mut(&mut zipped, |_, (ys, os, am)| {
                for c in 0..cout {
                    let row = &mut ys[c * lin..(c + 1) * lin];
                    for v in row.iter_mut() {
                        *v = (*v - mean[c]) * inv_std[c];
                    }
                    for j in 0..lout {
                        let mut best = 0;
                        let mut bv = T::neg_infinity();
                        for q in 0..p {
                            let a = gamma[c] * row[j * p + q] + beta[c];
                            if a > bv {
                                bv = a;
                                best = q;
                            }
                        }
                        os[c * lout + j] = leaky(bv, slope);
                        am[c * lout + j] = (j * p + best) as u32;
                    }
                }
            });
        }
        let cache = BlockCache {
            input: x,
            xhat: y,
            inv_std,
            mean,
            var,
            argmax,
        };
        (out, cache)
    }

    /// Runs the network. In train mode batch statistics are used and
    /// dropout draws its mask from `dropout_seed`; the model itself is not
    /// modified (see [`CnnModel::update_running_stats`]).
    pub fn forward(&self, x: &Batch<T>, mode: Mode, dropout_seed: u64, exec: Exec) -> Result<(Vec<T>, Cache<T>), CnnError> {
        let (h, mut cache) = self.forward_fc1(x, mode, exec)?;
        let n = x.n;
        let cfg = &self.config;
        let mut h = h;
        if mode == Mode::Train && cfg.dropout > 0.0 {
            let mut r = rng::sub_rng(dropout_seed, "dropout");
            let keep = T::of(1.0 / (1.0 - cfg.dropout));
            cache.mask = (0..h.len())
                .map(|_| if r.random::<f64>() >= cfg.dropout { keep } else { T::zero() })
                .collect();
            h.iter_mut().zip(&cache.mask).for_each(|(v, m)| *v = *v * *m);
        }
        let probs = head_forward(&self.params[self.layout.r(FC2_W)], &self.params[self.layout.r(FC2_B)], &h, n, cfg.fc1, cfg.num_classes);
        cache.h = h;
        Ok((probs, cache))
    }

    /// Output of FC1 after the activation, before dropout.
    pub fn forward_fc1(&self, x: &Batch<T>, mode: Mode, exec: Exec) -> Result<(Vec<T>, Cache<T>), CnnError> {
        self.check_input(x)?;
        let n = x.n;
        let mut blocks = Vec::with_capacity(4);
        let mut cur = x.data.clone();
        for i in 0..self.config.blocks.len() {
            let (out, c) = self.block_forward(i, cur, n, mode, exec);
            blocks.push(c);
            cur = out;
        }
        let cfg = &self.config;
        let f = cfg.flat_len();
        let mut h_pre = vec![T::zero(); n * cfg.fc1];
        gemm(n, f, cfg.fc1, T::one(), Mat::rows(&cur, f), Mat::t(&self.params[self.layout.r(FC1_W)], f), T::zero(), &mut h_pre);
        let b1 = &self.params[self.layout.r(FC1_B)];
        for row in h_pre.chunks_mut(cfg.fc1) {
            row.iter_mut().zip(b1).for_each(|(v, b)| *v = *v + *b);
        }
        let slope = self.slope();
        let h: Vec<T> = h_pre.iter().map(|&v| leaky(v, slope)).collect();
        Ok((
            h,
            Cache {
                blocks,
                flat: cur,
                h_pre,
                h: Vec::new(),
                mask: Vec::new(),
                n,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics.
    pub fn update_running_stats(&mut self, cache: &Cache<T>) {
        let m = T::of(self.config.bn_momentum);
        for (i, bc) in cache.blocks.iter().enumerate() {
            let o = self.bn_offset(i);
            for c in 0..bc.mean.len() {
                let rm = &mut self.running_mean[o + c];
                *rm = (T::one() - m) * *rm + m * bc.mean[c];
                let rv = &mut self.running_var[o + c];
                *rv = (T::one() - m) * *rv + m * bc.var[c];
            }
        }
    }

    /// Gradient of the mean cross-entropy with respect to every parameter,
    /// laid out like `params`.
    pub fn backward(&self, cache: &Cache<T>, probs: &[T], labels: &[usize], exec: Exec) -> Vec<T> {
        let cfg = &self.config;
        let n = cache.n;
        let (fc1, classes, f) = (cfg.fc1, cfg.num_classes, cfg.flat_len());
        let slope = self.slope();
        let mut grads = vec![T::zero(); self.params.len()];

        let g = softmax_ce_grad(probs, labels, classes);
        let w2 = &self.params[self.layout.r(FC2_W)];
        let (dw2, db2) = head_param_grads(&g, &cache.h, n, fc1, classes);
        grads[self.layout.r(FC2_W)].copy_from_slice(&dw2);
        grads[self.layout.r(FC2_B)].copy_from_slice(&db2);

        let mut dh = vec![T::zero(); n * fc1];
        gemm(n, classes, fc1, T::one(), Mat::rows(&g, classes), Mat::rows(w2, fc1), T::zero(), &mut dh);
        for (i, v) in dh.iter_mut().enumerate() {
            if !cache.mask.is_empty() {
                *v = *v * cache.mask[i];
            }
            if cache.h_pre[i] <= T::zero() {
                *v = *v * slope;
            }
        }
        let mut dw1 = vec![T::zero(); fc1 * f];
        gemm(fc1, n, f, T::one(), Mat::t(&dh, fc1), Mat::rows(&cache.flat, f), T::zero(), &mut dw1);
        grads[self.layout.r(FC1_W)].copy_from_slice(&dw1);
        let db1 = column_sums(&dh, n, fc1);
        grads[self.layout.r(FC1_B)].copy_from_slice(&db1);
        let mut dcur = vec![T::zero(); n * f];
        gemm(n, fc1, f, T::one(), Mat::rows(&dh, fc1), Mat::rows(&self.params[self.layout.r(FC1_W)], f), T::zero(), &mut dcur);

        for i in (0..cfg.blocks.len()).rev() {
            dcur = self.block_backward(i, &cache.blocks[i], &dcur, n, i > 0, &mut grads, exec);
        }
        grads
    }

    fn block_backward(&self, i: usize, bc: &BlockCache<T>, dout: &[T], n: usize, need_dx: bool, grads: &mut [T], exec: Exec) -> Vec<T> {
        let cfg = &self.config;
        let spec = &cfg.blocks[i];
        let (cin, cout, k) = (cfg.in_channels(i), spec.out_channels, spec.kernel);
        let lin = cfg.lengths()[i];
        let lout = lin / spec.pool;
        let gamma = &self.params[self.layout.r(4 * i + 2)];
        let beta = &self.params[self.layout.r(4 * i + 3)];
        let slope = self.slope();

        // route through max-pool and leaky ReLU; dact holds dL/d(bn output)
        let mut dact = vec![T::zero(); n * cout * lin];
        exec.chunks_mut(&mut dact, cout * lin, |s, ds| {
            for c in 0..cout {
                for j in 0..lout {
                    let o = (s * cout + c) * lout + j;
                    let t = bc.argmax[o] as usize;
                    let a = gamma[c] * bc.xhat[(s * cout + c) * lin + t] + beta[c];
                    ds[c * lin + t] = if a > T::zero() { dout[o] } else { dout[o] * slope };
                }
            }
        });

        // batch norm: per-channel sums, then the input gradient
        let sums = exec.map_range(cout, |c| {
            let (mut dg, mut db) = (T::zero(), T::zero());
            for s in 0..n {
                let base = (s * cout + c) * lin;
                for t in 0..lin {
                    dg = dg + dact[base + t] * bc.xhat[base + t];
                    db = db + dact[base + t];
                }
            }
            (dg, db)
        });
        let count = T::of((n * lin) as f64);
        for (c, &(dg, db)) in sums.iter().enumerate() {
            grads[self.layout.r(4 * i + 2)][c] = dg;
            grads[self.layout.r(4 * i + 3)][c] = db;
        }
        // with dxhat = gamma * dact:
        // dy = inv_std / N * (N dxhat - sum dxhat - xhat * sum(dxhat xhat))
        let mut dy = dact;
        exec.chunks_mut(&mut dy, cout * lin, |s, ds| {
            for c in 0..cout {
                let (dg, db) = sums[c];
                let scale = gamma[c] * bc.inv_std[c] / count;
                let base = (s * cout + c) * lin;
                for t in 0..lin {
                    let v = &mut ds[c * lin + t];
                    *v = scale * (count * *v - db - bc.xhat[base + t] * dg);
                }
            }
        });

        // convolution
        let db = column_sums_strided(&dy, n, cout, lin);
        grads[self.layout.r(4 * i + 1)].copy_from_slice(&db);
        let wlen = cout * cin * k;
        let chunks = n.div_ceil(GRAD_CHUNK);
        let partial = exec.map_range(chunks, |ch| {
            let mut acc = vec![T::zero(); wlen];
            let mut col = vec![T::zero(); cin * k * lin];
            for s in ch * GRAD_CHUNK..((ch + 1) * GRAD_CHUNK).min(n) {
                im2col(&bc.input[s * cin * lin..(s + 1) * cin * lin], cin, k, lin, &mut col);
                gemm(cout, lin, cin * k, T::one(), Mat::rows(&dy[s * cout * lin..(s + 1) * cout * lin], lin), Mat::t(&col, lin), T::one(), &mut acc);
            }
            acc
        });
        let dw = &mut grads[self.layout.r(4 * i)];
        for p in &partial {
            dw.iter_mut().zip(p).for_each(|(a, b)| *a = *a + *b);
        }
        if !need_dx {
            return Vec::new();
        }
        let w = &self.params[self.layout.r(4 * i)];
        let mut dx = vec![T::zero(); n * cin * lin];
        exec.chunks_mut(&mut dx, cin * lin, |s, dxs| {
            let mut dcol = vec![T::zero(); cin * k * lin];
            gemm(cin * k, cout, lin, T::one(), Mat::t(w, cin * k), Mat::rows(&dy[s * cout * lin..(s + 1) * cout * lin], lin), T::zero(), &mut dcol);
            col2im(&dcol, cin, k, lin, dxs);
        });
        dx
    }

    /// Mean cross-entropy of `probs` against `labels`.
    pub fn loss(probs: &[T], labels: &[usize], classes: usize) -> f64 {
        cross_entropy(probs, labels, classes)
    }
}

fn leaky<T: Real>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * slope
    }
}

/// `col[(ci * k + j) * l + t] = x[ci][t + j - k/2]`, zero outside.
fn im2col<T: Real>(x: &[T], cin: usize, k: usize, l: usize, col: &mut [T]) {
    let pad = k / 2;
    for ci in 0..cin {
        let src = &x[ci * l..(ci + 1) * l];
        for j in 0..k {
            let row = &mut col[(ci * k + j) * l..(ci * k + j + 1) * l];
            // t + j - pad in [0, l)
            let lo = pad.saturating_sub(j);
            let hi = (l + pad).saturating_sub(j).min(l);
            row[..lo.min(l)].iter_mut().for_each(|v| *v = T::zero());
            if lo < hi {
                row[lo..hi].copy_from_slice(&src[lo + j - pad..hi + j - pad]);
            }
            row[hi.max(lo)..].iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

fn col2im<T: Real>(col: &[T], cin: usize, k: usize, l: usize, dx: &mut [T]) {
    let pad = k / 2;
    for ci in 0..cin {
        let dst = &mut dx[ci * l..(ci + 1) * l];
        for j in 0..k {
            let row = &col[(ci * k + j) * l..(ci * k + j + 1) * l];
            let lo = pad.saturating_sub(j);
            let hi = (l + pad).saturating_sub(j).min(l);
            for t in lo..hi {
                dst[t + j - pad] = dst[t + j - pad] + row[t];
            }
        }
    }
}

fn column_sums<T: Real>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        out.iter_mut().zip(&m[r * cols..(r + 1) * cols]).for_each(|(a, b)| *a = *a + *b);
    }
    out
}

/// Sum over samples and time of an `n x c x l` tensor, per channel.
fn column_sums_strided<T: Real>(m: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (s * c + ch) * l;
            *o = m[base..base + l].iter().fold(*o, |a, &b| a + b);
        }
    }
    out
}

/// Softmax of `h W^T + b`, row by row.
pub fn head_forward<T: Real>(w: &[T], b: &[T], h: &[T], n: usize, width: usize, classes: usize) -> Vec<T> {
    let mut logits = vec![T::zero(); n * classes];
    gemm(n, width, classes, T::one(), Mat::rows(h, width), Mat::t(w, width), T::zero(), &mut logits);
    for row in logits.chunks_mut(classes) {
        row.iter_mut().zip(b).for_each(|(v, b)| *v = *v + *b);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    logits
}

/// `(p - onehot) / n`, the gradient of mean cross-entropy at the logits.
pub fn softmax_ce_grad<T: Real>(probs: &[T], labels: &[usize], classes: usize) -> Vec<T> {
    let n = labels.len();
    let inv = T::of(1.0 / n as f64);
    let mut g = probs.to_vec();
    for (s, &y) in labels.iter().enumerate() {
        g[s * classes + y] = g[s * classes + y] - T::one();
    }
    g.iter_mut().for_each(|v| *v = *v * inv);
    g
}

/// Weight and bias gradients of the output layer from logit gradients.
pub fn head_param_grads<T: Real>(g: &[T], h: &[T], n: usize, width: usize, classes: usize) -> (Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); classes * width];
    gemm(classes, n, width, T::one(), Mat::t(g, classes), Mat::rows(h, width), T::zero(), &mut dw);
    (dw, column_sums(g, n, classes))
}

pub fn cross_entropy<T: Real>(probs: &[T], labels: &[usize], classes: usize) -> f64 {
    let n = labels.len().max(1) as f64;
    labels
        .iter()
        .enumerate()
        .map(|(s, &y)| -probs[s * classes + y].f64().max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> CnnModel<f64> {
        let cfg = CnnConfig {
            input_length: 50,
            input_channels: 2,
            blocks: (0..4)
                .map(|_| ConvSpec {
                    out_channels: 2,
                    kernel: 3,
                    pool: 2,
                })
                .collect(),
            fc1: 4,
            dropout: 0.0,
            num_classes: 3,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 1.0,
        };
        CnnModel::new(cfg, seed).unwrap()
    }

    fn random_batch(n: usize, per: usize, seed: u64) -> Batch<f64> {
        let mut r = rng::rng(seed);
        Batch {
            data: (0..n * per).map(|_| r.random_range(-1.0..1.0)).collect(),
            n,
        }
    }

    #[test]
    fn standard_lengths_and_counts() {
        let cfg = CnnConfig::standard(10, 7);
        assert_eq!(cfg.lengths(), vec![3600, 720, 144, 28, 5]);
        let layout = ParamLayout::new(&cfg);
        assert_eq!(layout.get("conv0.weight").unwrap().len + layout.get("conv0.bias").unwrap().len, 1632);
        assert_eq!(layout.get("fc2.weight").unwrap().len + layout.get("fc2.bias").unwrap().len, 7175);
        assert_eq!(layout.total(), cfg.param_count());
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let (cin, k, l) = (2, 5, 9);
        let mut r = rng::rng(1);
        let x: Vec<f64> = (0..cin * l).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..cin * k * l).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut col = vec![0.0; cin * k * l];
        im2col(&x, cin, k, l, &mut col);
        let mut back = vec![0.0; cin * l];
        col2im(&y, cin, k, l, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!((col[0], col[2 * l]), (0.0, x[0])); // tap 0 reads padding, tap 2 is the centre
        assert_eq!(col[2 * l + 3], x[3]);
    }

    #[test]
    fn eval_rows_sum_to_one() {
        let m = tiny(3);
        let x = random_batch(5, 100, 4);
        let (p, _) = m.forward(&x, Mode::Eval, 0, Exec::Sequential).unwrap();
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let bad = Batch { data: vec![0.0; 7], n: 1 };
        assert!(matches!(m.forward(&bad, Mode::Eval, 0, Exec::Sequential), Err(CnnError::ShapeMismatch(_))));
    }

    #[test]
    fn train_equals_eval_with_matching_stats() {
        let mut m = tiny(5);
        let x = random_batch(6, 100, 6);
        let (pt, cache) = m.forward(&x, Mode::Train, 0, Exec::Sequential).unwrap();
        m.update_running_stats(&cache);
        let (pe, _) = m.forward(&x, Mode::Eval, 0, Exec::Sequential).unwrap();
        assert_eq!(pt, pe);
    }

    #[test]
    fn batch_norm_normalizes() {
        let m = tiny(7);
        let x = random_batch(4, 100, 8);
        let (_, cache) = m.forward(&x, Mode::Train, 0, Exec::Sequential).unwrap();
        let bc = &cache.blocks[0];
        for c in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|s| bc.xhat[(s * 2 + c) * 50..(s * 2 + c + 1) * 50].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            // eps in the denominator keeps the variance just below 1
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let m = tiny(9);
        let x = random_batch(3, 100, 10);
        let labels = [0, 1, 2];
        let (p, c) = m.forward(&x, Mode::Train, 0, Exec::Sequential).unwrap();
        let g1 = m.backward(&c, &p, &labels, Exec::Sequential);
        let x2 = Batch {
            data: [x.data.clone(), x.data.clone()].concat(),
            n: 6,
        };
        let (p2, c2) = m.forward(&x2, Mode::Train, 0, Exec::Sequential).unwrap();
        let g2 = m.backward(&c2, &p2, &[0, 1, 2, 0, 1, 2], Exec::Sequential);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn confident_correct_prediction_has_zero_head_gradient() {
        let g = softmax_ce_grad(&[0.0, 1.0, 0.0], &[1], 3);
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
        let u = [1.0 / 3.0; 3];
        assert!((cross_entropy(&u, &[2], 3) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn parallel_matches_sequential() {
        let m = tiny(11);
        let x = random_batch(9, 100, 12);
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let (pa, ca) = m.forward(&x, Mode::Train, 1, Exec::Sequential).unwrap();
        let (pb, cb) = m.forward(&x, Mode::Train, 1, Exec::Parallel).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(m.backward(&ca, &pa, &labels, Exec::Sequential), m.backward(&cb, &pb, &labels, Exec::Parallel));
    }
}

//! Pooling, normalization, activations and the two structural joins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{Batch, Real};
use crate::error::{Error, Result};

/// 2³ max pooling with stride 2. Returns the pooled batch and, per output
/// element, the flat input index of its maximum (ties go to the lowest index).
pub fn maxpool3d<T: Real>(x: &Batch<T>) -> Result<(Batch<T>, Vec<u32>)> {
    let [sx, sy, sz] = x.spatial();
    if sx < 2 || sy < 2 || sz < 2 {
        return Err(Error::Shape(format!("max pooling needs every axis ≥ 2, got {:?}", x.spatial())));
    }
    let [ox, oy, oz] = [sx / 2, sy / 2, sz / 2];
    let planes = x.batch_size() * x.channels();
    let mut y = Batch::zeros([x.batch_size(), x.channels(), ox, oy, oz]);
    let mut arg = vec![0u32; y.len()];
    let in_vox = x.voxels();
    let out_vox = ox * oy * oz;
    y.data_mut()
        .par_chunks_mut(out_vox)
        .zip(arg.par_chunks_mut(out_vox))
        .enumerate()
        .for_each(|(p, (yp, ap))| {
            let base = p * in_vox;
            let src = &x.data()[base..base + in_vox];
            for i in 0..ox {
                for j in 0..oy {
                    for l in 0..oz {
                        let mut best = (2 * i * sy + 2 * j) * sz + 2 * l;
                        for a in 0..2 {
                            for b in 0..2 {
                                for c in 0..2 {
                                    let at = ((2 * i + a) * sy + 2 * j + b) * sz + 2 * l + c;
                                    if src[at] > src[best] {
                                        best = at;
                                    }
                                }
                            }
                        }
                        let o = (i * oy + j) * oz + l;
                        yp[o] = src[best];
                        ap[o] = (base + best) as u32;
                    }
                }
            }
        });
    debug_assert_eq!(planes * out_vox, y.len());
    Ok((y, arg))
}

/// Routes each pooled gradient to the recorded argmax.
pub fn maxpool3d_backward<T: Real>(input_shape: [usize; 5], argmax: &[u32], dy: &Batch<T>) -> Batch<T> {
    let mut dx = Batch::zeros(input_shape);
    let d = dx.data_mut();
    for (&at, &g) in argmax.iter().zip(dy.data()) {
        d[at as usize] += g;
    }
    dx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Batch-normalization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    /// Fraction of the old running statistic kept at each update.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { eps: 1e-5, momentum: 0.9 }
    }
}

/// Values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub normalized: Batch<T>,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
    /// Batch mean and unbiased variance per channel (train mode only).
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Per-channel normalization over the batch and spatial axes followed by
/// `gamma·x̂ + beta`. In eval mode the running statistics are used instead.
pub fn batchnorm3d<T: Real>(
    x: &Batch<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<(Batch<T>, BatchNormCache<T>)> {
    let c = x.channels();
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape(format!("batch norm parameters do not match {c} channels")));
    }
    let m = x.batch_size() * x.voxels();
    if mode == Mode::Train && m < 2 {
        return Err(Error::Precondition(
            "batch norm in train mode needs at least two values per channel".into(),
        ));
    }
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    let mut unbiased = vec![0.0f64; c];
    match mode {
        Mode::Train => {
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..x.batch_size() {
                    s += x.plane(b, ch).iter().map(|v| v.f64()).sum::<f64>();
                }
                let mu = s / m as f64;
                let mut ss = 0.0;
                for b in 0..x.batch_size() {
                    ss += x.plane(b, ch).iter().map(|v| (v.f64() - mu).powi(2)).sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = ss / m as f64;
                unbiased[ch] = ss / (m - 1) as f64;
            }
        }
        Mode::Eval => {
            for ch in 0..c {
                mean[ch] = running_mean[ch].f64();
                var[ch] = running_var[ch].f64();
            }
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();
    let mut normalized = Batch::zeros(x.shape());
    let mut y = Batch::zeros(x.shape());
    let vox = x.voxels();
    normalized
        .data_mut()
        .par_chunks_mut(vox)
        .zip(y.data_mut().par_chunks_mut(vox))
        .enumerate()
        .for_each(|(p, (np, yp))| {
            let ch = p % c;
            let (mu, is) = (mean[ch], inv_std[ch]);
            let (g, bt) = (gamma[ch], beta[ch]);
            for ((n, o), &v) in np.iter_mut().zip(yp.iter_mut()).zip(&x.data()[p * vox..(p + 1) * vox]) {
                *n = T::of((v.f64() - mu) * is);
                *o = g * *n + bt;
            }
        });
    Ok((
        y,
        BatchNormCache {
            normalized,
            inv_std,
            mode,
            batch_mean: if mode == Mode::Train { mean } else { Vec::new() },
            batch_var: if mode == Mode::Train { unbiased } else { Vec::new() },
        },
    ))
}

/// Exponential moving average update of running statistics.
pub fn update_running_stats<T: Real>(
    running_mean: &mut [T],
    running_var: &mut [T],
    cache: &BatchNormCache<T>,
    cfg: BatchNormConfig,
) {
    if cache.mode != Mode::Train {
        return;
    }
    for ch in 0..running_mean.len() {
        running_mean[ch] = T::of(cfg.momentum * running_mean[ch].f64() + (1.0 - cfg.momentum) * cache.batch_mean[ch]);
        running_var[ch] = T::of(cfg.momentum * running_var[ch].f64() + (1.0 - cfg.momentum) * cache.batch_var[ch]);
    }
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm3d_backward<T: Real>(gamma: &[T], cache: &BatchNormCache<T>, dy: &Batch<T>) -> (Batch<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let bsz = dy.batch_size();
    let m = (bsz * dy.voxels()) as f64;
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for ch in 0..c {
        for b in 0..bsz {
            for (&g, &n) in dy.plane(b, ch).iter().zip(cache.normalized.plane(b, ch)) {
                sum_dy[ch] += g.f64();
                sum_dy_xhat[ch] += g.f64() * n.f64();
            }
        }
    }
    let mut dx = Batch::zeros(dy.shape());
    let vox = dy.voxels();
    dx.data_mut().par_chunks_mut(vox).enumerate().for_each(|(p, dp)| {
        let ch = p % c;
        let scale = gamma[ch].f64() * cache.inv_std[ch];
        let g = &dy.data()[p * vox..(p + 1) * vox];
        let n = &cache.normalized.data()[p * vox..(p + 1) * vox];
        match cache.mode {
            Mode::Train => {
                let (a, b) = (sum_dy[ch] / m, sum_dy_xhat[ch] / m);
                for ((d, &gv), &nv) in dp.iter_mut().zip(g).zip(n) {
                    *d = T::of(scale * (gv.f64() - a - nv.f64() * b));
                }
            }
            Mode::Eval => {
                for (d, &gv) in dp.iter_mut().zip(g) {
                    *d = T::of(scale * gv.f64());
                }
            }
        }
    });
    (
        dx,
        sum_dy_xhat.into_iter().map(T::of).collect(),
        sum_dy.into_iter().map(T::of).collect(),
    )
}

/// Parametric ReLU with one slope per channel.
pub fn prelu<T: Real>(x: &Batch<T>, slope: &[T]) -> Result<Batch<T>> {
    if slope.len() != x.channels() {
        return Err(Error::Shape(format!(
            "PReLU has {} slopes for {} channels",
            slope.len(),
            x.channels()
        )));
    }
    let c = x.channels();
    let vox = x.voxels();
    let mut y = x.clone();
    y.data_mut().par_chunks_mut(vox).enumerate().for_each(|(p, yp)| {
        let a = slope[p % c];
        for v in yp {
            if *v <= T::zero() {
                *v = a * *v;
            }
        }
    });
    Ok(y)
}

/// Returns `(dx, dslope)`.
pub fn prelu_backward<T: Real>(x: &Batch<T>, slope: &[T], dy: &Batch<T>) -> (Batch<T>, Vec<T>) {
    let c = x.channels();
    let vox = x.voxels();
    let mut dx = dy.clone();
    dx.data_mut().par_chunks_mut(vox).enumerate().for_each(|(p, dp)| {
        let a = slope[p % c];
        for (d, &v) in dp.iter_mut().zip(&x.data()[p * vox..(p + 1) * vox]) {
            if v <= T::zero() {
                *d = a * *d;
            }
        }
    });
    let mut ds = vec![T::zero(); c];
    for b in 0..x.batch_size() {
        for (ch, s) in ds.iter_mut().enumerate() {
            for (&v, &g) in x.plane(b, ch).iter().zip(dy.plane(b, ch)) {
                if v <= T::zero() {
                    *s += g * v;
                }
            }
        }
    }
    (dx, ds)
}

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Batch<T>) -> Batch<T> {
    x.map(sigmoid_scalar)
}

/// Backward through the logistic function given its output `y`.
pub fn sigmoid_backward<T: Real>(y: &Batch<T>, dy: &Batch<T>) -> Batch<T> {
    let mut dx = dy.clone();
    for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *d = *d * s * (T::one() - s);
    }
    dx
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Real>(a: &Batch<T>, b: &Batch<T>) -> Result<Batch<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(Error::Shape(format!("cannot concatenate {sa:?} with {sb:?}")));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..sa[0] {
        data.extend_from_slice(a.sample(s));
        data.extend_from_slice(b.sample(s));
    }
    Batch::from_vec([sa[0], sa[1] + sb[1], sa[2], sa[3], sa[4]], data)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<T: Real>(g: &Batch<T>, first: usize) -> (Batch<T>, Batch<T>) {
    let [bsz, c, x, y, z] = g.shape();
    let vox = g.voxels();
    let mut a = Vec::with_capacity(bsz * first * vox);
    let mut b = Vec::with_capacity(bsz * (c - first) * vox);
    for s in 0..bsz {
        let sample = g.sample(s);
        a.extend_from_slice(&sample[..first * vox]);
        b.extend_from_slice(&sample[first * vox..]);
    }
    (
        Batch::from_vec([bsz, first, x, y, z], a).unwrap(),
        Batch::from_vec([bsz, c - first, x, y, z], b).unwrap(),
    )
}

pub fn residual_add<T: Real>(a: &Batch<T>, b: &Batch<T>) -> Result<Batch<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("cannot add {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

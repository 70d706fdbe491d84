//! 3D convolution (cross-correlation, no kernel flip) and the stride-2
//! transposed convolution used for upsampling.
//!
//! The strided/padded convolution lowers each output x-slice to a matrix
//! product: the receptive fields of one slice are gathered into a column
//! buffer of shape `(Cin·k³) × (Y'·Z')` and multiplied by the weight matrix
//! `Cout × (Cin·k³)`. Work is split across samples; every output element and
//! every weight-gradient element is accumulated in a fixed order, so results do
//! not depend on how rayon schedules the samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Batch, Real, Strides};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(input / stride)`; zero padding with any odd extra
    /// voxel on the high side.
    Same,
    /// No padding; output extent `(input − k) / stride + 1`.
    Valid,
}

/// Shape parameters of a cubic-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    input: [usize; 3],
    output: [usize; 3],
    pad_lo: [usize; 3],
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Batch<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl Conv3d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        Conv3d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.pow(3)
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel, self.kernel, self.kernel]
    }

    /// Output spatial extent for a given input extent.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        Ok(self.geometry(input)?.output)
    }

    fn geometry(&self, input: [usize; 3]) -> Result<Geometry> {
        let (k, s) = (self.kernel, self.stride);
        if k == 0 || s == 0 {
            return Err(Error::Precondition("kernel and stride must be positive".into()));
        }
        let mut output = [0; 3];
        let mut pad_lo = [0; 3];
        for a in 0..3 {
            match self.padding {
                Padding::Same => {
                    output[a] = input[a].div_ceil(s);
                    let total = ((output[a] - 1) * s + k).saturating_sub(input[a]);
                    pad_lo[a] = total / 2;
                }
                Padding::Valid => {
                    if input[a] < k {
                        return Err(Error::Shape(format!(
                            "axis {a}: extent {} is smaller than kernel {k} with valid padding",
                            input[a]
                        )));
                    }
                    output[a] = (input[a] - k) / s + 1;
                }
            }
        }
        Ok(Geometry { input, output, pad_lo })
    }

    fn check(&self, x: &Batch<impl Real>, w_len: usize) -> Result<Geometry> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        if w_len != self.weight_len() {
            return Err(Error::Shape(format!("weight has {w_len} elements, expected {}", self.weight_len())));
        }
        self.geometry(x.spatial())
    }

    /// Gathers the receptive fields of output slice `ox` of one sample.
    fn im2col<T: Real>(&self, g: &Geometry, x: &[T], ox: usize, col: &mut [T]) {
        let k = self.kernel;
        let s = self.stride;
        let [sx, sy, sz] = g.input;
        let [_, oy_n, oz_n] = g.output;
        let plane = oy_n * oz_n;
        let mut row = 0;
        for ci in 0..self.in_channels {
            let xc = &x[ci * sx * sy * sz..(ci + 1) * sx * sy * sz];
            for kx in 0..k {
                let ix = (ox * s + kx) as isize - g.pad_lo[0] as isize;
                for ky in 0..k {
                    for kz in 0..k {
                        let dst = &mut col[row * plane..(row + 1) * plane];
                        row += 1;
                        if ix < 0 || ix >= sx as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        for oy in 0..oy_n {
                            let iy = (oy * s + ky) as isize - g.pad_lo[1] as isize;
                            let d = &mut dst[oy * oz_n..(oy + 1) * oz_n];
                            if iy < 0 || iy >= sy as isize {
                                d.fill(T::zero());
                                continue;
                            }
                            let src = &xc[(ix as usize * sy + iy as usize) * sz..][..sz];
                            let off = kz as isize - g.pad_lo[2] as isize;
                            if s == 1 {
                                // valid oz: 0 <= oz + off < sz
                                let lo = (-off).max(0) as usize;
                                let hi = ((sz as isize - off).min(oz_n as isize)).max(lo as isize) as usize;
                                d[..lo].fill(T::zero());
                                d[lo..hi].copy_from_slice(&src[(lo as isize + off) as usize..(hi as isize + off) as usize]);
                                d[hi..].fill(T::zero());
                            } else {
                                for (oz, v) in d.iter_mut().enumerate() {
                                    let iz = (oz * s) as isize + off;
                                    *v = if iz >= 0 && iz < sz as isize { src[iz as usize] } else { T::zero() };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column buffer back onto the input grid of one sample.
    fn col2im<T: Real>(&self, g: &Geometry, col: &[T], ox: usize, dx: &mut [T]) {
        let k = self.kernel;
        let s = self.stride;
        let [sx, sy, sz] = g.input;
        let [_, oy_n, oz_n] = g.output;
        let plane = oy_n * oz_n;
        let mut row = 0;
        for ci in 0..self.in_channels {
            let dc = &mut dx[ci * sx * sy * sz..(ci + 1) * sx * sy * sz];
            for kx in 0..k {
                let ix = (ox * s + kx) as isize - g.pad_lo[0] as isize;
                for ky in 0..k {
                    for kz in 0..k {
                        let src = &col[row * plane..(row + 1) * plane];
                        row += 1;
                        if ix < 0 || ix >= sx as isize {
                            continue;
                        }
                        for oy in 0..oy_n {
                            let iy = (oy * s + ky) as isize - g.pad_lo[1] as isize;
                            if iy < 0 || iy >= sy as isize {
                                continue;
                            }
                            let d = &mut dc[(ix as usize * sy + iy as usize) * sz..][..sz];
                            let c = &src[oy * oz_n..(oy + 1) * oz_n];
                            let off = kz as isize - g.pad_lo[2] as isize;
                            for (oz, &v) in c.iter().enumerate() {
                                let iz = (oz * s) as isize + off;
                                if iz >= 0 && iz < sz as isize {
                                    d[iz as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Real>(&self, x: &Batch<T>, weight: &[T], bias: Option<&[T]>) -> Result<Batch<T>> {
        let g = self.check(x, weight.len())?;
        if let Some(b) = bias {
            if b.len() != self.out_channels {
                return Err(Error::Shape(format!("bias has {} elements, expected {}", b.len(), self.out_channels)));
            }
        }
        let cout = self.out_channels;
        let rows = self.in_channels * self.kernel.pow(3);
        let [ox_n, oy_n, oz_n] = g.output;
        let plane = oy_n * oz_n;
        let out_vox = ox_n * plane;
        let mut y = Batch::zeros([x.batch_size(), cout, ox_n, oy_n, oz_n]);
        let in_len = x.sample_len();
        y.data_mut()
            .par_chunks_mut(cout * out_vox)
            .enumerate()
            .for_each(|(b, yb)| {
                let xb = &x.data()[b * in_len..(b + 1) * in_len];
                let mut col = vec![T::zero(); rows * plane];
                for ox in 0..ox_n {
                    self.im2col(&g, xb, ox, &mut col);
                    gemm(
                        cout,
                        rows,
                        plane,
                        weight,
                        Strides(rows, 1),
                        &col,
                        Strides(plane, 1),
                        T::zero(),
                        &mut yb[ox * plane..],
                        Strides(out_vox, 1),
                    );
                }
                if let Some(bias) = bias {
                    for (co, chunk) in yb.chunks_mut(out_vox).enumerate() {
                        for v in chunk {
                            *v += bias[co];
                        }
                    }
                }
            });
        Ok(y)
    }

    /// Backward pass given the upstream gradient `dy`. `need_input` controls
    /// whether the (more expensive) input gradient is computed.
    pub fn backward<T: Real>(&self, x: &Batch<T>, weight: &[T], dy: &Batch<T>, need_input: bool) -> Result<ConvGrads<T>> {
        let g = self.check(x, weight.len())?;
        let cout = self.out_channels;
        let [ox_n, oy_n, oz_n] = g.output;
        if dy.shape() != [x.batch_size(), cout, ox_n, oy_n, oz_n] {
            return Err(Error::Shape(format!("upstream gradient shape {:?} does not match output", dy.shape())));
        }
        let rows = self.in_channels * self.kernel.pow(3);
        let plane = oy_n * oz_n;
        let out_vox = ox_n * plane;
        let in_len = x.sample_len();
        let out_len = cout * out_vox;

        let per_sample: Vec<(Vec<T>, Option<Vec<T>>)> = (0..x.batch_size())
            .into_par_iter()
            .map(|b| {
                let xb = &x.data()[b * in_len..(b + 1) * in_len];
                let dyb = &dy.data()[b * out_len..(b + 1) * out_len];
                let mut col = vec![T::zero(); rows * plane];
                let mut dw = vec![T::zero(); weight.len()];
                let mut dx = need_input.then(|| vec![T::zero(); in_len]);
                for ox in 0..ox_n {
                    self.im2col(&g, xb, ox, &mut col);
                    // dW += dY_slice · colᵀ
                    gemm(
                        cout,
                        plane,
                        rows,
                        &dyb[ox * plane..],
                        Strides(out_vox, 1),
                        &col,
                        Strides(1, plane),
                        T::one(),
                        &mut dw,
                        Strides(rows, 1),
                    );
                    if let Some(dx) = dx.as_mut() {
                        // dcol = Wᵀ · dY_slice
                        gemm(
                            rows,
                            cout,
                            plane,
                            weight,
                            Strides(1, rows),
                            &dyb[ox * plane..],
                            Strides(out_vox, 1),
                            T::zero(),
                            &mut col,
                            Strides(plane, 1),
                        );
                        self.col2im(&g, &col, ox, dx);
                    }
                }
                (dw, dx)
            })
            .collect();

        let mut weight_grad = vec![T::zero(); weight.len()];
        let mut input_grad = need_input.then(|| Vec::with_capacity(x.len()));
        for (dw, dx) in per_sample {
            for (a, b) in weight_grad.iter_mut().zip(dw) {
                *a += b;
            }
            if let (Some(all), Some(dx)) = (input_grad.as_mut(), dx) {
                all.extend(dx);
            }
        }
        let mut bias_grad = vec![T::zero(); cout];
        for b in 0..x.batch_size() {
            for (co, bg) in bias_grad.iter_mut().enumerate() {
                *bg += dy.plane(b, co).iter().copied().sum::<T>();
            }
        }
        Ok(ConvGrads {
            input: match input_grad {
                Some(d) => Some(Batch::from_vec(x.shape(), d)?),
                None => None,
            },
            weight: weight_grad,
            bias: bias_grad,
        })
    }
}

/// Transposed convolution with a 2³ kernel and stride 2: doubles every spatial
/// axis. Weights are laid out `[Cin][Cout][2][2][2]`, which makes it the exact
/// adjoint of a valid-padded stride-2 [`Conv3d`] whose `[Cout][Cin]` weight
/// buffer is the same memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTranspose3d {
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose3d {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        ConvTranspose3d {
            in_channels,
            out_channels,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * 8
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.in_channels, self.out_channels, 2, 2, 2]
    }

    fn check<T: Real>(&self, x: &Batch<T>, w: &[T]) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "transposed convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        if w.len() != self.weight_len() {
            return Err(Error::Shape(format!("weight has {} elements, expected {}", w.len(), self.weight_len())));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, x: &Batch<T>, weight: &[T]) -> Result<Batch<T>> {
        self.check(x, weight)?;
        let [sx, sy, sz] = x.spatial();
        let (cin, cout) = (self.in_channels, self.out_channels);
        let out_vox = 8 * sx * sy * sz;
        let mut y = Batch::zeros([x.batch_size(), cout, 2 * sx, 2 * sy, 2 * sz]);
        y.data_mut()
            .par_chunks_mut(cout * out_vox)
            .enumerate()
            .for_each(|(b, yb)| {
                for (co, yc) in yb.chunks_mut(out_vox).enumerate() {
                    for ci in 0..cin {
                        let xc = x.plane(b, ci);
                        let w = &weight[(ci * cout + co) * 8..][..8];
                        for i in 0..sx {
                            for a in 0..2 {
                                for j in 0..sy {
                                    for bb in 0..2 {
                                        let row = &mut yc[((2 * i + a) * 2 * sy + 2 * j + bb) * 2 * sz..][..2 * sz];
                                        let src = &xc[(i * sy + j) * sz..][..sz];
                                        let (w0, w1) = (w[a * 4 + bb * 2], w[a * 4 + bb * 2 + 1]);
                                        for (l, &v) in src.iter().enumerate() {
                                            row[2 * l] += w0 * v;
                                            row[2 * l + 1] += w1 * v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Ok(y)
    }

    pub fn backward<T: Real>(&self, x: &Batch<T>, weight: &[T], dy: &Batch<T>, need_input: bool) -> Result<ConvGrads<T>> {
        self.check(x, weight)?;
        let [sx, sy, sz] = x.spatial();
        let (cin, cout) = (self.in_channels, self.out_channels);
        if dy.shape() != [x.batch_size(), cout, 2 * sx, 2 * sy, 2 * sz] {
            return Err(Error::Shape(format!("upstream gradient shape {:?} does not match output", dy.shape())));
        }
        // Visits (i, a, j, bb, l, c) for every input voxel and kernel tap.
        let taps = |xc: &[T], dyc: &[T], f: &mut dyn FnMut(usize, usize, T, T)| {
            for i in 0..sx {
                for a in 0..2 {
                    for j in 0..sy {
                        for bb in 0..2 {
                            let row = &dyc[((2 * i + a) * 2 * sy + 2 * j + bb) * 2 * sz..][..2 * sz];
                            let base = (i * sy + j) * sz;
                            for l in 0..sz {
                                f(base + l, a * 4 + bb * 2, xc[base + l], row[2 * l]);
                                f(base + l, a * 4 + bb * 2 + 1, xc[base + l], row[2 * l + 1]);
                            }
                        }
                    }
                }
            }
        };

        let mut dw = vec![T::zero(); weight.len()];
        dw.par_chunks_mut(8).enumerate().for_each(|(pair, dwk)| {
            let (ci, co) = (pair / cout, pair % cout);
            for b in 0..x.batch_size() {
                taps(x.plane(b, ci), dy.plane(b, co), &mut |_, tap, xv, g| dwk[tap] += xv * g);
            }
        });

        let input = if need_input {
            let mut dx = Batch::zeros(x.shape());
            let vox = x.voxels();
            dx.data_mut().par_chunks_mut(vox).enumerate().for_each(|(bc, dxc)| {
                let (b, ci) = (bc / cin, bc % cin);
                for co in 0..cout {
                    let w = &weight[(ci * cout + co) * 8..][..8];
                    taps(x.plane(b, ci), dy.plane(b, co), &mut |at, tap, _, g| dxc[at] += w[tap] * g);
                }
            });
            Some(dx)
        } else {
            None
        };
        Ok(ConvGrads {
            input,
            weight: dw,
            bias: Vec::new(),
        })
    }
}

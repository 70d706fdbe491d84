//! Diffusion tensor estimation and the scalar maps derived from it.
//!
//! Tensors are stored as six channels `(Dxx, Dxy, Dxz, Dyy, Dyz, Dzz)` in
//! mm²/s. The estimator is ordinary least squares on the log signal.

mod eig;
mod gradients;

pub use eig::{eig3_sym, sym_matrix, SymEigen};
pub use gradients::GradientTable;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volgrid::{BinaryMask, Volume};

/// Six-channel tensor volume.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField(Volume);

/// Single-channel scalar map (FA, MD, ...).
pub type ScalarMap = Volume;

impl TensorField {
    pub fn from_volume(v: Volume) -> Result<Self> {
        if v.channels() != 6 {
            return Err(Error::Shape(format!("tensor field needs 6 channels, got {}", v.channels())));
        }
        Ok(TensorField(v))
    }

    pub fn volume(&self) -> &Volume {
        &self.0
    }

    pub fn into_volume(self) -> Volume {
        self.0
    }

    /// Tensor elements at a flat spatial index.
    pub fn tensor_at(&self, flat: usize) -> [f64; 6] {
        let n = self.0.voxel_count();
        let d = self.0.data();
        std::array::from_fn(|c| d[c * n + flat] as f64)
    }
}

/// Unit-free row of the tensor part of the design matrix for direction `g`.
fn tensor_row(g: &[f64; 3]) -> [f64; 6] {
    [
        g[0] * g[0],
        2.0 * g[0] * g[1],
        2.0 * g[0] * g[2],
        g[1] * g[1],
        2.0 * g[1] * g[2],
        g[2] * g[2],
    ]
}

/// Least-squares solver for `ln S = ln S0 − b gᵀDg`, precomputed once per
/// gradient scheme.
#[derive(Debug, Clone)]
pub struct TensorFitter {
    /// 7 × n pseudo-inverse; row 0 gives ln S0, rows 1..7 the tensor.
    pinv: DMatrix<f64>,
    b0_rows: Vec<usize>,
}

impl TensorFitter {
    pub fn new(g: &GradientTable) -> Result<Self> {
        let n = g.len();
        let mut a = DMatrix::<f64>::zeros(n, 7);
        for (k, (&b, dir)) in g.bvals().iter().zip(g.bvecs()).enumerate() {
            a[(k, 0)] = 1.0;
            for (j, v) in tensor_row(dir).iter().enumerate() {
                a[(k, j + 1)] = -b * v;
            }
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > smax * 1e-10) {
            return Err(Error::Conditioning(format!(
                "gradient design matrix is rank deficient (singular values {smin:e} .. {smax:e})"
            )));
        }
        let pinv = svd
            .pseudo_inverse(0.0)
            .map_err(|e| Error::Conditioning(e.to_string()))?;
        let b0_rows = g
            .bvals()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 0.0)
            .map(|(i, _)| i)
            .collect();
        Ok(TensorFitter { pinv, b0_rows })
    }

    /// Fits one voxel's signal; returns `(ln S0, tensor)`.
    pub fn fit_voxel(&self, signal: &[f64]) -> (f64, [f64; 6]) {
        let s0_max = self.b0_rows.iter().map(|&i| signal[i]).fold(f64::NEG_INFINITY, f64::max);
        let floor = if s0_max > 0.0 { 1e-6 * s0_max } else { 1e-6 };
        let mut out = [0.0f64; 7];
        for (k, &s) in signal.iter().enumerate() {
            let y = s.max(floor).ln();
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.pinv[(j, k)] * y;
            }
        }
        (out[0], [out[1], out[2], out[3], out[4], out[5], out[6]])
    }
}

/// Per-voxel OLS tensor fit inside `mask`; zero elsewhere.
pub fn fit_tensor(dwi: &Volume, g: &GradientTable, mask: &BinaryMask) -> Result<TensorField> {
    let n = dwi.channels();
    if n != g.len() {
        return Err(Error::Shape(format!("DWI has {n} volumes but gradient table has {}", g.len())));
    }
    if dwi.spatial_dims() != mask.spatial_dims() {
        return Err(Error::Shape(format!(
            "DWI dims {:?} differ from mask dims {:?}",
            dwi.spatial_dims(),
            mask.spatial_dims()
        )));
    }
    let fitter = TensorFitter::new(g)?;
    let voxels = dwi.voxel_count();
    let data = dwi.data();
    let fits: Vec<[f64; 6]> = (0..voxels)
        .into_par_iter()
        .map(|i| {
            if !mask.is_set(i) {
                return [0.0; 6];
            }
            let signal: Vec<f64> = (0..n).map(|k| data[k * voxels + i] as f64).collect();
            fitter.fit_voxel(&signal).1
        })
        .collect();
    let mut out = vec![0.0f32; 6 * voxels];
    for (i, t) in fits.iter().enumerate() {
        for c in 0..6 {
            out[c * voxels + i] = t[c] as f32;
        }
    }
    TensorField::from_volume(dwi.with_data(6, out)?)
}

/// Fractional anisotropy of eigenvalues, with negative eigenvalues clamped
/// to zero and 0/0 defined as 0.
pub fn fractional_anisotropy(eigenvalues: [f64; 3]) -> f64 {
    let [a, b, c] = eigenvalues.map(|l| l.max(0.0));
    let denom = (a * a + b * b + c * c).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    let num = ((a - b).powi(2) + (b - c).powi(2) + (a - c).powi(2)).sqrt();
    ((0.5f64).sqrt() * num / denom).clamp(0.0, 1.0)
}

/// Mean diffusivity `trace / 3`, floored at zero.
pub fn mean_diffusivity(d: &[f64; 6]) -> f64 {
    ((d[0] + d[3] + d[5]) / 3.0).max(0.0)
}

pub fn fa_map(t: &TensorField) -> Result<ScalarMap> {
    scalar_map(t, |d| {
        if d.iter().all(|&x| x == 0.0) {
            0.0
        } else {
            fractional_anisotropy(eig3_sym(d).values)
        }
    })
}

pub fn md_map(t: &TensorField) -> Result<ScalarMap> {
    scalar_map(t, mean_diffusivity)
}

fn scalar_map(t: &TensorField, f: impl Fn(&[f64; 6]) -> f64 + Sync) -> Result<ScalarMap> {
    let n = t.0.voxel_count();
    let data: Vec<f32> = (0..n).into_par_iter().map(|i| f(&t.tensor_at(i)) as f32).collect();
    t.0.with_data(1, data)
}

/// Concatenates the tensor channels with extra scalar maps, in order.
pub fn stack_input(t: &TensorField, extras: &[&ScalarMap]) -> Result<Volume> {
    let mut data = t.0.data().to_vec();
    for (i, e) in extras.iter().enumerate() {
        if e.spatial_dims() != t.0.spatial_dims() {
            return Err(Error::Shape(format!(
                "extra channel {i} has dims {:?}, tensor has {:?}",
                e.spatial_dims(),
                t.0.spatial_dims()
            )));
        }
        data.extend_from_slice(e.data());
    }
    t.0.with_data(data.len() / t.0.voxel_count(), data)
}

/// Noise-free signal `S0·exp(−b gᵀDg)` for every gradient entry.
pub fn forward_signal(s0: f64, d: &[f64; 6], g: &GradientTable) -> Vec<f64> {
    g.bvals()
        .iter()
        .zip(g.bvecs())
        .map(|(&b, dir)| {
            let q: f64 = tensor_row(dir).iter().zip(d).map(|(r, x)| r * x).sum();
            s0 * (-b * q).exp()
        })
        .collect()
}

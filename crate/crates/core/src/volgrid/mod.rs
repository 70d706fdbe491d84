//! Volumetric grids shared by every stage of the pipeline.
//!
//! A [`Volume`] stores 32-bit samples in `[channel][x][y][z]` order with `z`
//! varying fastest. Multi-channel images (DWI series, tensor fields) keep their
//! channels in the leading axis; on disk the channel axis becomes the fourth
//! NIfTI dimension.

mod nifti;

pub use nifti::{decode_nifti, encode_nifti, read_nifti, write_nifti};

use crate::error::{Error, Result};

/// Dense 4D grid `(C, X, Y, Z)` with millimetre spacing and origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 4],
    spacing: [f32; 3],
    origin: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 4], spacing: [f32; 3], origin: [f32; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Precondition(format!("volume dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Precondition(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {dims:?} ({len})",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at flat index {i}")));
        }
        Ok(Volume {
            dims,
            spacing,
            origin,
            data,
        })
    }

    /// All-zero volume with unit spacing and zero origin.
    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3], vec![0.0; dims.iter().product()])
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for c in 0..dims[0] {
            for x in 0..dims[1] {
                for y in 0..dims[2] {
                    for z in 0..dims[3] {
                        data.push(f(c, x, y, z));
                    }
                }
            }
        }
        Self::new(dims, [1.0; 3], [0.0; 3], data)
    }

    pub fn with_geometry(mut self, spacing: [f32; 3], origin: [f32; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Precondition(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        self.spacing = spacing;
        self.origin = origin;
        Ok(self)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.dims[0]
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[1], self.dims[2], self.dims[3]]
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().map(|&s| s as f64).product()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        ((c * self.dims[1] + x) * self.dims[2] + y) * self.dims[3] + z
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(c, x, y, z)]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    /// Applies `f` to every sample, keeping geometry. Fails if `f` produces a
    /// non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume> {
        Volume::new(self.dims, self.spacing, self.origin, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Same geometry, new channel data.
    pub fn with_data(&self, channels: usize, data: Vec<f32>) -> Result<Volume> {
        Volume::new(
            [channels, self.dims[1], self.dims[2], self.dims[3]],
            self.spacing,
            self.origin,
            data,
        )
    }
}

/// Axis-aligned crop box in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RoiBox {
    pub offset: [usize; 3],
    pub size: [usize; 3],
}

impl RoiBox {
    pub fn new(offset: [usize; 3], size: [usize; 3]) -> Result<Self> {
        if size.iter().any(|&s| s == 0) {
            return Err(Error::Precondition(format!("ROI size must be positive, got {size:?}")));
        }
        Ok(RoiBox { offset, size })
    }

    /// Box covering an entire volume of the given spatial dims.
    pub fn full(dims: [usize; 3]) -> Self {
        RoiBox {
            offset: [0; 3],
            size: dims,
        }
    }
}

/// Single-channel volume whose samples are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(Volume);

impl BinaryMask {
    pub fn from_volume(v: Volume) -> Result<Self> {
        if v.channels() != 1 {
            return Err(Error::Shape(format!("mask must have one channel, got {}", v.channels())));
        }
        if let Some(i) = v.data().iter().position(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::Format(format!("mask value {} at flat index {i} is not 0 or 1", v.data()[i])));
        }
        Ok(BinaryMask(v))
    }

    /// Binarizes with `value >= threshold` as foreground.
    pub fn threshold(v: &Volume, threshold: f32) -> Result<Self> {
        if v.channels() != 1 {
            return Err(Error::Shape(format!("mask must have one channel, got {}", v.channels())));
        }
        let m = v.map(|x| if x >= threshold { 1.0 } else { 0.0 })?;
        Ok(BinaryMask(m))
    }

    pub fn from_bools(spatial: [usize; 3], bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let v = Volume::new([1, spatial[0], spatial[1], spatial[2]], [1.0; 3], [0.0; 3], data)?;
        Ok(BinaryMask(v))
    }

    pub fn filled(spatial: [usize; 3], value: bool) -> Result<Self> {
        let n = spatial.iter().product();
        Self::from_bools(spatial, &vec![value; n])
    }

    pub fn volume(&self) -> &Volume {
        &self.0
    }

    pub fn into_volume(self) -> Volume {
        self.0
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        self.0.spatial_dims()
    }

    #[inline]
    pub fn is_set(&self, flat: usize) -> bool {
        self.0.data[flat] != 0.0
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.data.iter().map(|&v| v != 0.0)
    }

    pub fn count(&self) -> usize {
        self.bits().filter(|&b| b).count()
    }

    pub fn with_geometry(self, spacing: [f32; 3], origin: [f32; 3]) -> Result<Self> {
        Ok(BinaryMask(self.0.with_geometry(spacing, origin)?))
    }
}

/// Crops (or zero-pads) `v` to `roi`, keeping every channel.
pub fn crop_pad(v: &Volume, roi: &RoiBox) -> Result<Volume> {
    let [c, sx, sy, sz] = v.dims;
    let [bx, by, bz] = roi.size;
    let mut out = vec![0.0f32; c * bx * by * bz];
    for ch in 0..c {
        for i in 0..bx {
            let x = roi.offset[0] + i;
            if x >= sx {
                break;
            }
            for j in 0..by {
                let y = roi.offset[1] + j;
                if y >= sy {
                    break;
                }
                let z0 = roi.offset[2];
                if z0 >= sz {
                    continue;
                }
                let n = bz.min(sz - z0);
                let src = v.index(ch, x, y, z0);
                let dst = ((ch * bx + i) * by + j) * bz;
                out[dst..dst + n].copy_from_slice(&v.data[src..src + n]);
            }
        }
    }
    let origin = std::array::from_fn(|a| v.origin[a] + roi.offset[a] as f32 * v.spacing[a]);
    Volume::new([c, bx, by, bz], v.spacing, origin, out)
}

/// Zeroes every channel wherever the mask is 0.
pub fn apply_mask(v: &Volume, m: &BinaryMask) -> Result<Volume> {
    if v.spatial_dims() != m.spatial_dims() {
        return Err(Error::Shape(format!(
            "volume spatial dims {:?} differ from mask dims {:?}",
            v.spatial_dims(),
            m.spatial_dims()
        )));
    }
    let n = v.voxel_count();
    let mut data = v.data.clone();
    for chunk in data.chunks_mut(n) {
        for (value, &keep) in chunk.iter_mut().zip(m.0.data.iter()) {
            if keep == 0.0 {
                *value = 0.0;
            }
        }
    }
    v.with_data(v.channels(), data)
}

//! Synthetic diffusion phantoms: a tube-shaped tract along a circular arc in
//! an isotropic background, imaged twice with independent Rician noise.

mod arc;

pub use arc::{Arc, Nearest};

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dti::{forward_signal, GradientTable, TensorField};
use crate::error::{Error, Result};
use crate::volgrid::{BinaryMask, Volume};

/// Geometry, tissue and acquisition parameters of one phantom.
/// Lengths are in voxels; voxels are 1 mm isotropic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub start: [f64; 3],
    pub end: [f64; 3],
    /// Signed displacement of the arc midpoint from the chord.
    pub sagitta: f64,
    pub radius: f64,
    /// Diffusivities in mm²/s.
    pub lambda_par: f64,
    pub lambda_perp: f64,
    pub background: f64,
    pub s0: f64,
    /// Standard deviation of each Gaussian component of the Rician noise.
    pub sigma: f64,
    pub directions: usize,
    pub bval: f64,
    pub b0_count: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec::desk()
    }
}

impl PhantomSpec {
    /// 32³ phantom with a forceps-like arc.
    pub fn desk() -> Self {
        PhantomSpec {
            dims: [32, 32, 32],
            start: [6.0, 9.0, 16.0],
            end: [25.0, 9.0, 16.0],
            sagitta: 11.0,
            radius: 3.0,
            lambda_par: 1.7e-3,
            lambda_perp: 0.3e-3,
            background: 0.8e-3,
            s0: 1000.0,
            sigma: 50.0,
            directions: 25,
            bval: 1000.0,
            b0_count: 1,
            seed: 0,
        }
    }

    /// The desk phantom scaled to a 96×64×64 grid.
    pub fn clinical_shaped() -> Self {
        PhantomSpec {
            dims: [96, 64, 64],
            start: [18.0, 18.0, 32.0],
            end: [77.0, 18.0, 32.0],
            sagitta: 28.0,
            radius: 5.0,
            ..PhantomSpec::desk()
        }
    }

    pub fn gradients(&self) -> Result<GradientTable> {
        GradientTable::hemisphere(self.directions, self.bval, self.b0_count)
    }

    pub fn arc(&self) -> Result<Arc> {
        Arc::new(self.start, self.end, self.sagitta)
            .ok_or_else(|| Error::Spec("phantom centerline start and end coincide".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Spec(format!("phantom.dims must be positive, got {:?}", self.dims)));
        }
        if !(self.radius >= 1.0) {
            return Err(Error::Spec(format!("phantom.radius must be ≥ 1, got {}", self.radius)));
        }
        if !(self.lambda_par > self.lambda_perp && self.lambda_perp > 0.0) {
            return Err(Error::Spec(format!(
                "phantom diffusivities need lambda_par > lambda_perp > 0, got {} and {}",
                self.lambda_par, self.lambda_perp
            )));
        }
        if !(self.background > 0.0) || !(self.s0 > 0.0) {
            return Err(Error::Spec("phantom background diffusivity and s0 must be positive".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Spec(format!("phantom.sigma must be ≥ 0, got {}", self.sigma)));
        }
        let arc = self.arc()?;
        let steps = 2048;
        for i in 0..=steps {
            let p = arc.point(i as f64 / steps as f64);
            for a in 0..3 {
                let hi = (self.dims[a] - 1) as f64;
                if p[a] - self.radius < 0.0 || p[a] + self.radius > hi {
                    return Err(Error::Spec(format!(
                        "tract tube leaves the volume along axis {a} (centerline at {:.2}, radius {})",
                        p[a], self.radius
                    )));
                }
            }
        }
        self.gradients()?;
        Ok(())
    }

    fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    fn center(&self, flat: usize) -> [f64; 3] {
        let [_, ny, nz] = self.dims;
        [(flat / (ny * nz)) as f64, ((flat / nz) % ny) as f64, (flat % nz) as f64]
    }
}

/// One phantom subject: two acquisitions of the same anatomy.
#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub scan: Volume,
    pub rescan: Volume,
    pub truth: BinaryMask,
    pub wm: BinaryMask,
    pub gradients: GradientTable,
}

/// Noise-free tensors: `λ⊥·I + (λ∥ − λ⊥)·t tᵀ` inside the tube, isotropic
/// background elsewhere. Returns the tensor field and the tract mask.
pub fn ground_truth(spec: &PhantomSpec) -> Result<(TensorField, BinaryMask)> {
    spec.validate()?;
    let arc = spec.arc()?;
    let n = spec.voxels();
    let mut data = vec![0.0f32; 6 * n];
    let mut bits = vec![false; n];
    for (i, bit) in bits.iter_mut().enumerate() {
        let near = arc.nearest(spec.center(i));
        let d = if near.distance <= spec.radius {
            *bit = true;
            let t = near.tangent;
            let (lp, dl) = (spec.lambda_perp, spec.lambda_par - spec.lambda_perp);
            [
                lp + dl * t[0] * t[0],
                dl * t[0] * t[1],
                dl * t[0] * t[2],
                lp + dl * t[1] * t[1],
                dl * t[1] * t[2],
                lp + dl * t[2] * t[2],
            ]
        } else {
            let b = spec.background;
            [b, 0.0, 0.0, b, 0.0, b]
        };
        for c in 0..6 {
            data[c * n + i] = d[c] as f32;
        }
    }
    let dims = [6, spec.dims[0], spec.dims[1], spec.dims[2]];
    let field = TensorField::from_volume(Volume::new(dims, [1.0; 3], [0.0; 3], data)?)?;
    Ok((field, BinaryMask::from_bools(spec.dims, &bits)?))
}

/// White-matter mask: the ellipsoid inscribed in the grid (one voxel in from
/// each face) together with the tract.
pub fn wm_mask(spec: &PhantomSpec, truth: &BinaryMask) -> Result<BinaryMask> {
    let semi = spec.dims.map(|d| (d as f64 - 1.0) / 2.0);
    let bits: Vec<bool> = (0..spec.voxels())
        .map(|i| {
            let p = spec.center(i);
            let r: f64 = (0..3)
                .map(|a| {
                    let s = (semi[a] - 1.0).max(0.5);
                    ((p[a] - semi[a]) / s).powi(2)
                })
                .sum();
            r <= 1.0 || truth.is_set(i)
        })
        .collect();
    BinaryMask::from_bools(spec.dims, &bits)
}

/// Noise-free signals for every voxel of `field`, `[n][X][Y][Z]`.
fn clean_signal(spec: &PhantomSpec, field: &TensorField, g: &GradientTable) -> Vec<f64> {
    let n = spec.voxels();
    let k = g.len();
    let mut out = vec![0.0; k * n];
    for i in 0..n {
        for (c, s) in forward_signal(spec.s0, &field.tensor_at(i), g).into_iter().enumerate() {
            out[c * n + i] = s;
        }
    }
    out
}

/// `√((S + n1)² + n2²)` with `n1, n2 ~ N(0, σ²)` drawn from `stream`.
fn rician(spec: &PhantomSpec, clean: &[f64], stream: u64) -> Result<Volume> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let data: Vec<f32> = if spec.sigma == 0.0 {
        clean.iter().map(|&s| s as f32).collect()
    } else {
        let normal = Normal::new(0.0, spec.sigma).map_err(|e| Error::Spec(e.to_string()))?;
        clean
            .iter()
            .map(|&s| {
                let n1 = normal.sample(&mut rng);
                let n2 = normal.sample(&mut rng);
                ((s + n1).powi(2) + n2 * n2).sqrt() as f32
            })
            .collect()
    };
    let k = clean.len() / spec.voxels();
    Volume::new([k, spec.dims[0], spec.dims[1], spec.dims[2]], [1.0; 3], [0.0; 3], data)
}

const SCAN_STREAM: u64 = 1;
const RESCAN_STREAM: u64 = 2;
const JITTER_STREAM: u64 = 3;

pub fn make_phantom(spec: &PhantomSpec) -> Result<PhantomCase> {
    let (field, truth) = ground_truth(spec)?;
    let g = spec.gradients()?;
    let clean = clean_signal(spec, &field, &g);
    Ok(PhantomCase {
        scan: rician(spec, &clean, SCAN_STREAM)?,
        rescan: rician(spec, &clean, RESCAN_STREAM)?,
        wm: wm_mask(spec, &truth)?,
        truth,
        gradients: g,
    })
}

/// Per-subject variation ranges. Offsets are symmetric (`±value`), the radius
/// is drawn from `[radius_min, radius_max]`, and diffusivities are scaled by
/// a factor in `1 ± diffusivity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Jitter {
    pub endpoints: f64,
    pub sagitta: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub diffusivity: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            endpoints: 1.5,
            sagitta: 2.0,
            radius_min: 2.5,
            radius_max: 3.5,
            diffusivity: 0.1,
        }
    }
}

impl Jitter {
    /// No variation around a base radius.
    pub fn none(radius: f64) -> Self {
        Jitter {
            endpoints: 0.0,
            sagitta: 0.0,
            radius_min: radius,
            radius_max: radius,
            diffusivity: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.endpoints >= 0.0 && self.sagitta >= 0.0) {
            return Err(Error::Spec("jitter offsets must be ≥ 0".into()));
        }
        if !(self.radius_min >= 1.0 && self.radius_min <= self.radius_max) {
            return Err(Error::Spec(format!(
                "jitter radius range [{}, {}] must satisfy 1 ≤ min ≤ max",
                self.radius_min, self.radius_max
            )));
        }
        if !(0.0..1.0).contains(&self.diffusivity) {
            return Err(Error::Spec(format!("jitter.diffusivity must lie in [0, 1), got {}", self.diffusivity)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validate,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validate => "validate",
            Split::Test => "test",
        }
    }
}

/// One cohort member before generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub subject: String,
    pub split: Split,
    pub phantom: PhantomSpec,
}

fn subject_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn symmetric(rng: &mut ChaCha8Rng, w: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        rng.random_range(-w..=w)
    }
}

/// Draws `counts = [train, validate, test]` subjects around `base`. Subject 0
/// keeps the base seed, so a single unjittered subject is the base phantom.
pub fn cohort_specs(base: &PhantomSpec, jitter: &Jitter, counts: [usize; 3]) -> Result<Vec<SubjectSpec>> {
    jitter.validate()?;
    base.validate()?;
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::Spec("cohort must contain at least one subject".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    rng.set_stream(JITTER_STREAM);
    let splits = [Split::Train, Split::Validate, Split::Test];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut p = base.clone();
        for a in 0..3 {
            p.start[a] += symmetric(&mut rng, jitter.endpoints);
            p.end[a] += symmetric(&mut rng, jitter.endpoints);
        }
        p.sagitta += symmetric(&mut rng, jitter.sagitta);
        p.radius = if jitter.radius_min == jitter.radius_max {
            jitter.radius_min
        } else {
            rng.random_range(jitter.radius_min..=jitter.radius_max)
        };
        p.lambda_par *= 1.0 + symmetric(&mut rng, jitter.diffusivity);
        p.lambda_perp *= 1.0 + symmetric(&mut rng, jitter.diffusivity);
        p.background *= 1.0 + symmetric(&mut rng, jitter.diffusivity);
        p.seed = subject_seed(base.seed, i);
        p.validate().map_err(|e| Error::Spec(format!("subject {i}: {e}")))?;
        let mut k = i;
        let mut split = Split::Test;
        for (s, &c) in splits.iter().zip(&counts) {
            if k < c {
                split = *s;
                break;
            }
            k -= c;
        }
        out.push(SubjectSpec {
            subject: format!("sub-{:03}", i + 1),
            split,
            phantom: p,
        });
    }
    Ok(out)
}

/// Generates every subject of [`cohort_specs`].
pub fn make_cohort(base: &PhantomSpec, jitter: &Jitter, counts: [usize; 3]) -> Result<Vec<(SubjectSpec, PhantomCase)>> {
    cohort_specs(base, jitter, counts)?
        .into_iter()
        .map(|s| {
            let case = make_phantom(&s.phantom)?;
            Ok((s, case))
        })
        .collect()
}

#[cfg(test)]
mod tests;

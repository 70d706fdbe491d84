//! Sample lists and the preparation of network inputs from volumes on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::Batch;
use crate::error::{Error, Result};
use crate::phantom::Split;
use crate::volgrid::{apply_mask, crop_pad, read_nifti, BinaryMask, RoiBox, Volume};

/// Files of one subject: a six-channel tensor volume, the reference tract
/// mask, an optional white-matter mask and optional extra scalar maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub subject: String,
    pub input: PathBuf,
    pub truth: PathBuf,
    #[serde(default)]
    pub wm: Option<PathBuf>,
    #[serde(default)]
    pub extras: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    split: Split,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(split: Split, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for s in &samples {
            if seen.insert(s.subject.as_str(), ()).is_some() {
                return Err(Error::Dataset {
                    path: s.input.clone(),
                    message: format!("subject {} listed twice in the {} split", s.subject, split.name()),
                });
            }
        }
        Ok(Dataset { split, samples })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subjects(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.subject.clone()).collect()
    }
}

/// Fails if any subject appears in more than one of `sets`.
pub fn check_disjoint(sets: &[&Dataset]) -> Result<()> {
    let mut owner: BTreeMap<&str, Split> = BTreeMap::new();
    for ds in sets {
        for s in ds.samples() {
            if let Some(prev) = owner.insert(&s.subject, ds.split()) {
                return Err(Error::Dataset {
                    path: s.input.clone(),
                    message: format!(
                        "subject {} appears in both the {} and {} splits",
                        s.subject,
                        prev.name(),
                        ds.split().name()
                    ),
                });
            }
        }
    }
    Ok(())
}

/// How volumes become network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputPrep {
    pub roi: RoiBox,
    /// Multiplies every input channel. Tensors in mm²/s are ~1e-3, so the
    /// default 1000 brings them to order one.
    pub input_scale: f32,
}

/// Masks, stacks, crops and scales the input channels of one subject.
/// The result lives in ROI space.
pub fn prepare_input(tensor: &Volume, extras: &[&Volume], wm: Option<&BinaryMask>, prep: &InputPrep) -> Result<Volume> {
    let mut data = tensor.data().to_vec();
    for (i, e) in extras.iter().enumerate() {
        if e.spatial_dims() != tensor.spatial_dims() {
            return Err(Error::Shape(format!(
                "extra input {i} has dims {:?}, tensor has {:?}",
                e.spatial_dims(),
                tensor.spatial_dims()
            )));
        }
        data.extend_from_slice(e.data());
    }
    let mut stacked = tensor.with_data(data.len() / tensor.voxel_count(), data)?;
    if let Some(m) = wm {
        stacked = apply_mask(&stacked, m)?;
    }
    let s = prep.input_scale;
    crop_pad(&stacked, &prep.roi)?.map(|v| v * s)
}

/// A volume as a single-sample batch (same memory layout).
pub fn volume_to_batch(v: &Volume) -> Batch<f32> {
    let [c, x, y, z] = v.dims();
    Batch::from_vec([1, c, x, y, z], v.data().to_vec()).expect("volume layout matches batch layout")
}

fn read(path: &Path) -> Result<Volume> {
    read_nifti(path).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_mask(path: &Path) -> Result<BinaryMask> {
    BinaryMask::from_volume(read(path)?).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads one sample as `(input, reference)` batches of one sample each.
pub fn load_sample(s: &Sample, prep: &InputPrep) -> Result<(Batch<f32>, Batch<f32>)> {
    let tensor = read(&s.input)?;
    let extras = s.extras.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
    let wm = s.wm.as_deref().map(read_mask).transpose()?;
    let truth = read_mask(&s.truth)?;
    let at = |e: Error| Error::Dataset {
        path: s.input.clone(),
        message: e.to_string(),
    };
    if truth.spatial_dims() != tensor.spatial_dims() {
        return Err(at(Error::Shape(format!(
            "reference {:?} and input {:?} differ in shape",
            truth.spatial_dims(),
            tensor.spatial_dims()
        ))));
    }
    let extra_refs: Vec<&Volume> = extras.iter().collect();
    let x = prepare_input(&tensor, &extra_refs, wm.as_ref(), prep).map_err(at)?;
    let r = crop_pad(truth.volume(), &prep.roi).map_err(at)?;
    Ok((volume_to_batch(&x), volume_to_batch(&r)))
}

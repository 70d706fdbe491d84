//! Platform-independent state behind the browser bindings.

use serde::Serialize;
use tractseg::autograd::Batch;
use tractseg::dti::{fa_map, fit_tensor};
use tractseg::metrics::{bland_altman, dice};
use tractseg::nets::{build_network, Architecture, LossKind, LossSpec, Network, NetworkSpec};
use tractseg::optim::{Optimizer, OptimizerConfig};
use tractseg::phantom::{make_phantom, PhantomSpec};
use tractseg::train::{prepare_input, volume_to_batch, InputPrep};
use tractseg::volgrid::{BinaryMask, RoiBox, Volume};
use tractseg::{Error, Result};
use tractseg_cli::plot::bland_altman_svg;

/// A fitted phantom: FA map, reference tract and the prepared network input.
pub struct Phantom {
    pub spec: PhantomSpec,
    pub fa: Volume,
    pub truth: BinaryMask,
    pub input: Volume,
}

impl Phantom {
    /// Desk phantom with the given tube radius, arc sagitta, noise level and seed.
    pub fn generate(radius: f64, sagitta: f64, sigma: f64, seed: u64) -> Result<Phantom> {
        let spec = PhantomSpec {
            radius,
            sagitta,
            sigma,
            seed,
            ..PhantomSpec::desk()
        };
        let case = make_phantom(&spec)?;
        let tensor = fit_tensor(&case.scan, &case.gradients, &case.wm)?;
        let fa = fa_map(&tensor)?;
        let prep = InputPrep {
            roi: RoiBox::full(spec.dims),
            input_scale: 1000.0,
        };
        let input = prepare_input(tensor.volume(), &[], Some(&case.wm), &prep)?;
        Ok(Phantom {
            spec,
            fa,
            truth: case.truth,
            input,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    pub fn fa_slice(&self, axis: usize, index: usize) -> Result<Vec<f32>> {
        slice(&self.fa, axis, index)
    }

    pub fn truth_slice(&self, axis: usize, index: usize) -> Result<Vec<f32>> {
        slice(self.truth.volume(), axis, index)
    }
}

/// Row-major 2-D cut through channel 0 of `v` at `index` along `axis`.
/// Rows run along the later of the two remaining axes.
pub fn slice(v: &Volume, axis: usize, index: usize) -> Result<Vec<f32>> {
    let d = v.spatial_dims();
    if axis > 2 || index >= d[axis.min(2)] {
        return Err(Error::Shape(format!("no slice {index} along axis {axis} of {d:?}")));
    }
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut out = Vec::with_capacity(d[a] * d[b]);
    let mut p = [0usize; 3];
    p[axis] = index;
    for j in 0..d[b] {
        for i in 0..d[a] {
            p[a] = i;
            p[b] = j;
            out.push(v.get(0, p[0], p[1], p[2]));
        }
    }
    Ok(out)
}

/// A small network fitted to a single phantom, one optimizer step at a time.
pub struct Trainer {
    net: Network<f32>,
    opt: Optimizer,
    loss: LossSpec,
    x: Batch<f32>,
    r: Batch<f32>,
    truth: BinaryMask,
    template: Volume,
    pub losses: Vec<f64>,
}

impl Trainer {
    pub fn new(p: &Phantom, arch: Architecture, weight: f64, learning_rate: f64, seed: u64) -> Result<Trainer> {
        let spec = NetworkSpec {
            arch,
            in_channels: 6,
            levels: 2,
            base_channels: 4,
        };
        let loss = LossSpec {
            kind: LossKind::Wip,
            weight,
        };
        loss.validate()?;
        Ok(Trainer {
            net: build_network(spec, seed)?,
            opt: Optimizer::new(OptimizerConfig {
                learning_rate,
                ..OptimizerConfig::default()
            })?,
            loss,
            x: volume_to_batch(&p.input),
            r: volume_to_batch(p.truth.volume()),
            truth: p.truth.clone(),
            template: p.truth.volume().clone(),
            losses: Vec::new(),
        })
    }

    /// One Adam step on the full phantom; returns the loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let l = self.net.train_pass(&self.x, &self.r, &self.loss)?;
        self.opt.step(self.net.params_mut())?;
        self.losses.push(l);
        Ok(l)
    }

    pub fn probability(&self) -> Result<Volume> {
        let p = self.net.predict(&self.x)?;
        self.template.with_data(1, p.into_data())
    }

    pub fn dice(&self) -> Result<f64> {
        dice(&BinaryMask::threshold(&self.probability()?, 0.5)?, &self.truth)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub lower: f64,
    pub upper: f64,
    pub svg: String,
}

fn numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("not a number: {t:?}"))))
        .collect()
}

/// Bland–Altman statistics and plot of two whitespace- or comma-separated
/// measurement lists.
pub fn agreement(scan: &str, rescan: &str, measure: &str, unit: &str) -> Result<AgreementReport> {
    let (x, y) = (numbers(scan)?, numbers(rescan)?);
    let ba = bland_altman(&x, &y)?;
    let svg = bland_altman_svg(&ba.table, (ba.mean_diff, ba.lower, ba.upper), measure, unit)?;
    Ok(AgreementReport {
        n: x.len(),
        mean_diff: ba.mean_diff,
        sd_diff: ba.sd_diff,
        lower: ba.lower,
        upper: ba.upper,
        svg,
    })
}

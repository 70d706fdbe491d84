//! 3D U-Net and V-Net segmentation networks with a single sigmoid output
//! channel.

mod loss;

pub use loss::{check_loss, loss_wce, loss_wip, LossKind, LossSpec, WCE_EPS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{
    BatchNormConfig, Batch, BufferId, Conv3d, ConvTranspose3d, Mode, Padding, ParamId, ParamStore, Real, Tape,
    ValueId,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Unet,
    Vnet,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Unet => "unet",
            Architecture::Vnet => "vnet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub arch: Architecture,
    pub in_channels: usize,
    pub levels: usize,
    pub base_channels: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            arch: Architecture::Unet,
            in_channels: 6,
            levels: 3,
            base_channels: 16,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("levels", self.levels),
            ("base_channels", self.base_channels),
        ] {
            if v == 0 {
                return Err(Error::Spec(format!("network.{name} must be at least 1")));
            }
        }
        if self.levels > 8 {
            return Err(Error::Spec(format!("network.levels = {} is unreasonably deep", self.levels)));
        }
        Ok(())
    }

    /// Channel width at depth `level`.
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Checks that every spatial axis halves cleanly `levels − 1` times.
    pub fn check_input(&self, spatial: [usize; 3]) -> Result<()> {
        let f = 1usize << (self.levels - 1);
        for (name, &s) in ["x", "y", "z"].iter().zip(&spatial) {
            if s == 0 || s % f != 0 {
                return Err(Error::Shape(format!(
                    "axis {name}: extent {s} is not divisible by {f} as {} levels require",
                    self.levels
                )));
            }
        }
        Ok(())
    }
}

/// Convolution → batch norm → PReLU.
#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv3d,
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running: (BufferId, BufferId),
    slope: ParamId,
}

#[derive(Debug, Clone)]
struct Stage {
    first: ConvBlock,
    second: ConvBlock,
}

#[derive(Debug, Clone)]
struct Up {
    op: ConvTranspose3d,
    weight: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<Stage>,
    /// V-Net strided downsampling between encoder stages.
    down: Vec<ConvBlock>,
    up: Vec<Up>,
    decoder: Vec<Stage>,
    head: Conv3d,
    head_weight: ParamId,
    head_bias: ParamId,
}

struct Builder<'a, T> {
    params: ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn he(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n = shape.iter().product();
        let v = (0..n).map(|_| T::of(normal.sample(&mut *self.rng))).collect();
        self.params.add_param(name, shape, v)
    }

    fn constant(&mut self, name: String, n: usize, v: f64) -> ParamId {
        self.params.add_param(name, vec![n], vec![T::of(v); n])
    }

    fn block(&mut self, name: &str, conv: Conv3d) -> ConvBlock {
        let c = conv.out_channels;
        let weight = self.he(format!("{name}.weight"), conv.weight_shape(), conv.in_channels * conv.kernel.pow(3));
        let gamma = self.constant(format!("{name}.bn.gamma"), c, 1.0);
        let beta = self.constant(format!("{name}.bn.beta"), c, 0.0);
        let mean = self.params.add_buffer(format!("{name}.bn.running_mean"), vec![c], vec![T::zero(); c]);
        let var = self.params.add_buffer(format!("{name}.bn.running_var"), vec![c], vec![T::one(); c]);
        let slope = self.constant(format!("{name}.prelu"), c, 0.25);
        ConvBlock {
            conv,
            weight,
            gamma,
            beta,
            running: (mean, var),
            slope,
        }
    }

    fn stage(&mut self, name: &str, cin: usize, cout: usize) -> Stage {
        Stage {
            first: self.block(&format!("{name}.conv0"), Conv3d::new(cin, cout, 3, 1, Padding::Same)),
            second: self.block(&format!("{name}.conv1"), Conv3d::new(cout, cout, 3, 1, Padding::Same)),
        }
    }
}

/// A network together with its parameters and normalization statistics.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: ParamStore<T>,
    layout: Layout,
    bn: BatchNormConfig,
}

/// Builds `spec` with He-normal convolution weights drawn from `seed`.
pub fn build_network<T: Real>(spec: NetworkSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        params: ParamStore::new(),
        rng: &mut rng,
    };
    let levels = spec.levels;
    let mut encoder = Vec::with_capacity(levels);
    let mut down = Vec::new();
    let mut cin = spec.in_channels;
    for l in 0..levels {
        let c = spec.channels_at(l);
        encoder.push(b.stage(&format!("enc{l}"), cin, c));
        cin = c;
        if spec.arch == Architecture::Vnet && l + 1 < levels {
            down.push(b.block(&format!("down{l}"), Conv3d::new(c, c, 2, 2, Padding::Valid)));
        }
    }
    let mut up = Vec::new();
    let mut decoder = Vec::new();
    for l in (0..levels.saturating_sub(1)).rev() {
        let (c, deeper) = (spec.channels_at(l), spec.channels_at(l + 1));
        let op = ConvTranspose3d::new(deeper, c);
        let weight = b.he(format!("up{l}.weight"), op.weight_shape(), deeper * 8);
        up.push(Up { op, weight });
        decoder.push(b.stage(&format!("dec{l}"), 2 * c, c));
    }
    let head = Conv3d::new(spec.channels_at(0), 1, 1, 1, Padding::Same);
    let head_weight = b.he("head.weight".into(), head.weight_shape(), spec.channels_at(0));
    let head_bias = b.constant("head.bias".into(), 1, 0.0);
    Ok(Network {
        spec,
        params: b.params,
        layout: Layout {
            encoder,
            down,
            up,
            decoder,
            head,
            head_weight,
            head_bias,
        },
        bn: BatchNormConfig::default(),
    })
}

impl<T: Real> Network<T> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec,
            params: self.params.cast(),
            layout: self.layout.clone(),
            bn: self.bn,
        }
    }

    fn block(&self, tape: &mut Tape<T>, x: ValueId, b: &ConvBlock) -> Result<ValueId> {
        let h = tape.conv(&self.params, x, b.conv, b.weight, None)?;
        let h = tape.batchnorm(&self.params, h, b.gamma, b.beta, b.running)?;
        tape.prelu(&self.params, h, b.slope)
    }

    fn stage(&self, tape: &mut Tape<T>, x: ValueId, s: &Stage) -> Result<ValueId> {
        let h1 = self.block(tape, x, &s.first)?;
        let h2 = self.block(tape, h1, &s.second)?;
        match self.spec.arch {
            Architecture::Unet => Ok(h2),
            Architecture::Vnet => tape.add(h1, h2),
        }
    }

    /// Records the forward pass of `x` on `tape` and returns the probability
    /// map `(B, 1, X, Y, Z)`.
    pub fn forward(&self, tape: &mut Tape<T>, x: ValueId) -> Result<ValueId> {
        let shape = tape.value(x).shape();
        if shape[1] != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {}",
                self.spec.in_channels, shape[1]
            )));
        }
        self.spec.check_input([shape[2], shape[3], shape[4]])?;
        let lay = &self.layout;
        let mut skips = Vec::with_capacity(self.spec.levels);
        let mut h = x;
        for (l, stage) in lay.encoder.iter().enumerate() {
            if l > 0 {
                h = match self.spec.arch {
                    Architecture::Unet => tape.maxpool(h)?,
                    Architecture::Vnet => self.block(tape, h, &lay.down[l - 1])?,
                };
            }
            h = self.stage(tape, h, stage)?;
            skips.push(h);
        }
        skips.pop();
        for (up, stage) in lay.up.iter().zip(&lay.decoder) {
            let u = tape.conv_transpose(&self.params, h, up.op, up.weight)?;
            let skip = skips.pop().expect("one skip per decoder stage");
            let joined = tape.concat(skip, u)?;
            h = self.stage(tape, joined, stage)?;
        }
        let logits = tape.conv(&self.params, h, lay.head, lay.head_weight, Some(lay.head_bias))?;
        Ok(tape.sigmoid(logits))
    }

    /// Inference with running statistics.
    pub fn predict(&self, x: &Batch<T>) -> Result<Batch<T>> {
        let mut tape = Tape::new(Mode::Eval).with_batchnorm(self.bn);
        let xi = tape.input(x.clone());
        let p = self.forward(&mut tape, xi)?;
        Ok(tape.value(p).clone())
    }

    /// Loss of a batch evaluated with running statistics; nothing is updated.
    pub fn eval_loss(&self, x: &Batch<T>, r: &Batch<T>, loss: &LossSpec) -> Result<f64> {
        Ok(loss.evaluate(&self.predict(x)?, r)?.0)
    }

    /// One training-mode pass: replaces the parameter gradients with those of
    /// `loss` on this batch and folds the batch statistics into the running
    /// statistics. Returns the loss value.
    pub fn train_pass(&mut self, x: &Batch<T>, r: &Batch<T>, loss: &LossSpec) -> Result<f64> {
        let mut tape = Tape::new(Mode::Train).with_batchnorm(self.bn);
        let xi = tape.input(x.clone());
        let p = self.forward(&mut tape, xi)?;
        let (value, dp) = loss.evaluate(tape.value(p), r)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("training loss is {value}")));
        }
        self.params.zero_grads();
        tape.backward(p, dp, &mut self.params)?;
        tape.commit_running_stats(&mut self.params);
        Ok(value)
    }
}

//! Recording of a forward pass so that it can be replayed backwards.
//!
//! The tape owns every intermediate activation. Parameters live in a
//! [`ParamStore`]; backward accumulates into the store's gradient slots.

use super::conv::{Conv3d, ConvTranspose3d};
use super::layers::{self, BatchNormCache, BatchNormConfig, Mode};
use super::params::{BufferId, ParamId, ParamStore};
use super::tensor::{Batch, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

impl ValueId {
    /// Position in the vector returned by [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Node<T> {
    Conv {
        op: Conv3d,
        x: ValueId,
        w: ParamId,
        b: Option<ParamId>,
        out: ValueId,
    },
    ConvT {
        op: ConvTranspose3d,
        x: ValueId,
        w: ParamId,
        out: ValueId,
    },
    MaxPool {
        x: ValueId,
        argmax: Vec<u32>,
        out: ValueId,
    },
    BatchNorm {
        x: ValueId,
        gamma: ParamId,
        beta: ParamId,
        running: (BufferId, BufferId),
        cache: BatchNormCache<T>,
        out: ValueId,
    },
    Prelu {
        x: ValueId,
        slope: ParamId,
        out: ValueId,
    },
    Sigmoid {
        x: ValueId,
        out: ValueId,
    },
    Concat {
        a: ValueId,
        b: ValueId,
        out: ValueId,
    },
    Add {
        a: ValueId,
        b: ValueId,
        out: ValueId,
    },
}

/// Forward-pass record for one network evaluation.
#[derive(Debug)]
pub struct Tape<T> {
    values: Vec<Batch<T>>,
    requires_grad: Vec<bool>,
    nodes: Vec<Node<T>>,
    mode: Mode,
    bn: BatchNormConfig,
}

impl<T: Real> Tape<T> {
    pub fn new(mode: Mode) -> Self {
        Tape {
            values: Vec::new(),
            requires_grad: Vec::new(),
            nodes: Vec::new(),
            mode,
            bn: BatchNormConfig::default(),
        }
    }

    pub fn with_batchnorm(mut self, cfg: BatchNormConfig) -> Self {
        self.bn = cfg;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn push(&mut self, v: Batch<T>, requires_grad: bool) -> ValueId {
        self.values.push(v);
        self.requires_grad.push(requires_grad);
        ValueId(self.values.len() - 1)
    }

    /// Registers data that needs no gradient.
    pub fn input(&mut self, x: Batch<T>) -> ValueId {
        self.push(x, false)
    }

    /// Registers data whose gradient should be returned by [`Tape::backward`].
    pub fn leaf(&mut self, x: Batch<T>) -> ValueId {
        self.push(x, true)
    }

    pub fn value(&self, id: ValueId) -> &Batch<T> {
        &self.values[id.0]
    }

    pub fn conv(&mut self, params: &ParamStore<T>, x: ValueId, op: Conv3d, w: ParamId, b: Option<ParamId>) -> Result<ValueId> {
        let y = op.forward(&self.values[x.0], params.value(w), b.map(|b| params.value(b)))?;
        let out = self.push(y, true);
        self.nodes.push(Node::Conv { op, x, w, b, out });
        Ok(out)
    }

    pub fn conv_transpose(&mut self, params: &ParamStore<T>, x: ValueId, op: ConvTranspose3d, w: ParamId) -> Result<ValueId> {
        let y = op.forward(&self.values[x.0], params.value(w))?;
        let out = self.push(y, true);
        self.nodes.push(Node::ConvT { op, x, w, out });
        Ok(out)
    }

    pub fn maxpool(&mut self, x: ValueId) -> Result<ValueId> {
        let (y, argmax) = layers::maxpool3d(&self.values[x.0])?;
        let rg = self.requires_grad[x.0];
        let out = self.push(y, rg);
        self.nodes.push(Node::MaxPool { x, argmax, out });
        Ok(out)
    }

    pub fn batchnorm(
        &mut self,
        params: &ParamStore<T>,
        x: ValueId,
        gamma: ParamId,
        beta: ParamId,
        running: (BufferId, BufferId),
    ) -> Result<ValueId> {
        let (y, cache) = layers::batchnorm3d(
            &self.values[x.0],
            params.value(gamma),
            params.value(beta),
            params.buffer(running.0),
            params.buffer(running.1),
            self.mode,
            self.bn,
        )?;
        let out = self.push(y, true);
        self.nodes.push(Node::BatchNorm {
            x,
            gamma,
            beta,
            running,
            cache,
            out,
        });
        Ok(out)
    }

    pub fn prelu(&mut self, params: &ParamStore<T>, x: ValueId, slope: ParamId) -> Result<ValueId> {
        let y = layers::prelu(&self.values[x.0], params.value(slope))?;
        let out = self.push(y, true);
        self.nodes.push(Node::Prelu { x, slope, out });
        Ok(out)
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let y = layers::sigmoid(&self.values[x.0]);
        let rg = self.requires_grad[x.0];
        let out = self.push(y, rg);
        self.nodes.push(Node::Sigmoid { x, out });
        out
    }

    pub fn concat(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let y = layers::concat_channels(&self.values[a.0], &self.values[b.0])?;
        let rg = self.requires_grad[a.0] || self.requires_grad[b.0];
        let out = self.push(y, rg);
        self.nodes.push(Node::Concat { a, b, out });
        Ok(out)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let y = layers::residual_add(&self.values[a.0], &self.values[b.0])?;
        let rg = self.requires_grad[a.0] || self.requires_grad[b.0];
        let out = self.push(y, rg);
        self.nodes.push(Node::Add { a, b, out });
        Ok(out)
    }

    /// Folds this pass's batch statistics into the running statistics.
    /// No-op for eval-mode tapes.
    pub fn commit_running_stats(&self, params: &mut ParamStore<T>) {
        for node in &self.nodes {
            if let Node::BatchNorm { running, cache, .. } = node {
                let mut mean = params.buffer(running.0).to_vec();
                let mut var = params.buffer(running.1).to_vec();
                layers::update_running_stats(&mut mean, &mut var, cache, self.bn);
                params.buffer_mut(running.0).copy_from_slice(&mean);
                params.buffer_mut(running.1).copy_from_slice(&var);
            }
        }
    }

    /// Back-propagates `seed = ∂L/∂output`, accumulating parameter gradients
    /// into `params`. Returns the gradients of every value that requires one.
    pub fn backward(&self, output: ValueId, seed: Batch<T>, params: &mut ParamStore<T>) -> Result<Vec<Option<Batch<T>>>> {
        if seed.shape() != self.values[output.0].shape() {
            return Err(Error::Shape(format!(
                "seed gradient {:?} does not match output {:?}",
                seed.shape(),
                self.values[output.0].shape()
            )));
        }
        let mut grads: Vec<Option<Batch<T>>> = (0..self.values.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        fn deposit<T: Real>(grads: &mut [Option<Batch<T>>], rg: &[bool], id: ValueId, g: Batch<T>) {
            if !rg[id.0] {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for node in self.nodes.iter().rev() {
            let out = match node {
                Node::Conv { out, .. }
                | Node::ConvT { out, .. }
                | Node::MaxPool { out, .. }
                | Node::BatchNorm { out, .. }
                | Node::Prelu { out, .. }
                | Node::Sigmoid { out, .. }
                | Node::Concat { out, .. }
                | Node::Add { out, .. } => *out,
            };
            let Some(dy) = grads[out.0].take() else { continue };
            let rg = &self.requires_grad;
            match node {
                Node::Conv { op, x, w, b, .. } => {
                    let g = op.backward(&self.values[x.0], params.value(*w), &dy, rg[x.0])?;
                    params.accumulate(*w, &g.weight);
                    if let Some(b) = b {
                        params.accumulate(*b, &g.bias);
                    }
                    if let Some(dx) = g.input {
                        deposit(&mut grads, rg, *x, dx);
                    }
                }
                Node::ConvT { op, x, w, .. } => {
                    let g = op.backward(&self.values[x.0], params.value(*w), &dy, rg[x.0])?;
                    params.accumulate(*w, &g.weight);
                    if let Some(dx) = g.input {
                        deposit(&mut grads, rg, *x, dx);
                    }
                }
                Node::MaxPool { x, argmax, .. } => {
                    let dx = layers::maxpool3d_backward(self.values[x.0].shape(), argmax, &dy);
                    deposit(&mut grads, rg, *x, dx);
                }
                Node::BatchNorm { x, gamma, beta, cache, .. } => {
                    let (dx, dg, db) = layers::batchnorm3d_backward(params.value(*gamma), cache, &dy);
                    params.accumulate(*gamma, &dg);
                    params.accumulate(*beta, &db);
                    deposit(&mut grads, rg, *x, dx);
                }
                Node::Prelu { x, slope, .. } => {
                    let (dx, ds) = layers::prelu_backward(&self.values[x.0], params.value(*slope), &dy);
                    params.accumulate(*slope, &ds);
                    deposit(&mut grads, rg, *x, dx);
                }
                Node::Sigmoid { x, out } => {
                    let dx = layers::sigmoid_backward(&self.values[out.0], &dy);
                    deposit(&mut grads, rg, *x, dx);
                }
                Node::Concat { a, b, .. } => {
                    let (ga, gb) = layers::split_channels(&dy, self.values[a.0].channels());
                    deposit(&mut grads, rg, *a, ga);
                    deposit(&mut grads, rg, *b, gb);
                }
                Node::Add { a, b, .. } => {
                    deposit(&mut grads, rg, *a, dy.clone());
                    deposit(&mut grads, rg, *b, dy);
                }
            }
            grads[out.0] = None;
        }
        Ok(grads)
    }
}

use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// A learnable array and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

/// A non-learnable array carried with the parameters (running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

/// Named parameters and buffers of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        self.params.push(Param {
            name: name.into(),
            shape,
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> BufferId {
        self.buffers.push(Buffer {
            name: name.into(),
            shape,
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &[T] {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut [T] {
        &mut self.buffers[id.0].value
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[T]) {
        for (g, &d) in self.params[id.0].grad.iter_mut().zip(grad) {
            *g += d;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Total number of learnable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn flat_values(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.count())));
        }
        let mut at = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Same layout, converted element type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.iter().map(|&v| U::of(v.f64())).collect(),
                    grad: p.grad.iter().map(|&v| U::of(v.f64())).collect(),
                })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| Buffer {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                    value: b.value.iter().map(|&v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    /// Copies values of every parameter and buffer from `other`, which must
    /// have the same names and shapes in the same order.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        let same_layout = self.params.len() == other.params.len()
            && self.buffers.len() == other.buffers.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.name == b.name && a.shape == b.shape)
            && self.buffers.iter().zip(&other.buffers).all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !same_layout {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value.copy_from_slice(&b.value);
        }
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            a.value.copy_from_slice(&b.value);
        }
        Ok(())
    }
}

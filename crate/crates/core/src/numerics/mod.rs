//! A small reverse-mode differentiation engine with the handful of tensor
//! operations the recommender needs, plus Adam and checkpoint I/O.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod tape;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use tape::{sigmoid, softplus, Adjoints, Tape, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor { shape, data }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: vec![x] }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }
}

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named learnable tensors, addressed by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter `{name}`");
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Row `row` of a rank-2 parameter.
    pub fn row(&self, id: ParamId, row: usize) -> &[f64] {
        let value = &self.params[id].value;
        let cols = value.shape[1];
        &value.data[row * cols..(row + 1) * cols]
    }

    pub fn check_finite(&self) -> Result<()> {
        for p in &self.params {
            if p.value.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("parameter `{}` has non-finite values", p.name)));
            }
        }
        Ok(())
    }
}

/// Dense gradient buffers, one per parameter. Accumulates across backward
/// passes until [`Gradients::zero`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn new(store: &ParamStore) -> Self {
        Gradients {
            grads: store.iter().map(|p| vec![0.0; p.value.data.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id]
    }

    pub fn scale(&mut self, factor: f64) {
        self.grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= factor));
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.grads.iter().map(|g| g.as_slice())
    }
}

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

/// A named weight array together with its accumulated gradient.
///
/// Names are unique within a model; the autodiff tape reports gradients by
/// name, so two leaves bound to params with the same name accumulate into
/// the same entry (this is how parameter sharing works).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    name: String,
    value: Matrix,
    grad: Matrix,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Matrix {
        &mut self.value
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Matrix {
        &mut self.grad
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.scale_assign(0.0);
    }

    /// Renamed copy with zeroed gradient, used for target networks.
    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Self::new(name, self.value.clone())
    }

    /// Replaces the value, keeping the shape.
    pub fn assign(&mut self, value: &Matrix) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::shape("Param::assign", shape_str(self.shape()), shape_str(value.shape())));
        }
        self.value.as_mut_slice().copy_from_slice(value.as_slice());
        Ok(())
    }
}

pub(crate) fn shape_str((r, c): (usize, usize)) -> String {
    alloc::format!("{r}x{c}")
}

/// Gradients produced by one backward pass, keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub(crate) fn add(&mut self, name: &str, grad: &Matrix) {
        match self.by_name.get_mut(name) {
            Some(acc) => acc.add_assign(grad),
            None => {
                self.by_name.insert(name.into(), grad.clone());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.by_name.get(name)
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    /// Adds `scale * grad` into `param.grad` when the tape produced a
    /// gradient for it; params that were frozen or unreachable are untouched.
    pub fn accumulate_into(&self, param: &mut Param, scale: f64) {
        if let Some(g) = self.by_name.get(param.name()) {
            for (acc, v) in param.grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *acc += scale * v;
            }
        }
    }
}

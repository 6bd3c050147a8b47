use std::fmt;

use crate::tensor::{Scalar, Shape, Tensor};

/// Stable identifier of a [`Parameter`] within one model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub u32);

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub id: ParamId,
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(id: ParamId, name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            id,
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything that owns parameters.
pub trait ParamStore<T: Scalar> {
    /// Parameters in a fixed, deterministic order.
    fn parameters(&self) -> Vec<&Parameter<T>>;

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

/// Hands out sequential ids while a model is being built.
#[derive(Debug, Default)]
pub struct ParamIds {
    next: u32,
}

impl ParamIds {
    pub fn next_id(&mut self) -> ParamId {
        let id = ParamId(self.next);
        self.next += 1;
        id
    }
}

/// A flat list of parameters, handy for tests and single-kernel checks.
#[derive(Clone, Debug, Default)]
pub struct ParamList<T> {
    pub params: Vec<Parameter<T>>,
    ids: u32,
}

impl<T: Scalar> ParamList<T> {
    pub fn new() -> Self {
        ParamList {
            params: Vec::new(),
            ids: 0,
        }
    }

    /// Adds a parameter and returns its index in the list.
    pub fn push(&mut self, name: &str, value: Tensor<T>) -> usize {
        let id = ParamId(self.ids);
        self.ids += 1;
        self.params.push(Parameter::new(id, name, value));
        self.params.len() - 1
    }
}

impl<T: Scalar> std::ops::Index<usize> for ParamList<T> {
    type Output = Parameter<T>;

    fn index(&self, i: usize) -> &Parameter<T> {
        &self.params[i]
    }
}

impl<T: Scalar> ParamStore<T> for ParamList<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.params.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.params.iter_mut().collect()
    }
}

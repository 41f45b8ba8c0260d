use super::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Array;

/// A named trainable array and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Array,
    pub grad: Array,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Array) -> Self {
        let grad = Array::zeros(value.dims().to_vec());
        Parameter { name: name.into(), value, grad }
    }
}

/// Ordered parameter collection owned by one training loop.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array) -> Result<usize> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::DuplicateName(name));
        }
        self.params.push(Parameter::new(name, value));
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn get(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Places every parameter on the tape as a leaf, in order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Adds the gradients of `vars` (as returned by [`ParamSet::bind`]).
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients, vars: &[Var]) {
        for (p, v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = grads.get(*v) {
                debug_assert_eq!(g.dims(), tape.value(*v).dims());
                p.grad.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Plain SGD step followed by zeroing the gradients.
    pub fn sgd_step(&mut self, lr: f64) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().zip(p.grad.data()).for_each(|(v, g)| *v -= lr * g);
        }
        self.zero_grad();
    }
}

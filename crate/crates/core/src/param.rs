use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A trainable tensor with its accumulated gradient and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        let velocity = grad.clone();
        Self { name: name.into(), value, grad, velocity }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(0.0));
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }
}

/// Momentum SGD: `v <- momentum * v + g; x <- x - lr * v`, then gradients are zeroed.
pub fn sgd_step(store: &mut ParamStore, lr: f64, momentum: f64) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::Invalid(alloc::format!("learning rate must be >= 0, got {lr}")));
    }
    if !(momentum >= 0.0) {
        return Err(Error::Invalid(alloc::format!("momentum must be >= 0, got {momentum}")));
    }
    for p in store.iter_mut() {
        let Parameter { value, grad, velocity, .. } = p;
        for ((x, g), v) in value.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
            *v = momentum * *v + g;
            *x -= lr * *v;
        }
        grad.fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::vector(alloc::vec![value]));
        s.get_mut(id).grad.data_mut()[0] = grad;
        (s, id)
    }

    #[test]
    fn zero_lr_leaves_values() {
        let (mut s, id) = single(1.0, 3.0);
        sgd_step(&mut s, 0.0, 0.9).unwrap();
        assert_eq!(s.get(id).value.item(), 1.0);
        assert_eq!(s.get(id).grad.item(), 0.0);
    }

    #[test]
    fn single_plain_step() {
        let (mut s, id) = single(1.0, 0.5);
        sgd_step(&mut s, 0.01, 0.0).unwrap();
        assert!((s.get(id).value.item() - 0.995).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let (mut s, id) = single(0.0, 1.0);
        sgd_step(&mut s, 0.1, 0.9).unwrap();
        assert!((s.get(id).value.item() + 0.1).abs() < 1e-15);
        s.get_mut(id).grad.data_mut()[0] = 1.0;
        sgd_step(&mut s, 0.1, 0.9).unwrap();
        assert!((s.get(id).velocity.item() - 1.9).abs() < 1e-15);
        assert!((s.get(id).value.item() + 0.29).abs() < 1e-15);
    }

    #[test]
    fn negative_lr_rejected() {
        let (mut s, _) = single(0.0, 1.0);
        assert!(sgd_step(&mut s, -0.1, 0.0).is_err());
    }
}

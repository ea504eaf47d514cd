use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{arg_err, Result};

/// Ordered, uniquely named set of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamRegistry {
    entries: Vec<(String, Tensor)>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return arg_err(format!("duplicate parameter name {name}"));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of learnable scalars.
    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every entry as a trainable leaf of `g`, in registry order.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams { vars: self.entries.iter().map(|(_, t)| g.param(t.clone())).collect() }
    }
}

/// Graph handles of a [`ParamRegistry`] bound into one [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in registry order; parameters the loss did not reach get zeros.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect()
    }
}

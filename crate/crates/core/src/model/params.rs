use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Named network parameters in a fixed iteration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T: Real = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

/// Tape handles for a [`Parameters`] set, in the same order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: IndexMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl FromIterator<(String, Var)> for ParamVars {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self { vars: iter.into_iter().collect() }
    }
}

impl<T: Real> Default for Parameters<T> {
    fn default() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }
}

impl<T: Real> Parameters<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Number of named tensors.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every parameter as a tape leaf.
    pub fn register(&self, tape: &mut Tape<T>, requires_grad: bool) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad)))
                .collect(),
        }
    }

    /// Copies gradients recorded on `tape` out, one buffer per parameter in
    /// iteration order. Parameters the loss did not reach get zeros.
    pub fn gradients(&self, tape: &Tape<T>, vars: &ParamVars) -> Vec<Vec<T>> {
        self.tensors
            .iter()
            .zip(vars.iter())
            .map(|((_, t), (_, v))| match tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); t.len()],
            })
            .collect()
    }
}

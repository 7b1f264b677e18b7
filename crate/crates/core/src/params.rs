//! Named parameter collections with per-parameter trainable flags.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    pub grad: Option<Tensor>,
}

/// Ordered set of named parameters. Names are dotted paths whose first
/// segment is the owning component (`adapter.`, `backbone.`, `head.`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelBundle {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

/// Tape handles for the parameters of one forward pass.
#[derive(Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::UnknownParam(name.into()))
    }

    /// Points `name` at another tape value.
    pub fn insert(&mut self, name: impl Into<String>, var: Var) {
        self.vars.insert(name.into(), var);
    }
}

impl ModelBundle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        let name = name.into();
        let p = Param {
            name: name.clone(),
            value,
            trainable,
            grad: None,
        };
        match self.index.get(&name) {
            Some(&i) => self.params[i] = p,
            None => {
                self.index.insert(name, self.params.len());
                self.params.push(p);
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(Error::UnknownParam(name.into())),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Moves every parameter of `other` into `self`, replacing same-named ones.
    pub fn merge(&mut self, other: ModelBundle) {
        for p in other.params {
            let trainable = p.trainable;
            self.insert(p.name, p.value, trainable);
        }
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Param> + 'a {
        self.params.iter().filter(move |p| p.name.starts_with(prefix))
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
            if !trainable {
                p.grad = None;
            }
        }
    }

    /// Scalar count of all trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.with_prefix(prefix).map(|p| p.value.numel()).sum()
    }

    /// SHA-256 over names, shapes, and value bits of every parameter under `prefix`.
    pub fn digest(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for p in self.with_prefix(prefix) {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Registers every parameter as a tape leaf; only trainable ones record gradients.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|p| (p.name.clone(), tape.leaf(p.value.clone(), p.trainable)))
            .collect();
        Bindings { vars }
    }

    /// Adds the tape's gradients into each trainable parameter's `grad`.
    pub fn accumulate_grads(&mut self, tape: &Tape, bindings: &Bindings) {
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            let Some(&v) = bindings.vars.get(&p.name) else { continue };
            let Some(g) = tape.grad(v) else { continue };
            match &mut p.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => p.grad = Some(g),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_bits() {
        let mut b = ModelBundle::new();
        b.insert("backbone.w", Tensor::zeros([2]), false);
        b.insert("head.w", Tensor::zeros([2]), true);
        let d0 = b.digest("backbone.");
        b.get_mut("head.w").unwrap().value.data_mut()[0] = 1.0;
        assert_eq!(d0, b.digest("backbone."));
        b.get_mut("backbone.w").unwrap().value.data_mut()[0] = -0.0;
        assert_ne!(d0, b.digest("backbone."));
    }

    #[test]
    fn counts_only_trainable() {
        let mut b = ModelBundle::new();
        b.insert("a.x", Tensor::zeros([3, 4]), true);
        b.insert("b.y", Tensor::zeros([5]), false);
        assert_eq!(b.trainable_count(), 12);
        b.set_trainable("b.", true);
        assert_eq!(b.trainable_count(), 17);
    }
}

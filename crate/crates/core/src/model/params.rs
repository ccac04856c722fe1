use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Named learnable arrays in deterministic insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<R> {
    names: Vec<String>,
    tensors: Vec<Tensor<R>>,
    index: HashMap<String, usize>,
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<R>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        self.names.len() - 1
    }

    /// He-normal initialised weight.
    pub fn init_weight(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64, rng: &mut impl Rng) {
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| R::c(normal.sample(rng))).collect();
        self.insert(name, Tensor::new(shape, data));
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn tensor(&self, id: usize) -> &Tensor<R> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<R> {
        &mut self.tensors[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count of parameters whose name satisfies `keep`.
    pub fn count(&self, keep: impl Fn(&str) -> bool) -> usize {
        self.iter().filter(|(n, _)| keep(n)).map(|(_, t)| t.numel()).sum()
    }

    /// Copy of the parameters whose name satisfies `keep`, same order.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> ParamStore<R> {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            if keep(n) {
                out.insert(n, t.clone());
            }
        }
        out
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            out.insert(n, t.cast());
        }
        out
    }

    /// Puts every parameter on the tape; trainable ones report gradients
    /// under their store index.
    pub fn bind(&self, g: &mut Graph<R>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| if trainable { g.param(i, t) } else { g.constant(t.clone()) })
            .collect();
        Bound { names: self.index.clone(), vars }
    }

    /// `self <- m * self + (1 - m) * online` for every parameter of `self`.
    pub fn ema_from(&mut self, online: &ParamStore<R>, momentum: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Contract(format!("EMA momentum {momentum} outside [0, 1]")));
        }
        for (i, name) in self.names.iter().enumerate() {
            let src = online
                .get(name)
                .ok_or_else(|| Error::Contract(format!("online network has no parameter {name}")))?;
            let dst = &mut self.tensors[i];
            if src.shape() != dst.shape() {
                return Err(Error::Contract(format!(
                    "shape mismatch for {name}: target {:?} vs online {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            if momentum == 1.0 {
                continue;
            }
            if momentum == 0.0 {
                dst.data_mut().copy_from_slice(src.data());
                continue;
            }
            let m = R::c(momentum);
            let om = R::c(1.0 - momentum);
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = m * *d + om * *s;
            }
        }
        Ok(())
    }
}

/// Tape handles for a bound [`ParamStore`], looked up by name.
pub struct Bound {
    names: HashMap<String, usize>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        let i = self.names.get(name).unwrap_or_else(|| panic!("parameter {name} is not bound"));
        self.vars[*i]
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.contains_key(name)
    }
}

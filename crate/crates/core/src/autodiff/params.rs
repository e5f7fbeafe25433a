use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    /// Whether decoupled weight decay applies (matrices yes, biases/norms no).
    pub decay: bool,
}

/// Named, ordered collection of learnable tensors. Models hold [`ParamId`]s
/// into a store, so the same model layout can drive several stores (student
/// and teacher, for instance).
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            value: Arc::new(value),
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn shared(&self, id: ParamId) -> &Arc<Tensor<T>> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let cur = self.get(id);
        if cur.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set parameter",
                left: cur.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.entries[id.0].value = Arc::new(value);
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Same layout, converted element type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: Arc::new(e.value.cast()),
                    decay: e.decay,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Order-sensitive hash of every name, shape and value bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for e in &self.entries {
            e.name.hash(&mut h);
            e.value.shape().hash(&mut h);
            for v in e.value.data() {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Fills freshly created parameters.
pub struct ParamInit<'a, T: Scalar, R: Rng> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
    pub prefix: String,
}

impl<'a, T: Scalar, R: Rng> ParamInit<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    fn name(&self, n: &str) -> String {
        if self.prefix.is_empty() {
            n.to_string()
        } else {
            format!("{}.{n}", self.prefix)
        }
    }

    /// Runs `f` with `part` appended to the name prefix.
    pub fn scoped<O>(&mut self, part: &str, f: impl FnOnce(&mut Self) -> O) -> O {
        let saved = std::mem::take(&mut self.prefix);
        self.prefix = if saved.is_empty() {
            part.to_string()
        } else {
            format!("{saved}.{part}")
        };
        let out = f(self);
        self.prefix = saved;
        out
    }

    /// Truncated normal (resampled outside two standard deviations).
    pub fn trunc_normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(trunc_normal(self.rng, std))).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape");
        let full = self.name(name);
        self.store.insert(full, t, shape.len() >= 2)
    }

    /// Uniform in `[-bound, bound]` with `bound = 1/sqrt(fan_in)`.
    pub fn kaiming_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let n: usize = shape.iter().product();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..n).map(|_| T::lit(self.rng.gen_range(-bound..=bound))).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape");
        let full = self.name(name);
        self.store.insert(full, t, shape.len() >= 2)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let full = self.name(name);
        self.store.insert(full, Tensor::full(shape, T::lit(value)), false)
    }
}

pub(crate) fn trunc_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    loop {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// A tape plus the parameter bindings made on it.
///
/// Parameters are bound lazily the first time a model asks for them, without
/// copying their storage.
pub struct Session<'p, T: Scalar = f32> {
    pub tape: Tape<T>,
    params: &'p ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'p, T: Scalar> Session<'p, T> {
    /// Gradients flow into the parameters.
    pub fn train(params: &'p ParamStore<T>) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            trainable: true,
        }
    }

    /// Parameters are bound as constants; the tape still records so that
    /// attention weights can be read back, but nothing requires a gradient.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self {
            tape: Tape::inference(),
            params,
            bound: vec![None; params.len()],
            trainable: false,
        }
    }

    /// A gradient-enabled tape whose parameters are frozen constants.
    pub fn frozen(params: &'p ParamStore<T>) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            trainable: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.param(self.params.shared(id), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Drops every recorded node, re-rooting the computation at a constant
    /// copy of `keep`. Used between blocks on inference tapes to bound memory.
    pub fn truncate_to(&mut self, keep: Var) -> Var {
        let value = self.tape.value(keep).clone();
        self.tape.clear();
        self.bound.iter_mut().for_each(|b| *b = None);
        self.tape.constant(value)
    }

    pub fn bound_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().enumerate().filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    /// Per-parameter gradients after `tape.backward`; unbound or frozen
    /// parameters get zeros.
    pub fn param_grads(&self) -> Grads<T> {
        let mut grads: Vec<Tensor<T>> = self
            .params
            .entries()
            .iter()
            .map(|e| Tensor::zeros(e.value.shape()))
            .collect();
        for (id, v) in self.bound_vars() {
            if let Some(g) = self.tape.grad(v) {
                grads[id.0] = g;
            }
        }
        Grads(grads)
    }
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads<T: Scalar = f32>(pub Vec<Tensor<T>>);

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self(store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect())
    }

    /// `self += scale * other`, element order fixed.
    pub fn add_scaled(&mut self, other: &Grads<T>, scale: T) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y * scale;
            }
        }
    }

    pub fn global_norm(&self) -> T {
        self.0
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.0 {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> T {
        self.0
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}

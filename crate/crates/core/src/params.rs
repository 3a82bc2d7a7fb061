//! Named parameter storage and its binding onto a tape.

use std::sync::Arc;

use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Random source used for every initialization and perturbation.
pub type Rng = ChaCha8Rng;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<F: Real> {
    name: String,
    value: Arc<Tensor<F>>,
    trainable: bool,
}

/// Ordered collection of named tensors. Insertion order is the
/// serialization and optimizer order.
#[derive(Clone, Debug)]
pub struct ParamStore<F: Real> {
    entries: Vec<Entry<F>>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    fn push(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            value: Arc::new(value),
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.push(name, value, true)
    }

    /// Adds a tensor that is stored and serialized but never receives gradients.
    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.push(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        let cur = self.get(id);
        if cur.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::set",
                lhs: cur.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.entries[id.0].value = Arc::new(value);
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Total element count of trainable parameters.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Total element count of every stored tensor.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Trainable values concatenated in store order.
    pub fn flatten(&self) -> Vec<F> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }

    /// Copies of every stored tensor in store order.
    pub fn values(&self) -> Vec<Tensor<F>> {
        self.entries.iter().map(|e| (*e.value).clone()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.all_finite())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: Arc::new(e.value.cast()),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }

    /// Records every parameter as a leaf; frozen ones as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<F>) -> Bound<'t, F> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| {
                    if e.trainable {
                        tape.var_shared(Arc::clone(&e.value))
                    } else {
                        tape.constant_shared(Arc::clone(&e.value))
                    }
                })
                .collect(),
        }
    }

    /// Records every parameter as a constant (inference without gradients).
    pub fn bind_constant<'t>(&self, tape: &'t Tape<F>) -> Bound<'t, F> {
        Bound {
            vars: self.entries.iter().map(|e| tape.constant_shared(Arc::clone(&e.value))).collect(),
        }
    }
}

/// Parameters recorded on one tape.
#[derive(Clone, Debug)]
pub struct Bound<'t, F: Real> {
    vars: Vec<Var<'t, F>>,
}

impl<'t, F: Real> Bound<'t, F> {
    /// Wraps variables given in store order (e.g. from a gradient check).
    pub fn from_vars(vars: Vec<Var<'t, F>>) -> Self {
        Self { vars }
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Var<'t, F> {
        self.vars[id.0]
    }

    /// One gradient per stored parameter, zeros where none flowed.
    pub fn gradients(&self, grads: &Gradients<F>) -> Vec<Tensor<F>> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}

pub fn uniform<F: Real>(rng: &mut Rng, shape: impl Into<Vec<usize>>, bound: f64) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::lit(rng.random_range(-bound..=bound)))
}

pub fn normal<F: Real>(rng: &mut Rng, shape: impl Into<Vec<usize>>, std: f64) -> Tensor<F> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        F::lit(z * std)
    })
}

/// Linear layer `y = x·W (+ b)` with `W: [fan_in, fan_out]` initialized
/// uniformly in `±1/√fan_in`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, [fan_in, fan_out], bound));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform(rng, [fan_out], bound)));
        Self { weight, bias }
    }

    pub fn forward<'t, F: Real>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let y = x.matmul(p.get(self.weight))?;
        match self.bias {
            Some(b) => y.add(p.get(b)),
            None => Ok(y),
        }
    }
}

use sha2::{Digest, Sha256};

use super::rng::SeededRng;
use super::tensor::Tensor;
use crate::error::{invalid, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor together with its gradient buffer.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
}

/// Ordered collection of parameters owned by one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let grad = Tensor::zeros(tensor.shape());
        self.params.push(Parameter {
            name,
            tensor,
            grad,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform(−√(1/fan_in), √(1/fan_in)) initialization.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut SeededRng,
    ) -> ParamId {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        // Draws are rounded through f32 so checkpoints reproduce the initial state.
        let data = (0..n)
            .map(|_| rng.uniform(-bound, bound) as f32 as f64)
            .collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn count_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.tensor.numel())
            .sum()
    }

    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Marks every parameter whose name starts with one of `prefixes` as frozen.
    pub fn freeze_prefixes<S: AsRef<str>>(&mut self, prefixes: &[S]) {
        for p in &mut self.params {
            if prefixes.iter().any(|pre| p.name.starts_with(pre.as_ref())) {
                p.frozen = true;
            }
        }
    }

    pub fn unfreeze_all(&mut self) {
        for p in &mut self.params {
            p.frozen = false;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds a gradient set produced by one backward pass.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        if grads.0.len() != self.params.len() {
            return Err(invalid!(
                "gradient set for {} params applied to store of {}",
                grads.0.len(),
                self.params.len()
            ));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                p.grad.add_assign(g);
            }
        }
        Ok(())
    }

    /// Copies tensor values from `other` for every parameter with a matching name.
    pub fn load_matching(&mut self, other: &ParamStore) -> Result<usize> {
        let mut n = 0;
        for p in &mut self.params {
            if let Some(id) = other.find(&p.name) {
                let src = other.tensor(id);
                if src.shape() != p.tensor.shape() {
                    return Err(invalid!(
                        "parameter {} has shape {:?}, source {:?}",
                        p.name,
                        p.tensor.shape(),
                        src.shape()
                    ));
                }
                p.tensor = src.clone();
                n += 1;
            }
        }
        Ok(n)
    }

    /// SHA-256 over names, shapes, and f64 bits of the selected parameters.
    pub fn hash_where(&self, mut keep: impl FnMut(&Parameter) -> bool) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| keep(p)) {
            h.update((p.name.len() as u64).to_le_bytes());
            h.update(p.name.as_bytes());
            for d in p.tensor.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn hash(&self) -> String {
        self.hash_where(|_| true)
    }
}

/// Per-parameter gradients from one backward pass; `None` where a parameter
/// was not reached.
#[derive(Clone, Debug)]
pub struct Gradients(pub Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(id.0).and_then(Option::as_ref)
    }

    /// Elementwise sum of two gradient sets in a fixed order.
    pub fn merge(mut self, other: &Gradients) -> Gradients {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
        self
    }

    /// Multiplies every gradient by `factor`.
    pub fn scaled(mut self, factor: f64) -> Gradients {
        for g in self.0.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
        self
    }
}

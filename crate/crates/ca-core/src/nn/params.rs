//! Named parameter store and the Adam optimizer.
//!
//! Parameters live in one flat store so the optimizer, the checkpoint format
//! and the finite-difference checker all see the same uniform view. Layers
//! hold [`ParamId`]s into it. Iteration order is registration order, which is
//! deterministic for a given model construction sequence.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    /// Adam first/second moment estimates; serialized with the checkpoint so
    /// resumed runs continue the same trajectory.
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), index: HashMap::new() }
    }

    pub fn register(&mut self, name: &str, value: Tensor<S>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::State(format!("parameter {name} registered twice")));
        }
        let shape = value.shape().to_vec();
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            grad: Tensor::zeros(shape.clone()),
            m: Tensor::zeros(shape.clone()),
            v: Tensor::zeros(shape),
            value,
            trainable: true,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Uniform Kaiming-style init: bound = sqrt(6 / fan_in), bias-free
    /// tensors get zeros elsewhere.
    pub fn register_kaiming(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n).map(|_| S::of(rng.gen_range(-bound..bound))).collect();
        self.register(name, Tensor::new(shape, data)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].grad
    }

    pub fn param(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    /// Adds `other`'s gradient buffers into this store, entry by entry.
    /// Used to reduce per-worker gradient accumulators deterministically.
    pub fn accumulate_grads_from(&mut self, grads: &[Tensor<S>]) {
        debug_assert_eq!(grads.len(), self.params.len());
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.grad.add_assign(g);
        }
    }

    /// Snapshot of zeroed gradient buffers, one per parameter, in store order.
    pub fn grad_buffers(&self) -> Vec<Tensor<S>> {
        self.params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect()
    }

    pub fn set_trainable(&mut self, predicate: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.trainable = predicate(&p.name);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5.5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    /// Number of steps taken so far; drives bias correction.
    pub t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0 }
    }

    /// One update over every trainable parameter. Fails without touching any
    /// parameter if a trainable gradient contains a non-finite value.
    pub fn step<S: Scalar>(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        for p in store.iter() {
            if p.trainable && p.grad.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        self.t += 1;
        let b1 = S::of(self.cfg.beta1);
        let b2 = S::of(self.cfg.beta2);
        let lr = S::of(self.cfg.lr);
        let eps = S::of(self.cfg.eps);
        let corr1 = S::one() - S::of(self.cfg.beta1.powi(self.t as i32));
        let corr2 = S::one() - S::of(self.cfg.beta2.powi(self.t as i32));
        for p in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let g = p.grad.data();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            let x = p.value.data_mut();
            for i in 0..x.len() {
                m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                let mhat = m[i] / corr1;
                let vhat = v[i] / corr2;
                x[i] = x[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

//! Thin layer wrappers: a layer is its hyperparameters plus ids into the
//! parameter store. Forward borrows the store immutably; backward mutates
//! only gradient buffers.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scalar::Scalar;

use super::ops;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = store.register_kaiming(
            &format!("{name}.weight"),
            vec![c_out, c_in, kernel],
            c_in * kernel,
            rng,
        )?;
        let b = store.register(&format!("{name}.bias"), Tensor::zeros(vec![c_out]))?;
        Ok(Conv1d { w, b, c_in, c_out, kernel, dilation })
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        ops::conv1d_causal(x, store.value(self.w), store.value(self.b), self.dilation)
    }

    /// Accumulates weight/bias gradients into `grads` (a parallel buffer in
    /// store order) and returns the input gradient.
    pub fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        grads: &mut [Tensor<S>],
        x: &Tensor<S>,
        grad_out: &Tensor<S>,
    ) -> Tensor<S> {
        let (gx, gw, gb) = ops::conv1d_causal_backward(x, store.value(self.w), self.dilation, grad_out);
        grads[self.w.0].add_assign(&gw);
        grads[self.b.0].add_assign(&gb);
        gx
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = store.register_kaiming(&format!("{name}.weight"), vec![out_dim, in_dim], in_dim, rng)?;
        let b = store.register(&format!("{name}.bias"), Tensor::zeros(vec![out_dim]))?;
        Ok(Linear { w, b, in_dim, out_dim })
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: &[S]) -> Result<Vec<S>> {
        ops::linear(x, store.value(self.w), store.value(self.b))
    }

    pub fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        grads: &mut [Tensor<S>],
        x: &[S],
        grad_out: &[S],
    ) -> Vec<S> {
        let (gx, gw, gb) = ops::linear_backward(x, store.value(self.w), grad_out);
        grads[self.w.0].add_assign(&gw);
        grads[self.b.0].add_assign(&gb);
        gx
    }
}

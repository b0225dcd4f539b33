//! Long-term memory over fused patch vectors.
//!
//! A stack of M consecutive fused vectors (about 100 s of signal at the
//! default window/stride) is classified by a temporal convolution network:
//! causal dilated conv blocks with residual connections, read out at the last
//! time step. The receptive field `1 + (kernel-1) * sum(dilations)` must
//! cover the stack, so the prediction for the final patch can draw on the
//! whole stack - that context is what separates a rhythmic seizure from an
//! isolated burst that merely looks like one.
//!
//! `MlpHead` classifies a single fused vector with no temporal context; it
//! exists as the no-memory ablation.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusedVector;
use crate::nn::{self, Conv1d, Linear, ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TcnConfig {
    pub blocks: usize,
    pub kernel: usize,
    /// Per-block dilation; length must equal `blocks`.
    pub dilations: Vec<usize>,
    pub hidden: usize,
}

impl Default for TcnConfig {
    fn default() -> Self {
        TcnConfig { blocks: 3, kernel: 3, dilations: vec![1, 2, 4], hidden: 64 }
    }
}

impl TcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.hidden == 0 || self.kernel == 0 {
            return Err(Error::Config("tcn sizes must be positive".into()));
        }
        if self.dilations.len() != self.blocks {
            return Err(Error::Config(format!(
                "tcn dilations {:?} vs {} blocks",
                self.dilations, self.blocks
            )));
        }
        if self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Config("tcn dilations must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of past positions (including the current one) that influence
    /// the last time step.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }
}

/// Ordered window of M fused vectors; the stack inherits the label of its
/// final patch, so a prediction is always "given the last 105 s, is the
/// current patch ictal".
#[derive(Debug, Clone)]
pub struct MemoryStack<S> {
    /// `[dim, M]`, column t = fused vector of patch (end_patch - M + 1 + t).
    pub fused: Tensor<S>,
    pub end_patch: usize,
    pub label: bool,
}

/// Slides a length-M window with stride 1 over a fused sequence.
/// `labels[j]` is the label of patch j; yields `len - M + 1` stacks.
pub fn slide_stacks<S: Scalar>(
    fused: &[FusedVector<S>],
    labels: &[bool],
    m: usize,
) -> Result<Vec<MemoryStack<S>>> {
    if m == 0 {
        return Err(Error::Config("memory length must be >= 1".into()));
    }
    if fused.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} fused vectors vs {} labels",
            fused.len(),
            labels.len()
        )));
    }
    if fused.len() < m {
        return Ok(Vec::new());
    }
    let dim = fused[0].values.len();
    let mut out = Vec::with_capacity(fused.len() - m + 1);
    for end in (m - 1)..fused.len() {
        let mut data = vec![S::zero(); dim * m];
        for (t, fv) in fused[end + 1 - m..=end].iter().enumerate() {
            if fv.values.len() != dim {
                return Err(Error::ShapeMismatch("ragged fused sequence".into()));
            }
            for (row, &v) in fv.values.iter().enumerate() {
                data[row * m + t] = v;
            }
        }
        out.push(MemoryStack {
            fused: Tensor::new(vec![dim, m], data)?,
            end_patch: fused[end].patch_index,
            label: labels[end],
        });
    }
    Ok(out)
}

#[derive(Clone)]
struct TcnBlock {
    conv: Conv1d,
    /// 1x1 projection when block input and output widths differ.
    res: Option<Conv1d>,
}

#[derive(Clone)]
pub struct Tcn {
    pub cfg: TcnConfig,
    pub input_dim: usize,
    blocks: Vec<TcnBlock>,
    head: Linear,
}

pub(crate) struct TcnCache<S> {
    block_inputs: Vec<Tensor<S>>,
    pre_acts: Vec<Tensor<S>>,
    last_col: Vec<S>,
    len: usize,
}

impl Tcn {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        input_dim: usize,
        cfg: TcnConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        let mut c_in = input_dim;
        for (i, &dil) in cfg.dilations.iter().enumerate() {
            let conv =
                Conv1d::new(store, &format!("tcn.block{i}.conv"), c_in, cfg.hidden, cfg.kernel, dil, rng)?;
            let res = if c_in != cfg.hidden {
                Some(Conv1d::new(store, &format!("tcn.block{i}.res"), c_in, cfg.hidden, 1, 1, rng)?)
            } else {
                None
            };
            blocks.push(TcnBlock { conv, res });
            c_in = cfg.hidden;
        }
        let head = Linear::new(store, "tcn.head", cfg.hidden, 1, rng)?;
        Ok(Tcn { cfg, input_dim, blocks, head })
    }

    /// Logit for one stack.
    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, stack: &Tensor<S>) -> Result<S> {
        Ok(self.forward_cached(store, stack)?.0)
    }

    pub(crate) fn forward_cached<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        stack: &Tensor<S>,
    ) -> Result<(S, TcnCache<S>)> {
        let (dim, len) = stack.rank2();
        if dim != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "stack dim {dim} vs tcn input {}",
                self.input_dim
            )));
        }
        let mut x = stack.clone();
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut pre_acts = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let pre = b.conv.forward(store, &x)?;
            let act = nn::leaky_relu(&pre);
            let mut next = match &b.res {
                Some(p) => p.forward(store, &x)?,
                None => x.clone(),
            };
            next.add_assign(&act);
            block_inputs.push(x);
            pre_acts.push(pre);
            x = next;
        }
        let (h, l) = x.rank2();
        let last_col: Vec<S> = (0..h).map(|r| x.row(r)[l - 1]).collect();
        let logit = self.head.forward(store, &last_col)?[0];
        Ok((logit, TcnCache { block_inputs, pre_acts, last_col, len }))
    }

    /// Backward from the logit gradient; returns the gradient on the stack.
    pub(crate) fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        grads: &mut [Tensor<S>],
        cache: &TcnCache<S>,
        grad_logit: S,
    ) -> Tensor<S> {
        let g_last = self.head.backward(store, grads, &cache.last_col, &[grad_logit]);
        let mut g_x = Tensor::zeros(vec![self.cfg.hidden, cache.len]);
        for (r, g) in g_last.iter().enumerate() {
            g_x.data_mut()[r * cache.len + cache.len - 1] = *g;
        }
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let g_pre = nn::leaky_relu_backward(&cache.pre_acts[i], &g_x);
            let mut g_in = b.conv.backward(store, grads, &cache.block_inputs[i], &g_pre);
            match &b.res {
                Some(p) => {
                    let g_res = p.backward(store, grads, &cache.block_inputs[i], &g_x);
                    g_in.add_assign(&g_res);
                }
                None => g_in.add_assign(&g_x),
            }
            g_x = g_in;
        }
        g_x
    }
}

/// Two-layer head over a single fused vector (the no-memory ablation).
#[derive(Clone)]
pub struct MlpHead {
    pub input_dim: usize,
    pub hidden: usize,
    l1: Linear,
    l2: Linear,
}

pub(crate) struct MlpCache<S> {
    input: Vec<S>,
    pre: Tensor<S>,
    act: Vec<S>,
}

impl MlpHead {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        input_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("mlp hidden width must be positive".into()));
        }
        let l1 = Linear::new(store, "mlp.l1", input_dim, hidden, rng)?;
        let l2 = Linear::new(store, "mlp.l2", hidden, 1, rng)?;
        Ok(MlpHead { input_dim, hidden, l1, l2 })
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, fused: &[S]) -> Result<S> {
        Ok(self.forward_cached(store, fused)?.0)
    }

    pub(crate) fn forward_cached<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        fused: &[S],
    ) -> Result<(S, MlpCache<S>)> {
        let pre = Tensor::from_vec(self.l1.forward(store, fused)?);
        let act = nn::leaky_relu(&pre);
        let logit = self.l2.forward(store, act.data())?[0];
        Ok((logit, MlpCache { input: fused.to_vec(), pre, act: act.data().to_vec() }))
    }

    pub(crate) fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        grads: &mut [Tensor<S>],
        cache: &MlpCache<S>,
        grad_logit: S,
    ) -> Vec<S> {
        let g_act = self.l2.backward(store, grads, &cache.act, &[grad_logit]);
        let g_pre = nn::leaky_relu_backward(&cache.pre, &Tensor::from_vec(g_act));
        self.l1.backward(store, grads, &cache.input, g_pre.data())
    }
}

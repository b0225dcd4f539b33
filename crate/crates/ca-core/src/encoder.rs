//! Per-channel patch encoder.
//!
//! Each channel of a patch is encoded independently by the same weights:
//! `levels` repetitions of (causal conv -> leaky rectifier -> keep every 2nd
//! sample), then a global average pool over what is left of the time axis and
//! a linear projection to the fused dimension. Channel independence is
//! structural - the encoder never sees more than one channel - which is what
//! lets one network serve any electrode count. No normalization layers; the
//! downstream binding is linear and scale matters.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Conv1d, Linear, ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    pub levels: usize,
    pub kernel: usize,
    /// Channel width after each level; length must equal `levels`.
    pub widths: Vec<usize>,
    /// Output feature dimension (the fused dimension d).
    pub output_dim: usize,
    /// When set, `encode` rejects patches of any other length.
    pub expected_input_len: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            levels: 4,
            kernel: 3,
            widths: vec![8, 16, 32, 64],
            output_dim: 128,
            expected_input_len: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("encoder needs at least one level".into()));
        }
        if self.widths.len() != self.levels {
            return Err(Error::Config(format!(
                "encoder widths {:?} vs {} levels",
                self.widths, self.levels
            )));
        }
        if self.widths.iter().any(|&w| w == 0) || self.kernel == 0 || self.output_dim == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        Ok(())
    }

    /// Shortest patch that still leaves one sample after every decimation.
    pub fn min_input_len(&self) -> usize {
        1 << self.levels
    }
}

/// One channel of one patch, with enough metadata to place its feature
/// vector back into the fused sequence.
#[derive(Debug, Clone, Copy)]
pub struct Patch<'a, S> {
    pub channel_index: usize,
    pub patch_index: usize,
    pub samples: &'a [S],
}

#[derive(Debug, Clone)]
pub struct FeatureVector<S> {
    pub channel_index: usize,
    pub patch_index: usize,
    pub values: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    convs: Vec<Conv1d>,
    proj: Linear,
}

/// Activations needed for an exact backward pass of one encode call.
pub(crate) struct EncoderCache<S> {
    /// Input feature map of each level (level 0 holds the raw patch).
    level_inputs: Vec<Tensor<S>>,
    /// Pre-activation conv output of each level.
    pre_acts: Vec<Tensor<S>>,
    /// Feature map entering the pool, and the pooled vector entering the
    /// projection.
    pool_input_len: usize,
    pooled: Vec<S>,
}

impl Encoder {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        cfg: EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::with_capacity(cfg.levels);
        let mut c_in = 1;
        for (i, &w) in cfg.widths.iter().enumerate() {
            convs.push(Conv1d::new(store, &format!("encoder.level{i}"), c_in, w, cfg.kernel, 1, rng)?);
            c_in = w;
        }
        let proj = Linear::new(store, "encoder.proj", c_in, cfg.output_dim, rng)?;
        Ok(Encoder { cfg, convs, proj })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if let Some(w) = self.cfg.expected_input_len {
            if len != w {
                return Err(Error::ShapeMismatch(format!(
                    "patch has {len} samples, encoder expects {w}"
                )));
            }
        }
        if len == 0 {
            return Err(Error::ShapeMismatch("empty patch".into()));
        }
        Ok(())
    }

    /// Encodes one channel of one patch into a `output_dim` feature vector.
    pub fn encode<S: Scalar>(&self, store: &ParamStore<S>, patch: &Patch<S>) -> Result<FeatureVector<S>> {
        let (values, _) = self.forward_cached(store, patch.samples)?;
        Ok(FeatureVector {
            channel_index: patch.channel_index,
            patch_index: patch.patch_index,
            values,
        })
    }

    /// Batch encode; identical to mapping [`Encoder::encode`] over `patches`.
    pub fn encode_all<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        patches: &[Patch<S>],
    ) -> Result<Vec<FeatureVector<S>>> {
        patches.iter().map(|p| self.encode(store, p)).collect()
    }

    pub(crate) fn forward_cached<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        samples: &[S],
    ) -> Result<(Vec<S>, EncoderCache<S>)> {
        self.check_len(samples.len())?;
        let mut x = Tensor::new(vec![1, samples.len()], samples.to_vec())?;
        let mut level_inputs = Vec::with_capacity(self.cfg.levels);
        let mut pre_acts = Vec::with_capacity(self.cfg.levels);
        for conv in &self.convs {
            let pre = conv.forward(store, &x)?;
            let act = nn::leaky_relu(&pre);
            level_inputs.push(x);
            pre_acts.push(pre);
            x = nn::decimate2(&act);
        }
        let pool_input_len = x.rank2().1;
        let pooled_t = nn::global_avg_pool(&x);
        let pooled = pooled_t.data().to_vec();
        level_inputs.push(x);
        let out = self.proj.forward(store, &pooled)?;
        Ok((out, EncoderCache { level_inputs, pre_acts, pool_input_len, pooled }))
    }

    /// Backward through one encode call; accumulates parameter gradients
    /// into `grads` (store order) and returns nothing - the gradient with
    /// respect to the raw signal is not needed anywhere.
    pub(crate) fn backward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        grads: &mut [Tensor<S>],
        cache: &EncoderCache<S>,
        grad_out: &[S],
    ) {
        let g_pooled = self.proj.backward(store, grads, &cache.pooled, grad_out);
        let mut g_x = nn::global_avg_pool_backward(cache.pool_input_len, &Tensor::from_vec(g_pooled));
        for i in (0..self.convs.len()).rev() {
            let act_len = cache.pre_acts[i].rank2().1;
            let g_act = nn::decimate2_backward(act_len, &g_x);
            let g_pre = nn::leaky_relu_backward(&cache.pre_acts[i], &g_act);
            g_x = self.convs[i].backward(store, grads, &cache.level_inputs[i], &g_pre);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_difference_report;
    use rand::Rng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            levels: 2,
            kernel: 3,
            widths: vec![3, 5],
            output_dim: 8,
            expected_input_len: None,
        }
    }

    fn build(cfg: EncoderConfig, seed: u64) -> (ParamStore<f64>, Encoder) {
        let mut rng = crate::seeding::stream_rng(seed, "encoder-test");
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, cfg, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad = EncoderConfig { widths: vec![8, 16], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig { levels: 0, widths: vec![], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_shape_pipeline() {
        // 3840 samples -> halved four times -> 240, pooled over 64 maps,
        // projected to 128.
        let (store, enc) = build(EncoderConfig::default(), 1);
        let samples: Vec<f64> = (0..3840).map(|i| (i as f64 * 0.01).sin()).collect();
        let (out, cache) = enc.forward_cached(&store, &samples).unwrap();
        assert_eq!(out.len(), 128);
        assert_eq!(cache.pool_input_len, 240);
        assert_eq!(cache.level_inputs.last().unwrap().rank2(), (64, 240));
    }

    #[test]
    fn rejects_wrong_window_when_configured() {
        let cfg = EncoderConfig { expected_input_len: Some(64), ..small_cfg() };
        let (store, enc) = build(cfg, 2);
        let ok = vec![0.0; 64];
        assert!(enc.encode(&store, &Patch { channel_index: 0, patch_index: 0, samples: &ok }).is_ok());
        let bad = vec![0.0; 63];
        let err = enc
            .encode(&store, &Patch { channel_index: 0, patch_index: 0, samples: &bad })
            .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn encode_all_equals_individual_calls() {
        let (store, enc) = build(small_cfg(), 3);
        let mut rng = crate::seeding::stream_rng(3, "patches");
        let data: Vec<Vec<f64>> =
            (0..6).map(|_| (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let patches: Vec<Patch<f64>> = data
            .iter()
            .enumerate()
            .map(|(i, s)| Patch { channel_index: i % 3, patch_index: i / 3, samples: s })
            .collect();
        let batch = enc.encode_all(&store, &patches).unwrap();
        for (p, fv) in patches.iter().zip(&batch) {
            let single = enc.encode(&store, p).unwrap();
            assert_eq!(single.values, fv.values, "bitwise identical");
            assert_eq!((fv.channel_index, fv.patch_index), (p.channel_index, p.patch_index));
        }
    }

    #[test]
    fn channel_is_encoded_independently_of_others() {
        // Same samples give the same feature no matter what other channels
        // exist in the batch - the encoder never mixes channels.
        let (store, enc) = build(small_cfg(), 4);
        let mut rng = crate::seeding::stream_rng(4, "indep");
        let target: Vec<f64> = (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let other: Vec<f64> = (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alone = enc
            .encode(&store, &Patch { channel_index: 0, patch_index: 0, samples: &target })
            .unwrap();
        let crowd = enc
            .encode_all(
                &store,
                &[
                    Patch { channel_index: 1, patch_index: 0, samples: &other },
                    Patch { channel_index: 0, patch_index: 0, samples: &target },
                ],
            )
            .unwrap();
        assert_eq!(alone.values, crowd[1].values);
    }

    #[test]
    fn deterministic_forward() {
        let (store, enc) = build(small_cfg(), 5);
        let samples: Vec<f64> = (0..50).map(|i| ((i * 7 % 13) as f64) / 13.0 - 0.5).collect();
        let a = enc.encode(&store, &Patch { channel_index: 0, patch_index: 0, samples: &samples }).unwrap();
        let b = enc.encode(&store, &Patch { channel_index: 0, patch_index: 0, samples: &samples }).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn odd_lengths_survive_every_level() {
        let (store, enc) = build(small_cfg(), 6);
        for len in [1usize, 2, 3, 7, 15, 33] {
            let samples = vec![0.25; len];
            let out = enc
                .encode(&store, &Patch { channel_index: 0, patch_index: 0, samples: &samples })
                .unwrap();
            assert_eq!(out.values.len(), 8, "len {len}");
        }
    }

    struct EncObjective {
        store: ParamStore<f64>,
        enc: Encoder,
        input: Vec<f64>,
        probe: Vec<f64>,
    }

    impl EncObjective {
        fn loss(&self) -> f64 {
            let (out, _) = self.enc.forward_cached(&self.store, &self.input).unwrap();
            out.iter().zip(&self.probe).map(|(a, b)| a * b).sum()
        }
        fn backward(&mut self) {
            self.store.zero_grad();
            let mut grads = self.store.grad_buffers();
            let (_, cache) = self.enc.forward_cached(&self.store, &self.input).unwrap();
            self.enc.backward(&self.store, &mut grads, &cache, &self.probe);
            self.store.accumulate_grads_from(&grads);
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let (store, enc) = build(small_cfg(), 7);
        let mut rng = crate::seeding::stream_rng(7, "enc-fd");
        let input: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut model = EncObjective { store, enc, input, probe };
        let report = finite_difference_report(
            &mut model,
            |m| m.backward(),
            |m| m.loss(),
            |m| &mut m.store,
            1e-5,
        );
        assert!(
            report.passes(1e-6),
            "max rel err {} at {}[{}]",
            report.max_rel_err,
            report.worst_param,
            report.worst_index
        );
    }
}

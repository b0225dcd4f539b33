//! The assembled classifier: shared encoder, holographic fusion under
//! per-subject key maps, and the memory head.
//!
//! Only the key map depends on a subject's electrode count. Everything else
//! (encoder, fusion basis, memory) has a fixed shape, which is what lets one
//! pre-trained checkpoint serve subjects with different channel counts:
//! adapting to a new subject means registering a fresh key map and
//! fine-tuning from there.
//!
//! Work flows through [`Batch`]es: a contiguous run of multichannel patches
//! from one subject plus the length-M stacks carved out of it. Overlapping
//! stacks share patch encodings, so each distinct patch is encoded and fused
//! once per batch. The backward pass re-runs the encoder forward instead of
//! caching its activations - the caches dwarf everything else in memory and
//! recomputing them costs a third of the backward.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, Patch};
use crate::error::{Error, Result};
use crate::fusion::{init_raw_angles, FuseCache, Fusion, FusionKind};
use crate::memory::{MlpHead, TcnConfig, Tcn};
use crate::nn::{ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;
use crate::seeding::stream_rng;
use crate::vsa::sample_unitary_basis;

/// Number of independent gradient chunks a batch backward is split into.
/// Fixed (not tied to the thread count) so that results are bitwise
/// reproducible on any machine: chunks are reduced sequentially in order.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum HeadConfig {
    Tcn(TcnConfig),
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Width of the fused holographic vector; also the encoder output width.
    pub feature_dim: usize,
    pub encoder: EncoderConfig,
    pub fusion: FusionKind,
    /// Stack length M: how many consecutive patches the memory sees.
    pub memory_len: usize,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.encoder.output_dim != self.feature_dim {
            return Err(Error::Config(format!(
                "encoder emits {} dims, fusion wants {}",
                self.encoder.output_dim, self.feature_dim
            )));
        }
        if self.memory_len == 0 {
            return Err(Error::Config("memory length must be >= 1".into()));
        }
        match &self.head {
            HeadConfig::Tcn(cfg) => {
                cfg.validate()?;
                if cfg.receptive_field() < self.memory_len {
                    return Err(Error::Config(format!(
                        "receptive field {} cannot cover a stack of {}",
                        cfg.receptive_field(),
                        self.memory_len
                    )));
                }
            }
            HeadConfig::Mlp { hidden } => {
                if *hidden == 0 {
                    return Err(Error::Config("mlp hidden width must be positive".into()));
                }
                if self.memory_len != 1 {
                    return Err(Error::Config(
                        "the mlp head classifies single patches; memory length must be 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
enum Head {
    Tcn(Tcn),
    Mlp(MlpHead),
}

enum HeadTape<S> {
    Tcn(Vec<crate::memory::TcnCache<S>>),
    Mlp(Vec<crate::memory::MlpCache<S>>),
}

/// A contiguous run of patches from one subject and the stacks over it.
/// `patches[j][c]` holds channel c's samples in the run's j-th patch; every
/// stack covers `start .. start + M` and overlapping stacks share encodings.
#[derive(Debug, Clone)]
pub struct Batch<S> {
    pub subject: String,
    pub patches: Vec<Vec<Vec<S>>>,
    pub stack_starts: Vec<usize>,
}

/// Intermediate state of one batch forward, consumed by the backward.
pub struct BatchTape<S> {
    fuse_caches: Vec<FuseCache<S>>,
    head: HeadTape<S>,
    consumed: bool,
}

#[derive(Clone)]
pub struct CaModel<S: Scalar> {
    cfg: ModelConfig,
    seed: u64,
    pub store: ParamStore<S>,
    encoder: Encoder,
    fusion: Fusion<S>,
    head: Head,
    keys: BTreeMap<String, ParamId>,
}

impl<S: Scalar> CaModel<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let basis = sample_unitary_basis::<S>(cfg.feature_dim, seed)?;
        let mut rng = stream_rng(seed, "init");
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, cfg.encoder.clone(), &mut rng)?;
        let head = match &cfg.head {
            HeadConfig::Tcn(tcn_cfg) => {
                Head::Tcn(Tcn::new(&mut store, cfg.feature_dim, tcn_cfg.clone(), &mut rng)?)
            }
            HeadConfig::Mlp { hidden } => {
                Head::Mlp(MlpHead::new(&mut store, cfg.feature_dim, *hidden, &mut rng)?)
            }
        };
        let fusion = Fusion::new(cfg.fusion, basis);
        Ok(CaModel { cfg, seed, store, encoder, fusion, head, keys: BTreeMap::new() })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn memory_len(&self) -> usize {
        self.cfg.memory_len
    }

    /// Subjects with a key map, in name order, with their channel counts.
    pub fn subjects(&self) -> impl Iterator<Item = (&str, usize)> {
        self.keys.iter().map(|(name, &id)| (name.as_str(), self.store.value(id).len()))
    }

    pub fn key_id(&self, subject: &str) -> Option<ParamId> {
        self.keys.get(subject).copied()
    }

    /// Creates the key map for a new subject: `channels` raw angles spread
    /// across the working range. Each subject gets exactly one map.
    pub fn register_subject(&mut self, subject: &str, channels: usize) -> Result<ParamId> {
        let raw = init_raw_angles(channels)?;
        let values: Vec<S> = raw.iter().map(|&u| S::of(u)).collect();
        let id = self.store.register(&format!("key.{subject}"), Tensor::from_vec(values))?;
        self.keys.insert(subject.to_string(), id);
        Ok(id)
    }

    /// Pairwise similarity of a subject's bound channel slots, row-major.
    pub fn key_similarity(&self, subject: &str) -> Result<Vec<Vec<S>>> {
        let id = self
            .key_id(subject)
            .ok_or_else(|| Error::Config(format!("no key map for subject {subject}")))?;
        Ok(self.fusion.key_similarity_matrix(self.store.value(id).data()))
    }

    fn raw_keys(&self, subject: &str) -> Result<(ParamId, Vec<S>)> {
        let id = self
            .key_id(subject)
            .ok_or_else(|| Error::Config(format!("no key map for subject {subject}")))?;
        Ok((id, self.store.value(id).data().to_vec()))
    }

    /// Logits for every stack in the batch, plus the tape for one backward.
    pub fn forward_batch(&self, batch: &Batch<S>) -> Result<(Vec<S>, BatchTape<S>)> {
        let (_, raw) = self.raw_keys(&batch.subject)?;
        let m = self.cfg.memory_len;
        for &start in &batch.stack_starts {
            if start + m > batch.patches.len() {
                return Err(Error::ShapeMismatch(format!(
                    "stack at {start} needs patches up to {}, batch has {}",
                    start + m,
                    batch.patches.len()
                )));
            }
        }
        let fused_and_caches: Vec<(Vec<S>, FuseCache<S>)> = batch
            .patches
            .par_iter()
            .enumerate()
            .map(|(j, channels)| {
                let features = channels
                    .iter()
                    .enumerate()
                    .map(|(c, samples)| {
                        self.encoder.encode(
                            &self.store,
                            &Patch { channel_index: c, patch_index: j, samples },
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.fusion.fuse(&features, &raw)
            })
            .collect::<Result<Vec<_>>>()?;
        let (fused, fuse_caches): (Vec<Vec<S>>, Vec<FuseCache<S>>) =
            fused_and_caches.into_iter().unzip();

        let mut logits = Vec::with_capacity(batch.stack_starts.len());
        let head = match &self.head {
            Head::Tcn(tcn) => {
                let dim = self.cfg.feature_dim;
                let mut caches = Vec::with_capacity(batch.stack_starts.len());
                for &start in &batch.stack_starts {
                    let mut data = vec![S::zero(); dim * m];
                    for (t, f) in fused[start..start + m].iter().enumerate() {
                        for (row, &v) in f.iter().enumerate() {
                            data[row * m + t] = v;
                        }
                    }
                    let stack = Tensor::new(vec![dim, m], data)?;
                    let (z, cache) = tcn.forward_cached(&self.store, &stack)?;
                    logits.push(z);
                    caches.push(cache);
                }
                HeadTape::Tcn(caches)
            }
            Head::Mlp(mlp) => {
                let mut caches = Vec::with_capacity(batch.stack_starts.len());
                for &start in &batch.stack_starts {
                    let (z, cache) = mlp.forward_cached(&self.store, &fused[start])?;
                    logits.push(z);
                    caches.push(cache);
                }
                HeadTape::Mlp(caches)
            }
        };
        Ok((logits, BatchTape { fuse_caches, head, consumed: false }))
    }

    /// Backpropagates per-stack logit gradients through the head, fusion,
    /// keys and encoder, accumulating into `grads` (store order). A tape
    /// drives exactly one backward; reuse is a state error because the
    /// encoder recompute assumes parameters unchanged since the forward.
    pub fn backward_batch(
        &self,
        batch: &Batch<S>,
        tape: &mut BatchTape<S>,
        grads: &mut [Tensor<S>],
        grad_logits: &[S],
    ) -> Result<()> {
        if tape.consumed {
            return Err(Error::State("batch tape already consumed by a backward".into()));
        }
        tape.consumed = true;
        if grad_logits.len() != batch.stack_starts.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} logit gradients for {} stacks",
                grad_logits.len(),
                batch.stack_starts.len()
            )));
        }
        let (key_id, _) = self.raw_keys(&batch.subject)?;
        let dim = self.cfg.feature_dim;
        let m = self.cfg.memory_len;

        // Head backward per stack, scattering into per-patch fused gradients.
        let mut fused_grads = vec![vec![S::zero(); dim]; batch.patches.len()];
        match (&self.head, &tape.head) {
            (Head::Tcn(tcn), HeadTape::Tcn(caches)) => {
                for ((&start, cache), &dz) in
                    batch.stack_starts.iter().zip(caches).zip(grad_logits)
                {
                    let g_stack = tcn.backward(&self.store, grads, cache, dz);
                    for t in 0..m {
                        let fg = &mut fused_grads[start + t];
                        for (row, f) in fg.iter_mut().enumerate() {
                            *f += g_stack.data()[row * m + t];
                        }
                    }
                }
            }
            (Head::Mlp(mlp), HeadTape::Mlp(caches)) => {
                for ((&start, cache), &dz) in
                    batch.stack_starts.iter().zip(caches).zip(grad_logits)
                {
                    let g = mlp.backward(&self.store, grads, cache, dz);
                    for (f, &gv) in fused_grads[start].iter_mut().zip(&g) {
                        *f += gv;
                    }
                }
            }
            _ => unreachable!("tape kind always matches the head that built it"),
        }

        // Fusion and encoder backward per patch, in fixed chunks. Each chunk
        // works on private buffers; the sequential in-order reduce keeps the
        // result independent of how many threads rayon actually used.
        let n = batch.patches.len();
        let chunk = n.div_ceil(GRAD_CHUNKS).max(1);
        let channels = batch.patches.first().map_or(0, Vec::len);
        let chunk_results: Vec<(Vec<Tensor<S>>, Vec<S>)> = (0..n.div_ceil(chunk.max(1)).max(1))
            .into_par_iter()
            .map(|ci| {
                let lo = ci * chunk;
                let hi = ((ci + 1) * chunk).min(n);
                let mut local = self.store.grad_buffers();
                let mut key_acc = vec![S::zero(); channels];
                for j in lo..hi {
                    let (feat_grads, key_grads) =
                        self.fusion.fuse_backward(&tape.fuse_caches[j], &fused_grads[j]);
                    for (c, fg) in feat_grads.iter().enumerate() {
                        let (_, cache) =
                            self.encoder.forward_cached(&self.store, &batch.patches[j][c])?;
                        self.encoder.backward(&self.store, &mut local, &cache, fg);
                    }
                    for (a, g) in key_acc.iter_mut().zip(&key_grads) {
                        *a += *g;
                    }
                }
                Ok((local, key_acc))
            })
            .collect::<Result<Vec<_>>>()?;
        for (local, key_acc) in &chunk_results {
            for (g, l) in grads.iter_mut().zip(local) {
                g.add_assign(l);
            }
            for (g, a) in grads[key_id.0].data_mut().iter_mut().zip(key_acc) {
                *g += *a;
            }
        }
        Ok(())
    }
}

/// End-to-end finite-difference audit of the whole model: one subject per
/// entry of `channels`, one batch each with deterministic random patches and
/// class-weighted BCE targets, every trainable parameter (encoder, head,
/// keys) perturbed against central differences with step `h`.
pub fn gradcheck_full(
    cfg: &ModelConfig,
    channels: &[usize],
    seed: u64,
    h: f64,
) -> Result<crate::nn::GradCheckReport> {
    use rand::Rng;

    if channels.is_empty() {
        return Err(Error::Config("gradcheck wants at least one subject".into()));
    }
    let mut model = CaModel::<f64>::new(cfg.clone(), seed)?;
    let m = cfg.memory_len;
    let patch_len = cfg.encoder.min_input_len().max(16);
    let mut rng = stream_rng(seed, "gradcheck");
    let mut batches = Vec::new();
    let mut targets: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<Vec<f64>> = Vec::new();
    for (i, &c) in channels.iter().enumerate() {
        let subject = format!("gc{i:02}");
        model.register_subject(&subject, c)?;
        let patches = m + 1;
        let batch = Batch {
            subject,
            patches: (0..patches)
                .map(|_| {
                    (0..c)
                        .map(|_| (0..patch_len).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect()
                })
                .collect(),
            stack_starts: vec![0, 1],
        };
        batches.push(batch);
        targets.push(vec![1.0, 0.0]);
        weights.push(vec![rng.gen_range(1.0..5.0), 1.0]);
    }

    struct Objective {
        model: CaModel<f64>,
        batches: Vec<Batch<f64>>,
        targets: Vec<Vec<f64>>,
        weights: Vec<Vec<f64>>,
    }
    let loss = |o: &mut Objective| -> f64 {
        let mut total = 0.0;
        for (b, (ts, ws)) in o.batches.iter().zip(o.targets.iter().zip(&o.weights)) {
            let (logits, _) = o.model.forward_batch(b).expect("forward in gradcheck");
            for ((z, &y), &w) in logits.iter().zip(ts).zip(ws) {
                total += crate::nn::ops::bce_with_logit(*z, y, w).0;
            }
        }
        total
    };
    let fill = |o: &mut Objective| {
        o.model.store.zero_grad();
        let mut grads = o.model.store.grad_buffers();
        for (b, (ts, ws)) in o.batches.iter().zip(o.targets.iter().zip(&o.weights)) {
            let (logits, mut tape) = o.model.forward_batch(b).expect("forward in gradcheck");
            let dzs: Vec<f64> = logits
                .iter()
                .zip(ts.iter().zip(ws))
                .map(|(z, (&y, &w))| crate::nn::ops::bce_with_logit(*z, y, w).1)
                .collect();
            o.model.backward_batch(b, &mut tape, &mut grads, &dzs).expect("backward");
        }
        o.model.store.accumulate_grads_from(&grads);
    };
    let mut obj = Objective { model, batches, targets, weights };
    Ok(crate::nn::finite_difference_report(&mut obj, fill, loss, |o| &mut o.model.store, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{self, finite_difference_report};
    use rand::Rng;

    fn tiny_cfg(head: HeadConfig, memory_len: usize) -> ModelConfig {
        ModelConfig {
            feature_dim: 8,
            encoder: EncoderConfig {
                levels: 2,
                kernel: 3,
                widths: vec![2, 3],
                output_dim: 8,
                expected_input_len: None,
            },
            fusion: FusionKind::Holographic,
            memory_len,
            head,
        }
    }

    fn tcn_head() -> HeadConfig {
        HeadConfig::Tcn(TcnConfig { blocks: 2, kernel: 2, dilations: vec![1, 1], hidden: 6 })
    }

    fn random_batch(subject: &str, patches: usize, channels: usize, seed: u64) -> Batch<f64> {
        let mut rng = crate::seeding::stream_rng(seed, "model-batch");
        Batch {
            subject: subject.into(),
            patches: (0..patches)
                .map(|_| {
                    (0..channels)
                        .map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect()
                })
                .collect(),
            stack_starts: Vec::new(),
        }
    }

    #[test]
    fn config_validation_catches_bad_combinations() {
        assert!(tiny_cfg(tcn_head(), 3).validate().is_ok());
        // Receptive field 3 cannot cover a stack of 4.
        assert!(tiny_cfg(tcn_head(), 4).validate().is_err());
        // The MLP head only makes sense patch-by-patch.
        assert!(tiny_cfg(HeadConfig::Mlp { hidden: 4 }, 2).validate().is_err());
        assert!(tiny_cfg(HeadConfig::Mlp { hidden: 4 }, 1).validate().is_ok());
        let mut bad = tiny_cfg(tcn_head(), 3);
        bad.feature_dim = 9;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn subjects_register_once_and_report_channel_counts() {
        let mut model = CaModel::<f64>::new(tiny_cfg(tcn_head(), 3), 11).unwrap();
        model.register_subject("s01", 4).unwrap();
        model.register_subject("s02", 7).unwrap();
        assert!(model.register_subject("s01", 4).is_err());
        let subjects: Vec<(&str, usize)> = model.subjects().collect();
        assert_eq!(subjects, vec![("s01", 4), ("s02", 7)]);
        assert!(model.key_id("s03").is_none());
    }

    #[test]
    fn forward_rejects_unknown_subjects_and_short_runs() {
        let mut model = CaModel::<f64>::new(tiny_cfg(tcn_head(), 3), 12).unwrap();
        model.register_subject("s01", 2).unwrap();
        let mut batch = random_batch("ghost", 4, 2, 1);
        batch.stack_starts = vec![0];
        assert!(model.forward_batch(&batch).is_err());
        batch.subject = "s01".into();
        batch.stack_starts = vec![2]; // needs patches up to 5, run has 4
        assert!(model.forward_batch(&batch).is_err());
        batch.stack_starts = vec![0, 1];
        let (logits, _) = model.forward_batch(&batch).unwrap();
        assert_eq!(logits.len(), 2);
        assert!(logits.iter().all(|z| z.is_finite()));
    }

    #[test]
    fn a_tape_drives_exactly_one_backward() {
        let mut model = CaModel::<f64>::new(tiny_cfg(tcn_head(), 3), 13).unwrap();
        model.register_subject("s01", 3).unwrap();
        let mut batch = random_batch("s01", 5, 3, 2);
        batch.stack_starts = vec![0, 2];
        let (_, mut tape) = model.forward_batch(&batch).unwrap();
        let mut grads = model.store.grad_buffers();
        model.backward_batch(&batch, &mut tape, &mut grads, &[0.3, -0.7]).unwrap();
        let again = model.backward_batch(&batch, &mut tape, &mut grads, &[0.3, -0.7]);
        assert!(matches!(again, Err(Error::State(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut model = CaModel::<f64>::new(tiny_cfg(tcn_head(), 3), 14).unwrap();
        model.register_subject("s01", 3).unwrap();
        let mut batch = random_batch("s01", 6, 3, 3);
        batch.stack_starts = vec![0, 1, 3];
        let (a, _) = model.forward_batch(&batch).unwrap();
        let (b, _) = model.forward_batch(&batch).unwrap();
        assert_eq!(a, b);
    }

    struct ModelObjective {
        model: CaModel<f64>,
        batches: Vec<Batch<f64>>,
        targets: Vec<Vec<f64>>,
        weights: Vec<Vec<f64>>,
    }

    impl ModelObjective {
        fn loss(&self) -> f64 {
            let mut total = 0.0;
            for (b, (ts, ws)) in self.batches.iter().zip(self.targets.iter().zip(&self.weights)) {
                let (logits, _) = self.model.forward_batch(b).unwrap();
                for ((z, &y), &w) in logits.iter().zip(ts).zip(ws) {
                    total += nn::ops::bce_with_logit(*z, y, w).0;
                }
            }
            total
        }
        fn backward(&mut self) {
            self.model.store.zero_grad();
            let mut grads = self.model.store.grad_buffers();
            for (b, (ts, ws)) in self.batches.iter().zip(self.targets.iter().zip(&self.weights)) {
                let (logits, mut tape) = self.model.forward_batch(b).unwrap();
                let dzs: Vec<f64> = logits
                    .iter()
                    .zip(ts.iter().zip(ws))
                    .map(|(z, (&y, &w))| nn::ops::bce_with_logit(*z, y, w).1)
                    .collect();
                self.model.backward_batch(b, &mut tape, &mut grads, &dzs).unwrap();
            }
            self.model.store.accumulate_grads_from(&grads);
        }
    }

    /// End-to-end gradient check across two subjects with different channel
    /// counts: every parameter, keys included, against central differences.
    #[test]
    fn whole_model_gradients_match_finite_differences() {
        let mut model = CaModel::<f64>::new(tiny_cfg(tcn_head(), 3), 15).unwrap();
        model.register_subject("s01", 3).unwrap();
        model.register_subject("s02", 5).unwrap();
        let mut b1 = random_batch("s01", 4, 3, 4);
        b1.stack_starts = vec![0, 1];
        let mut b2 = random_batch("s02", 3, 5, 5);
        b2.stack_starts = vec![0];
        let mut obj = ModelObjective {
            model,
            batches: vec![b1, b2],
            targets: vec![vec![1.0, 0.0], vec![1.0]],
            weights: vec![vec![1.0, 2.5], vec![0.8]],
        };
        let report = finite_difference_report(
            &mut obj,
            |m| m.backward(),
            |m| m.loss(),
            |m| &mut m.model.store,
            1e-5,
        );
        // Looser than the per-module checks: the loss here goes through two
        // FFT round trips per channel, whose rounding noise the difference
        // quotient amplifies by 1/2h.
        assert!(
            report.passes(1e-5),
            "max rel err {} at {}[{}]",
            report.max_rel_err,
            report.worst_param,
            report.worst_index
        );
    }

    #[test]
    fn packaged_gradcheck_covers_all_param_families() {
        let report = gradcheck_full(&tiny_cfg(tcn_head(), 3), &[3, 5], 77, 1e-5).unwrap();
        assert!(report.passes(1e-5), "max rel err {}", report.max_rel_err);
        // Two key maps of 3 and 5 channels are among the checked params.
        assert!(report.checked > 8);
        assert!(gradcheck_full(&tiny_cfg(tcn_head(), 3), &[], 77, 1e-5).is_err());
    }

    #[test]
    fn mlp_and_mean_fusion_paths_also_pass_gradcheck() {
        let mut cfg = tiny_cfg(HeadConfig::Mlp { hidden: 5 }, 1);
        cfg.fusion = FusionKind::ChannelMean;
        let mut model = CaModel::<f64>::new(cfg, 16).unwrap();
        model.register_subject("s01", 4).unwrap();
        let mut batch = random_batch("s01", 3, 4, 6);
        batch.stack_starts = vec![0, 1, 2];
        let mut obj = ModelObjective {
            model,
            batches: vec![batch],
            targets: vec![vec![1.0, 0.0, 1.0]],
            weights: vec![vec![1.0, 1.0, 3.0]],
        };
        let report = finite_difference_report(
            &mut obj,
            |m| m.backward(),
            |m| m.loss(),
            |m| &mut m.model.store,
            1e-5,
        );
        assert!(report.passes(1e-6), "max rel err {}", report.max_rel_err);
    }
}

//! Ablation variants, the subject-scaling sweep and a seeded random search
//! over the config space. Everything here composes the three pipeline
//! stages; no experiment touches model internals.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::model::{CaModel, HeadConfig, ModelConfig};
use crate::scalar::Scalar;
use crate::seeding::{stream_rng, stream_seed};

use super::data::SubjectData;
use super::eval::{summarize, EvalReport};
use super::train::{evaluate, finetune, pretrain, StageSummary, TrainConfig};

/// The full model and its three single-component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Skip pre-training; fine-tune from random initialization.
    NoPretrain,
    /// Replace holographic binding by the plain channel mean of features.
    MeanFusion,
    /// Replace the temporal head by an MLP on single fused vectors.
    NoMemory,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::Full, Variant::NoPretrain, Variant::MeanFusion, Variant::NoMemory];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPretrain => "no_pretrain",
            Variant::MeanFusion => "mean_fusion",
            Variant::NoMemory => "no_memory",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s}")))
    }
}

/// Model configuration for a variant; each ablation swaps exactly one
/// component and keeps everything else.
pub fn variant_model_cfg(base: &ModelConfig, variant: Variant) -> ModelConfig {
    let mut cfg = base.clone();
    match variant {
        Variant::Full | Variant::NoPretrain => {}
        Variant::MeanFusion => cfg.fusion = FusionKind::ChannelMean,
        Variant::NoMemory => {
            let hidden = match &cfg.head {
                HeadConfig::Tcn(tcn) => tcn.hidden,
                HeadConfig::Mlp { hidden } => *hidden,
            };
            cfg.head = HeadConfig::Mlp { hidden };
            cfg.memory_len = 1;
        }
    }
    cfg
}

/// The result of running one variant over a set of test subjects.
pub struct VariantOutcome {
    pub variant: Variant,
    /// Epochs the pre-training stage actually ran; absent for no_pretrain.
    pub pretrain_epochs: Option<usize>,
    pub pretrain_log: Vec<StageSummary>,
    pub reports: Vec<EvalReport>,
    pub finetune_epochs: usize,
}

impl VariantOutcome {
    /// Median F1 over every held-out seizure of every test subject; the
    /// cross-variant comparisons run on this number.
    pub fn pooled_median_f1(&self) -> Result<f64> {
        let f1s: Vec<f64> =
            self.reports.iter().flat_map(|r| r.seizures.iter().map(|s| s.f1)).collect();
        Ok(summarize(&f1s)?.median)
    }
}

/// Pre-trains on the pool (unless the variant skips it), then fine-tunes and
/// evaluates every test subject.
pub fn run_variant<S: Scalar>(
    base_model: &ModelConfig,
    cfg: &TrainConfig,
    pool: &[SubjectData<S>],
    tests: &[&SubjectData<S>],
    variant: Variant,
) -> Result<VariantOutcome> {
    if tests.is_empty() {
        return Err(Error::Config("no test subjects".into()));
    }
    let model_cfg = variant_model_cfg(base_model, variant);
    let test_ids: Vec<String> = tests.iter().map(|s| s.subject_id.clone()).collect();

    let (base, pretrain_epochs, pretrain_log) = match variant {
        Variant::NoPretrain => (CaModel::<S>::new(model_cfg.clone(), cfg.seed)?, None, Vec::new()),
        _ => {
            let pre = pretrain(&model_cfg, cfg, pool, &test_ids)?;
            let epochs = pre.log.epochs();
            (pre.model, Some(epochs), vec![StageSummary::from(&pre.log)])
        }
    };

    let mut reports = Vec::with_capacity(tests.len());
    let mut finetune_epochs = cfg.finetune_epochs(pretrain_epochs);
    for subject in tests {
        let subs = finetune(&base, cfg, subject, pretrain_epochs)?;
        finetune_epochs = subs[0].log.epochs();
        reports.push(evaluate(&subs, subject, cfg, variant.label())?);
    }
    Ok(VariantOutcome { variant, pretrain_epochs, pretrain_log, reports, finetune_epochs })
}

/// The ablation experiment on one test subject: every requested variant,
/// same pool, same config.
pub fn ablate<S: Scalar>(
    base_model: &ModelConfig,
    cfg: &TrainConfig,
    pool: &[SubjectData<S>],
    subject: &SubjectData<S>,
    variants: &[Variant],
) -> Result<Vec<VariantOutcome>> {
    variants
        .iter()
        .map(|&v| run_variant(base_model, cfg, pool, &[subject], v))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub pool_size: usize,
    pub median_f1: f64,
    pub mean_f1: f64,
    pub pretrain_epochs: usize,
    pub runtime_s: f64,
}

/// Repeats pretrain + finetune + evaluate with growing pools. Each size
/// draws its own pool subset and training seed from a size-named stream, so
/// the runs are mutually independent; wall-clock runtime is part of the
/// result.
pub fn subject_scaling<S: Scalar>(
    base_model: &ModelConfig,
    cfg: &TrainConfig,
    pool: &[SubjectData<S>],
    tests: &[&SubjectData<S>],
    sizes: &[usize],
) -> Result<Vec<ScalingPoint>> {
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size == 0 || size > pool.len() {
            return Err(Error::Config(format!(
                "pool size {size} not available from {} subjects",
                pool.len()
            )));
        }
        let stream = format!("scaling.{size}");
        let mut rng = stream_rng(cfg.seed, &stream);
        let chosen: Vec<SubjectData<S>> = rand::seq::index::sample(&mut rng, pool.len(), size)
            .iter()
            .map(|i| pool[i].clone())
            .collect();
        let mut size_cfg = cfg.clone();
        size_cfg.seed = stream_seed(cfg.seed, &stream);

        let start = Instant::now();
        let outcome = run_variant(base_model, &size_cfg, &chosen, tests, Variant::Full)?;
        let runtime_s = start.elapsed().as_secs_f64();
        let f1s: Vec<f64> =
            outcome.reports.iter().flat_map(|r| r.seizures.iter().map(|s| s.f1)).collect();
        let summary = summarize(&f1s)?;
        points.push(ScalingPoint {
            pool_size: size,
            median_f1: summary.median,
            mean_f1: summary.mean,
            pretrain_epochs: outcome.pretrain_epochs.unwrap_or(0),
            runtime_s,
        });
    }
    Ok(points)
}

pub fn scaling_csv(points: &[ScalingPoint]) -> String {
    let mut out = String::from("pool_size,median_f1,mean_f1,pretrain_epochs,runtime_s\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{:.3}\n",
            p.pool_size, p.median_f1, p.mean_f1, p.pretrain_epochs, p.runtime_s
        ));
    }
    out
}

/// Search ranges for the seeded random sweep. Learning rate is drawn
/// log-uniformly; discrete dimensions are drawn from the listed choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub lr_log10: (f64, f64),
    pub feature_dim: Vec<usize>,
    pub head_hidden: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr_log10: (-4.0, -2.5),
            feature_dim: vec![64, 128, 256],
            head_hidden: vec![32, 64, 128],
        }
    }
}

/// Draws `n` candidate (model, training) configurations from the space.
/// Pure function of the seed: the sweep can be sharded across processes by
/// index without coordination.
pub fn random_search(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    space: &SearchSpace,
    n: usize,
    seed: u64,
) -> Result<Vec<(ModelConfig, TrainConfig)>> {
    if space.feature_dim.is_empty() || space.head_hidden.is_empty() {
        return Err(Error::Config("empty search dimension".into()));
    }
    let (lo, hi) = space.lr_log10;
    if !(lo < hi) {
        return Err(Error::Config(format!("lr exponent range [{lo}, {hi}]")));
    }
    let mut rng = stream_rng(seed, "search");
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut model = base_model.clone();
        let mut train = base_train.clone();
        train.learning_rate = 10f64.powf(rng.gen_range(lo..hi));
        let d = space.feature_dim[rng.gen_range(0..space.feature_dim.len())];
        model.feature_dim = d;
        model.encoder.output_dim = d;
        let hidden = space.head_hidden[rng.gen_range(0..space.head_hidden.len())];
        match &mut model.head {
            HeadConfig::Tcn(tcn) => tcn.hidden = hidden,
            HeadConfig::Mlp { hidden: h } => *h = hidden,
        }
        model.validate()?;
        train.validate()?;
        out.push((model, train));
    }
    Ok(out)
}

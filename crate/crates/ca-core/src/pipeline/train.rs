//! The two-stage training regime and held-out evaluation.
//!
//! Pre-training draws every batch from one uniformly random pool subject and
//! stops on a train-F1 plateau inside a fixed epoch window. Fine-tuning
//! clones the pre-trained model per cross-validation fold (LOOC holds one
//! seizure out, LABOC trains on exactly one), registers a fresh key map for
//! the test subject, and trains a small fixed number of epochs. Evaluation
//! scores each sub-model only on its held-out seizures' regions.
//!
//! Train and evaluation regions are disjoint by construction (per-seizure
//! regions clip at midpoints between seizures) and that disjointness is
//! re-checked at every fold; a violation is a leakage error, not a warning.
//! Stacks reach back through real history for context, so a stack's context
//! may cross region boundaries - only its endpoint, the window actually
//! scored and trained on, is constrained.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaModel, ModelConfig};
use crate::nn::{ops, Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::seeding::stream_rng;

use super::data::{
    assemble_batch, blocks_from_masks, eligible_endpoints, mask_regions, masked_class_counts,
    seizure_regions, subject_blocks, Block, SubjectData,
};
use super::eval::{Confusion, EvalReport, SeizureEval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Leave-one-out: sub-model k trains on every seizure except k.
    Looc,
    /// Leave-all-but-one-out: sub-model k trains on seizure k only.
    Laboc,
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Looc => "looc",
            Scheme::Laboc => "laboc",
        }
    }
}

/// How much pre/post-ictal signal surrounds each seizure for fine-tuning and
/// evaluation: an hour per side for long-term recordings, three minutes for
/// short-term ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPolicy {
    ShortTerm,
    LongTerm,
}

impl ContextPolicy {
    pub fn context_s(&self) -> f64 {
        match self {
            ContextPolicy::ShortTerm => 180.0,
            ContextPolicy::LongTerm => 3600.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ContextPolicy::ShortTerm => "short_term",
            ContextPolicy::LongTerm => "long_term",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub window_s: f64,
    pub stride_s: f64,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub pretrain_min_epochs: usize,
    pub pretrain_max_epochs: usize,
    /// Plateau rule: stop once the best train F1 of the last `plateau_window`
    /// epochs beats the best before them by less than `plateau_delta`.
    pub plateau_window: usize,
    pub plateau_delta: f64,
    pub finetune_max_epochs: usize,
    pub scheme: Scheme,
    pub context: ContextPolicy,
    /// Restricted fine-tuning: only the key maps move, everything else is
    /// frozen.
    pub freeze_all_but_keys: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5.5e-4,
            window_s: 7.5,
            stride_s: 1.0,
            batch_size: 32,
            batches_per_epoch: 100,
            pretrain_min_epochs: 25,
            pretrain_max_epochs: 50,
            plateau_window: 5,
            plateau_delta: 0.005,
            finetune_max_epochs: 10,
            scheme: Scheme::Looc,
            context: ContextPolicy::ShortTerm,
            freeze_all_but_keys: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.window_s <= 0.0 || self.stride_s <= 0.0 {
            return Err(Error::Config(format!(
                "window {} s / stride {} s must be positive",
                self.window_s, self.stride_s
            )));
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config("batch size and batches per epoch must be positive".into()));
        }
        if self.pretrain_min_epochs == 0 || self.pretrain_min_epochs > self.pretrain_max_epochs {
            return Err(Error::Config(format!(
                "pre-training epoch bounds [{}, {}] out of order",
                self.pretrain_min_epochs, self.pretrain_max_epochs
            )));
        }
        if self.plateau_window == 0 || self.plateau_delta < 0.0 {
            return Err(Error::Config("degenerate plateau rule".into()));
        }
        if self.finetune_max_epochs == 0 || self.finetune_max_epochs > 10 {
            return Err(Error::Config(format!(
                "fine-tuning runs at most 10 epochs, got {}",
                self.finetune_max_epochs
            )));
        }
        Ok(())
    }

    /// Fine-tuning budget: at most `finetune_max_epochs`, and never more
    /// than a fifth of the pre-training epochs actually run.
    pub fn finetune_epochs(&self, pretrain_epochs: Option<usize>) -> usize {
        match pretrain_epochs {
            Some(pe) => self.finetune_max_epochs.min((pe / 5).max(1)),
            None => self.finetune_max_epochs,
        }
    }
}

/// Where one training batch came from; the pre-training leakage audit and
/// the protocol-conformance checks read these records.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BatchProvenance {
    pub epoch: usize,
    pub batch: usize,
    pub subject_id: String,
    pub recording: usize,
    pub end_first: usize,
    pub stacks: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageLog {
    pub stage: String,
    /// One train-F1 value per epoch; its length is the epoch count.
    pub train_f1: Vec<f64>,
    pub provenance: Vec<BatchProvenance>,
}

impl StageLog {
    pub fn new(stage: impl Into<String>) -> Self {
        StageLog { stage: stage.into(), train_f1: Vec::new(), provenance: Vec::new() }
    }

    pub fn epochs(&self) -> usize {
        self.train_f1.len()
    }

    /// One JSON object per line, one line per batch.
    pub fn provenance_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.provenance {
            out.push_str(&serde_json::to_string(rec).expect("provenance serializes"));
            out.push('\n');
        }
        out
    }
}

/// Checkpoint-sized view of a stage: the per-epoch F1 trace without the
/// batch-level provenance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageSummary {
    pub stage: String,
    pub train_f1: Vec<f64>,
}

impl From<&StageLog> for StageSummary {
    fn from(log: &StageLog) -> Self {
        StageSummary { stage: log.stage.clone(), train_f1: log.train_f1.clone() }
    }
}

pub struct Pretrained<S: Scalar> {
    pub model: CaModel<S>,
    pub adam: Adam,
    pub log: StageLog,
}

/// One fine-tuned fold: the sub-model, what it trained on and what it is
/// allowed to be scored on.
pub struct SubModel<S: Scalar> {
    pub model: CaModel<S>,
    pub adam: Adam,
    pub log: StageLog,
    /// (recording, annotation) pairs, indices into the subject's flattened
    /// seizure list.
    pub trained_on: Vec<(usize, usize)>,
    pub held_out: Vec<(usize, usize)>,
    /// Endpoint masks this fold trained under, one per recording; evaluation
    /// re-checks its own endpoints against them.
    pub train_masks: Vec<Vec<bool>>,
}

fn pos_weight(pos: u64, neg: u64) -> f64 {
    if pos == 0 {
        1.0
    } else {
        (neg as f64 / pos as f64).clamp(1.0, 50.0)
    }
}

fn plateaued(f1s: &[f64], window: usize, delta: f64) -> bool {
    if f1s.len() <= window {
        return false;
    }
    let best = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best(&f1s[f1s.len() - window..]) - best(&f1s[..f1s.len() - window]) < delta
}

/// One optimizer step on one batch; predictions are counted into `confusion`
/// before the update, so an epoch's train F1 reflects the model as it
/// trained.
fn step_batch<S: Scalar>(
    model: &mut CaModel<S>,
    adam: &mut Adam,
    batch: &crate::model::Batch<S>,
    labels: &[bool],
    w_pos: S,
    confusion: &mut Confusion,
) -> Result<()> {
    let (logits, mut tape) = model.forward_batch(batch)?;
    let inv = S::of(1.0 / logits.len() as f64);
    let mut dzs = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        confusion.count(y, *z > S::zero());
        let target = if y { S::one() } else { S::zero() };
        let weight = if y { w_pos } else { S::one() };
        let (_, dz) = ops::bce_with_logit(*z, target, weight);
        dzs.push(dz * inv);
    }
    let mut grads = model.store.grad_buffers();
    model.backward_batch(batch, &mut tape, &mut grads, &dzs)?;
    model.store.zero_grad();
    model.store.accumulate_grads_from(&grads);
    adam.step(&mut model.store)
}

/// Pre-trains a fresh model on the pool, every batch drawn from one
/// uniformly random pool subject. `test_ids` is the exclusion list: any of
/// them appearing in the pool is a hard leakage error.
pub fn pretrain<S: Scalar>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    pool: &[SubjectData<S>],
    test_ids: &[String],
) -> Result<Pretrained<S>> {
    model_cfg.validate()?;
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Config("pre-training pool is empty".into()));
    }
    for subject in pool {
        if test_ids.iter().any(|t| t == &subject.subject_id) {
            return Err(Error::Leakage(format!(
                "test subject {} is in the pre-training pool",
                subject.subject_id
            )));
        }
    }

    let mut model = CaModel::new(model_cfg.clone(), cfg.seed)?;
    // Registration in name order keeps the parameter layout canonical, so a
    // checkpoint reloads into the identical store regardless of pool order.
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool[a].subject_id.cmp(&pool[b].subject_id));
    for &i in &order {
        model.register_subject(&pool[i].subject_id, pool[i].channels)?;
    }

    let m = model_cfg.memory_len;
    let blocks: Vec<Vec<Block>> =
        pool.iter().map(|s| subject_blocks(s, m, cfg.batch_size)).collect();
    for (subject, b) in pool.iter().zip(&blocks) {
        if b.is_empty() {
            return Err(Error::Data(format!(
                "subject {} contributes no eligible stacks",
                subject.subject_id
            )));
        }
    }
    let (pos, neg) = pool.iter().fold((0, 0), |acc, s| {
        let (p, n) = s.class_counts(m);
        (acc.0 + p, acc.1 + n)
    });
    if pos == 0 {
        return Err(Error::Data("pre-training pool has no positive stacks".into()));
    }
    let w_pos = S::of(pos_weight(pos, neg));

    let mut adam = Adam::new(AdamConfig { lr: cfg.learning_rate, ..Default::default() });
    let mut rng = stream_rng(cfg.seed, "pretrain.data");
    let mut log = StageLog::new("pretrain");
    for epoch in 1..=cfg.pretrain_max_epochs {
        let mut confusion = Confusion::default();
        for batch_i in 0..cfg.batches_per_epoch {
            let s = rng.gen_range(0..pool.len());
            let block = blocks[s][rng.gen_range(0..blocks[s].len())];
            let (batch, labels) = assemble_batch(&pool[s], &block, m)?;
            step_batch(&mut model, &mut adam, &batch, &labels, w_pos, &mut confusion)?;
            log.provenance.push(BatchProvenance {
                epoch,
                batch: batch_i,
                subject_id: pool[s].subject_id.clone(),
                recording: block.recording,
                end_first: block.end_first,
                stacks: block.stacks,
            });
        }
        log.train_f1.push(confusion.f1());
        if epoch >= cfg.pretrain_min_epochs
            && plateaued(&log.train_f1, cfg.plateau_window, cfg.plateau_delta)
        {
            break;
        }
    }

    // The exclusion list was checked up front; auditing the actual batch
    // provenance catches any regression between the two.
    for rec in &log.provenance {
        if test_ids.iter().any(|t| t == &rec.subject_id) {
            return Err(Error::Leakage(format!(
                "batch provenance names test subject {}",
                rec.subject_id
            )));
        }
    }
    Ok(Pretrained { model, adam, log })
}

/// Fold geometry of cross-validated fine-tuning: which seizures fold k
/// trains on and holds out, plus the per-recording training masks. A pure
/// function of (subject, scheme, context), so a sub-model reloaded from a
/// checkpoint can rebuild the masks it was trained under.
pub struct FoldPlan {
    pub trained_on: Vec<(usize, usize)>,
    pub held_out: Vec<(usize, usize)>,
    pub train_masks: Vec<Vec<bool>>,
}

pub fn fold_plan<S: Scalar>(
    subject: &SubjectData<S>,
    cfg: &TrainConfig,
    k: usize,
) -> Result<FoldPlan> {
    let seizures = subject.seizures();
    if k >= seizures.len() {
        return Err(Error::Config(format!(
            "fold {k} of a {}-seizure subject",
            seizures.len()
        )));
    }
    let context_s = cfg.context.context_s();
    let trained_on: Vec<(usize, usize)> = match cfg.scheme {
        Scheme::Looc => seizures.iter().copied().filter(|&s| s != seizures[k]).collect(),
        Scheme::Laboc => vec![seizures[k]],
    };
    let held_out: Vec<(usize, usize)> =
        seizures.iter().copied().filter(|s| !trained_on.contains(s)).collect();

    // Region masks per recording; train and eval regions must not share a
    // single endpoint.
    let mut train_masks = Vec::with_capacity(subject.recordings.len());
    for (r, rec) in subject.recordings.iter().enumerate() {
        let regions = seizure_regions(&rec.rec.annotations, context_s, rec.rec.duration_s());
        let pick = |set: &[(usize, usize)]| -> Vec<(f64, f64)> {
            set.iter().filter(|&&(sr, _)| sr == r).map(|&(_, a)| regions[a]).collect()
        };
        // Training additionally respects the subject's own (possibly
        // curated) eligibility; evaluation regions do not shrink.
        let train_mask: Vec<bool> = mask_regions(&rec.grid, &pick(&trained_on))
            .iter()
            .zip(&rec.eligible)
            .map(|(&in_region, &ok)| in_region && ok)
            .collect();
        let eval_mask = mask_regions(&rec.grid, &pick(&held_out));
        if train_mask.iter().zip(&eval_mask).any(|(&t, &e)| t && e) {
            return Err(Error::Leakage(format!(
                "fold {k}: train and eval regions share windows in recording {r}"
            )));
        }
        train_masks.push(train_mask);
    }
    Ok(FoldPlan { trained_on, held_out, train_masks })
}

/// Fine-tunes one sub-model per seizure of the test subject. The base model
/// must not have seen this subject: a pre-registered key map means the
/// subject leaked into pre-training.
pub fn finetune<S: Scalar>(
    base: &CaModel<S>,
    cfg: &TrainConfig,
    subject: &SubjectData<S>,
    pretrain_epochs: Option<usize>,
) -> Result<Vec<SubModel<S>>> {
    cfg.validate()?;
    let n = subject.seizure_count();
    if n < 2 {
        return Err(Error::Config(format!(
            "{} needs at least 2 seizures for cross-validated fine-tuning, found {n}",
            subject.subject_id
        )));
    }
    if base.key_id(&subject.subject_id).is_some() {
        return Err(Error::Leakage(format!(
            "base model already carries a key map for {}",
            subject.subject_id
        )));
    }
    let epochs = cfg.finetune_epochs(pretrain_epochs);
    let m = base.memory_len();

    let mut subs = Vec::with_capacity(n);
    for k in 0..n {
        let FoldPlan { trained_on, held_out, train_masks } = fold_plan(subject, cfg, k)?;

        let blocks = blocks_from_masks(&train_masks, m, cfg.batch_size);
        if blocks.is_empty() {
            return Err(Error::Data(format!(
                "fold {k} of {} has no trainable stacks",
                subject.subject_id
            )));
        }
        let (pos, neg) = masked_class_counts(subject, &train_masks, m);
        if pos == 0 {
            return Err(Error::Data(format!("fold {k}: training region lost its seizure")));
        }
        let w_pos = S::of(pos_weight(pos, neg));
        let total_stacks: usize = blocks.iter().map(|b| b.stacks).sum();
        let batches_per_epoch = total_stacks.div_ceil(cfg.batch_size).max(1);

        let mut model = base.clone();
        model.register_subject(&subject.subject_id, subject.channels)?;
        if cfg.freeze_all_but_keys {
            model.store.set_trainable(|name| name.starts_with("key."));
        } else {
            model.store.set_trainable(|_| true);
        }
        let mut adam = Adam::new(AdamConfig { lr: cfg.learning_rate, ..Default::default() });
        let mut rng =
            stream_rng(cfg.seed, &format!("finetune.{}.k{k}", subject.subject_id));
        let mut log = StageLog::new(format!("finetune.k{k}"));
        for epoch in 1..=epochs {
            let mut confusion = Confusion::default();
            for batch_i in 0..batches_per_epoch {
                let block = blocks[rng.gen_range(0..blocks.len())];
                let (batch, labels) = assemble_batch(subject, &block, m)?;
                step_batch(&mut model, &mut adam, &batch, &labels, w_pos, &mut confusion)?;
                log.provenance.push(BatchProvenance {
                    epoch,
                    batch: batch_i,
                    subject_id: subject.subject_id.clone(),
                    recording: block.recording,
                    end_first: block.end_first,
                    stacks: block.stacks,
                });
            }
            log.train_f1.push(confusion.f1());
        }
        subs.push(SubModel { model, adam, log, trained_on, held_out, train_masks });
    }
    Ok(subs)
}

/// Scores every sub-model on its held-out seizures' regions and aggregates
/// to one per-subject report. Each scored endpoint is checked against the
/// fold's training mask; an overlap is a leakage error.
pub fn evaluate<S: Scalar>(
    sub_models: &[SubModel<S>],
    subject: &SubjectData<S>,
    cfg: &TrainConfig,
    variant: &str,
) -> Result<EvalReport> {
    if sub_models.is_empty() {
        return Err(Error::Config("no sub-models to evaluate".into()));
    }
    let context_s = cfg.context.context_s();
    let mut rows = Vec::new();
    for (k, sub) in sub_models.iter().enumerate() {
        let m = sub.model.memory_len();
        for &(r, a) in &sub.held_out {
            let rec = &subject.recordings[r];
            let regions =
                seizure_regions(&rec.rec.annotations, context_s, rec.rec.duration_s());
            let region = regions[a];
            let eval_mask = mask_regions(&rec.grid, &[region]);
            if eval_mask
                .iter()
                .zip(&sub.train_masks[r])
                .any(|(&e, &t)| e && t)
            {
                return Err(Error::Leakage(format!(
                    "fold {k}: seizure {a} evaluation region overlaps its training windows"
                )));
            }
            if eligible_endpoints(&eval_mask, m).is_empty() {
                return Err(Error::Data(format!(
                    "fold {k}: seizure {a} region [{:.1}, {:.1}] s holds no full stacks",
                    region.0, region.1
                )));
            }
            let mut masks: Vec<Vec<bool>> =
                subject.recordings.iter().map(|rr| vec![false; rr.grid.count]).collect();
            masks[r] = eval_mask;
            let mut confusion = Confusion::default();
            for block in blocks_from_masks(&masks, m, 256) {
                let (batch, labels) = assemble_batch(subject, &block, m)?;
                let (logits, _) = sub.model.forward_batch(&batch)?;
                for (z, &y) in logits.iter().zip(&labels) {
                    confusion.count(y, *z > S::zero());
                }
            }
            rows.push(SeizureEval::new(k, r, a, region, confusion));
        }
    }
    EvalReport::from_seizures(
        &subject.subject_id,
        variant,
        cfg.scheme.label(),
        cfg.context.label(),
        rows,
    )
}

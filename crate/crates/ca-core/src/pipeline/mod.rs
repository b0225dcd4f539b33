//! The end-to-end pipeline: subject data preparation, the two-stage training
//! regime, held-out evaluation, checkpointing, and the experiment drivers
//! (ablations, subject scaling, random search) built on top of them.

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod experiments;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use data::{PreprocessConfig, SubjectData};
pub use eval::{Confusion, EvalReport, SeizureEval, Summary};
pub use experiments::{
    ablate, random_search, run_variant, scaling_csv, subject_scaling, variant_model_cfg,
    ScalingPoint, SearchSpace, Variant, VariantOutcome,
};
pub use train::{
    evaluate, finetune, fold_plan, pretrain, BatchProvenance, ContextPolicy, FoldPlan,
    Pretrained, Scheme, StageLog, StageSummary, SubModel, TrainConfig,
};

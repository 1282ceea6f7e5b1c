//! Toy-scale masked-LM pre-training and classification fine-tuning.

mod config;
mod data;
mod divergence;
mod finetune;
mod mlm;
mod optim;
mod runlog;
mod schedule;

pub use config::{L2Mode, TrainConfig};
pub use data::{
    mask_sequence, ClassificationTask, Corpus, LabeledSplit, MaskedSequence, SyntheticTask, TaskKind, CLS,
    FIRST_REGULAR, MARKERS, MASK, PAD,
};
pub use divergence::{detect_divergence, DivergenceThresholds, Health};
pub use finetune::{classification_accuracy, finetune_classifier, ClassifierHead, FinetuneReport, CLASSIFIER_GROUP};
pub use mlm::{
    l2_applies, loss_with_l2, mlm_eval_loss, penalized_weights, pretrain_mlm, MlmHead, PretrainOutcome, MLM_HEAD_GROUP,
};
pub use optim::{Adam, AdamSettings};
pub use runlog::{DivergenceReason, RunLog, RunStatus, StepRecord, RUNLOG_HEADER};
pub use schedule::lr_schedule;

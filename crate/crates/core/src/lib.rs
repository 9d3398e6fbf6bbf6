//! Few-shot prompt-based fine-tuning of a masked language model, augmented
//! with prompt-level and batch-level contrastive learning over sampled
//! support sets.
//!
//! The pipeline: a prompt [`templates::Template`] turns raw text into a
//! cloze with one mask slot; a [`verbalizer::Verbalizer`] reads the class
//! distribution off the mask position; for every batch member the
//! [`sampling`] module builds two similarity-ranked support pools (other
//! batch members, and re-renderings under alternate templates) and selects a
//! positive plus different-label negatives; [`contrastive`] scores each
//! anchor with a temperature-scaled InfoNCE term; the [`trainer`] combines
//! cross-entropy and both contrastive losses into one joint objective and
//! fine-tunes the backend end to end.
//!
//! Everything is runnable and gradient-checkable without external models via
//! the deterministic reference backend in [`backend`].

pub mod autodiff;
pub mod backend;
pub mod contrastive;
pub mod data;
pub mod error;
mod exec;
pub mod sampling;
pub mod templates;
pub mod trainer;
pub mod verbalizer;

pub use backend::{
    HashSentenceEncoder, MaskedLMBackend, ReferenceBackend, ReferenceConfig, SentenceEncoder,
    TokenSequence, TrainableBackend,
};
pub use contrastive::{AnchorGroup, ContrastiveConfig, DenominatorMode};
pub use data::{Dataset, KShotSplit, SplitManifest, TaskKind};
pub use error::{Error, ErrorClass, Result};
pub use sampling::{SamplingConfig, SamplingLevel, SamplingStrategy, SupportSet};
pub use templates::{PromptedExample, RawInput, Template, TemplateSet, MASK_TOKEN};
pub use trainer::{
    evaluate, joint_loss_and_gradient, run_experiment, train_run, train_step, Aggregate,
    ExperimentReport, GridPoint, RunMetrics, TrainConfig, TrainMode,
};
pub use verbalizer::Verbalizer;

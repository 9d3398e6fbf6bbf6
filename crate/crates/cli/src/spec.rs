//! The fully resolved run configuration. Built once from CLI arguments,
//! persisted as config.json in every run directory, and loadable back for
//! `eval` and `report`.

use std::path::PathBuf;

use promptcl::contrastive::DenominatorMode;
use promptcl::data::{load_tsv, Dataset};
use promptcl::sampling::{PromptScope, SamplingStrategy};
use promptcl::templates::load_template_set;
use promptcl::verbalizer::load_verbalizer;
use promptcl::{
    ContrastiveConfig, Error, GridPoint, HashSentenceEncoder, ReferenceBackend, ReferenceConfig,
    Result, SamplingConfig, TaskKind, TemplateSet, TrainConfig, TrainMode, TrainableBackend,
};
use serde::{Deserialize, Serialize};

use crate::args::TrainArgs;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub task: String,
    pub task_kind: TaskKind,
    pub data_dir: PathBuf,
    pub templates: PathBuf,
    pub verbalizer: PathBuf,
    pub backend: String,
    pub hidden_dim: usize,
    pub backend_seed: u64,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub strategy: SamplingStrategy,
    pub filtering_ratio: f64,
    pub max_negatives: Option<usize>,
    pub prompt_scope: PromptScope,
    pub require_same_label_positive: Option<bool>,
    pub temperature: f64,
    pub t: f64,
    pub a: f64,
    pub denominator: DenominatorMode,
    pub lr: Vec<f64>,
    pub bs: Vec<usize>,
    pub max_steps: usize,
    pub eval_every: usize,
    pub jobs: usize,
}

/// Sentence-pair tasks by naming convention; everything else is
/// single-sentence.
pub fn task_kind_for(task: &str) -> TaskKind {
    let lower = task.to_lowercase();
    if lower.ends_with("nli") || lower == "rte" {
        TaskKind::SentencePair
    } else {
        TaskKind::SingleSentence
    }
}

impl RunSpec {
    pub fn from_train_args(args: &TrainArgs) -> Self {
        RunSpec {
            task: args.data.task.clone(),
            task_kind: task_kind_for(&args.data.task),
            data_dir: args.data.data_dir.clone(),
            templates: args.model.templates.clone(),
            verbalizer: args.model.verbalizer.clone(),
            backend: args.model.backend.clone(),
            hidden_dim: args.model.hidden_dim,
            backend_seed: args.model.backend_seed,
            k: args.k,
            seeds: args.seeds.clone(),
            strategy: args.strategy.into(),
            filtering_ratio: args.filtering_ratio,
            max_negatives: args.max_negatives,
            prompt_scope: args.prompt_scope.into(),
            require_same_label_positive: args.require_same_label_positive,
            temperature: args.temperature,
            t: args.t,
            a: args.a,
            denominator: args.denominator.into(),
            lr: args.lr.clone(),
            bs: args.bs.clone(),
            max_steps: args.max_steps,
            eval_every: args.eval_every,
            jobs: args.jobs,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr[0],
            batch_size: self.bs[0],
            max_steps: self.max_steps,
            eval_every: self.eval_every,
            loss: ContrastiveConfig {
                temperature: self.temperature,
                t: self.t,
                a: self.a,
                denominator: self.denominator,
                literal_pc_pairing: false,
            },
            sampling: SamplingConfig {
                strategy: self.strategy,
                filtering_ratio: self.filtering_ratio,
                max_negatives: self.max_negatives,
                prompt_scope: self.prompt_scope,
                require_same_label_positive: self.require_same_label_positive,
            },
            seed: self.seeds.first().copied().unwrap_or(42),
            mode: TrainMode::Joint,
        }
    }

    /// The lr x bs grid, lr-major.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut points = Vec::with_capacity(self.lr.len() * self.bs.len());
        for &learning_rate in &self.lr {
            for &batch_size in &self.bs {
                points.push(GridPoint {
                    learning_rate,
                    batch_size,
                });
            }
        }
        points
    }

    pub fn load_corpus(&self) -> Result<Dataset> {
        load_tsv(self.data_dir.join("train.tsv"), self.task_kind)
    }

    pub fn load_test(&self) -> Result<Dataset> {
        load_tsv(self.data_dir.join("test.tsv"), self.task_kind)
    }

    pub fn load_templates(&self) -> Result<TemplateSet> {
        load_template_set(&self.templates)
    }

    pub fn load_verbalizer_pairs(&self) -> Result<Vec<(String, String)>> {
        load_verbalizer(&self.verbalizer)
    }

    pub fn encoder(&self) -> HashSentenceEncoder {
        HashSentenceEncoder::default()
    }

    /// Build a trainable backend for one run seed. The reference backend
    /// derives its initialization from `backend_seed + run seed` so splits
    /// differ in initialization as well as membership.
    pub fn make_backend(
        &self,
        corpus: &Dataset,
        templates: &TemplateSet,
        pairs: &[(String, String)],
        run_seed: u64,
    ) -> Result<Box<dyn TrainableBackend>> {
        match self.backend.as_str() {
            "reference" => {
                let words: Vec<String> = pairs.iter().map(|(_, w)| w.clone()).collect();
                let backend = ReferenceBackend::from_task(
                    corpus,
                    templates,
                    &words,
                    ReferenceConfig {
                        hidden_dim: self.hidden_dim,
                        seed: self.backend_seed.wrapping_add(run_seed),
                    },
                )?;
                Ok(Box::new(backend))
            }
            other => Err(Error::Config(format!(
                "unknown backend {other:?}; available: reference"
            ))),
        }
    }
}

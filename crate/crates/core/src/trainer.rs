//! Joint fine-tuning: per batch, the cross-entropy term at the mask
//! position, both contrastive terms over per-anchor support sets, one SGD
//! update on the joint objective; plus evaluation and the multi-seed
//! grid-search experiment protocol.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Var};
use crate::backend::{MaskedLMBackend, SentenceEncoder, TokenSequence, TrainableBackend};
use crate::contrastive::{
    joint_loss, represent_on_tape, symmetric_pair, symmetric_loss, AnchorGroup, ContrastiveConfig,
};
use crate::data::{batches, Dataset, Example, KShotSplit};
use crate::error::{Error, Result};
use crate::sampling::{
    build_support_sets, SamplingConfig, SamplingLevel, SupportOutcome, SupportSet,
};
use crate::templates::{PromptedExample, Template, TemplateSet};
use crate::verbalizer::{argmax, ce_from_probs, class_logits, softmax, Verbalizer};

/// Whether a run trains on the joint objective or on cross-entropy alone
/// (plain prompt fine-tuning, no support sets built at all).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Joint,
    PromptOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Evaluate on dev every this many steps (and always at the end).
    pub eval_every: usize,
    pub loss: ContrastiveConfig,
    pub sampling: SamplingConfig,
    /// Seed for batch shuffling.
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            batch_size: 16,
            max_steps: 1000,
            eval_every: 100,
            loss: ContrastiveConfig::default(),
            sampling: SamplingConfig::default(),
            seed: 42,
            mode: TrainMode::Joint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        self.loss.validate()?;
        self.sampling.validate()
    }
}

/// Losses and support-set accounting for one step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepLosses {
    pub ce: f64,
    pub bc: f64,
    pub pc: f64,
    pub total: f64,
    pub bc_used: usize,
    pub bc_skipped: usize,
    pub pc_used: usize,
    pub pc_skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub losses: StepLosses,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub dev_accuracy: f64,
}

/// Everything one training run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub final_dev_accuracy: f64,
    pub bc_skipped_total: usize,
    pub pc_skipped_total: usize,
}

struct StepComputation<'t, 'b, B: TrainableBackend + ?Sized> {
    backend: &'b B,
    tape: &'t Tape,
    params: Vec<Var<'t>>,
    token_cache: HashMap<String, TokenSequence>,
    rep_cache: HashMap<String, Vec<Var<'t>>>,
}

impl<'t, 'b, B: TrainableBackend + ?Sized> StepComputation<'t, 'b, B> {
    fn new(backend: &'b B, tape: &'t Tape) -> Self {
        let params = backend.params().iter().map(|&p| tape.leaf(p)).collect();
        StepComputation {
            backend,
            tape,
            params,
            token_cache: HashMap::new(),
            rep_cache: HashMap::new(),
        }
    }

    fn tokens(&mut self, text: &str) -> Result<TokenSequence> {
        if let Some(seq) = self.token_cache.get(text) {
            return Ok(seq.clone());
        }
        let seq = self.backend.tokenize(text)?;
        self.token_cache.insert(text.to_string(), seq.clone());
        Ok(seq)
    }

    /// Mask-position representation of a prompted text, computed once per
    /// distinct text per step.
    fn representation(&mut self, text: &str) -> Result<Vec<Var<'t>>> {
        if let Some(rep) = self.rep_cache.get(text) {
            return Ok(rep.clone());
        }
        let seq = self.tokens(text)?;
        let rep = represent_on_tape(self.backend, self.tape, &self.params, &seq)?;
        self.rep_cache.insert(text.to_string(), rep.clone());
        Ok(rep)
    }

    fn group_for(&mut self, set: &SupportSet) -> Result<AnchorGroup<Var<'t>>> {
        let anchor = self.representation(&set.query.text)?;
        let positive = self.representation(&set.positive.prompted.text)?;
        let mut negatives = Vec::with_capacity(set.negatives.len());
        for candidate in &set.negatives {
            negatives.push(self.representation(&candidate.prompted.text)?);
        }
        Ok(AnchorGroup {
            anchor,
            positive,
            negatives,
        })
    }
}

/// Render every batch member under every template; index 0 is the main
/// template.
fn render_batch(
    batch: &[Example],
    templates: &TemplateSet,
    verbalizer: &Verbalizer,
) -> Result<Vec<Vec<PromptedExample>>> {
    batch
        .iter()
        .map(|ex| {
            let label = verbalizer.label_id(&ex.label).ok_or_else(|| {
                Error::Config(format!(
                    "label {:?} is not covered by the verbalizer",
                    ex.label
                ))
            })?;
            templates
                .all()
                .iter()
                .map(|t| t.apply(&ex.raw, Some(label)))
                .collect()
        })
        .collect()
}

/// Compute the joint loss of one batch and its gradient with respect to the
/// backend parameters, without updating anything. [`train_step`] is this
/// plus one SGD update; external optimizers can consume the gradient
/// directly.
pub fn joint_loss_and_gradient<B: TrainableBackend + ?Sized>(
    backend: &B,
    encoder: &dyn SentenceEncoder,
    batch: &[Example],
    templates: &TemplateSet,
    verbalizer: &Verbalizer,
    config: &TrainConfig,
) -> Result<(StepLosses, Vec<f64>)> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let rendered = render_batch(batch, templates, verbalizer)?;
    let tape = Tape::new();
    let mut comp = StepComputation::new(backend, &tape);

    // Cross-entropy at the mask position of the main rendering.
    let mut prob_rows = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for row in &rendered {
        let main = &row[0];
        let hidden = comp.representation(&main.text)?;
        let full = comp.backend.vocab_logits_on_tape(&comp.params, &hidden)?;
        let class: Vec<Var> = verbalizer
            .token_ids()
            .iter()
            .map(|&id| full[id as usize])
            .collect();
        prob_rows.push(softmax(&class));
        labels.push(main.label.expect("rendered with a label"));
    }
    let l_ce = ce_from_probs(&prob_rows, &labels);

    let zero = tape.constant(0.0);
    let (l_bc, l_pc, accounting) = match config.mode {
        TrainMode::PromptOnly => (zero, zero, (0, 0, 0, 0)),
        TrainMode::Joint => {
            let bc_outcomes = build_support_sets(
                SamplingLevel::BatchLevel,
                &rendered,
                encoder,
                &config.sampling,
            )?;
            let pc_outcomes = build_support_sets(
                SamplingLevel::PromptLevel,
                &rendered,
                encoder,
                &config.sampling,
            )?;
            let mut bc_groups = Vec::new();
            let mut pc_groups = Vec::new();
            let mut bc_by_anchor = Vec::new();
            let mut pc_by_anchor = Vec::new();
            for outcome in &bc_outcomes {
                match outcome {
                    SupportOutcome::Usable(set) => {
                        let g = comp.group_for(set)?;
                        bc_by_anchor.push(Some(bc_groups.len()));
                        bc_groups.push(g);
                    }
                    SupportOutcome::Skipped(_) => bc_by_anchor.push(None),
                }
            }
            for outcome in &pc_outcomes {
                match outcome {
                    SupportOutcome::Usable(set) => {
                        let g = comp.group_for(set)?;
                        pc_by_anchor.push(Some(pc_groups.len()));
                        pc_groups.push(g);
                    }
                    SupportOutcome::Skipped(_) => pc_by_anchor.push(None),
                }
            }
            let tau = config.loss.temperature;
            let mode = config.loss.denominator;
            let l_bc = symmetric_loss(&bc_groups, tau, mode)?.unwrap_or(zero);
            let l_pc = if config.loss.literal_pc_pairing {
                literal_pc(
                    &tape,
                    &bc_groups,
                    &pc_groups,
                    &bc_by_anchor,
                    &pc_by_anchor,
                    tau,
                    mode,
                )?
            } else {
                symmetric_loss(&pc_groups, tau, mode)?.unwrap_or(zero)
            };
            let acc = (
                bc_groups.len(),
                batch.len() - bc_groups.len(),
                pc_groups.len(),
                batch.len() - pc_groups.len(),
            );
            (l_bc, l_pc, acc)
        }
    };

    let total = joint_loss(l_ce, l_bc, l_pc, &config.loss);
    if !total.value().is_finite() {
        let texts: Vec<String> = batch.iter().map(|e| e.raw.joined()).collect();
        return Err(Error::NonFinite {
            context: "train step loss".into(),
            detail: format!(
                "ce={} bc={} pc={} batch={texts:?}",
                l_ce.value(),
                l_bc.value(),
                l_pc.value()
            ),
        });
    }

    let mut gradient = tape.gradient(total);
    gradient.truncate(backend.params().len());

    let (bc_used, bc_skipped, pc_used, pc_skipped) = accounting;
    let losses = StepLosses {
        ce: l_ce.value(),
        bc: l_bc.value(),
        pc: l_pc.value(),
        total: total.value(),
        bc_used,
        bc_skipped,
        pc_used,
        pc_skipped,
    };
    Ok((losses, gradient))
}

/// One gradient step on the joint objective. Returns the step's losses;
/// parameters are updated in place.
pub fn train_step<B: TrainableBackend + ?Sized>(
    backend: &mut B,
    encoder: &dyn SentenceEncoder,
    batch: &[Example],
    templates: &TemplateSet,
    verbalizer: &Verbalizer,
    config: &TrainConfig,
) -> Result<StepLosses> {
    let (losses, gradient) =
        joint_loss_and_gradient(backend, encoder, batch, templates, verbalizer, config)?;
    let lr = config.learning_rate;
    for (param, grad) in backend.params_mut().iter_mut().zip(&gradient) {
        *param -= lr * grad;
    }
    Ok(losses)
}

/// The literal pairing of the two levels: mean over anchors with both
/// support sets of the batch-level forward term plus the prompt-level
/// inverted term.
fn literal_pc<'t>(
    tape: &'t Tape,
    bc_groups: &[AnchorGroup<Var<'t>>],
    pc_groups: &[AnchorGroup<Var<'t>>],
    bc_by_anchor: &[Option<usize>],
    pc_by_anchor: &[Option<usize>],
    tau: f64,
    mode: crate::contrastive::DenominatorMode,
) -> Result<Var<'t>> {
    let mut terms = Vec::new();
    for (bc, pc) in bc_by_anchor.iter().zip(pc_by_anchor) {
        if let (Some(bi), Some(pi)) = (bc, pc) {
            let forward = crate::contrastive::info_nce(&bc_groups[*bi], tau, mode)?;
            let inverted = symmetric_pair(&pc_groups[*pi], tau, mode)?
                - crate::contrastive::info_nce(&pc_groups[*pi], tau, mode)?;
            terms.push(forward + inverted);
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant(0.0));
    }
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = acc + *t;
    }
    Ok(acc.scale(1.0 / terms.len() as f64))
}

/// Accuracy of argmax class prediction under the main template. Examples are
/// independent, so this runs in parallel when the `parallel` feature is on.
pub fn evaluate<M: MaskedLMBackend + ?Sized>(
    backend: &M,
    data: &Dataset,
    template: &Template,
    verbalizer: &Verbalizer,
) -> Result<f64> {
    evaluate_inner(backend, data, template, verbalizer, false)
}

/// Strictly sequential twin of [`evaluate`], for benchmarks and determinism
/// checks.
pub fn evaluate_seq<M: MaskedLMBackend + ?Sized>(
    backend: &M,
    data: &Dataset,
    template: &Template,
    verbalizer: &Verbalizer,
) -> Result<f64> {
    evaluate_inner(backend, data, template, verbalizer, true)
}

fn evaluate_inner<M: MaskedLMBackend + ?Sized>(
    backend: &M,
    data: &Dataset,
    template: &Template,
    verbalizer: &Verbalizer,
    sequential: bool,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    let check = |i: usize| -> Result<bool> {
        let ex = &data.examples()[i];
        let gold = verbalizer.label_id(&ex.label).ok_or_else(|| {
            Error::Config(format!(
                "label {:?} is not covered by the verbalizer",
                ex.label
            ))
        })?;
        let prompted = template.apply(&ex.raw, None)?;
        let seq = backend.tokenize(&prompted.text)?;
        let logits = class_logits(backend, &seq, verbalizer)?;
        Ok(argmax(&logits) == gold)
    };
    let outcomes: Vec<Result<bool>> = if sequential {
        crate::exec::map_indexed_seq(data.len(), check)
    } else {
        crate::exec::map_indexed(data.len(), check)
    };
    let mut correct = 0usize;
    for outcome in outcomes {
        if outcome? {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Train on a split for `config.max_steps` steps, evaluating on dev every
/// `config.eval_every` steps and once at the end.
pub fn train_run<B: TrainableBackend + ?Sized>(
    backend: &mut B,
    encoder: &dyn SentenceEncoder,
    split: &KShotSplit,
    templates: &TemplateSet,
    verbalizer: &Verbalizer,
    config: &TrainConfig,
) -> Result<RunMetrics> {
    config.validate()?;
    let mut steps = Vec::with_capacity(config.max_steps);
    let mut evals = Vec::new();
    let mut step = 0usize;
    let mut epoch = 0u64;
    let mut bc_skipped_total = 0;
    let mut pc_skipped_total = 0;
    'training: loop {
        let plan = batches(split, config.batch_size, config.seed, epoch)?;
        for indices in plan {
            step += 1;
            let batch: Vec<Example> = indices
                .iter()
                .map(|&i| split.train.examples()[i].clone())
                .collect();
            let losses = train_step(backend, encoder, &batch, templates, verbalizer, config)?;
            bc_skipped_total += losses.bc_skipped;
            pc_skipped_total += losses.pc_skipped;
            steps.push(StepRecord { step, losses });
            if step.is_multiple_of(config.eval_every) {
                let dev_accuracy = evaluate(backend, &split.dev, templates.main(), verbalizer)?;
                evals.push(EvalRecord { step, dev_accuracy });
            }
            if step >= config.max_steps {
                break 'training;
            }
        }
        epoch += 1;
    }
    let final_dev_accuracy = match evals.last() {
        Some(rec) if rec.step == step => rec.dev_accuracy,
        _ => {
            let acc = evaluate(backend, &split.dev, templates.main(), verbalizer)?;
            evals.push(EvalRecord {
                step,
                dev_accuracy: acc,
            });
            acc
        }
    };
    Ok(RunMetrics {
        steps,
        evals,
        final_dev_accuracy,
        bc_skipped_total,
        pc_skipped_total,
    })
}

/// One point of the lr x batch-size grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// Mean, population standard deviation, and median of a set of accuracies.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

/// Summarize accuracies across seeds.
pub fn summarize(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Contract("cannot summarize zero values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite accuracies"));
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    Ok(Aggregate {
        mean,
        std: var.sqrt(),
        median,
    })
}

/// Everything one `(seed, grid point)` training run left behind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRun {
    pub grid: GridPoint,
    pub metrics: RunMetrics,
    /// Final parameters, persisted so a chosen run can be re-evaluated.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub split: crate::data::SplitManifest,
    pub runs: Vec<GridRun>,
    /// Index into `runs` of the grid point with the best dev accuracy (ties
    /// break on grid order).
    pub chosen: usize,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub per_seed: Vec<SeedResult>,
    pub test_aggregate: Aggregate,
}

/// Builds a fresh trainable backend for a run. The experiment driver calls
/// it once per `(seed, grid point)` so runs stay independent.
pub type BackendFactory<'a> = dyn Fn(u64) -> Result<Box<dyn TrainableBackend>> + Sync + 'a;

/// The K-shot experiment protocol: for each seed, split the corpus, train
/// every grid point, choose the best by dev accuracy, and report its test
/// accuracy; aggregate across seeds. Runs fan out in parallel (feature
/// permitting); results merge in (seed, grid) order.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    corpus: &Dataset,
    test: &Dataset,
    templates: &TemplateSet,
    verbalizer_pairs: &[(String, String)],
    encoder: &dyn SentenceEncoder,
    make_backend: &BackendFactory<'_>,
    k: usize,
    seeds: &[u64],
    grid: &[GridPoint],
    base: &TrainConfig,
) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    if grid.is_empty() {
        return Err(Error::Config("need at least one grid point".into()));
    }
    base.validate()?;
    let splits: Vec<KShotSplit> = seeds
        .iter()
        .map(|&seed| crate::data::make_kshot(corpus, test, k, seed))
        .collect::<Result<_>>()?;

    // One independent run per (seed, grid point); all of them fan out
    // together and merge back in (seed, grid) order.
    let flat: Vec<Result<GridRun>> = crate::exec::map_indexed(seeds.len() * grid.len(), |idx| {
        let seed = seeds[idx / grid.len()];
        let split = &splits[idx / grid.len()];
        let point = grid[idx % grid.len()];
        let mut backend = make_backend(seed)?;
        let verbalizer =
            Verbalizer::build(verbalizer_pairs, corpus.label_set(), backend.as_ref())?;
        let config = TrainConfig {
            learning_rate: point.learning_rate,
            batch_size: point.batch_size,
            seed,
            ..base.clone()
        };
        let metrics = train_run(
            backend.as_mut(),
            encoder,
            split,
            templates,
            &verbalizer,
            &config,
        )?;
        Ok(GridRun {
            grid: point,
            metrics,
            params: backend.params().to_vec(),
        })
    });
    let mut flat = flat.into_iter();

    let mut per_seed = Vec::with_capacity(seeds.len());
    for (&seed, split) in seeds.iter().zip(&splits) {
        let runs: Vec<GridRun> = flat.by_ref().take(grid.len()).collect::<Result<_>>()?;
        let chosen = runs
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.metrics
                    .final_dev_accuracy
                    .partial_cmp(&b.metrics.final_dev_accuracy)
                    .expect("finite accuracies")
                    .then(ib.cmp(ia)) // earlier grid point wins ties
            })
            .map(|(i, _)| i)
            .expect("non-empty grid");

        // Rebuild the winner to score the test set.
        let mut backend = make_backend(seed)?;
        let verbalizer =
            Verbalizer::build(verbalizer_pairs, corpus.label_set(), backend.as_ref())?;
        backend
            .params_mut()
            .copy_from_slice(&runs[chosen].params);
        let test_accuracy = evaluate(backend.as_ref(), &split.test, templates.main(), &verbalizer)?;
        per_seed.push(SeedResult {
            seed,
            split: crate::data::SplitManifest::from(split),
            dev_accuracy: runs[chosen].metrics.final_dev_accuracy,
            chosen,
            runs,
            test_accuracy,
        });
    }
    let accs: Vec<f64> = per_seed.iter().map(|s| s.test_accuracy).collect();
    Ok(ExperimentReport {
        per_seed,
        test_aggregate: summarize(&accs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{HashSentenceEncoder, ReferenceBackend, ReferenceConfig};
    use crate::data::synth;
    use crate::templates::TemplateSet;

    fn toy_setup() -> (Dataset, TemplateSet, Vec<(String, String)>, HashSentenceEncoder) {
        let corpus = synth::linearly_separable(60, 17);
        let templates = TemplateSet::new(vec![
            crate::templates::Template::parse("t0", "{input} It is {mask}").unwrap(),
            crate::templates::Template::parse("t1", "{input} All in all it was {mask}").unwrap(),
            crate::templates::Template::parse("t2", "{mask} one : {input}").unwrap(),
        ])
        .unwrap();
        let pairs = vec![
            ("negative".to_string(), "bad".to_string()),
            ("positive".to_string(), "good".to_string()),
        ];
        (corpus, templates, pairs, HashSentenceEncoder::default())
    }

    fn backend_for(corpus: &Dataset, templates: &TemplateSet, pairs: &[(String, String)], seed: u64) -> ReferenceBackend {
        let words: Vec<String> = pairs.iter().map(|(_, w)| w.clone()).collect();
        ReferenceBackend::from_task(
            corpus,
            templates,
            &words,
            ReferenceConfig {
                hidden_dim: 8,
                seed,
            },
        )
        .unwrap()
    }

    fn batch_of(corpus: &Dataset, indices: &[usize]) -> Vec<Example> {
        indices.iter().map(|&i| corpus.examples()[i].clone()).collect()
    }

    #[test]
    fn zero_ratio_step_is_pure_ce() {
        let (corpus, templates, pairs, encoder) = toy_setup();
        let config = TrainConfig {
            loss: ContrastiveConfig {
                t: 0.0,
                a: 0.0,
                ..ContrastiveConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut joint = backend_for(&corpus, &templates, &pairs, 3);
        let mut pure = joint.clone();
        let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &joint).unwrap();
        let batch = batch_of(&corpus, &[0, 1, 2, 3]);

        let a = train_step(&mut joint, &encoder, &batch, &templates, &verbalizer, &config).unwrap();
        let pure_config = TrainConfig {
            mode: TrainMode::PromptOnly,
            ..config
        };
        let b = train_step(&mut pure, &encoder, &batch, &templates, &verbalizer, &pure_config).unwrap();

        assert_eq!(a.total, a.ce, "with t=a=0 the total is the CE loss");
        assert_eq!(a.ce, b.ce);
        assert_eq!(joint.params(), pure.params(), "parameter updates must match");
    }

    #[test]
    fn homogeneous_batch_skips_batch_level_anchors() {
        let (corpus, templates, pairs, encoder) = toy_setup();
        let mut backend = backend_for(&corpus, &templates, &pairs, 3);
        let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &backend).unwrap();
        // All-negative batch: labels are identical.
        let indices: Vec<usize> = (0..corpus.len())
            .filter(|&i| corpus.examples()[i].label == "negative")
            .take(4)
            .collect();
        let batch = batch_of(&corpus, &indices);
        let config = TrainConfig::default();
        let losses =
            train_step(&mut backend, &encoder, &batch, &templates, &verbalizer, &config).unwrap();
        assert_eq!(losses.bc_used, 0);
        assert_eq!(losses.bc_skipped, batch.len());
        assert_eq!(losses.bc, 0.0);
        // Prompt-level sets are also label-homogeneous here, so they skip too.
        assert_eq!(losses.pc_used, 0);
    }

    #[test]
    fn step_total_matches_independent_recomputation() {
        let (corpus, templates, pairs, encoder) = toy_setup();
        let mut backend = backend_for(&corpus, &templates, &pairs, 5);
        let snapshot = backend.clone();
        let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &backend).unwrap();
        let batch = batch_of(&corpus, &[0, 1, 2, 5, 8, 9]);
        let config = TrainConfig::default();
        let losses =
            train_step(&mut backend, &encoder, &batch, &templates, &verbalizer, &config).unwrap();

        // Oracle: from the snapshot, recompute every term with the plain f64
        // path and the public per-module operations.
        let rendered = render_batch(&batch, &templates, &verbalizer).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for row in &rendered {
            let seq = snapshot.tokenize(&row[0].text).unwrap();
            let logits = class_logits(&snapshot, &seq, &verbalizer).unwrap();
            rows.push(crate::verbalizer::class_probs(&logits).unwrap());
            labels.push(row[0].label.unwrap());
        }
        let ce = crate::verbalizer::ce_loss(&rows, &labels).unwrap();

        let level_loss = |level: SamplingLevel| -> f64 {
            let outcomes =
                build_support_sets(level, &rendered, &encoder, &config.sampling).unwrap();
            let groups: Vec<AnchorGroup<f64>> = outcomes
                .iter()
                .filter_map(|o| o.usable())
                .map(|set| {
                    let rep = |text: &str| {
                        let seq = snapshot.tokenize(text).unwrap();
                        crate::contrastive::represent(&snapshot, &seq).unwrap()
                    };
                    AnchorGroup {
                        anchor: rep(&set.query.text),
                        positive: rep(&set.positive.prompted.text),
                        negatives: set.negatives.iter().map(|c| rep(&c.prompted.text)).collect(),
                    }
                })
                .collect();
            symmetric_loss(&groups, config.loss.temperature, config.loss.denominator)
                .unwrap()
                .unwrap_or(0.0)
        };
        let bc = level_loss(SamplingLevel::BatchLevel);
        let pc = level_loss(SamplingLevel::PromptLevel);
        let total = joint_loss(ce, bc, pc, &config.loss);

        assert!((losses.ce - ce).abs() < 1e-12, "{} vs {ce}", losses.ce);
        assert!((losses.bc - bc).abs() < 1e-12, "{} vs {bc}", losses.bc);
        assert!((losses.pc - pc).abs() < 1e-12, "{} vs {pc}", losses.pc);
        assert!((losses.total - total).abs() < 1e-12);
    }

    #[test]
    fn query_only_scope_changes_the_prompt_level_pool() {
        let (corpus, templates, pairs, encoder) = toy_setup();
        let backend = backend_for(&corpus, &templates, &pairs, 5);
        let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &backend).unwrap();
        let batch = batch_of(&corpus, &[0, 1, 2, 3]);
        let batch_scope = TrainConfig::default();
        let query_scope = TrainConfig {
            sampling: SamplingConfig {
                prompt_scope: crate::sampling::PromptScope::QueryOnly,
                ..SamplingConfig::default()
            },
            ..TrainConfig::default()
        };
        let (a, _) = joint_loss_and_gradient(
            &backend, &encoder, &batch, &templates, &verbalizer, &batch_scope,
        )
        .unwrap();
        let (b, _) = joint_loss_and_gradient(
            &backend, &encoder, &batch, &templates, &verbalizer, &query_scope,
        )
        .unwrap();
        assert_eq!(a.ce, b.ce);
        // Query-only prompt pools are label-homogeneous (one text, its own
        // label), so every prompt-level anchor is skipped.
        assert_eq!(b.pc_used, 0);
        assert_eq!(b.pc_skipped, batch.len());
        assert!(a.pc_used > 0);
    }

    #[test]
    fn literal_pairing_mixes_the_two_levels() {
        let (corpus, templates, pairs, encoder) = toy_setup();
        let backend = backend_for(&corpus, &templates, &pairs, 5);
        let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &backend).unwrap();
        let batch = batch_of(&corpus, &[0, 1, 2, 3, 4, 5]);
        let default_cfg = TrainConfig::default();
        let literal_cfg = TrainConfig {
            loss: ContrastiveConfig {
                literal_pc_pairing: true,
                ..ContrastiveConfig::default()
            },
            ..TrainConfig::default()
        };
        let (a, _) = joint_loss_and_gradient(
            &backend, &encoder, &batch, &templates, &verbalizer, &default_cfg,
        )
        .unwrap();
        let (b, _) = joint_loss_and_gradient(
            &backend, &encoder, &batch, &templates, &verbalizer, &literal_cfg,
        )
        .unwrap();
        assert_eq!(a.ce, b.ce);
        assert_eq!(a.bc, b.bc);
        assert_ne!(a.pc, b.pc, "pairing modes should score differently");

        // Oracle for the literal mode: per anchor with both sets usable,
        // batch-level forward term plus prompt-level inverted term.
        let rendered = render_batch(&batch, &templates, &verbalizer).unwrap();
        let rep = |text: &str| {
            let seq = backend.tokenize(text).unwrap();
            crate::contrastive::represent(&backend, &seq).unwrap()
        };
        let group_of = |set: &SupportSet| AnchorGroup {
            anchor: rep(&set.query.text),
            positive: rep(&set.positive.prompted.text),
            negatives: set.negatives.iter().map(|c| rep(&c.prompted.text)).collect(),
        };
        let bc = build_support_sets(
            SamplingLevel::BatchLevel,
            &rendered,
            &encoder,
            &default_cfg.sampling,
        )
        .unwrap();
        let pc = build_support_sets(
            SamplingLevel::PromptLevel,
            &rendered,
            &encoder,
            &default_cfg.sampling,
        )
        .unwrap();
        let tau = default_cfg.loss.temperature;
        let mode = default_cfg.loss.denominator;
        let mut terms = Vec::new();
        for (bo, po) in bc.iter().zip(&pc) {
            if let (Some(bset), Some(pset)) = (bo.usable(), po.usable()) {
                let bg = group_of(bset);
                let pg = group_of(pset);
                let forward = crate::contrastive::info_nce(&bg, tau, mode).unwrap();
                let inverted = symmetric_pair(&pg, tau, mode).unwrap()
                    - crate::contrastive::info_nce(&pg, tau, mode).unwrap();
                terms.push(forward + inverted);
            }
        }
        let expected = terms.iter().sum::<f64>() / terms.len() as f64;
        assert!((b.pc - expected).abs() < 1e-12, "{} vs {expected}", b.pc);
    }

    #[test]
    fn evaluate_counts_correct_argmax() {
        let (corpus, templates, pairs, _) = toy_setup();
        let backend = backend_for(&corpus, &templates, &pairs, 3);
        let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &backend).unwrap();
        // Hand-check a micro fixture of 10 examples against per-example argmax.
        let subset = corpus.select(&(0..10).collect::<Vec<_>>()).unwrap();
        let acc = evaluate(&backend, &subset, templates.main(), &verbalizer).unwrap();
        let mut correct = 0;
        for ex in subset.examples() {
            let prompted = templates.main().apply(&ex.raw, None).unwrap();
            let seq = backend.tokenize(&prompted.text).unwrap();
            let logits = class_logits(&backend, &seq, &verbalizer).unwrap();
            if argmax(&logits) == verbalizer.label_id(&ex.label).unwrap() {
                correct += 1;
            }
        }
        assert_eq!(acc, correct as f64 / 10.0);
    }

    #[test]
    fn constant_predictor_scores_half_on_balanced_binary_task() {
        // Identical text under both labels forces identical predictions.
        let examples: Vec<Example> = (0..10)
            .map(|i| Example {
                raw: crate::templates::RawInput::single("same words every time").unwrap(),
                label: if i % 2 == 0 { "negative" } else { "positive" }.to_string(),
            })
            .collect();
        let data = Dataset::new(examples, crate::data::TaskKind::SingleSentence).unwrap();
        let (_, templates, pairs, _) = toy_setup();
        let backend = backend_for(&data, &templates, &pairs, 3);
        let verbalizer = Verbalizer::build(&pairs, data.label_set(), &backend).unwrap();
        let acc = evaluate(&backend, &data, templates.main(), &verbalizer).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn parallel_and_sequential_evaluation_agree() {
        let (corpus, templates, pairs, _) = toy_setup();
        let backend = backend_for(&corpus, &templates, &pairs, 3);
        let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &backend).unwrap();
        let par = evaluate(&backend, &corpus, templates.main(), &verbalizer).unwrap();
        let seq = evaluate_seq(&backend, &corpus, templates.main(), &verbalizer).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn summarize_matches_hand_arithmetic() {
        let agg = summarize(&[0.8; 5]).unwrap();
        assert_eq!(agg.mean, 0.8);
        assert_eq!(agg.std, 0.0);
        assert_eq!(agg.median, 0.8);

        let agg = summarize(&[0.7, 0.8]).unwrap();
        assert!((agg.mean - 0.75).abs() < 1e-12);
        assert!((agg.std - 0.05).abs() < 1e-12);
        assert!((agg.median - 0.75).abs() < 1e-12);

        let agg = summarize(&[0.9, 0.1, 0.5]).unwrap();
        assert_eq!(agg.median, 0.5);
    }

    #[test]
    fn loss_decomposition_holds_at_every_step() {
        let (corpus, templates, pairs, encoder) = toy_setup();
        let mut backend = backend_for(&corpus, &templates, &pairs, 3);
        let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &backend).unwrap();
        let split = crate::data::make_kshot(&corpus, &corpus, 8, 1).unwrap();
        let config = TrainConfig {
            max_steps: 12,
            eval_every: 6,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let metrics = train_run(&mut backend, &encoder, &split, &templates, &verbalizer, &config)
            .unwrap();
        assert_eq!(metrics.steps.len(), 12);
        for rec in &metrics.steps {
            let expected = rec.losses.ce + config.loss.t * rec.losses.bc + config.loss.a * rec.losses.pc;
            assert!(
                (rec.losses.total - expected).abs() < 1e-9,
                "step {}: {} vs {expected}",
                rec.step,
                rec.losses.total
            );
        }
    }

    #[test]
    fn training_learns_the_separable_task() {
        let (corpus, templates, pairs, encoder) = toy_setup();
        let mut backend = backend_for(&corpus, &templates, &pairs, 3);
        let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &backend).unwrap();
        let split = crate::data::make_kshot(&corpus, &corpus, 16, 42).unwrap();
        let config = TrainConfig {
            max_steps: 200,
            eval_every: 100,
            ..TrainConfig::default()
        };
        let _ = train_run(&mut backend, &encoder, &split, &templates, &verbalizer, &config)
            .unwrap();
        let train_acc = evaluate(&backend, &split.train, templates.main(), &verbalizer).unwrap();
        assert!(
            train_acc >= 0.95,
            "training accuracy on a separable task should reach 0.95, got {train_acc}"
        );
    }

    #[test]
    fn run_is_bit_reproducible() {
        let (corpus, templates, pairs, encoder) = toy_setup();
        let split = crate::data::make_kshot(&corpus, &corpus, 4, 2).unwrap();
        let config = TrainConfig {
            max_steps: 8,
            eval_every: 4,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = |seed: u64| -> (Vec<f64>, Vec<f64>) {
            let mut backend = backend_for(&corpus, &templates, &pairs, seed);
            let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), &backend).unwrap();
            let metrics =
                train_run(&mut backend, &encoder, &split, &templates, &verbalizer, &config)
                    .unwrap();
            let losses = metrics.steps.iter().map(|r| r.losses.total).collect();
            (losses, backend.params().to_vec())
        };
        let (losses_a, params_a) = run(9);
        let (losses_b, params_b) = run(9);
        assert_eq!(losses_a, losses_b);
        assert_eq!(params_a, params_b);
    }

    #[test]
    fn experiment_selects_by_dev_accuracy_and_aggregates() {
        let (corpus, templates, pairs, encoder) = toy_setup();
        let factory = |seed: u64| -> Result<Box<dyn TrainableBackend>> {
            let words: Vec<String> = pairs.iter().map(|(_, w)| w.clone()).collect();
            Ok(Box::new(
                ReferenceBackend::from_task(
                    &corpus,
                    &templates,
                    &words,
                    ReferenceConfig {
                        hidden_dim: 8,
                        seed: 7 ^ seed,
                    },
                )
                .unwrap(),
            ))
        };
        let base = TrainConfig {
            max_steps: 40,
            eval_every: 20,
            ..TrainConfig::default()
        };
        let grid = [
            GridPoint {
                learning_rate: 0.5,
                batch_size: 8,
            },
            GridPoint {
                learning_rate: 0.05,
                batch_size: 8,
            },
        ];
        let report = run_experiment(
            &corpus,
            &corpus,
            &templates,
            &pairs,
            &encoder,
            &factory,
            8,
            &[13, 21],
            &grid,
            &base,
        )
        .unwrap();
        assert_eq!(report.per_seed.len(), 2);
        for seed_result in &report.per_seed {
            assert_eq!(seed_result.runs.len(), 2);
            let best = seed_result
                .runs
                .iter()
                .map(|r| r.metrics.final_dev_accuracy)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(seed_result.dev_accuracy, best);
        }
        let accs: Vec<f64> = report.per_seed.iter().map(|s| s.test_accuracy).collect();
        let agg = summarize(&accs).unwrap();
        assert_eq!(report.test_aggregate.mean, agg.mean);
    }
}

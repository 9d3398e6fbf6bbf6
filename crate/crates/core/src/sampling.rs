//! Support-set construction: batch-level and prompt-level candidate pools,
//! similarity ranking with a sentence encoder, filtering, and selection of
//! the positive and the negatives for each anchor.
//!
//! Similarity is computed on raw text, never on prompted text: prompt-level
//! candidates differ only by template, and ranking prompted text would let
//! the template wording dominate. The contrastive representations themselves
//! come from the task model at the mask position (see [`crate::contrastive`]);
//! the sentence encoder is used for ranking only.

use serde::{Deserialize, Serialize};

use crate::backend::SentenceEncoder;
use crate::error::{Error, Result};
use crate::templates::PromptedExample;

/// Which pool a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingLevel {
    PromptLevel,
    BatchLevel,
}

/// How the positive is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Highest similarity wins, regardless of label (unless overridden).
    SimBased,
    /// Highest similarity among candidates sharing the query's label.
    LabelBased,
}

/// Whether prompt-level support re-renders the whole batch or only the
/// query's own text under the alternate templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptScope {
    Batch,
    QueryOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: SamplingStrategy,
    /// Fraction of the ranked candidate list retained, in (0, 1].
    pub filtering_ratio: f64,
    /// Cap on negatives, taken from the low-similarity end. `None` keeps all
    /// different-label survivors.
    pub max_negatives: Option<usize>,
    pub prompt_scope: PromptScope,
    /// Force the positive to share the query's label. `None` uses the
    /// strategy default: false for sim-based, true for label-based.
    pub require_same_label_positive: Option<bool>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            strategy: SamplingStrategy::SimBased,
            filtering_ratio: 0.5,
            max_negatives: None,
            prompt_scope: PromptScope::Batch,
            require_same_label_positive: None,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.filtering_ratio > 0.0 && self.filtering_ratio <= 1.0) || self.filtering_ratio.is_nan() {
            return Err(Error::Config(format!(
                "filtering_ratio must be in (0, 1], got {}",
                self.filtering_ratio
            )));
        }
        if self.max_negatives == Some(0) {
            return Err(Error::Config("max_negatives must be at least 1".into()));
        }
        Ok(())
    }

    fn positive_must_share_label(&self) -> bool {
        self.require_same_label_positive
            .unwrap_or(matches!(self.strategy, SamplingStrategy::LabelBased))
    }
}

/// One member of a support pool, scored against the query.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportCandidate {
    pub prompted: PromptedExample,
    pub label: usize,
    pub similarity: f64,
    pub source: SamplingLevel,
}

/// A usable support set: ranked candidates, exactly one positive, and at
/// least one different-label negative.
#[derive(Debug, Clone)]
pub struct SupportSet {
    pub query: PromptedExample,
    /// Ranked candidates the selection saw, similarity descending.
    pub candidates: Vec<SupportCandidate>,
    pub positive: SupportCandidate,
    /// Lowest similarity first.
    pub negatives: Vec<SupportCandidate>,
    pub level: SamplingLevel,
}

/// Why an anchor contributed no contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoCandidates,
    NoPositive,
    NoNegatives,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SkipReason::NoCandidates => "no candidates",
            SkipReason::NoPositive => "no valid positive",
            SkipReason::NoNegatives => "no different-label negatives",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone)]
pub enum SupportOutcome {
    Usable(Box<SupportSet>),
    Skipped(SkipReason),
}

impl SupportOutcome {
    pub fn usable(&self) -> Option<&SupportSet> {
        match self {
            SupportOutcome::Usable(set) => Some(set),
            SupportOutcome::Skipped(_) => None,
        }
    }
}

fn candidate_from(prompted: &PromptedExample, source: SamplingLevel) -> Result<SupportCandidate> {
    let label = prompted.label.ok_or_else(|| {
        Error::Contract("support candidate has no label; support sets need labeled batches".into())
    })?;
    Ok(SupportCandidate {
        prompted: prompted.clone(),
        label,
        similarity: 0.0,
        source,
    })
}

/// Batch-level pool: every batch member except the query, rendered under the
/// main template. `rendered[i][j]` is batch member `i` under template `j`
/// (template 0 is the main one). A batch of one yields an empty pool.
pub fn build_batch_support(
    rendered: &[Vec<PromptedExample>],
    query_index: usize,
) -> Result<Vec<SupportCandidate>> {
    check_rendered(rendered, query_index, 1)?;
    rendered
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query_index)
        .map(|(_, row)| candidate_from(&row[0], SamplingLevel::BatchLevel))
        .collect()
}

/// Prompt-level pool: batch members (or only the query, per `scope`)
/// rendered under every alternate template. With a single template the pool
/// is empty.
pub fn build_prompt_support(
    rendered: &[Vec<PromptedExample>],
    query_index: usize,
    scope: PromptScope,
) -> Result<Vec<SupportCandidate>> {
    check_rendered(rendered, query_index, 1)?;
    let mut candidates = Vec::new();
    for (i, row) in rendered.iter().enumerate() {
        if scope == PromptScope::QueryOnly && i != query_index {
            continue;
        }
        for prompted in &row[1..] {
            candidates.push(candidate_from(prompted, SamplingLevel::PromptLevel)?);
        }
    }
    Ok(candidates)
}

fn check_rendered(
    rendered: &[Vec<PromptedExample>],
    query_index: usize,
    min_templates: usize,
) -> Result<()> {
    if query_index >= rendered.len() {
        return Err(Error::Contract(format!(
            "query index {query_index} out of bounds for batch of {}",
            rendered.len()
        )));
    }
    if rendered.iter().any(|row| row.len() < min_templates) {
        return Err(Error::Contract(
            "every batch member must be rendered under every template".into(),
        ));
    }
    Ok(())
}

/// Cosine similarity for ranking. Zero-norm embeddings map to 0.
pub fn ranking_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn rank(
    query: &PromptedExample,
    mut candidates: Vec<SupportCandidate>,
    encoder: &dyn SentenceEncoder,
) -> Result<Vec<SupportCandidate>> {
    let query_vec = encoder.embed(&query.raw.joined())?;
    for c in candidates.iter_mut() {
        let vec = encoder.embed(&c.prompted.raw.joined())?;
        c.similarity = ranking_cosine(&query_vec, &vec);
    }
    // Ties break on (raw fields, template id, label) so that input order
    // never influences the outcome.
    candidates.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.prompted.raw.cmp(&b.prompted.raw))
            .then_with(|| a.prompted.template_id.cmp(&b.prompted.template_id))
            .then_with(|| a.label.cmp(&b.label))
    });
    Ok(candidates)
}

/// Number of candidates surviving a filtering ratio.
pub fn retained(count: usize, ratio: f64) -> usize {
    (ratio * count as f64).ceil() as usize
}

/// Score candidates against the query, sort by similarity descending, and
/// keep the top `ceil(ratio * n)`.
pub fn rank_and_filter(
    query: &PromptedExample,
    candidates: Vec<SupportCandidate>,
    encoder: &dyn SentenceEncoder,
    config: &SamplingConfig,
) -> Result<Vec<SupportCandidate>> {
    config.validate()?;
    if candidates.is_empty() {
        return Ok(candidates);
    }
    let mut ranked = rank(query, candidates, encoder)?;
    ranked.truncate(retained(ranked.len(), config.filtering_ratio));
    Ok(ranked)
}

/// Choose the positive and the negatives from a ranked candidate list.
///
/// The positive is the highest-similarity candidate (sim-based) or the
/// highest-similarity same-label candidate (label-based). Negatives are all
/// different-label candidates except the positive, taken from the
/// low-similarity end up to `max_negatives`, listed lowest first.
pub fn select_pos_neg(
    query: &PromptedExample,
    ranked: &[SupportCandidate],
    config: &SamplingConfig,
) -> std::result::Result<SupportSet, SkipReason> {
    if ranked.is_empty() {
        return Err(SkipReason::NoCandidates);
    }
    let query_label = query.label.expect("query must be labeled");
    let positive_index = if config.positive_must_share_label() {
        match ranked.iter().position(|c| c.label == query_label) {
            Some(i) => i,
            None => return Err(SkipReason::NoPositive),
        }
    } else {
        0
    };
    let mut negatives: Vec<SupportCandidate> = ranked
        .iter()
        .enumerate()
        .filter(|(i, c)| *i != positive_index && c.label != query_label)
        .map(|(_, c)| c.clone())
        .collect();
    negatives.reverse(); // ranked is similarity-descending; negatives go lowest first
    if let Some(cap) = config.max_negatives {
        negatives.truncate(cap);
    }
    if negatives.is_empty() {
        return Err(SkipReason::NoNegatives);
    }
    Ok(SupportSet {
        query: query.clone(),
        candidates: ranked.to_vec(),
        positive: ranked[positive_index].clone(),
        negatives,
        level: ranked[0].source,
    })
}

/// Full pipeline for one anchor: build the pool for `level`, rank, filter,
/// select; if the filtered list yields no usable set, retry on the
/// unfiltered ranked list before giving up.
pub fn build_support_set(
    level: SamplingLevel,
    rendered: &[Vec<PromptedExample>],
    query_index: usize,
    encoder: &dyn SentenceEncoder,
    config: &SamplingConfig,
) -> Result<SupportOutcome> {
    config.validate()?;
    let candidates = match level {
        SamplingLevel::BatchLevel => build_batch_support(rendered, query_index)?,
        SamplingLevel::PromptLevel => {
            build_prompt_support(rendered, query_index, config.prompt_scope)?
        }
    };
    if candidates.is_empty() {
        return Ok(SupportOutcome::Skipped(SkipReason::NoCandidates));
    }
    let query = &rendered[query_index][0];
    let ranked = rank(query, candidates, encoder)?;
    let kept = retained(ranked.len(), config.filtering_ratio);
    match select_pos_neg(query, &ranked[..kept], config) {
        Ok(set) => Ok(SupportOutcome::Usable(Box::new(set))),
        Err(_) => match select_pos_neg(query, &ranked, config) {
            Ok(set) => Ok(SupportOutcome::Usable(Box::new(set))),
            Err(reason) => Ok(SupportOutcome::Skipped(reason)),
        },
    }
}

/// Build the support set of every anchor in the batch. Anchors are
/// independent, so this fans out in parallel when the `parallel` feature is
/// on.
pub fn build_support_sets(
    level: SamplingLevel,
    rendered: &[Vec<PromptedExample>],
    encoder: &dyn SentenceEncoder,
    config: &SamplingConfig,
) -> Result<Vec<SupportOutcome>> {
    crate::exec::map_indexed(rendered.len(), |i| {
        build_support_set(level, rendered, i, encoder, config)
    })
    .into_iter()
    .collect()
}

/// Sequential twin of [`build_support_sets`], for benchmarks.
pub fn build_support_sets_seq(
    level: SamplingLevel,
    rendered: &[Vec<PromptedExample>],
    encoder: &dyn SentenceEncoder,
    config: &SamplingConfig,
) -> Result<Vec<SupportOutcome>> {
    crate::exec::map_indexed_seq(rendered.len(), |i| {
        build_support_set(level, rendered, i, encoder, config)
    })
    .into_iter()
    .collect()
}

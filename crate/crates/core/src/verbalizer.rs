//! Verbalizer: the injective label-to-token mapping, the restricted class
//! distribution read off at the mask position, and the cross-entropy loss.
//!
//! Class probabilities are normalized over the mapped tokens only, not the
//! full vocabulary.

use std::path::Path;

use crate::autodiff::Scalar;
use crate::backend::{MaskedLMBackend, TokenId, TokenSequence, TrainableBackend};
use crate::error::{Error, Result};

/// Floor applied to a gold-label probability before its log, so the loss
/// never produces NaN on underflow.
pub const LOG_EPSILON: f64 = 1e-12;

/// Injective mapping from dense label ids to vocabulary tokens. Label ids
/// are the dataset's label strings in sorted order.
#[derive(Debug, Clone)]
pub struct Verbalizer {
    label_names: Vec<String>,
    token_words: Vec<String>,
    token_ids: Vec<TokenId>,
}

impl Verbalizer {
    /// Validate `(label, word)` pairs against a label set and a backend
    /// vocabulary. Every label must be mapped exactly once, words must be
    /// single tokens, distinct, and present in the vocabulary.
    pub fn build(
        pairs: &[(String, String)],
        label_set: &[String],
        backend: &dyn MaskedLMBackend,
    ) -> Result<Self> {
        if label_set.len() < 2 {
            return Err(Error::Verbalizer(format!(
                "need at least 2 labels, got {}",
                label_set.len()
            )));
        }
        let mut token_words = vec![None::<String>; label_set.len()];
        for (label, word) in pairs {
            let idx = label_set
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| {
                    Error::Verbalizer(format!("label {label:?} is not in the task's label set"))
                })?;
            if token_words[idx].is_some() {
                return Err(Error::Verbalizer(format!("label {label:?} mapped twice")));
            }
            if word.split_whitespace().count() != 1 {
                return Err(Error::Verbalizer(format!(
                    "label word {word:?} must be a single token"
                )));
            }
            token_words[idx] = Some(word.trim().to_string());
        }
        let token_words: Vec<String> = token_words
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                w.ok_or_else(|| {
                    Error::Verbalizer(format!("label {:?} has no mapping", label_set[i]))
                })
            })
            .collect::<Result<_>>()?;
        let mut token_ids = Vec::with_capacity(token_words.len());
        for word in &token_words {
            let id = backend.token_id(word).ok_or_else(|| {
                Error::Verbalizer(format!("label word {word:?} is not in the vocabulary"))
            })?;
            if token_ids.contains(&id) {
                return Err(Error::Verbalizer(format!(
                    "label word {word:?} maps to a token already used by another label"
                )));
            }
            token_ids.push(id);
        }
        Ok(Verbalizer {
            label_names: label_set.to_vec(),
            token_words,
            token_ids,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|l| l == name)
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn word_for(&self, label_id: usize) -> &str {
        &self.token_words[label_id]
    }
}

/// Load raw `(label, word)` pairs from a UTF-8 file, one per line:
/// `<label><TAB><word>`. Lines beginning with `#` are comments.
pub fn load_verbalizer(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut pairs = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line_number = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, word) = line.split_once('\t').ok_or_else(|| Error::VerbalizerLoad {
            path: display.clone(),
            line: line_number,
            message: "expected <label><TAB><word>".into(),
        })?;
        if label.is_empty() || word.trim().is_empty() {
            return Err(Error::VerbalizerLoad {
                path: display.clone(),
                line: line_number,
                message: "empty label or word".into(),
            });
        }
        if word.split_whitespace().count() != 1 {
            return Err(Error::VerbalizerLoad {
                path: display.clone(),
                line: line_number,
                message: format!("label word {word:?} must be a single token"),
            });
        }
        pairs.push((label.to_string(), word.trim().to_string()));
    }
    if pairs.is_empty() {
        return Err(Error::VerbalizerLoad {
            path: display,
            line: 0,
            message: "no verbalizer entries found".into(),
        });
    }
    Ok(pairs)
}

/// The `|Y|` vocabulary logits at the (unique) mask position, in label-id
/// order.
pub fn class_logits<M: MaskedLMBackend + ?Sized>(
    backend: &M,
    prompted: &TokenSequence,
    verbalizer: &Verbalizer,
) -> Result<Vec<f64>> {
    let mask = prompted.single_mask_position()?;
    let hidden = backend.encode(prompted)?;
    let full = backend.vocab_logits(hidden.at(mask))?;
    Ok(gather(&full, verbalizer.token_ids()))
}

/// Tape-recorded variant of [`class_logits`], for training.
pub fn class_logits_on_tape<'t, B: TrainableBackend + ?Sized>(
    backend: &B,
    tape: &'t crate::autodiff::Tape,
    params: &[crate::autodiff::Var<'t>],
    prompted: &TokenSequence,
    verbalizer: &Verbalizer,
) -> Result<Vec<crate::autodiff::Var<'t>>> {
    let mask = prompted.single_mask_position()?;
    let hidden = backend.encode_on_tape(tape, params, prompted)?;
    let full = backend.vocab_logits_on_tape(params, &hidden[mask])?;
    Ok(gather(&full, verbalizer.token_ids()))
}

fn gather<T: Copy>(full: &[T], ids: &[TokenId]) -> Vec<T> {
    ids.iter().map(|&id| full[id as usize]).collect()
}

/// Softmax over class logits. Shift-invariant and order-preserving.
pub fn class_probs(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Contract("class_probs of empty logits".into()));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite {
            context: "class_probs".into(),
            detail: format!("{logits:?}"),
        });
    }
    Ok(softmax(logits))
}

/// Generic softmax shared by the inference and training paths. The maximum
/// is subtracted as a detached constant for stability.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits
        .iter()
        .map(|l| l.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<T> = logits.iter().map(|l| l.shift(-m).exp()).collect();
    let mut denom = exps[0];
    for e in &exps[1..] {
        denom = denom + *e;
    }
    exps.into_iter().map(|e| e / denom).collect()
}

/// Mean negative log-probability of the gold labels, with probabilities
/// floored at [`LOG_EPSILON`].
pub fn ce_loss(batch_probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    validate_ce_inputs(batch_probs, labels)?;
    Ok(ce_from_probs(batch_probs, labels))
}

fn validate_ce_inputs<T: Scalar>(batch_probs: &[Vec<T>], labels: &[usize]) -> Result<()> {
    if batch_probs.is_empty() {
        return Err(Error::Contract("ce_loss of empty batch".into()));
    }
    if batch_probs.len() != labels.len() {
        return Err(Error::Contract(format!(
            "ce_loss: {} probability rows but {} labels",
            batch_probs.len(),
            labels.len()
        )));
    }
    for (row, &label) in batch_probs.iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::Contract(format!(
                "ce_loss: label {label} out of range for {} classes",
                row.len()
            )));
        }
    }
    Ok(())
}

/// Generic cross-entropy shared by the inference and training paths. Inputs
/// must already be validated.
pub fn ce_from_probs<T: Scalar>(batch_probs: &[Vec<T>], labels: &[usize]) -> T {
    let mut acc = -batch_probs[0][labels[0]].clamp_min(LOG_EPSILON).ln();
    for (row, &label) in batch_probs.iter().zip(labels).skip(1) {
        acc = acc - row[label].clamp_min(LOG_EPSILON).ln();
    }
    acc.scale(1.0 / batch_probs.len() as f64)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

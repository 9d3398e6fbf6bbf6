//! Contrastive scoring: the InfoNCE term per anchor, the symmetric loss per
//! support level, and the joint training objective.
//!
//! Pairwise scores are cosine similarities between mask-position
//! representations produced by the task model. Each anchor's term uses one
//! positive and its selected negatives; the symmetric loss adds the inverted
//! term where anchor and positive swap roles against the same negatives.

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, log_sum_exp, norm, Scalar, Tape, Var};
use crate::backend::{MaskedLMBackend, TokenSequence, TrainableBackend};
use crate::error::{Error, Result};

/// What the InfoNCE denominator sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Positive plus all negatives (the SimCLR denominator; the default).
    WithPositive,
    /// Negatives only.
    NegativesOnly,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    /// Softmax temperature, > 0.
    pub temperature: f64,
    /// Weight of the batch-level loss in the joint objective.
    pub t: f64,
    /// Weight of the prompt-level loss in the joint objective.
    pub a: f64,
    pub denominator: DenominatorMode,
    /// Ablation switch: compute the prompt-level loss as the batch-level
    /// forward term plus the prompt-level inverted term, pairing the two
    /// levels anchor by anchor, instead of the prompt-level symmetric pair.
    pub literal_pc_pairing: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: 0.07,
            t: 0.5,
            a: 0.5,
            denominator: DenominatorMode::WithPositive,
            literal_pc_pairing: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 || self.temperature.is_nan() {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !self.temperature.is_finite() || !self.t.is_finite() || !self.a.is_finite() {
            return Err(Error::Config("non-finite contrastive config".into()));
        }
        if self.t < 0.0 || self.a < 0.0 {
            return Err(Error::Config(
                "loss ratios t and a must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One anchor with its positive and negatives, as representation vectors.
#[derive(Debug, Clone)]
pub struct AnchorGroup<T> {
    pub anchor: Vec<T>,
    pub positive: Vec<T>,
    pub negatives: Vec<Vec<T>>,
}

impl<T: Scalar> AnchorGroup<T> {
    pub fn validate(&self) -> Result<()> {
        let d = self.anchor.len();
        if d == 0 {
            return Err(Error::Contract("anchor vector is empty".into()));
        }
        if self.negatives.is_empty() {
            return Err(Error::Contract(
                "anchor group needs at least one negative".into(),
            ));
        }
        let same_dim = self.positive.len() == d && self.negatives.iter().all(|n| n.len() == d);
        if !same_dim {
            return Err(Error::Contract(
                "anchor, positive, and negatives must share one dimension".into(),
            ));
        }
        let finite = self
            .anchor
            .iter()
            .chain(&self.positive)
            .chain(self.negatives.iter().flatten())
            .all(|x| x.value().is_finite());
        if !finite {
            return Err(Error::NonFinite {
                context: "anchor group".into(),
                detail: "representation vector".into(),
            });
        }
        Ok(())
    }
}

/// The model's representation of a prompted input: the hidden state at its
/// unique mask position.
pub fn represent<M: MaskedLMBackend + ?Sized>(
    backend: &M,
    prompted: &TokenSequence,
) -> Result<Vec<f64>> {
    let mask = prompted.single_mask_position()?;
    let hidden = backend.encode(prompted)?;
    Ok(hidden.at(mask).to_vec())
}

/// Tape-recorded variant of [`represent`], for training.
pub fn represent_on_tape<'t, B: TrainableBackend + ?Sized>(
    backend: &B,
    tape: &'t Tape,
    params: &[Var<'t>],
    prompted: &TokenSequence,
) -> Result<Vec<Var<'t>>> {
    let mask = prompted.single_mask_position()?;
    let mut hidden = backend.encode_on_tape(tape, params, prompted)?;
    Ok(hidden.swap_remove(mask))
}

/// Cosine similarity. Errors on zero-norm inputs: representations come from
/// a tanh layer, so a zero norm signals a broken upstream value.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Contract(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na.value() == 0.0 || nb.value() == 0.0 {
        return Err(Error::Contract("cosine of zero-norm vector".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// InfoNCE term for one anchor: `-log( exp(s_pos/tau) / denom )` where the
/// scores `s` are cosine similarities of the anchor against the positive and
/// each negative.
pub fn info_nce<T: Scalar>(
    group: &AnchorGroup<T>,
    temperature: f64,
    mode: DenominatorMode,
) -> Result<T> {
    if temperature <= 0.0 || temperature.is_nan() {
        return Err(Error::Contract(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    group.validate()?;
    let inv_tau = 1.0 / temperature;
    let s_pos = cosine(&group.anchor, &group.positive)?.scale(inv_tau);
    let mut denom_terms: Vec<T> = Vec::with_capacity(group.negatives.len() + 1);
    if mode == DenominatorMode::WithPositive {
        denom_terms.push(s_pos);
    }
    for negative in &group.negatives {
        denom_terms.push(cosine(&group.anchor, negative)?.scale(inv_tau));
    }
    Ok(log_sum_exp(&denom_terms) - s_pos)
}

/// Forward plus inverted InfoNCE for one anchor: `S(i,j) + S(j,i)`, where
/// the inverted term swaps anchor and positive and re-scores the same
/// negatives from the positive's vector.
pub fn symmetric_pair<T: Scalar>(
    group: &AnchorGroup<T>,
    temperature: f64,
    mode: DenominatorMode,
) -> Result<T> {
    let forward = info_nce(group, temperature, mode)?;
    let inverted = info_nce(&inverted_group(group), temperature, mode)?;
    Ok(forward + inverted)
}

fn inverted_group<T: Clone>(group: &AnchorGroup<T>) -> AnchorGroup<T> {
    AnchorGroup {
        anchor: group.positive.clone(),
        positive: group.anchor.clone(),
        negatives: group.negatives.clone(),
    }
}

/// Mean of [`symmetric_pair`] over all usable anchors of one support level.
/// `None` means the level produced no usable anchors and its term is
/// skipped.
pub fn symmetric_loss<T: Scalar>(
    groups: &[AnchorGroup<T>],
    temperature: f64,
    mode: DenominatorMode,
) -> Result<Option<T>> {
    if groups.is_empty() {
        return Ok(None);
    }
    let mut acc = symmetric_pair(&groups[0], temperature, mode)?;
    for group in &groups[1..] {
        acc = acc + symmetric_pair(group, temperature, mode)?;
    }
    Ok(Some(acc.scale(1.0 / groups.len() as f64)))
}

/// The joint objective: `L_CE + t * L_BC + a * L_PC`.
pub fn joint_loss<T: Scalar>(l_ce: T, l_bc: T, l_pc: T, config: &ContrastiveConfig) -> T {
    l_ce + l_bc.scale(config.t) + l_pc.scale(config.a)
}

//! Model backends: the masked-LM and sentence-encoder interfaces, plus small
//! deterministic reference implementations that make the whole training
//! pipeline runnable and gradient-checkable on a laptop.
//!
//! # Reference masked LM
//!
//! The reference backend is the smallest differentiable model exhibiting the
//! full contract. Its forward rule, which tests re-implement independently:
//!
//! * parameters, in layout order: token embedding table `E` (`|V| x d`,
//!   row-major), dense weight `W` (`d x d`, row-major), dense bias `b` (`d`),
//!   vocabulary projector `P` (`|V| x d`, row-major, no bias);
//! * context vector `c = mean_i E[t_i]` over the token sequence;
//! * hidden state at position `i`: `h_i = tanh(W (E[t_i] + c) + b)`;
//! * vocabulary logits for a hidden vector `h`: `P h`.
//!
//! The context mean is what lets the mask position see the rest of the
//! sentence. Weights are initialized from a splitmix64 stream seeded with the
//! configured seed, drawn in layout order; matrix entries are uniform in
//! `[-1, 1)` scaled by `1/sqrt(d)` and the bias starts at zero.
//!
//! # Reference sentence encoder
//!
//! Frozen bag-of-token-vectors: each whitespace token maps to a fixed vector
//! whose components come from a splitmix64 stream seeded with
//! `fnv1a64(token) ^ seed` (uniform in `[-1, 1)`); a sentence embeds to the
//! mean of its token vectors.

use std::collections::HashMap;

use crate::autodiff::{dot, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::templates::MASK_TOKEN;

pub type TokenId = u32;

/// Reserved token the reference tokenizer maps unknown words onto.
pub const UNK_TOKEN: &str = "[UNK]";

/// A tokenized input with the positions of its mask tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    mask_positions: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, mask_positions: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Contract("token sequence is empty".into()));
        }
        if let Some(&bad) = mask_positions.iter().find(|&&p| p >= tokens.len()) {
            return Err(Error::Contract(format!(
                "mask position {bad} out of bounds for {} tokens",
                tokens.len()
            )));
        }
        Ok(TokenSequence {
            tokens,
            mask_positions,
        })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mask_positions(&self) -> &[usize] {
        &self.mask_positions
    }

    /// The unique mask position, or a contract error if there are zero or
    /// several.
    pub fn single_mask_position(&self) -> Result<usize> {
        match self.mask_positions.as_slice() {
            [p] => Ok(*p),
            other => Err(Error::Contract(format!(
                "expected exactly one mask position, found {}",
                other.len()
            ))),
        }
    }
}

/// Per-position hidden vectors produced by [`MaskedLMBackend::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    vectors: Vec<Vec<f64>>,
}

impl HiddenStates {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map(|v| v.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Contract("hidden states are empty".into()));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Contract(format!(
                    "hidden vector {i} has dimension {} != {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: "hidden states".into(),
                    detail: format!("vector {i}"),
                });
            }
        }
        Ok(HiddenStates { vectors })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn at(&self, position: usize) -> &[f64] {
        &self.vectors[position]
    }
}

/// Inference contract of a masked language model. Implementations bring
/// their own tokenizer.
pub trait MaskedLMBackend: Send + Sync {
    fn name(&self) -> &str;
    fn hidden_size(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn mask_token_id(&self) -> TokenId;
    /// Id of a vocabulary entry, if present.
    fn token_id(&self, token: &str) -> Option<TokenId>;
    fn tokenize(&self, text: &str) -> Result<TokenSequence>;
    /// One hidden vector per input token. Deterministic given parameters.
    fn encode(&self, input: &TokenSequence) -> Result<HiddenStates>;
    /// Unnormalized scores over the full vocabulary for one hidden vector.
    fn vocab_logits(&self, hidden: &[f64]) -> Result<Vec<f64>>;
}

/// Training contract: parameter access plus the tape-recorded forward pass.
/// `params_on_tape` leaves are expected at the start of the tape so that
/// gradient indices line up with parameter indices.
pub trait TrainableBackend: MaskedLMBackend {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn encode_on_tape<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        input: &TokenSequence,
    ) -> Result<Vec<Vec<Var<'t>>>>;
    fn vocab_logits_on_tape<'t>(
        &self,
        params: &[Var<'t>],
        hidden: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>>;
}

/// A sentence encoder used only for similarity ranking of support
/// candidates. Deterministic: identical text embeds identically.
pub trait SentenceEncoder: Send + Sync {
    fn embed_dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// splitmix64; the documented pseudo-random stream behind all reference
/// initialization.
pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Map 64 random bits to a uniform f64 in [-1, 1).
pub(crate) fn uniform_pm1(bits: u64) -> f64 {
    let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
    2.0 * unit - 1.0
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Configuration of the reference masked LM.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReferenceConfig {
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            hidden_dim: 16,
            seed: 7,
        }
    }
}

/// The reference masked LM. See the module docs for the forward rule.
#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    dim: usize,
    params: Vec<f64>,
}

impl ReferenceBackend {
    /// Build a backend whose vocabulary is `[MASK]`, `[UNK]`, then the given
    /// words deduplicated and sorted. Weights are drawn from the documented
    /// seeded stream.
    pub fn from_words<I, S>(words: I, config: ReferenceConfig) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if config.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        let mut sorted: Vec<String> = words
            .into_iter()
            .map(Into::into)
            .filter(|w| w != MASK_TOKEN && w != UNK_TOKEN && !w.is_empty())
            .collect();
        sorted.sort();
        sorted.dedup();
        let mut vocab = Vec::with_capacity(sorted.len() + 2);
        vocab.push(MASK_TOKEN.to_string());
        vocab.push(UNK_TOKEN.to_string());
        vocab.extend(sorted);
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        let d = config.hidden_dim;
        let v = vocab.len();
        let scale = 1.0 / (d as f64).sqrt();
        let mut state = config.seed;
        let mut params = Vec::with_capacity(v * d + d * d + d + v * d);
        for _ in 0..v * d {
            params.push(uniform_pm1(splitmix64(&mut state)) * scale);
        }
        for _ in 0..d * d {
            params.push(uniform_pm1(splitmix64(&mut state)) * scale);
        }
        params.extend(std::iter::repeat_n(0.0, d));
        for _ in 0..v * d {
            params.push(uniform_pm1(splitmix64(&mut state)) * scale);
        }
        Ok(ReferenceBackend {
            vocab,
            index,
            dim: d,
            params,
        })
    }

    /// Collect the vocabulary needed for a task: every whitespace token of
    /// the corpus fields, of the template patterns' literal text, and every
    /// verbalizer word.
    pub fn from_task(
        corpus: &crate::data::Dataset,
        templates: &crate::templates::TemplateSet,
        verbalizer_words: &[String],
        config: ReferenceConfig,
    ) -> Result<Self> {
        let mut words: Vec<String> = Vec::new();
        for ex in corpus.examples() {
            for field in ex.raw.fields() {
                words.extend(field.split_whitespace().map(str::to_string));
            }
        }
        for t in templates.all() {
            // Rendering a placeholder-free probe exposes the scaffold words.
            let probe = t.apply(&probe_input(t.arity()), None)?;
            words.extend(probe.text.split_whitespace().map(str::to_string));
        }
        words.extend(verbalizer_words.iter().cloned());
        ReferenceBackend::from_words(words, config)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn embedding_offset(&self, token: TokenId) -> usize {
        token as usize * self.dim
    }

    fn dense_offset(&self) -> usize {
        self.vocab.len() * self.dim
    }

    fn bias_offset(&self) -> usize {
        self.dense_offset() + self.dim * self.dim
    }

    fn projector_offset(&self) -> usize {
        self.bias_offset() + self.dim
    }

    fn check_tokens(&self, input: &TokenSequence) -> Result<()> {
        for &t in input.tokens() {
            if t as usize >= self.vocab.len() {
                return Err(Error::Vocabulary {
                    token: t,
                    vocab_size: self.vocab.len(),
                });
            }
        }
        Ok(())
    }

    /// The shared forward rule; `T = f64` is inference, `T = Var` training.
    fn hidden_states_generic<T: Scalar>(&self, params: &[T], tokens: &[TokenId]) -> Vec<Vec<T>> {
        let d = self.dim;
        let n = tokens.len();
        let embedding = |t: TokenId| {
            let off = self.embedding_offset(t);
            &params[off..off + d]
        };
        let mut context: Vec<T> = embedding(tokens[0]).to_vec();
        for &t in &tokens[1..] {
            let e = embedding(t);
            for c in 0..d {
                context[c] = context[c] + e[c];
            }
        }
        let inv_n = 1.0 / n as f64;
        for c in context.iter_mut() {
            *c = c.scale(inv_n);
        }
        let dense = &params[self.dense_offset()..self.bias_offset()];
        let bias = &params[self.bias_offset()..self.projector_offset()];
        tokens
            .iter()
            .map(|&t| {
                let e = embedding(t);
                (0..d)
                    .map(|r| {
                        let mut acc = bias[r];
                        for c in 0..d {
                            acc = acc + dense[r * d + c] * (e[c] + context[c]);
                        }
                        acc.tanh()
                    })
                    .collect()
            })
            .collect()
    }

    fn vocab_logits_generic<T: Scalar>(&self, params: &[T], hidden: &[T]) -> Result<Vec<T>> {
        if hidden.len() != self.dim {
            return Err(Error::Contract(format!(
                "hidden vector has dimension {}, backend expects {}",
                hidden.len(),
                self.dim
            )));
        }
        let proj = &params[self.projector_offset()..];
        Ok((0..self.vocab.len())
            .map(|v| dot(&proj[v * self.dim..(v + 1) * self.dim], hidden))
            .collect())
    }
}

fn probe_input(arity: usize) -> crate::templates::RawInput {
    // A single non-vocabulary character; its token maps to [UNK] and the
    // scaffold words are what we are after.
    match arity {
        2 => crate::templates::RawInput::pair("\u{1}", "\u{1}").expect("non-empty"),
        _ => crate::templates::RawInput::single("\u{1}").expect("non-empty"),
    }
}

impl MaskedLMBackend for ReferenceBackend {
    fn name(&self) -> &str {
        "reference"
    }

    fn hidden_size(&self) -> usize {
        self.dim
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn mask_token_id(&self) -> TokenId {
        0
    }

    fn token_id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Whitespace tokenizer: `[MASK]` maps to the mask id, unknown words to
    /// `[UNK]`.
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let mut tokens = Vec::new();
        let mut mask_positions = Vec::new();
        for word in text.split_whitespace() {
            if word == MASK_TOKEN {
                mask_positions.push(tokens.len());
                tokens.push(self.mask_token_id());
            } else {
                tokens.push(self.index.get(word).copied().unwrap_or(1));
            }
        }
        if tokens.is_empty() {
            return Err(Error::Contract(format!(
                "cannot tokenize empty text {text:?}"
            )));
        }
        TokenSequence::new(tokens, mask_positions)
    }

    fn encode(&self, input: &TokenSequence) -> Result<HiddenStates> {
        self.check_tokens(input)?;
        HiddenStates::new(self.hidden_states_generic(&self.params, input.tokens()))
    }

    fn vocab_logits(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        self.vocab_logits_generic(&self.params, hidden)
    }
}

impl TrainableBackend for ReferenceBackend {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn encode_on_tape<'t>(
        &self,
        _tape: &'t Tape,
        params: &[Var<'t>],
        input: &TokenSequence,
    ) -> Result<Vec<Vec<Var<'t>>>> {
        self.check_tokens(input)?;
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter vars, got {}",
                self.params.len(),
                params.len()
            )));
        }
        Ok(self.hidden_states_generic(params, input.tokens()))
    }

    fn vocab_logits_on_tape<'t>(
        &self,
        params: &[Var<'t>],
        hidden: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>> {
        self.vocab_logits_generic(params, hidden)
    }
}

/// Configuration of the reference sentence encoder.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HashEncoderConfig {
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for HashEncoderConfig {
    fn default() -> Self {
        HashEncoderConfig {
            embed_dim: 16,
            seed: 0x5eed,
        }
    }
}

/// The reference sentence encoder: hash-seeded bag of token vectors, with a
/// sentence embedding equal to the mean of its token vectors.
#[derive(Debug, Clone)]
pub struct HashSentenceEncoder {
    config: HashEncoderConfig,
}

impl HashSentenceEncoder {
    pub fn new(config: HashEncoderConfig) -> Self {
        HashSentenceEncoder { config }
    }

    /// The fixed vector of one token.
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut state = fnv1a64(token.as_bytes()) ^ self.config.seed;
        (0..self.config.embed_dim)
            .map(|_| uniform_pm1(splitmix64(&mut state)))
            .collect()
    }
}

impl Default for HashSentenceEncoder {
    fn default() -> Self {
        HashSentenceEncoder::new(HashEncoderConfig::default())
    }
}

impl SentenceEncoder for HashSentenceEncoder {
    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(Error::Contract(format!(
                "cannot embed empty text {text:?}"
            )));
        }
        let mut sum = vec![0.0; self.config.embed_dim];
        for token in &tokens {
            for (s, v) in sum.iter_mut().zip(self.token_vector(token)) {
                *s += v;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        Ok(sum.into_iter().map(|s| s * inv).collect())
    }
}

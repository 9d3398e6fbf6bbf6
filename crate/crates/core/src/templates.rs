//! Prompt templates: textual patterns with one mask slot and one input slot
//! (or two numbered slots for sentence-pair tasks). Applying a template is
//! pure string substitution; no trimming, casing, or separator insertion is
//! ever performed, so rendered text is byte-exact and testable.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// The literal mask token in rendered text. Backends map it onto their own
/// mask id when tokenizing.
pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    /// Input slot, 0-based. `{input}` is slot 0 of an arity-1 template,
    /// `{input1}`/`{input2}` are slots 0 and 1 of an arity-2 template.
    Input(usize),
    Mask,
}

/// A parsed prompt pattern. Guaranteed to contain exactly one mask slot and
/// each input slot exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    id: String,
    pattern: String,
    segments: Vec<Segment>,
    arity: usize,
}

/// Raw input text for one example: one field for single-sentence tasks, two
/// for sentence-pair tasks. Fields are non-empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RawInput {
    fields: Vec<String>,
}

impl RawInput {
    pub fn single(text: impl Into<String>) -> Result<Self> {
        RawInput::new(vec![text.into()])
    }

    pub fn pair(first: impl Into<String>, second: impl Into<String>) -> Result<Self> {
        RawInput::new(vec![first.into(), second.into()])
    }

    pub fn new(fields: Vec<String>) -> Result<Self> {
        if fields.is_empty() || fields.len() > 2 {
            return Err(Error::Contract(format!(
                "raw input must have 1 or 2 fields, got {}",
                fields.len()
            )));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Contract("raw input field is empty".into()));
        }
        Ok(RawInput { fields })
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn arity(&self) -> usize {
        self.fields.len()
    }

    /// All fields joined by a single space. Used as the similarity key for
    /// sentence-encoder ranking.
    pub fn joined(&self) -> String {
        self.fields.join(" ")
    }
}

impl fmt::Display for RawInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.joined())
    }
}

/// A raw input rendered under a template: the prompted text, where its mask
/// token sits, and where each input field landed.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptedExample {
    pub text: String,
    /// Byte span of [`MASK_TOKEN`] within `text`.
    pub mask_span: Range<usize>,
    /// Byte span of each input field within `text`, in slot order.
    pub input_spans: Vec<Range<usize>>,
    pub raw: RawInput,
    /// Dense label id, absent at inference time.
    pub label: Option<usize>,
    pub template_id: String,
}

impl PromptedExample {
    /// Recover the raw fields from the rendered text via the recorded spans.
    pub fn recovered_raw(&self) -> Vec<&str> {
        self.input_spans
            .iter()
            .map(|span| &self.text[span.clone()])
            .collect()
    }
}

impl Template {
    /// Parse a pattern into a validated template.
    pub fn parse(id: impl Into<String>, pattern: &str) -> Result<Template> {
        if pattern.is_empty() {
            return Err(Error::TemplateSyntax {
                position: 0,
                message: "empty pattern".into(),
            });
        }
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut mask_count = 0usize;
        let mut plain_inputs = 0usize;
        let mut numbered = [0usize; 2];
        let bytes = pattern.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'{' {
                let close = pattern[i..].find('}').map(|off| i + off).ok_or_else(|| {
                    Error::TemplateSyntax {
                        position: i,
                        message: "unclosed placeholder".into(),
                    }
                })?;
                let name = &pattern[i + 1..close];
                let segment = match name {
                    "input" => {
                        plain_inputs += 1;
                        Segment::Input(0)
                    }
                    "input1" => {
                        numbered[0] += 1;
                        Segment::Input(0)
                    }
                    "input2" => {
                        numbered[1] += 1;
                        Segment::Input(1)
                    }
                    "mask" => {
                        mask_count += 1;
                        if mask_count > 1 {
                            return Err(Error::TemplateSyntax {
                                position: i,
                                message: "duplicate {mask} placeholder".into(),
                            });
                        }
                        Segment::Mask
                    }
                    other => {
                        return Err(Error::TemplateSyntax {
                            position: i,
                            message: format!("unknown placeholder {{{other}}}"),
                        })
                    }
                };
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(segment);
                i = close + 1;
            } else {
                // Multi-byte chars never contain ASCII '{', so byte-wise
                // scanning stays on char boundaries for literals.
                let ch_len = pattern[i..].chars().next().map(char::len_utf8).unwrap_or(1);
                literal.push_str(&pattern[i..i + ch_len]);
                i += ch_len;
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        if mask_count == 0 {
            return Err(Error::TemplateSyntax {
                position: pattern.len(),
                message: "missing {mask} placeholder".into(),
            });
        }
        let arity = match (plain_inputs, numbered) {
            (1, [0, 0]) => 1,
            (0, [1, 1]) => 2,
            (0, [0, 0]) => {
                return Err(Error::TemplateSyntax {
                    position: pattern.len(),
                    message: "missing input placeholder ({input} or {input1}/{input2})".into(),
                })
            }
            _ => {
                return Err(Error::TemplateSyntax {
                    position: pattern.len(),
                    message: format!(
                        "bad input placeholders: {plain_inputs}x{{input}}, \
                         {}x{{input1}}, {}x{{input2}} (want one {{input}}, or one of each numbered)",
                        numbered[0], numbered[1]
                    ),
                })
            }
        };
        Ok(Template {
            id: id.into(),
            pattern: pattern.to_string(),
            segments,
            arity,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Number of input fields the template expects (1 or 2).
    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Render `raw` under this template. Pure concatenation of pattern
    /// literals, input fields, and the literal [`MASK_TOKEN`].
    pub fn apply(&self, raw: &RawInput, label: Option<usize>) -> Result<PromptedExample> {
        if raw.arity() != self.arity {
            return Err(Error::Contract(format!(
                "template {:?} expects {} input field(s), got {}",
                self.id,
                self.arity,
                raw.arity()
            )));
        }
        let mut text = String::new();
        let mut mask_span = 0..0;
        let mut input_spans = vec![0..0; self.arity];
        for segment in &self.segments {
            match segment {
                Segment::Literal(s) => text.push_str(s),
                Segment::Input(slot) => {
                    let start = text.len();
                    text.push_str(&raw.fields[*slot]);
                    input_spans[*slot] = start..text.len();
                }
                Segment::Mask => {
                    let start = text.len();
                    text.push_str(MASK_TOKEN);
                    mask_span = start..text.len();
                }
            }
        }
        Ok(PromptedExample {
            text,
            mask_span,
            input_spans,
            raw: raw.clone(),
            label,
            template_id: self.id.clone(),
        })
    }

    /// Shorthand for arity-1 templates.
    pub fn apply_text(&self, text: &str, label: Option<usize>) -> Result<PromptedExample> {
        self.apply(&RawInput::single(text)?, label)
    }
}

/// An ordered, validated set of templates loaded from one file. Index 0 is
/// the main template; the rest are the alternates used for prompt-level
/// support sampling.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<Template>,
}

impl TemplateSet {
    pub fn new(templates: Vec<Template>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Config("template set is empty".into()));
        }
        let mut seen = HashSet::new();
        for t in &templates {
            if !seen.insert(t.id.clone()) {
                return Err(Error::Config(format!("duplicate template id {:?}", t.id)));
            }
            if t.arity != templates[0].arity {
                return Err(Error::Config(format!(
                    "template {:?} has arity {} but the set's main template has arity {}",
                    t.id, t.arity, templates[0].arity
                )));
            }
        }
        Ok(TemplateSet { templates })
    }

    pub fn main(&self) -> &Template {
        &self.templates[0]
    }

    pub fn alternates(&self) -> &[Template] {
        &self.templates[1..]
    }

    pub fn all(&self) -> &[Template] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn arity(&self) -> usize {
        self.templates[0].arity
    }
}

/// Load a template set from a UTF-8 file, one template per line:
/// `<id><TAB><pattern>`. Lines beginning with `#` are comments; blank lines
/// are ignored. The first template is the main one.
pub fn load_template_set(path: impl AsRef<Path>) -> Result<TemplateSet> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut templates = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line_number = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, pattern) = line.split_once('\t').ok_or_else(|| Error::TemplateLoad {
            path: display.clone(),
            line: line_number,
            message: "expected <id><TAB><pattern>".into(),
        })?;
        if id.is_empty() {
            return Err(Error::TemplateLoad {
                path: display.clone(),
                line: line_number,
                message: "empty template id".into(),
            });
        }
        let template = Template::parse(id, pattern).map_err(|e| Error::TemplateLoad {
            path: display.clone(),
            line: line_number,
            message: e.to_string(),
        })?;
        templates.push(template);
    }
    if templates.is_empty() {
        return Err(Error::TemplateLoad {
            path: display,
            line: 0,
            message: "no templates found".into(),
        });
    }
    TemplateSet::new(templates)
}

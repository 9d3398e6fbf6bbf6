//! Dataset ingestion, seeded K-shot splitting, and batching.
//!
//! Input files are UTF-8 TSV with the label in the last column: two columns
//! for single-sentence tasks, three for sentence-pair tasks. Splits are
//! fully determined by `(dataset, k, seed)` and can be persisted as index
//! manifests for exact re-runs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::templates::RawInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleSentence,
    SentencePair,
}

impl TaskKind {
    pub fn field_count(self) -> usize {
        match self {
            TaskKind::SingleSentence => 1,
            TaskKind::SentencePair => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub raw: RawInput,
    pub label: String,
}

/// An immutable labeled dataset with a sorted label set.
#[derive(Debug, Clone)]
pub struct Dataset {
    examples: Vec<Example>,
    label_set: Vec<String>,
    task_kind: TaskKind,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, task_kind: TaskKind) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Contract("dataset has no examples".into()));
        }
        for ex in &examples {
            if ex.raw.arity() != task_kind.field_count() {
                return Err(Error::Contract(format!(
                    "example has {} fields, task expects {}",
                    ex.raw.arity(),
                    task_kind.field_count()
                )));
            }
        }
        let mut label_set: Vec<String> = examples.iter().map(|e| e.label.clone()).collect();
        label_set.sort();
        label_set.dedup();
        if label_set.len() < 2 {
            return Err(Error::Contract(format!(
                "dataset needs at least 2 labels, found {}",
                label_set.len()
            )));
        }
        Ok(Dataset {
            examples,
            label_set,
            task_kind,
        })
    }

    /// Subset by example indices, keeping the parent's label set so that
    /// label ids stay consistent across train/dev/test.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let examples = indices
            .iter()
            .map(|&i| {
                self.examples.get(i).cloned().ok_or_else(|| {
                    Error::Contract(format!("index {i} out of bounds for {}", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            examples,
            label_set: self.label_set.clone(),
            task_kind: self.task_kind,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label)
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Load a TSV dataset. Row order is preserved; malformed rows report their
/// line number.
pub fn load_tsv(path: impl AsRef<Path>, task_kind: TaskKind) -> Result<Dataset> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let want = task_kind.field_count() + 1;
    let mut examples = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line_number = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != want {
            return Err(Error::DataLoad {
                path: display.clone(),
                line: line_number,
                message: format!("expected {want} tab-separated fields, got {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.trim().is_empty()) {
            return Err(Error::DataLoad {
                path: display.clone(),
                line: line_number,
                message: "empty field".into(),
            });
        }
        let raw = RawInput::new(fields[..want - 1].iter().map(|s| s.to_string()).collect())
            .map_err(|e| Error::DataLoad {
                path: display.clone(),
                line: line_number,
                message: e.to_string(),
            })?;
        examples.push(Example {
            raw,
            label: fields[want - 1].to_string(),
        });
    }
    if examples.is_empty() {
        return Err(Error::DataLoad {
            path: display,
            line: 0,
            message: "no rows".into(),
        });
    }
    Dataset::new(examples, task_kind).map_err(|e| Error::DataLoad {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })
}

/// Write a dataset as TSV, the inverse of [`load_tsv`].
pub fn write_tsv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for ex in dataset.examples() {
        for field in ex.raw.fields() {
            out.push_str(field);
            out.push('\t');
        }
        out.push_str(&ex.label);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A K-shot split: exactly `k` train and `k` dev examples per label, sampled
/// without replacement, plus the task's full test set.
#[derive(Debug, Clone)]
pub struct KShotSplit {
    pub seed: u64,
    pub k: usize,
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    /// Indices into the source corpus, sorted ascending.
    pub train_indices: Vec<usize>,
    pub dev_indices: Vec<usize>,
}

/// Persisted form of a split: the example indices, enough to replay it
/// exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub k: usize,
    pub train_indices: Vec<usize>,
    pub dev_indices: Vec<usize>,
}

impl From<&KShotSplit> for SplitManifest {
    fn from(split: &KShotSplit) -> Self {
        SplitManifest {
            seed: split.seed,
            k: split.k,
            train_indices: split.train_indices.clone(),
            dev_indices: split.dev_indices.clone(),
        }
    }
}

/// Deterministically sample a K-shot split. Each label bucket (corpus order)
/// is shuffled by a ChaCha8 stream keyed on `(seed, label index)`; the first
/// `k` go to train, the next `k` to dev.
pub fn make_kshot(corpus: &Dataset, test: &Dataset, k: usize, seed: u64) -> Result<KShotSplit> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let mut train_indices = Vec::with_capacity(k * corpus.label_set().len());
    let mut dev_indices = Vec::with_capacity(k * corpus.label_set().len());
    for (label_idx, label) in corpus.label_set().iter().enumerate() {
        let mut bucket: Vec<usize> = corpus
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, ex)| &ex.label == label)
            .map(|(i, _)| i)
            .collect();
        if bucket.len() < 2 * k {
            return Err(Error::Capacity {
                label: label.clone(),
                available: bucket.len(),
                needed: 2 * k,
                k,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label_idx as u64);
        bucket.shuffle(&mut rng);
        train_indices.extend_from_slice(&bucket[..k]);
        dev_indices.extend_from_slice(&bucket[k..2 * k]);
    }
    train_indices.sort_unstable();
    dev_indices.sort_unstable();
    Ok(KShotSplit {
        seed,
        k,
        train: corpus.select(&train_indices)?,
        dev: corpus.select(&dev_indices)?,
        test: test.clone(),
        train_indices,
        dev_indices,
    })
}

/// Rebuild a split from a persisted manifest.
pub fn apply_manifest(
    corpus: &Dataset,
    test: &Dataset,
    manifest: &SplitManifest,
) -> Result<KShotSplit> {
    Ok(KShotSplit {
        seed: manifest.seed,
        k: manifest.k,
        train: corpus.select(&manifest.train_indices)?,
        dev: corpus.select(&manifest.dev_indices)?,
        test: test.clone(),
        train_indices: manifest.train_indices.clone(),
        dev_indices: manifest.dev_indices.clone(),
    })
}

/// Index batches for one epoch: a seeded shuffle of `0..n` chunked by
/// `batch_size`, final short batch kept. The shuffle is keyed on
/// `(seed, epoch)`.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch_size must be at least 2 (batch-level contrastive sampling needs \
             a second example), got {batch_size}"
        )));
    }
    if n == 0 {
        return Err(Error::Contract("cannot batch an empty split".into()));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    indices.shuffle(&mut rng);
    Ok(indices.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Epoch batches over a split's training set.
pub fn batches(
    split: &KShotSplit,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    epoch_batches(split.train.len(), batch_size, seed, epoch)
}

pub mod synth {
    //! Deterministic synthetic corpora for tests, benchmarks, and CLI demos.

    use super::*;
    use rand::Rng;

    const NEGATIVE_WORDS: [&str; 6] = ["awful", "dreadful", "boring", "messy", "weak", "hollow"];
    const POSITIVE_WORDS: [&str; 6] = ["great", "wonderful", "crisp", "fresh", "vivid", "warm"];
    const FILLER_WORDS: [&str; 6] = ["the", "film", "story", "plot", "acting", "pace"];

    /// A linearly separable two-class sentiment-shaped task: each text mixes
    /// class-specific words with shared filler, so a bag-of-embeddings model
    /// can reach perfect accuracy.
    pub fn linearly_separable(n_per_class: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut examples = Vec::with_capacity(2 * n_per_class);
        for i in 0..2 * n_per_class {
            let positive = i % 2 == 1;
            let pool: &[&str] = if positive {
                &POSITIVE_WORDS
            } else {
                &NEGATIVE_WORDS
            };
            let class_words = rng.random_range(2..=3usize);
            let filler_words = rng.random_range(1..=2usize);
            let mut words: Vec<&str> = (0..class_words)
                .map(|_| pool[rng.random_range(0..pool.len())])
                .collect();
            words.extend((0..filler_words).map(|_| FILLER_WORDS[rng.random_range(0..FILLER_WORDS.len())]));
            words.shuffle(&mut rng);
            examples.push(Example {
                raw: RawInput::single(words.join(" ")).expect("non-empty"),
                label: if positive { "positive" } else { "negative" }.to_string(),
            });
        }
        Dataset::new(examples, TaskKind::SingleSentence).expect("two labels by construction")
    }

    /// The default template file content for the synthetic task.
    pub fn toy_templates() -> &'static str {
        "t0\t{input} It is {mask}\nt1\t{input} All in all it was {mask}\nt2\t{mask} one : {input}\n"
    }

    /// The default verbalizer file content for the synthetic task.
    pub fn toy_verbalizer() -> &'static str {
        "negative\tbad\npositive\tgood\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tsv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_single_sentence_tsv() {
        let f = tsv("good film\tpositive\nbad film\tnegative\nfine film\tpositive\n");
        let d = load_tsv(f.path(), TaskKind::SingleSentence).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.label_set(), &["negative", "positive"]);
        assert_eq!(d.examples()[0].raw.joined(), "good film");
    }

    #[test]
    fn loads_sentence_pair_tsv() {
        let f = tsv("a cat\tan animal\tentailment\na cat\ta car\tcontradiction\n");
        let d = load_tsv(f.path(), TaskKind::SentencePair).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.examples()[0].raw.fields().len(), 2);
    }

    #[test]
    fn missing_label_field_reports_line() {
        let f = tsv("good film\tpositive\nbad film\n");
        let err = load_tsv(f.path(), TaskKind::SingleSentence).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn five_label_file_yields_five_labels() {
        let rows: String = (0..10)
            .map(|i| format!("text number {i}\tlabel{}\n", i % 5))
            .collect();
        let f = tsv(&rows);
        let d = load_tsv(f.path(), TaskKind::SingleSentence).unwrap();
        assert_eq!(d.label_set().len(), 5);
    }

    #[test]
    fn tsv_round_trips() {
        let d = synth::linearly_separable(10, 42);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_tsv(&d, f.path()).unwrap();
        let back = load_tsv(f.path(), TaskKind::SingleSentence).unwrap();
        assert_eq!(back.len(), d.len());
        assert_eq!(back.examples(), d.examples());
    }

    fn corpus(n_per_class: usize) -> Dataset {
        synth::linearly_separable(n_per_class, 9)
    }

    #[test]
    fn kshot_takes_k_per_label_in_train_and_dev() {
        let c = corpus(200);
        let split = make_kshot(&c, &c, 16, 42).unwrap();
        assert_eq!(split.train.len(), 32);
        assert_eq!(split.dev.len(), 32);
        for label in c.label_set() {
            let count = |d: &Dataset| d.examples().iter().filter(|e| &e.label == label).count();
            assert_eq!(count(&split.train), 16);
            assert_eq!(count(&split.dev), 16);
        }
    }

    #[test]
    fn kshot_train_and_dev_are_disjoint() {
        let c = corpus(100);
        let split = make_kshot(&c, &c, 16, 7).unwrap();
        let train: std::collections::HashSet<_> = split.train_indices.iter().collect();
        assert!(split.dev_indices.iter().all(|i| !train.contains(i)));
    }

    #[test]
    fn kshot_is_deterministic_and_seed_sensitive() {
        let c = corpus(100);
        let a = make_kshot(&c, &c, 16, 13).unwrap();
        let b = make_kshot(&c, &c, 16, 13).unwrap();
        assert_eq!(a.train_indices, b.train_indices);
        assert_eq!(a.dev_indices, b.dev_indices);

        let other = make_kshot(&c, &c, 16, 21).unwrap();
        assert_ne!(a.train_indices, other.train_indices);
    }

    #[test]
    fn five_seeds_give_five_distinct_train_sets() {
        let c = corpus(5000);
        let seeds = [1u64, 2, 3, 4, 5];
        let sets: Vec<Vec<usize>> = seeds
            .iter()
            .map(|&s| make_kshot(&c, &c, 16, s).unwrap().train_indices)
            .collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                assert_ne!(sets[i], sets[j], "seeds {} and {}", seeds[i], seeds[j]);
            }
        }
    }

    #[test]
    fn capacity_error_names_the_label() {
        let c = corpus(10);
        let err = make_kshot(&c, &c, 16, 1).unwrap_err();
        match err {
            Error::Capacity { label, available, needed, .. } => {
                assert!(label == "negative" || label == "positive");
                assert_eq!(available, 10);
                assert_eq!(needed, 32);
            }
            other => panic!("expected capacity error, got {other}"),
        }
    }

    #[test]
    fn manifest_replays_exactly() {
        let c = corpus(100);
        let split = make_kshot(&c, &c, 8, 5).unwrap();
        let manifest = SplitManifest::from(&split);
        let replay = apply_manifest(&c, &c, &manifest).unwrap();
        assert_eq!(replay.train.examples(), split.train.examples());
        assert_eq!(replay.dev.examples(), split.dev.examples());
    }

    #[test]
    fn batches_cover_all_indices_once() {
        let got = epoch_batches(80, 16, 3, 0).unwrap();
        assert_eq!(got.len(), 5);
        let mut all: Vec<usize> = got.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..80).collect::<Vec<_>>());
    }

    #[test]
    fn short_final_batch_is_kept() {
        let got = epoch_batches(10, 4, 0, 0).unwrap();
        assert_eq!(got.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn batch_size_one_is_a_config_error() {
        let err = epoch_batches(10, 1, 0, 0).unwrap_err();
        assert!(err.to_string().contains("batch-level"), "{err}");
    }

    #[test]
    fn batch_sequences_replay_with_same_seed() {
        for epoch in 0..3 {
            assert_eq!(
                epoch_batches(50, 8, 11, epoch).unwrap(),
                epoch_batches(50, 8, 11, epoch).unwrap()
            );
        }
        assert_ne!(
            epoch_batches(50, 8, 11, 0).unwrap(),
            epoch_batches(50, 8, 11, 1).unwrap()
        );
    }

    #[test]
    fn synthetic_task_is_separable_by_construction() {
        let d = synth::linearly_separable(50, 1);
        assert_eq!(d.len(), 100);
        assert_eq!(d.label_set(), &["negative", "positive"]);
        // No class word appears in the other class's texts.
        for ex in d.examples() {
            let text = ex.raw.joined();
            if ex.label == "positive" {
                assert!(!text.contains("awful") && !text.contains("boring"));
            } else {
                assert!(!text.contains("great") && !text.contains("wonderful"));
            }
        }
    }
}

//! Synthetic corpora with planted rationales.
//!
//! Each text is filler words with one contiguous span of polarity words; the
//! label is the majority polarity of that span, and the span is the gold
//! rationale. A short first sentence (closed by `.`) precedes the span. When
//! the spurious marker is enabled, class-0 texts carry a `-` inside that first
//! sentence with probability `marker_rate`, which gives a first-sentence
//! classifier a shortcut unrelated to the gold rationale.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Example, Split, Vocabulary};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

pub const DELIMITER: &str = ".";
pub const MARKER: &str = "-";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub count: usize,
    pub length: usize,
    pub span: usize,
    /// Fraction of span tokens that carry the label's polarity; the rest carry
    /// the opposite one. Must leave a strict majority.
    pub polarity: f64,
    pub spurious_marker: bool,
    pub marker_rate: f64,
    pub signal_words: usize,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 5000,
            length: 40,
            span: 8,
            polarity: 1.0,
            spurious_marker: false,
            marker_rate: 0.9,
            signal_words: 10,
            filler_words: 200,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.span < 1 || self.span >= self.length {
            return Err(Error::Validation(format!(
                "span length {} must satisfy 1 <= span < length ({})",
                self.span, self.length
            )));
        }
        if self.signal_words == 0 || self.filler_words == 0 {
            return Err(Error::Validation(
                "signal and filler vocabularies must be nonempty".into(),
            ));
        }
        let on = self.on_polarity_count();
        if 2 * on <= self.span {
            return Err(Error::Validation(format!(
                "polarity {} leaves no majority in a span of {}",
                self.polarity, self.span
            )));
        }
        if !(0.0..=1.0).contains(&self.marker_rate) {
            return Err(Error::Validation(format!(
                "marker rate {} outside [0, 1]",
                self.marker_rate
            )));
        }
        Ok(())
    }

    fn on_polarity_count(&self) -> usize {
        ((self.polarity * self.span as f64).round() as usize).min(self.span)
    }

    /// Fraction of each text covered by the gold span.
    pub fn gold_sparsity(&self) -> f64 {
        self.span as f64 / self.length as f64
    }

    /// The fixed token inventory; it depends on the word counts only, so every
    /// split drawn from one spec shares ids.
    pub fn vocabulary(&self) -> Vocabulary {
        let mut v = Vocabulary::new();
        v.insert(DELIMITER);
        v.insert(MARKER);
        for i in 0..self.signal_words {
            v.insert(&format!("neg{i:02}"));
        }
        for i in 0..self.signal_words {
            v.insert(&format!("pos{i:02}"));
        }
        for i in 0..self.filler_words {
            v.insert(&format!("w{i:03}"));
        }
        v
    }
}

struct Ids {
    delimiter: u32,
    marker: u32,
    neg: Vec<u32>,
    pos: Vec<u32>,
    filler: Vec<u32>,
}

impl Ids {
    fn new(vocab: &Vocabulary, spec: &SynthSpec) -> Self {
        let lookup = |t: String| vocab.id(&t).expect("synthetic vocabulary");
        Self {
            delimiter: lookup(DELIMITER.into()),
            marker: lookup(MARKER.into()),
            neg: (0..spec.signal_words).map(|i| lookup(format!("neg{i:02}"))).collect(),
            pos: (0..spec.signal_words).map(|i| lookup(format!("pos{i:02}"))).collect(),
            filler: (0..spec.filler_words).map(|i| lookup(format!("w{i:03}"))).collect(),
        }
    }
}

/// Generates `spec.count` class-balanced examples (the two class counts differ
/// by at most one when `count` is odd).
pub fn make_synthetic(spec: &SynthSpec) -> Result<Corpus> {
    make_synthetic_split(spec, Split::Train)
}

pub fn make_synthetic_split(spec: &SynthSpec, split: Split) -> Result<Corpus> {
    spec.validate()?;
    let vocab = spec.vocabulary();
    let ids = Ids::new(&vocab, spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut labels: Vec<usize> = (0..spec.count).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);

    let examples = labels
        .into_iter()
        .map(|label| generate_one(spec, &ids, label, &mut rng))
        .collect();
    Corpus::new(examples, Arc::new(vocab), split)
}

fn generate_one(spec: &SynthSpec, ids: &Ids, label: usize, rng: &mut ChaCha8Rng) -> Example {
    let len = spec.length;
    let mut tokens: Vec<u32> = (0..len)
        .map(|_| *ids.filler.choose(rng).unwrap())
        .collect();

    // First sentence closes somewhere in [4, 9], shortened when the span
    // would not fit after it.
    let wanted = rng.gen_range(4..=9usize);
    let room = len - spec.span;
    let delimiter = if room >= 2 {
        Some(wanted.min(room - 1))
    } else {
        None
    };
    let span_lo = delimiter.map_or(0, |d| d + 1);
    let start = rng.gen_range(span_lo..=len - spec.span);

    let (on, off) = if label == 1 {
        (&ids.pos, &ids.neg)
    } else {
        (&ids.neg, &ids.pos)
    };
    let n_on = spec.on_polarity_count();
    let mut span_tokens: Vec<u32> = (0..spec.span)
        .map(|i| {
            let pool = if i < n_on { on } else { off };
            *pool.choose(rng).unwrap()
        })
        .collect();
    span_tokens.shuffle(rng);
    tokens[start..start + spec.span].copy_from_slice(&span_tokens);

    if let Some(d) = delimiter {
        tokens[d] = ids.delimiter;
    }
    let plant_marker = spec.spurious_marker && label == 0 && rng.gen_bool(spec.marker_rate);
    if plant_marker {
        let pos = match delimiter {
            Some(d) => rng.gen_range(0..d),
            None => {
                let outside: Vec<usize> = (0..len)
                    .filter(|&i| i < start || i >= start + spec.span)
                    .collect();
                *outside.choose(rng).unwrap()
            }
        };
        tokens[pos] = ids.marker;
    }

    let mut gold = vec![0u8; len];
    gold[start..start + spec.span].iter_mut().for_each(|g| *g = 1);
    Example {
        tokens,
        label,
        gold_mask: Some(gold),
    }
}

/// Train, dev and annotation corpora from one spec. Dev and annotation use
/// seeds derived from `spec.seed`.
#[derive(Clone, Debug)]
pub struct SynthSplits {
    pub train: Corpus,
    pub dev: Corpus,
    pub annotation: Corpus,
}

pub fn make_synthetic_splits(spec: &SynthSpec, dev_count: usize, annotation_count: usize) -> Result<SynthSplits> {
    let derive = |k: u64, count: usize| SynthSpec {
        count,
        seed: spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k),
        ..spec.clone()
    };
    Ok(SynthSplits {
        train: make_synthetic_split(spec, Split::Train)?,
        dev: make_synthetic_split(&derive(1, dev_count), Split::Dev)?,
        annotation: make_synthetic_split(&derive(2, annotation_count), Split::Annotation)?,
    })
}

/// Random word vectors for a synthetic vocabulary.
pub fn synthetic_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> EmbeddingTable {
    EmbeddingTable::random(vocab.len(), dim, 1.0, seed ^ 0x5eed_e3b0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            count: 100,
            seed,
            spurious_marker: true,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn balanced_labels() {
        let c = make_synthetic(&small(3)).unwrap();
        assert_eq!(c.label_counts(), [50, 50]);
    }

    #[test]
    fn gold_mask_sum_is_span_length() {
        let spec = small(4);
        let c = make_synthetic(&spec).unwrap();
        for e in &c.examples {
            let ones: usize = e.gold_mask.as_ref().unwrap().iter().map(|&m| m as usize).sum();
            assert_eq!(ones, spec.span);
        }
        assert!((c.gold_sparsity().unwrap() - spec.gold_sparsity()).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = make_synthetic(&small(7)).unwrap();
        let b = make_synthetic(&small(7)).unwrap();
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        a.write_to(&mut wa).unwrap();
        b.write_to(&mut wb).unwrap();
        assert_eq!(wa, wb);
        let c = make_synthetic(&small(8)).unwrap();
        assert_ne!(a.examples, c.examples);
    }

    #[test]
    fn label_follows_span_polarity() {
        let spec = SynthSpec {
            polarity: 0.75,
            ..small(5)
        };
        let c = make_synthetic(&spec).unwrap();
        for e in &c.examples {
            let gold = e.gold_mask.as_ref().unwrap();
            let pos = e
                .tokens
                .iter()
                .zip(gold)
                .filter(|(_, &g)| g == 1)
                .filter(|(&t, _)| c.vocab.token(t).unwrap().starts_with("pos"))
                .count();
            assert_eq!(e.label == 1, 2 * pos > spec.span);
        }
    }

    #[test]
    fn marker_only_in_class_zero_first_sentence() {
        let spec = SynthSpec {
            marker_rate: 1.0,
            ..small(6)
        };
        let c = make_synthetic(&spec).unwrap();
        let marker = c.vocab.id(MARKER).unwrap();
        let delim = c.vocab.id(DELIMITER).unwrap();
        for e in &c.examples {
            let m = e.tokens.iter().position(|&t| t == marker);
            if e.label == 1 {
                assert!(m.is_none());
            } else {
                let d = e.tokens.iter().position(|&t| t == delim).unwrap();
                assert!(m.unwrap() < d);
            }
        }
    }

    #[test]
    fn span_not_shorter_than_length() {
        let spec = SynthSpec {
            span: 40,
            ..small(1)
        };
        assert!(matches!(make_synthetic(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn tight_lengths_still_generate() {
        let spec = SynthSpec {
            length: 3,
            span: 2,
            count: 10,
            spurious_marker: true,
            marker_rate: 1.0,
            ..SynthSpec::default()
        };
        let c = make_synthetic(&spec).unwrap();
        assert_eq!(c.len(), 10);
    }
}

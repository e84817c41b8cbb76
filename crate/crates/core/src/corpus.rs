//! Tokenized examples, vocabularies and the line-delimited corpus format.
//!
//! One JSON object per line:
//!
//! ```text
//! {"text": ["good", "beer", "."], "label": 1, "rationale": [[0, 2]]}
//! ```
//!
//! `rationale` spans are token indices, end exclusive. The vocabulary is
//! built from the training split in first-seen order; other splits are read
//! against that frozen vocabulary and unseen tokens map to [`UNK_ID`].

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Self {
            tokens,
            index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only the reserved pad and unknown entries.
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    /// Returns the id of `token`, adding it when absent.
    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// FNV-1a over the ordered token list; stored in checkpoints so a model
    /// is never paired with a differently indexed corpus.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(0xff)) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Annotation,
}

impl Split {
    pub fn file_stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Annotation => "annotation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub label: usize,
    pub gold_mask: Option<Vec<u8>>,
}

impl Example {
    pub fn new(tokens: Vec<u32>, label: usize, gold_mask: Option<Vec<u8>>) -> Result<Self> {
        let ex = Self {
            tokens,
            label,
            gold_mask,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation("example has no tokens".into()));
        }
        if self.label > 1 {
            return Err(Error::Validation(format!(
                "label {} outside {{0, 1}}",
                self.label
            )));
        }
        if let Some(mask) = &self.gold_mask {
            if mask.len() != self.tokens.len() {
                return Err(Error::Validation(format!(
                    "gold mask has {} entries for {} tokens",
                    mask.len(),
                    self.tokens.len()
                )));
            }
            if mask.iter().any(|&m| m > 1) {
                return Err(Error::Validation("gold mask entries must be 0 or 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub vocab: Arc<Vocabulary>,
    pub split: Split,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.split == other.split && self.examples == other.examples && *self.vocab == *other.vocab
    }
}

impl Corpus {
    pub fn new(examples: Vec<Example>, vocab: Arc<Vocabulary>, split: Split) -> Result<Self> {
        let corpus = Self {
            examples,
            vocab,
            split,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn has_gold(&self) -> bool {
        !self.examples.is_empty() && self.examples.iter().all(|e| e.gold_mask.is_some())
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Mean fraction of tokens inside the gold rationale.
    pub fn gold_sparsity(&self) -> Option<f64> {
        if !self.has_gold() {
            return None;
        }
        let total: f64 = self
            .examples
            .iter()
            .map(|e| {
                let m = e.gold_mask.as_ref().unwrap();
                m.iter().map(|&v| f64::from(v)).sum::<f64>() / m.len() as f64
            })
            .sum();
        Some(total / self.examples.len() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let vocab_len = self.vocab.len() as u32;
        for (i, e) in self.examples.iter().enumerate() {
            e.validate()
                .map_err(|err| Error::Validation(format!("example {i}: {err}")))?;
            if let Some(&bad) = e.tokens.iter().find(|&&t| t >= vocab_len) {
                return Err(Error::Validation(format!(
                    "example {i}: token id {bad} outside vocabulary of {vocab_len}"
                )));
            }
            if self.split == Split::Annotation && e.gold_mask.is_none() {
                return Err(Error::Validation(format!(
                    "annotation example {i} has no rationale"
                )));
            }
        }
        Ok(())
    }

    /// Writes the canonical line-delimited form.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.examples {
            let record = Record {
                text: e
                    .tokens
                    .iter()
                    .map(|&t| self.vocab.token(t).unwrap_or(UNK_TOKEN).to_owned())
                    .collect(),
                label: e.label as u64,
                rationale: e.gold_mask.as_ref().map(|m| mask_to_spans(m)),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")
                .map_err(|err| Error::io("<corpus writer>", err))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    text: Vec<String>,
    label: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale: Option<Vec<[usize; 2]>>,
}

/// Collapses a binary mask into maximal `[start, end)` runs of ones.
pub fn mask_to_spans(mask: &[u8]) -> Vec<[usize; 2]> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push([s, i]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push([s, mask.len()]);
    }
    spans
}

pub fn spans_to_mask(spans: &[[usize; 2]], len: usize) -> Result<Vec<u8>> {
    let mut mask = vec![0u8; len];
    for &[start, end] in spans {
        if start >= end || end > len {
            return Err(Error::Validation(format!(
                "span [{start},{end}) out of range for {len} tokens"
            )));
        }
        mask[start..end].iter_mut().for_each(|m| *m = 1);
    }
    Ok(mask)
}

/// How a loader maps token strings to ids.
pub enum VocabSource<'a> {
    /// Build a fresh vocabulary from this file.
    Build,
    /// Continue an existing vocabulary, appending unseen tokens.
    Extend(&'a mut Vocabulary),
    /// Read-only; unseen tokens become [`UNK_ID`].
    Frozen(Arc<Vocabulary>),
}

/// Loads a corpus, building its vocabulary from the file itself.
pub fn load_corpus(path: &Path, split: Split) -> Result<Corpus> {
    load_corpus_with(path, split, VocabSource::Build)
}

pub fn load_corpus_with(path: &Path, split: Split, source: VocabSource<'_>) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), split, source)
}

pub fn read_corpus<R: BufRead>(reader: R, split: Split, source: VocabSource<'_>) -> Result<Corpus> {
    let mut owned;
    let (vocab_mut, frozen): (Option<&mut Vocabulary>, Option<Arc<Vocabulary>>) = match source {
        VocabSource::Build => {
            owned = Vocabulary::new();
            (Some(&mut owned), None)
        }
        VocabSource::Extend(v) => (Some(v), None),
        VocabSource::Frozen(v) => (None, Some(v)),
    };
    let mut vocab_mut = vocab_mut;

    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if record.text.is_empty() {
            return Err(Error::Validation(format!("line {lineno}: empty text")));
        }
        if record.label > 1 {
            return Err(Error::Validation(format!(
                "line {lineno}: label {} outside {{0, 1}}",
                record.label
            )));
        }
        let tokens: Vec<u32> = match (&mut vocab_mut, &frozen) {
            (Some(v), _) => record.text.iter().map(|t| v.insert(t)).collect(),
            (None, Some(v)) => record.text.iter().map(|t| v.id_or_unk(t)).collect(),
            (None, None) => unreachable!(),
        };
        let gold_mask = match &record.rationale {
            Some(spans) => Some(
                spans_to_mask(spans, tokens.len())
                    .map_err(|e| Error::Validation(format!("line {lineno}: {e}")))?,
            ),
            None if split == Split::Annotation => {
                return Err(Error::Validation(format!(
                    "line {lineno}: annotation record without rationale"
                )))
            }
            None => None,
        };
        examples.push(Example {
            tokens,
            label: record.label as usize,
            gold_mask,
        });
    }

    let vocab = match (vocab_mut, frozen) {
        (Some(v), _) => Arc::new(v.clone()),
        (None, Some(v)) => v,
        (None, None) => unreachable!(),
    };
    Corpus::new(examples, vocab, split)
}

/// A padded mini-batch. Rows are ordered as the examples were drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Corpus indices of the rows.
    pub indices: Vec<usize>,
    /// `batch × max_len`, padded with [`PAD_ID`].
    pub tokens: Vec<Vec<u32>>,
    /// 1 for real tokens, 0 for padding; always a prefix of ones.
    pub validity: Vec<Vec<u8>>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
    /// Present when every row carries a gold mask; padded with 0.
    pub gold: Option<Vec<Vec<u8>>>,
}

impl Batch {
    pub fn from_examples(corpus: &Corpus, indices: &[usize]) -> Self {
        let max_len = indices
            .iter()
            .map(|&i| corpus.examples[i].len())
            .max()
            .unwrap_or(0);
        let mut tokens = Vec::with_capacity(indices.len());
        let mut validity = Vec::with_capacity(indices.len());
        let mut lengths = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut gold = Vec::with_capacity(indices.len());
        let mut all_gold = true;
        for &i in indices {
            let e = &corpus.examples[i];
            let mut row = e.tokens.clone();
            row.resize(max_len, PAD_ID);
            tokens.push(row);
            let mut valid = vec![1u8; e.len()];
            valid.resize(max_len, 0);
            validity.push(valid);
            lengths.push(e.len());
            labels.push(e.label);
            match &e.gold_mask {
                Some(m) => {
                    let mut g = m.clone();
                    g.resize(max_len, 0);
                    gold.push(g);
                }
                None => all_gold = false,
            }
        }
        Self {
            indices: indices.to_vec(),
            tokens,
            validity,
            lengths,
            labels,
            gold: all_gold.then_some(gold),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }

    /// Unpadded token ids of row `r`.
    pub fn row_tokens(&self, r: usize) -> &[u32] {
        &self.tokens[r][..self.lengths[r]]
    }
}

/// Splits a corpus into padded batches. `batch_size` of zero is treated as one.
pub fn batchify(corpus: &Corpus, batch_size: usize, shuffle: bool, seed: u64) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    order
        .chunks(batch_size.max(1))
        .map(|chunk| Batch::from_examples(corpus, chunk))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str, split: Split) -> Result<Corpus> {
        read_corpus(Cursor::new(text), split, VocabSource::Build)
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let c = read("", Split::Train).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.vocab.len(), 2);
    }

    #[test]
    fn spans_become_gold_masks() {
        let c = read(
            r#"{"text":["good","beer","."],"label":1,"rationale":[[0,2]]}"#,
            Split::Annotation,
        )
        .unwrap();
        assert_eq!(c.examples[0].gold_mask, Some(vec![1, 1, 0]));
        assert_eq!(c.examples[0].label, 1);
        assert_eq!(c.vocab.token(c.examples[0].tokens[1]), Some("beer"));
    }

    #[test]
    fn span_past_end_is_validation_error() {
        let err = read(
            r#"{"text":["a","b","c"],"label":0,"rationale":[[2,5]]}"#,
            Split::Train,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_record_names_its_line() {
        let text = "{\"text\":[\"a\"],\"label\":0}\n{\"text\": oops}\n";
        match read(text, Split::Train).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn annotation_split_requires_rationales() {
        let err = read(r#"{"text":["a"],"label":0}"#, Split::Annotation).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn frozen_vocab_maps_unseen_tokens_to_unk() {
        let train = read(r#"{"text":["a","b"],"label":0}"#, Split::Train).unwrap();
        let dev = read_corpus(
            Cursor::new(r#"{"text":["b","zzz"],"label":1}"#),
            Split::Dev,
            VocabSource::Frozen(train.vocab.clone()),
        )
        .unwrap();
        assert_eq!(dev.examples[0].tokens, vec![train.vocab.id("b").unwrap(), UNK_ID]);
        assert_eq!(dev.vocab.len(), train.vocab.len());
    }

    #[test]
    fn vocabulary_is_first_seen_order() {
        let c = read(
            "{\"text\":[\"z\",\"y\",\"z\"],\"label\":0}\n{\"text\":[\"x\"],\"label\":1}",
            Split::Train,
        )
        .unwrap();
        assert_eq!(&c.vocab.tokens()[2..], &["z", "y", "x"]);
    }

    #[test]
    fn batch_padding_and_validity() {
        let c = read(
            "{\"text\":[\"a\",\"b\",\"c\"],\"label\":0}\n{\"text\":[\"a\",\"b\",\"c\",\"d\",\"e\"],\"label\":1}",
            Split::Train,
        )
        .unwrap();
        let batches = batchify(&c, 8, false, 0);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].validity[0], vec![1, 1, 1, 0, 0]);
        assert_eq!(batches[0].tokens[0][3], PAD_ID);
        assert!(batches[0].gold.is_none());
    }

    #[test]
    fn empty_corpus_has_no_batches() {
        let c = read("", Split::Train).unwrap();
        assert!(batchify(&c, 4, true, 1).is_empty());
    }

    #[test]
    fn mask_span_round_trip() {
        let mask = vec![1, 1, 0, 0, 1, 0, 1];
        let spans = mask_to_spans(&mask);
        assert_eq!(spans, vec![[0, 2], [4, 5], [6, 7]]);
        assert_eq!(spans_to_mask(&spans, 7).unwrap(), mask);
    }
}

//! Word-vector tables in the plain `token v1 … vd` text format.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One row per vocabulary id. The pad row is all zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub rows: Tensor,
}

impl EmbeddingTable {
    pub fn zeros(vocab_len: usize, dim: usize) -> Self {
        Self {
            rows: Tensor::zeros(vocab_len, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.cols
    }

    pub fn vocab_len(&self) -> usize {
        self.rows.rows
    }

    pub fn row(&self, id: u32) -> &[f64] {
        self.rows.row(id as usize)
    }

    /// Gaussian rows (σ = `scale`) with the pad and unknown rows zeroed. Used
    /// for synthetic corpora and for models trained without pretrained vectors.
    pub fn random(vocab_len: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Tensor::zeros(vocab_len, dim);
        for r in 0..vocab_len {
            if r as u32 == PAD_ID {
                continue;
            }
            for v in rows.row_mut(r) {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if (UNK_ID as usize) < vocab_len {
            rows.row_mut(UNK_ID as usize).fill(0.0);
        }
        Self { rows }
    }

    pub fn save(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, token) in vocab.tokens().iter().enumerate() {
            out.push_str(token);
            for v in self.rows.row(id) {
                out.push(' ');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads vectors for every token in `vocab`. Tokens missing from the file get
/// the zero vector; lines for tokens outside the vocabulary are ignored but
/// still checked for a consistent dimension.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), vocab)
}

pub fn read_embeddings<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let mut dim: Option<usize> = None;
    let mut found: Vec<(u32, Vec<f64>)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Format(format!("line {lineno}: {e}")))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {lineno}: bad number {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::Format(format!("line {lineno}: no vector components")));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Format(format!(
                    "line {lineno}: {} components, expected {d}",
                    values.len()
                )))
            }
            _ => {}
        }
        if let Some(id) = vocab.id(token) {
            if id != PAD_ID {
                found.push((id, values));
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::Format("no vectors in file".into()))?;
    let mut table = EmbeddingTable::zeros(vocab.len(), dim);
    for (id, values) in found {
        table.rows.row_mut(id as usize).copy_from_slice(&values);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn reads_rows_by_vocab_id() {
        let vocab = Vocabulary::from_tokens(["ok"]);
        let t = read_embeddings(Cursor::new("ok 0.1 0.2\n"), &vocab).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.row(vocab.id("ok").unwrap()), &[0.1, 0.2]);
        assert_eq!(t.row(PAD_ID), &[0.0, 0.0]);
    }

    #[test]
    fn missing_tokens_are_zero() {
        let vocab = Vocabulary::from_tokens(["ok", "absent"]);
        let t = read_embeddings(Cursor::new("ok 1 2 3\nother 4 5 6\n"), &vocab).unwrap();
        assert_eq!(t.row(vocab.id("absent").unwrap()), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mixed_lengths_are_rejected() {
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        let err = read_embeddings(Cursor::new("a 1 2\nb 1 2 3\n"), &vocab).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn random_table_has_zero_pad_row() {
        let t = EmbeddingTable::random(5, 4, 1.0, 9);
        assert!(t.row(PAD_ID).iter().all(|&v| v == 0.0));
        assert!(t.row(3).iter().any(|&v| v != 0.0));
    }
}

//! Self-describing JSON container for trained players.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::encoder::ModelParams;
use crate::error::{Error, Result};

pub const FORMAT: &str = "rationale-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Hash of the vocabulary the players were trained against.
    pub vocab_hash: u64,
    pub vocab_len: usize,
    pub step: u64,
    pub epoch: usize,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, vocab: &Vocabulary, step: u64, epoch: usize) -> Self {
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            vocab_hash: vocab.content_hash(),
            vocab_len: vocab.len(),
            step,
            epoch,
            params,
        }
    }

    /// Errors unless the checkpoint was written against `vocab`.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if self.vocab_hash != vocab.content_hash() || self.vocab_len != vocab.len() {
            return Err(Error::Version(format!(
                "checkpoint vocabulary ({} tokens, hash {:016x}) differs from corpus \
                 vocabulary ({} tokens, hash {:016x})",
                self.vocab_len,
                self.vocab_hash,
                vocab.len(),
                vocab.content_hash()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))?;
        match (value.get("format").and_then(|v| v.as_str()), value.get("version").and_then(|v| v.as_u64())) {
            (Some(FORMAT), Some(v)) if v == u64::from(FORMAT_VERSION) => {}
            (Some(FORMAT), Some(v)) => {
                return Err(Error::Version(format!(
                    "checkpoint format version {v}, expected {FORMAT_VERSION}"
                )))
            }
            _ => return Err(Error::Version(format!("{} is not a checkpoint", path.display()))),
        }
        Ok(serde_json::from_value(value)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderKind};

    fn params() -> ModelParams {
        let cfg = EncoderConfig {
            kind: EncoderKind::MeanPool,
            hidden: 3,
            embedding_dim: 2,
            dropout: 0.1,
        };
        ModelParams::new(&cfg, &cfg, true, 4).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        let c = Checkpoint::new(params(), &vocab, 12, 3);
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, c);
        back.check_vocab(&vocab).unwrap();
    }

    #[test]
    fn vocab_mismatch_is_version_error() {
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        let c = Checkpoint::new(params(), &vocab, 0, 0);
        let other = Vocabulary::from_tokens(["a", "c"]);
        assert!(matches!(c.check_vocab(&other), Err(Error::Version(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let vocab = Vocabulary::new();
        let mut c = Checkpoint::new(params(), &vocab, 0, 0);
        c.version = 99;
        c.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Version(_))));
        std::fs::write(&path, "{\"hello\": 1}").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Version(_))));
    }
}

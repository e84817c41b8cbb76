//! Input loading and output writing shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use rationale_core::coach::HistoryRow;
use rationale_core::corpus::{load_corpus, load_corpus_with, Corpus, Split, VocabSource};
use rationale_core::embedding::{load_embeddings, EmbeddingTable};
use rationale_core::experiment::DataBundle;

use crate::settings::Settings;
use crate::Failure;

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

pub fn corpus_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.file_stem()))
}

/// A loaded data directory plus the files that went into it.
pub struct Inputs {
    pub data: DataBundle,
    pub files: Vec<PathBuf>,
}

/// Loads train, dev and (when present) annotation from `settings.data_dir`.
/// The vocabulary comes from train alone; other splits map unseen tokens to
/// the unknown id, whose vector is zero. Without an embeddings file the
/// vectors are seeded Gaussians of `embedding_dim`.
pub fn load_inputs(settings: &Settings) -> Result<Inputs, Failure> {
    let dir = &settings.data_dir;
    let train_path = corpus_path(dir, Split::Train);
    let dev_path = corpus_path(dir, Split::Dev);
    for p in [&train_path, &dev_path] {
        if !p.is_file() {
            return Err(Failure::Config(format!("missing corpus file {}", p.display())));
        }
    }
    let mut files = vec![train_path.clone(), dev_path.clone()];
    let train = load_corpus(&train_path, Split::Train)?;
    let vocab = train.vocab.clone();
    let dev = load_corpus_with(&dev_path, Split::Dev, VocabSource::Frozen(vocab.clone()))?;
    let ann_path = corpus_path(dir, Split::Annotation);
    let annotation = if ann_path.is_file() {
        files.push(ann_path.clone());
        Some(load_corpus_with(&ann_path, Split::Annotation, VocabSource::Frozen(vocab.clone()))?)
    } else {
        None
    };

    let emb_path = dir.join(EMBEDDINGS_FILE);
    let embeddings = if emb_path.is_file() {
        files.push(emb_path.clone());
        let table = load_embeddings(&emb_path, &vocab)?;
        if table.dim() != settings.embedding_dim {
            return Err(Failure::Config(format!(
                "embedding_dim is {} but {} has {}-dimensional vectors",
                settings.embedding_dim,
                emb_path.display(),
                table.dim()
            )));
        }
        table
    } else {
        EmbeddingTable::random(vocab.len(), settings.embedding_dim, 1.0, settings.seed)
    };
    Ok(Inputs {
        data: DataBundle {
            train,
            dev,
            annotation,
            embeddings,
        },
        files,
    })
}

pub fn pick_split(data: &DataBundle, split: Split) -> Result<&Corpus, Failure> {
    match split {
        Split::Train => Ok(&data.train),
        Split::Dev => Ok(&data.dev),
        Split::Annotation => data
            .annotation
            .as_ref()
            .ok_or_else(|| Failure::Config("no annotation.jsonl in the data directory".into())),
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a Settings,
    seed: u64,
    out_dir: &'a Path,
    deterministic: bool,
    inputs: Vec<String>,
    /// SHA-256 over the resolved config and the bytes of every input file.
    input_hash: String,
}

/// Creates the output directory and writes `manifest.json` before anything
/// else lands there.
pub fn begin_run(command: &str, settings: &Settings, inputs: &[PathBuf]) -> Result<PathBuf, Failure> {
    let out = settings.out.clone();
    fs::create_dir_all(&out).map_err(|e| Failure::io(&out, e))?;
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(settings).map_err(|e| Failure::Other(e.to_string()))?);
    for path in inputs {
        hasher.update(path.display().to_string().as_bytes());
        hasher.update(fs::read(path).map_err(|e| Failure::io(path, e))?);
    }
    let input_hash = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let manifest = RunManifest {
        command,
        config: settings,
        seed: settings.seed,
        out_dir: &out,
        deterministic: settings.deterministic,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        input_hash,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Other(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

pub fn write_history(path: &Path, history: &[HistoryRow]) -> Result<(), Failure> {
    write_csv(path, history)
}

//! Task accuracy and token-level rationale overlap.

use serde::{Deserialize, Serialize};

use crate::binarizer::{sample_mask, MaskMode};
use crate::corpus::{batchify, Batch, Corpus};
use crate::embedding::EmbeddingTable;
use crate::encoder::{generator_logits, predict, ModelParams};
use crate::error::{Error, Result};
use crate::objective::{sparsity_coherence, task_loss, RegConfig};

const EVAL_BATCH: usize = 256;

/// Token overlap counts between a predicted and a gold mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    /// Zero when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn add(&mut self, other: Prf) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn token_prf(pred: &[u8], gold: &[u8]) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::Domain(format!(
            "mask lengths differ: predicted {} vs gold {}",
            pred.len(),
            gold.len()
        )));
    }
    let mut out = Prf::default();
    for (&p, &g) in pred.iter().zip(gold) {
        match (p != 0, g != 0) {
            (true, true) => out.tp += 1,
            (true, false) => out.fp += 1,
            (false, true) => out.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(out)
}

/// Column names follow the usual rationalization tables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "Acc")]
    pub acc: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
}

/// Everything one deterministic pass over a corpus yields.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub acc: f64,
    /// Mean cross-entropy plus mean Ω on hard masks.
    pub loss: f64,
    /// Mean per-example selected fraction.
    pub sparsity: f64,
    /// Summed over the corpus; present when every example has a gold mask.
    pub prf: Option<Prf>,
    /// Hard masks over real tokens, in corpus order.
    pub masks: Vec<Vec<u8>>,
    /// Positive-class probability per example.
    pub positive: Vec<f64>,
}

/// Noise-free hard masks for one batch, unpadded.
pub fn batch_rationales(
    params: &ModelParams,
    batch: &Batch,
    embeddings: &EmbeddingTable,
) -> Result<Vec<Vec<f64>>> {
    let logits = generator_logits(params, batch, embeddings)?;
    logits
        .iter()
        .zip(&batch.lengths)
        .map(|(row, &len)| {
            let mut h = sample_mask(row, len, 1.0, None)?.value(MaskMode::Hard).to_vec();
            h.truncate(len);
            Ok(h)
        })
        .collect()
}

/// Runs generator and predictor without noise or dropout over `corpus`.
pub fn evaluate(
    params: &ModelParams,
    corpus: &Corpus,
    embeddings: &EmbeddingTable,
    reg: &RegConfig,
) -> Result<Evaluation> {
    let n = corpus.len();
    let mut masks = vec![Vec::new(); n];
    let mut positive = vec![0.0; n];
    let (mut correct, mut loss, mut sparsity) = (0usize, 0.0, 0.0);
    let mut prf = corpus.has_gold().then(Prf::default);
    for batch in batchify(corpus, EVAL_BATCH, false, 0) {
        let rows = batch_rationales(params, &batch, embeddings)?;
        let probs = predict(params, &batch, embeddings, &rows)?;
        for (r, (m, p)) in rows.iter().zip(&probs).enumerate() {
            let label = batch.labels[r];
            let predicted = usize::from(p[1] >= p[0]);
            correct += usize::from(predicted == label);
            loss += task_loss(*p, label) + sparsity_coherence(m, reg);
            sparsity += m.iter().sum::<f64>() / m.len() as f64;
            let hard: Vec<u8> = m.iter().map(|&v| v as u8).collect();
            if let (Some(acc), Some(gold)) = (prf.as_mut(), &batch.gold) {
                acc.add(token_prf(&hard, &gold[r][..hard.len()])?);
            }
            let idx = batch.indices[r];
            masks[idx] = hard;
            positive[idx] = p[1];
        }
    }
    let denom = n.max(1) as f64;
    Ok(Evaluation {
        acc: correct as f64 / denom,
        loss: loss / denom,
        sparsity: sparsity / denom,
        prf,
        masks,
        positive,
    })
}

/// S, Acc and micro-averaged P/R/F1 on an annotated corpus.
pub fn corpus_metrics(
    params: &ModelParams,
    corpus: &Corpus,
    embeddings: &EmbeddingTable,
) -> Result<MetricsReport> {
    if corpus.is_empty() {
        return Err(Error::Domain("annotation corpus is empty".into()));
    }
    if !corpus.has_gold() {
        return Err(Error::Domain(
            "every annotation example needs a gold mask".into(),
        ));
    }
    let eval = evaluate(params, corpus, embeddings, &RegConfig::default())?;
    Ok(report_from(&eval))
}

pub fn report_from(eval: &Evaluation) -> MetricsReport {
    let prf = eval.prf.unwrap_or_default();
    MetricsReport {
        s: eval.sparsity,
        acc: eval.acc,
        p: prf.precision(),
        r: prf.recall(),
        f1: prf.f1(),
    }
}

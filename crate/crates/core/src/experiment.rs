//! Study recipes shared by the command line and the acceptance suite:
//! train-then-evaluate, the lambda × rate grid, and skewed-start comparisons.

use serde::{Deserialize, Serialize};

use crate::coach::{
    skew_pretrain_generator, skew_pretrain_predictor, train_from, LambdaMode, SkewConfig,
    TrainConfig, TrainState,
};
use crate::corpus::Corpus;
use crate::embedding::EmbeddingTable;
use crate::encoder::ModelParams;
use crate::error::Result;
use crate::probe::{estimate_lipschitz, ProbeReport};
use crate::scorer::{corpus_metrics, MetricsReport};
use crate::synth::{make_synthetic_splits, synthetic_embeddings, SynthSpec, DELIMITER};

/// Everything a run reads.
#[derive(Clone, Debug)]
pub struct DataBundle {
    pub train: Corpus,
    pub dev: Corpus,
    pub annotation: Option<Corpus>,
    pub embeddings: EmbeddingTable,
}

impl DataBundle {
    pub fn synthetic(spec: &SynthSpec, dev: usize, annotation: usize, dim: usize) -> Result<Self> {
        let splits = make_synthetic_splits(spec, dev, annotation)?;
        let embeddings = synthetic_embeddings(&splits.train.vocab, dim, spec.seed);
        Ok(Self {
            train: splits.train,
            dev: splits.dev,
            annotation: Some(splits.annotation),
            embeddings,
        })
    }

    /// Skew settings with this corpus's sentence delimiter filled in.
    pub fn skew_config(&self, seed: u64) -> SkewConfig {
        SkewConfig {
            seed,
            delimiter: self.train.vocab.id(DELIMITER),
            ..SkewConfig::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub state: TrainState,
    /// Annotation-split metrics of the best checkpoint.
    pub metrics: Option<MetricsReport>,
}

impl RunResult {
    pub fn best(&self) -> &ModelParams {
        &self.state.best.params
    }

    pub fn lipschitz(&self, data: &DataBundle) -> Result<ProbeReport> {
        estimate_lipschitz(self.best(), &data.train, &data.embeddings)
    }
}

pub fn train_and_evaluate_from(
    config: &TrainConfig,
    params: ModelParams,
    data: &DataBundle,
) -> Result<RunResult> {
    let state = train_from(config, params, &data.train, &data.dev, &data.embeddings)?;
    let metrics = match &data.annotation {
        Some(a) => Some(corpus_metrics(&state.best.params, a, &data.embeddings)?),
        None => None,
    };
    Ok(RunResult { state, metrics })
}

pub fn train_and_evaluate(config: &TrainConfig, data: &DataBundle) -> Result<RunResult> {
    let params = config.init_params(&data.embeddings)?;
    train_and_evaluate_from(config, params, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambdas: Vec<f64>,
    pub rates: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0 / 15.0, 0.1, 0.2, 1.0, 5.0],
            rates: vec![1e-4, 3e-4, 5e-4, 7e-4, 1e-3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda: f64,
    pub alpha_g: f64,
    pub f1: Option<f64>,
    pub acc: Option<f64>,
    pub error: Option<String>,
}

/// One train+evaluate per (lambda, rate) cell with fixed lambda and the
/// base config's seed. A failing cell is recorded and the grid continues.
pub fn run_grid(base: &TrainConfig, grid: &GridSpec, data: &DataBundle) -> Vec<GridCell> {
    let mut cells = Vec::with_capacity(grid.lambdas.len() * grid.rates.len());
    for &lambda in &grid.lambdas {
        for &alpha_g in &grid.rates {
            let config = TrainConfig {
                lambda_mode: LambdaMode::Fixed(lambda),
                alpha_g,
                ..base.clone()
            };
            let cell = match train_and_evaluate(&config, data) {
                Ok(run) => GridCell {
                    lambda,
                    alpha_g,
                    f1: run.metrics.map(|m| m.f1),
                    acc: run.metrics.map(|m| m.acc),
                    error: None,
                },
                Err(e) => GridCell {
                    lambda,
                    alpha_g,
                    f1: None,
                    acc: None,
                    error: Some(e.to_string()),
                },
            };
            cells.push(cell);
        }
    }
    cells
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "level")]
pub enum SkewMode {
    /// First-sentence predictor pretraining for `k` epochs.
    Predictor(usize),
    /// First-token generator pretraining up to an accuracy threshold.
    Generator(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewArm {
    pub method: String,
    pub metrics: Option<MetricsReport>,
    pub best_epoch: usize,
    pub lipschitz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewComparison {
    pub mode: SkewMode,
    /// Proxy accuracy reached by the skew pretraining.
    pub pre_acc: f64,
    pub dr: SkewArm,
    pub baseline: SkewArm,
}

/// Skews one initialization, then trains adaptive-lambda and fixed-1 runs
/// from that same start with otherwise identical settings.
pub fn run_skew(base: &TrainConfig, mode: SkewMode, data: &DataBundle) -> Result<SkewComparison> {
    let mut params = base.init_params(&data.embeddings)?;
    let skew = data.skew_config(base.seed);
    let pre_acc = match mode {
        SkewMode::Predictor(k) => {
            skew_pretrain_predictor(&mut params, &data.train, &data.embeddings, k, &skew)?
        }
        SkewMode::Generator(t) => {
            skew_pretrain_generator(&mut params, &data.train, &data.embeddings, t, &skew)?
        }
    };
    let arm = |name: &str, lambda_mode: LambdaMode| -> Result<SkewArm> {
        let config = TrainConfig {
            lambda_mode,
            ..base.clone()
        };
        let run = train_and_evaluate_from(&config, params.clone(), data)?;
        Ok(SkewArm {
            method: name.into(),
            metrics: run.metrics,
            best_epoch: run.state.best.epoch,
            lipschitz: run.lipschitz(data)?.estimate,
        })
    };
    Ok(SkewComparison {
        mode,
        pre_acc,
        dr: arm("DR", LambdaMode::Adaptive)?,
        baseline: arm("RNP", LambdaMode::Fixed(1.0))?,
    })
}

//! Flat key-value run configuration. A TOML file supplies the base values
//! and command-line overrides replace individual keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rationale_core::binarizer::MaskMode;
use rationale_core::coach::{LambdaMode, OptimizerLayout, TrainConfig};
use rationale_core::encoder::{EncoderConfig, EncoderKind};
use rationale_core::experiment::GridSpec;
use rationale_core::objective::RegConfig;
use rationale_core::synth::SynthSpec;

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub deterministic: bool,

    pub alpha_g: f64,
    pub lambda_mode: String,
    pub lambda: f64,
    pub optimizer: OptimizerLayout,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub temperature: f64,
    pub noise: bool,
    pub mask_mode: MaskMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sparsity: f64,
    pub fine_tune_embeddings: bool,
    pub spectral_norm: bool,
    pub spectral_iterations: usize,
    pub probe_lipschitz: bool,

    pub generator_encoder: String,
    pub predictor_encoder: String,
    pub hidden: usize,
    pub dropout: f64,
    pub embedding_dim: usize,

    pub count: usize,
    pub length: usize,
    pub span: usize,
    pub polarity: f64,
    pub spurious_marker: bool,
    pub marker_rate: f64,
    pub signal_words: usize,
    pub filler_words: usize,
    pub dev_count: usize,
    pub annotation_count: usize,

    pub grid_lambdas: Vec<f64>,
    pub grid_rates: Vec<f64>,

    pub audit_pairs: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let train = TrainConfig::default();
        let enc = EncoderConfig::default();
        let synth = SynthSpec::default();
        let grid = GridSpec::default();
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            out: PathBuf::from("runs/latest"),
            deterministic: false,
            alpha_g: train.alpha_g,
            lambda_mode: "adaptive".into(),
            lambda: 1.0,
            optimizer: train.optimizer,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            temperature: train.temperature,
            noise: train.noise,
            mask_mode: train.mask_mode,
            lambda1: train.reg.lambda1,
            lambda2: train.reg.lambda2,
            sparsity: train.reg.sparsity,
            fine_tune_embeddings: train.fine_tune_embeddings,
            spectral_norm: train.spectral_norm,
            spectral_iterations: train.spectral_iterations,
            probe_lipschitz: train.probe_lipschitz,
            generator_encoder: "bi-gru".into(),
            predictor_encoder: "bi-gru".into(),
            hidden: enc.hidden,
            dropout: enc.dropout,
            embedding_dim: enc.embedding_dim,
            count: synth.count,
            length: synth.length,
            span: synth.span,
            polarity: synth.polarity,
            spurious_marker: synth.spurious_marker,
            marker_rate: synth.marker_rate,
            signal_words: synth.signal_words,
            filler_words: synth.filler_words,
            dev_count: 500,
            annotation_count: 500,
            grid_lambdas: grid.lambdas,
            grid_rates: grid.rates,
            audit_pairs: rationale_core::probe::DEFAULT_AUDIT_PAIRS,
        }
    }
}

/// Reads `path` (if any), applies `overrides` in order, and validates keys.
pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Settings, Failure> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (key, raw) in overrides {
        table.insert(key.replace('-', "_"), parse_value(raw));
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Failure::Config(e.message().to_owned()))
}

/// Interprets an override as a TOML literal when it parses as one, and as a
/// bare string otherwise.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

impl Settings {
    pub fn lambda_mode(&self) -> Result<LambdaMode, Failure> {
        match self.lambda_mode.as_str() {
            "adaptive" => Ok(LambdaMode::Adaptive),
            "fixed" => Ok(LambdaMode::Fixed(self.lambda)),
            other => Err(Failure::Config(format!(
                "lambda_mode must be \"adaptive\" or \"fixed\", got {other:?}"
            ))),
        }
    }

    fn encoder(&self, kind: &str) -> Result<EncoderConfig, Failure> {
        Ok(EncoderConfig {
            kind: kind.parse::<EncoderKind>()?,
            hidden: self.hidden,
            embedding_dim: self.embedding_dim,
            dropout: self.dropout,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, Failure> {
        let config = TrainConfig {
            alpha_g: self.alpha_g,
            lambda_mode: self.lambda_mode()?,
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            temperature: self.temperature,
            noise: self.noise,
            mask_mode: self.mask_mode,
            reg: RegConfig {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                sparsity: self.sparsity,
            },
            fine_tune_embeddings: self.fine_tune_embeddings,
            spectral_norm: self.spectral_norm,
            spectral_iterations: self.spectral_iterations,
            generator: self.encoder(&self.generator_encoder)?,
            predictor: self.encoder(&self.predictor_encoder)?,
            probe_lipschitz: self.probe_lipschitz,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            count: self.count,
            length: self.length,
            span: self.span,
            polarity: self.polarity,
            spurious_marker: self.spurious_marker,
            marker_rate: self.marker_rate,
            signal_words: self.signal_words,
            filler_words: self.filler_words,
            seed: self.seed,
        }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            lambdas: self.grid_lambdas.clone(),
            rates: self.grid_rates.clone(),
        }
    }
}

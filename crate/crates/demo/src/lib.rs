//! Browser demo. Each operation has a plain Rust entry point returning a
//! serializable report, and a thin `wasm_bindgen` wrapper that hands the page
//! JSON.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use rationale_core::binarizer::{gumbel_sample, straight_through};
use rationale_core::coach::{skew_pretrain_predictor, HistoryRow, LambdaMode, TrainConfig};
use rationale_core::encoder::EncoderKind;
use rationale_core::experiment::{train_and_evaluate_from, DataBundle};
use rationale_core::objective::{sparsity_coherence, sparsity_coherence_grad, RegConfig};
use rationale_core::scorer::{evaluate, MetricsReport};
use rationale_core::synth::SynthSpec;
use rationale_core::tensor::sigmoid;

#[derive(Debug, Serialize)]
pub struct OmegaReport {
    pub selected: usize,
    pub ratio: f64,
    pub sparsity_term: f64,
    pub coherence_term: f64,
    pub omega: f64,
    /// Subgradient of Ω with respect to each mask entry.
    pub grad: Vec<f64>,
}

pub fn omega_report(mask: &[f64], reg: &RegConfig) -> OmegaReport {
    let n = mask.len().max(1) as f64;
    let selected = mask.iter().filter(|&&m| m != 0.0).count();
    let ratio = mask.iter().sum::<f64>() / n;
    let transitions: f64 = mask.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    OmegaReport {
        selected,
        ratio,
        sparsity_term: reg.lambda1 * (ratio - reg.sparsity).abs(),
        coherence_term: reg.lambda2 * transitions,
        omega: sparsity_coherence(mask, reg),
        grad: sparsity_coherence_grad(mask, reg),
    }
}

#[derive(Debug, Serialize)]
pub struct GumbelReport {
    /// Select probability without noise.
    pub clean_soft: f64,
    /// Noise-free straight-through value.
    pub clean_hard: f64,
    /// Fraction of noisy draws that round to "select".
    pub select_rate: f64,
    /// Softmax probability of "select" without a temperature.
    pub select_probability: f64,
    /// Ten equal-width bins of the noisy soft values on [0, 1].
    pub histogram: Vec<usize>,
    /// d soft / d select-logit at the noise-free point.
    pub clean_slope: f64,
    pub draws: Vec<(f64, f64)>,
}

pub fn gumbel_report(logits: [f64; 2], temperature: f64, samples: usize, seed: u64) -> Result<GumbelReport, String> {
    let clean = gumbel_sample(&[logits], temperature, None).map_err(|e| e.to_string())?[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let soft = gumbel_sample(&vec![logits; samples], temperature, Some(&mut rng)).map_err(|e| e.to_string())?;
    let hard = straight_through(&soft);
    let mut histogram = vec![0; 10];
    for &s in &soft {
        histogram[((s * 10.0) as usize).min(9)] += 1;
    }
    Ok(GumbelReport {
        clean_soft: clean,
        clean_hard: if clean >= 0.5 { 1.0 } else { 0.0 },
        select_rate: hard.iter().sum::<f64>() / samples.max(1) as f64,
        select_probability: sigmoid(logits[1] - logits[0]),
        histogram,
        clean_slope: clean * (1.0 - clean) / temperature,
        draws: soft.iter().copied().zip(hard).take(24).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct Highlight {
    pub tokens: Vec<String>,
    pub selected: Vec<u8>,
    pub gold: Vec<u8>,
    pub label: usize,
}

#[derive(Debug, Serialize)]
pub struct Arm {
    pub name: String,
    pub history: Vec<HistoryRow>,
    pub metrics: Option<MetricsReport>,
    pub examples: Vec<Highlight>,
}

#[derive(Debug, Serialize)]
pub struct RaceReport {
    pub skew_accuracy: f64,
    pub arms: Vec<Arm>,
}

/// Adaptive and fixed-1 runs from one skewed start on a small corpus whose
/// first sentence carries a spurious marker.
pub fn race_report(seed: u64, skew_epochs: usize, epochs: usize, alpha_g: f64) -> Result<RaceReport, String> {
    let spec = SynthSpec {
        count: 2000,
        length: 24,
        span: 4,
        signal_words: 6,
        filler_words: 60,
        spurious_marker: true,
        seed,
        ..SynthSpec::default()
    };
    let dim = 48;
    let data = DataBundle::synthetic(&spec, 100, 60, dim).map_err(|e| e.to_string())?;
    let mut base = TrainConfig::synthetic(dim);
    base.generator.hidden = 16;
    base.predictor.hidden = 16;
    // Max-pooling keeps the marker's signal intact, so the skewed predictor
    // has something to hold on to. A mean-pool reader averages it away.
    base.predictor.kind = EncoderKind::BiGru;
    base.batch_size = 40;
    base.max_epochs = epochs;
    base.alpha_g = alpha_g;
    base.seed = seed;
    base.reg = RegConfig {
        lambda1: 10.0,
        lambda2: 0.3,
        sparsity: spec.gold_sparsity(),
    };
    let mut start = base.init_params(&data.embeddings).map_err(|e| e.to_string())?;
    let skew = data.skew_config(seed);
    let skew_accuracy = skew_pretrain_predictor(&mut start, &data.train, &data.embeddings, skew_epochs, &skew)
        .map_err(|e| e.to_string())?;
    let annotation = data.annotation.as_ref().expect("synthetic data has annotations");
    let mut arms = Vec::new();
    for (name, mode) in [("adaptive", LambdaMode::Adaptive), ("lambda = 1", LambdaMode::Fixed(1.0))] {
        let config = TrainConfig {
            lambda_mode: mode,
            ..base.clone()
        };
        let run = train_and_evaluate_from(&config, start.clone(), &data).map_err(|e| e.to_string())?;
        let eval = evaluate(run.best(), annotation, &data.embeddings, &config.reg).map_err(|e| e.to_string())?;
        let examples = annotation
            .examples
            .iter()
            .zip(&eval.masks)
            .take(4)
            .map(|(e, m)| Highlight {
                tokens: e
                    .tokens
                    .iter()
                    .map(|&t| annotation.vocab.token(t).unwrap_or("?").to_owned())
                    .collect(),
                selected: m.clone(),
                gold: e.gold_mask.clone().unwrap_or_default(),
                label: e.label,
            })
            .collect();
        arms.push(Arm {
            name: name.into(),
            history: run.state.history.clone(),
            metrics: run.metrics,
            examples,
        });
    }
    Ok(RaceReport { skew_accuracy, arms })
}

fn json<T: Serialize>(value: Result<T, String>) -> Result<String, JsValue> {
    value
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

/// `mask` is a string of 0/1 characters.
#[wasm_bindgen]
pub fn omega(mask: &str, lambda1: f64, lambda2: f64, sparsity: f64) -> Result<String, JsValue> {
    let m: Vec<f64> = mask
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(0.0),
            '1' => Ok(1.0),
            other => Err(format!("mask may only contain 0 and 1, found {other:?}")),
        })
        .collect::<Result<_, _>>()
        .map_err(|e| JsValue::from_str(&e))?;
    let reg = RegConfig {
        lambda1,
        lambda2,
        sparsity,
    };
    json(Ok(omega_report(&m, &reg)))
}

#[wasm_bindgen]
pub fn gumbel(not_select: f64, select: f64, temperature: f64, samples: usize, seed: u32) -> Result<String, JsValue> {
    json(gumbel_report([not_select, select], temperature, samples, u64::from(seed)))
}

#[wasm_bindgen]
pub fn race(seed: u32, skew_epochs: usize, epochs: usize, alpha_g: f64) -> Result<String, JsValue> {
    json(race_report(u64::from(seed), skew_epochs, epochs, alpha_g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_terms_add_up() {
        let reg = RegConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            sparsity: 0.5,
        };
        let r = omega_report(&[0.0, 1.0, 1.0, 0.0], &reg);
        assert_eq!(r.omega, 2.0);
        assert_eq!(r.sparsity_term + r.coherence_term, r.omega);
        assert_eq!(r.selected, 2);
    }

    #[test]
    fn gumbel_select_rate_tracks_the_softmax() {
        let r = gumbel_report([0.0, 1.0], 0.5, 20000, 3).unwrap();
        assert!((r.select_rate - r.select_probability).abs() < 0.02);
        assert_eq!(r.histogram.iter().sum::<usize>(), 20000);
        assert!(gumbel_report([0.0, 0.0], 0.0, 10, 0).is_err());
    }

    #[test]
    fn race_runs_both_arms() {
        let r = race_report(0, 1, 1, 1e-3).unwrap();
        assert_eq!(r.arms.len(), 2);
        assert!(r.arms.iter().all(|a| a.history.len() == 1 && a.examples.len() == 4));
    }
}

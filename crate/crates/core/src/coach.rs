//! Cooperative training with decoupled learning rates, early stopping, and
//! the two skewed-initialization protocols.
//!
//! Each step samples one mask per example, runs the predictor on the masked
//! text, and backpropagates batch-mean cross-entropy plus batch-mean Ω. The
//! generator is updated at `alpha_g`; the predictor at `lambda * alpha_g`,
//! where `lambda` is either fixed or the batch's mean selected fraction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binarizer::{sample_mask, MaskMode, MaskSample};
use crate::corpus::{batchify, Batch, Corpus, Example};
use crate::embedding::EmbeddingTable;
use crate::encoder::{EncoderConfig, EncoderKind, ModelParams, Predictor};
use crate::error::{Error, Result};
use crate::objective::{
    sparsity_coherence_grad, task_loss_logit_grad, total_loss, ExampleLoss, LossBreakdown,
    RegConfig,
};
use crate::optim::Adam;
use crate::probe::estimate_lipschitz;
use crate::scorer::evaluate;
use crate::tensor::{axpy, Parameters, Tensor};

pub const LAMBDA_MIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum LambdaMode {
    Fixed(f64),
    /// Mean selected fraction of the current batch.
    Adaptive,
}

/// How parameter updates are organised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerLayout {
    /// One Adam per player; the predictor's rate is scaled by lambda.
    #[default]
    Decoupled,
    /// One Adam over both players at a single rate. Only meaningful with a
    /// fixed lambda of 1.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha_g: f64,
    pub lambda_mode: LambdaMode,
    pub optimizer: OptimizerLayout,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub temperature: f64,
    /// Gumbel noise while training; evaluation is always noise-free.
    pub noise: bool,
    pub mask_mode: MaskMode,
    pub reg: RegConfig,
    pub fine_tune_embeddings: bool,
    pub spectral_norm: bool,
    pub spectral_iterations: usize,
    pub generator: EncoderConfig,
    pub predictor: EncoderConfig,
    /// Estimate L_c on the training split after every epoch.
    pub probe_lipschitz: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_g: 1e-4,
            lambda_mode: LambdaMode::Adaptive,
            optimizer: OptimizerLayout::Decoupled,
            batch_size: 100,
            max_epochs: 20,
            patience: 20,
            seed: 0,
            temperature: 1.0,
            noise: true,
            mask_mode: MaskMode::Hard,
            reg: RegConfig::default(),
            fine_tune_embeddings: false,
            spectral_norm: false,
            spectral_iterations: 1,
            generator: EncoderConfig::default(),
            predictor: EncoderConfig::default(),
            probe_lipschitz: false,
        }
    }
}

impl TrainConfig {
    /// Mean-pool players sized for the synthetic corpora.
    pub fn synthetic(embedding_dim: usize) -> Self {
        let enc = EncoderConfig {
            kind: EncoderKind::MeanPool,
            hidden: 32,
            embedding_dim,
            dropout: 0.0,
        };
        Self {
            generator: enc.clone(),
            predictor: enc,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_g > 0.0 && self.alpha_g.is_finite()) {
            return Err(Error::Config(format!(
                "generator learning rate must be positive, got {}",
                self.alpha_g
            )));
        }
        if let LambdaMode::Fixed(l) = self.lambda_mode {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("fixed lambda must be positive, got {l}")));
            }
        }
        if self.optimizer == OptimizerLayout::Joint && self.lambda_mode != LambdaMode::Fixed(1.0) {
            return Err(Error::Config(
                "a joint optimizer needs a fixed lambda of 1".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.reg.validate()?;
        self.generator.validate()?;
        self.predictor.validate()
    }

    pub fn init_params(&self, embeddings: &EmbeddingTable) -> Result<ModelParams> {
        let params = ModelParams::new(
            &self.generator,
            &self.predictor,
            self.spectral_norm,
            self.seed,
        )?;
        let params = if self.fine_tune_embeddings {
            params.with_own_embeddings(embeddings)
        } else {
            params
        };
        params.check_embeddings(embeddings)?;
        Ok(params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Optimizers {
    Decoupled { generator: Adam, predictor: Adam },
    Joint(Adam),
}

/// One row per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_acc: f64,
    pub dev_acc: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_f1: Option<f64>,
    /// Mean realized lambda over the epoch's steps.
    pub lambda: f64,
    pub alpha_p: f64,
    pub train_sparsity: f64,
    pub lipschitz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub params: ModelParams,
    pub epoch: usize,
    pub dev_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizers: Optimizers,
    pub step: u64,
    pub epoch: usize,
    pub best: Snapshot,
    pub history: Vec<HistoryRow>,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: &TrainConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let optimizers = match config.optimizer {
            OptimizerLayout::Decoupled => Optimizers::Decoupled {
                generator: Adam::new(&params.generator),
                predictor: Adam::new(&params.predictor),
            },
            OptimizerLayout::Joint => Optimizers::Joint(Adam::new(&params)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(3);
        Ok(Self {
            best: Snapshot {
                params: params.clone(),
                epoch: 0,
                dev_acc: f64::NEG_INFINITY,
            },
            params,
            optimizers,
            step: 0,
            epoch: 0,
            history: Vec::new(),
            rng,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub loss: LossBreakdown,
    pub lambda: f64,
    pub alpha_p: f64,
    pub correct: usize,
    pub count: usize,
}

/// Batch mean of `||M||₁ / l` over hard masks, clamped to `[1e-3, 1]`.
pub fn lambda_ratio(masks: &[Vec<f64>], lengths: &[usize]) -> f64 {
    if masks.is_empty() {
        return 1.0;
    }
    let mean = masks
        .iter()
        .zip(lengths)
        .map(|(m, &l)| m[..l].iter().sum::<f64>() / l.max(1) as f64)
        .sum::<f64>()
        / masks.len() as f64;
    mean.clamp(LAMBDA_MIN, 1.0)
}

fn lookup<'a>(table: &'a Tensor, tokens: &[u32]) -> Vec<&'a [f64]> {
    tokens.iter().map(|&t| table.row(t as usize)).collect()
}

struct Cooperative {
    loss: LossBreakdown,
    /// `dL/dlogits` over real tokens, per row.
    dlogits: Vec<Vec<[f64; 2]>>,
    correct: usize,
}

/// Predictor forward/backward and the regularizer for given mask samples.
/// Accumulates predictor gradients into `pred_grads` and returns the logit
/// gradients for the generator.
fn cooperative_pass(
    params: &ModelParams,
    batch: &Batch,
    embeddings: &EmbeddingTable,
    samples: &[MaskSample],
    mode: MaskMode,
    reg: &RegConfig,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    pred_grads: &mut Predictor,
    step: u64,
) -> Result<Cooperative> {
    let n = batch.len() as f64;
    let table = params.predictor.table(embeddings);
    let mut items = Vec::with_capacity(batch.len());
    let mut dlogits = Vec::with_capacity(batch.len());
    let mut correct = 0;
    let mut masks = Vec::with_capacity(batch.len());
    for (r, s) in samples.iter().enumerate() {
        masks.push(&s.value(mode)[..batch.lengths[r]]);
    }
    for (r, sample) in samples.iter().enumerate() {
        let tokens = batch.row_tokens(r);
        let label = batch.labels[r];
        let mask = masks[r];
        let xs = lookup(table, tokens);
        let fwd = params
            .predictor
            .forward(&xs, mask, dropout_rng.as_deref_mut());
        correct += usize::from(usize::from(fwd.probs[1] >= fwd.probs[0]) == label);
        let mut dl = task_loss_logit_grad(fwd.probs, label);
        dl.iter_mut().for_each(|g| *g /= n);
        let back = params.predictor.backward(&xs, mask, &fwd, dl, pred_grads);
        if let Some(g) = pred_grads.embedding.as_mut() {
            for (t, (&tok, dz)) in tokens.iter().zip(&back.dz).enumerate() {
                if mask[t] != 0.0 {
                    axpy(mask[t], dz, g.row_mut(tok as usize));
                }
            }
        }
        let mut dm = back.dm;
        for (d, o) in dm.iter_mut().zip(sparsity_coherence_grad(mask, reg)) {
            *d += o / n;
        }
        dlogits.push(sample.logit_grad(&dm));
        items.push(ExampleLoss {
            probs: fwd.probs,
            label,
            mask,
        });
    }
    let loss = total_loss(&items, reg, step)?;
    Ok(Cooperative {
        loss,
        dlogits,
        correct,
    })
}

/// Total loss and its gradient with respect to the generator logits, both
/// evaluated without noise or dropout. `logits` holds one row per example
/// over its real tokens.
pub fn logit_gradient(
    params: &ModelParams,
    batch: &Batch,
    embeddings: &EmbeddingTable,
    logits: &[Vec<[f64; 2]>],
    temperature: f64,
    mode: MaskMode,
    reg: &RegConfig,
) -> Result<(f64, Vec<Vec<[f64; 2]>>)> {
    let samples = logits
        .iter()
        .zip(&batch.lengths)
        .map(|(l, &len)| sample_mask(l, len, temperature, None))
        .collect::<Result<Vec<_>>>()?;
    let mut scratch = params.predictor.clone();
    scratch.zero();
    let out = cooperative_pass(
        params,
        batch,
        embeddings,
        &samples,
        mode,
        reg,
        None,
        &mut scratch,
        0,
    )?;
    Ok((out.loss.total, out.dlogits))
}

/// Full gradient of the batch objective for both players. Consumes
/// randomness from `rng` for dropout and Gumbel noise when enabled.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &Batch,
    embeddings: &EmbeddingTable,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    step: u64,
) -> Result<(ModelParams, LossBreakdown, Vec<Vec<f64>>, usize)> {
    let gen_table = params.generator.table(embeddings);
    let mut grads = params.clone();
    grads.zero();

    let mut gen_passes = Vec::with_capacity(batch.len());
    let mut samples = Vec::with_capacity(batch.len());
    for r in 0..batch.len() {
        let xs = lookup(gen_table, batch.row_tokens(r));
        let fwd = params.generator.forward(&xs, Some(&mut *rng));
        let noise = config.noise.then_some(&mut *rng);
        samples.push(sample_mask(&fwd.logits, fwd.logits.len(), config.temperature, noise)?);
        gen_passes.push(fwd);
    }

    let coop = cooperative_pass(
        params,
        batch,
        embeddings,
        &samples,
        config.mask_mode,
        &config.reg,
        Some(&mut *rng),
        &mut grads.predictor,
        step,
    )?;

    let dim = params.generator.config.embedding_dim;
    for (r, fwd) in gen_passes.iter().enumerate() {
        let tokens = batch.row_tokens(r);
        let xs = lookup(gen_table, tokens);
        if grads.generator.embedding.is_some() {
            let mut dxs = vec![vec![0.0; dim]; tokens.len()];
            params
                .generator
                .backward(&xs, fwd, &coop.dlogits[r], &mut grads.generator, Some(&mut dxs));
            let g = grads.generator.embedding.as_mut().expect("checked above");
            for (&tok, dx) in tokens.iter().zip(&dxs) {
                axpy(1.0, dx, g.row_mut(tok as usize));
            }
        } else {
            params
                .generator
                .backward(&xs, fwd, &coop.dlogits[r], &mut grads.generator, None);
        }
    }
    // The pad row stays zero.
    for e in [&mut grads.generator.embedding, &mut grads.predictor.embedding]
        .into_iter()
        .flatten()
    {
        e.row_mut(crate::corpus::PAD_ID as usize).fill(0.0);
    }

    let hard: Vec<Vec<f64>> = samples.into_iter().map(|s| s.hard).collect();
    Ok((grads, coop.loss, hard, coop.correct))
}

/// One forward/backward pass and one update of each player.
pub fn train_step(
    batch: &Batch,
    state: &mut TrainState,
    config: &TrainConfig,
    embeddings: &EmbeddingTable,
) -> Result<StepMetrics> {
    let step = state.step;
    let (grads, loss, hard, correct) = batch_gradients(
        &state.params,
        batch,
        embeddings,
        config,
        &mut state.rng,
        step,
    )?;
    if !grads.all_finite() {
        return Err(Error::Divergence { step, epoch: None });
    }
    let lambda = match config.lambda_mode {
        LambdaMode::Fixed(l) => l,
        LambdaMode::Adaptive => lambda_ratio(&hard, &batch.lengths),
    };
    let alpha_p = lambda * config.alpha_g;
    match &mut state.optimizers {
        Optimizers::Decoupled {
            generator,
            predictor,
        } => {
            generator.update(&mut state.params.generator, &grads.generator, config.alpha_g);
            predictor.update(&mut state.params.predictor, &grads.predictor, alpha_p);
        }
        Optimizers::Joint(adam) => adam.update(&mut state.params, &grads, config.alpha_g),
    }
    if config.spectral_norm {
        state.params.predictor.refresh_spectral(config.spectral_iterations);
    }
    if !state.params.all_finite() {
        return Err(Error::Divergence { step, epoch: None });
    }
    state.step += 1;
    Ok(StepMetrics {
        loss,
        lambda,
        alpha_p,
        correct,
        count: batch.len(),
    })
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64 + 1)
}

/// Runs one epoch and appends its History row.
pub fn train_epoch(
    state: &mut TrainState,
    config: &TrainConfig,
    train: &Corpus,
    dev: &Corpus,
    embeddings: &EmbeddingTable,
) -> Result<HistoryRow> {
    let epoch = state.epoch + 1;
    let batches = batchify(train, config.batch_size, true, epoch_seed(config.seed, epoch));
    let (mut loss, mut lambda, mut alpha_p, mut sparsity) = (0.0, 0.0, 0.0, 0.0);
    let (mut correct, mut count) = (0usize, 0usize);
    for batch in &batches {
        let m = train_step(batch, state, config, embeddings).map_err(|e| match e {
            Error::Divergence { step, .. } => Error::Divergence {
                step,
                epoch: Some(epoch),
            },
            other => other,
        })?;
        loss += m.loss.total;
        lambda += m.lambda;
        alpha_p += m.alpha_p;
        sparsity += m.loss.sparsity;
        correct += m.correct;
        count += m.count;
    }
    let steps = batches.len().max(1) as f64;
    let dev_eval = evaluate(&state.params, dev, embeddings, &config.reg)?;
    let lipschitz = if config.probe_lipschitz {
        Some(estimate_lipschitz(&state.params, train, embeddings)?.estimate)
    } else {
        None
    };
    let row = HistoryRow {
        epoch,
        train_acc: correct as f64 / count.max(1) as f64,
        dev_acc: dev_eval.acc,
        train_loss: loss / steps,
        dev_loss: dev_eval.loss,
        dev_f1: dev_eval.prf.map(|p| p.f1()),
        lambda: lambda / steps,
        alpha_p: alpha_p / steps,
        train_sparsity: sparsity / steps,
        lipschitz,
    };
    state.epoch = epoch;
    state.history.push(row.clone());
    Ok(row)
}

/// Trains from `params` with early stopping on dev accuracy. The returned
/// state's `best` snapshot holds the checkpoint to use; later epochs win
/// ties.
pub fn train_from(
    config: &TrainConfig,
    params: ModelParams,
    train: &Corpus,
    dev: &Corpus,
    embeddings: &EmbeddingTable,
) -> Result<TrainState> {
    let mut state = TrainState::new(config, params)?;
    let mut stale = 0usize;
    for _ in 0..config.max_epochs {
        let row = train_epoch(&mut state, config, train, dev, embeddings)?;
        let improved = row.dev_acc > state.best.dev_acc;
        if row.dev_acc >= state.best.dev_acc {
            state.best = Snapshot {
                params: state.params.clone(),
                epoch: row.epoch,
                dev_acc: row.dev_acc,
            };
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }
    Ok(state)
}

pub fn train(
    config: &TrainConfig,
    train: &Corpus,
    dev: &Corpus,
    embeddings: &EmbeddingTable,
) -> Result<TrainState> {
    let params = config.init_params(embeddings)?;
    train_from(config, params, train, dev, embeddings)
}

/// Settings shared by both skew protocols.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Token closing the first sentence.
    pub delimiter: Option<u32>,
    /// Fallback first-sentence length when no delimiter occurs.
    pub fallback_len: usize,
}

impl Default for SkewConfig {
    fn default() -> Self {
        Self {
            batch_size: 500,
            learning_rate: 1e-3,
            seed: 0,
            delimiter: None,
            fallback_len: 10,
        }
    }
}

/// Tokens up to and including the first delimiter, or the first
/// `fallback_len` tokens when there is none.
pub fn first_sentence(tokens: &[u32], delimiter: Option<u32>, fallback_len: usize) -> &[u32] {
    match delimiter.and_then(|d| tokens.iter().position(|&t| t == d)) {
        Some(i) => &tokens[..=i],
        None => &tokens[..fallback_len.min(tokens.len())],
    }
}

/// First-sentence copy of `corpus`.
pub fn first_sentence_corpus(corpus: &Corpus, skew: &SkewConfig) -> Result<Corpus> {
    let examples = corpus
        .examples
        .iter()
        .map(|e| {
            let toks = first_sentence(&e.tokens, skew.delimiter, skew.fallback_len).to_vec();
            Example::new(toks, e.label, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(examples, corpus.vocab.clone(), crate::corpus::Split::Train)
}

/// Accuracy of the predictor on full (unmasked) inputs, dropout off.
fn predictor_accuracy(predictor: &Predictor, corpus: &Corpus, table: &Tensor) -> f64 {
    let correct = corpus
        .examples
        .iter()
        .filter(|e| {
            let xs = lookup(table, &e.tokens);
            let ones = vec![1.0; xs.len()];
            let p = predictor.forward(&xs, &ones, None).probs;
            usize::from(p[1] >= p[0]) == e.label
        })
        .count();
    correct as f64 / corpus.len().max(1) as f64
}

/// Trains the predictor alone for `k` epochs on first sentences with every
/// token visible. Returns the final first-sentence training accuracy.
pub fn skew_pretrain_predictor(
    params: &mut ModelParams,
    train: &Corpus,
    embeddings: &EmbeddingTable,
    k: usize,
    skew: &SkewConfig,
) -> Result<f64> {
    let short = first_sentence_corpus(train, skew)?;
    let mut adam = Adam::new(&params.predictor);
    let mut rng = ChaCha8Rng::seed_from_u64(skew.seed);
    rng.set_stream(4);
    for epoch in 0..k {
        for batch in batchify(&short, skew.batch_size, true, epoch_seed(skew.seed, epoch)) {
            let pred = &params.predictor;
            let table = pred.table(embeddings);
            let n = batch.len() as f64;
            let mut grads = pred.clone();
            grads.zero();
            for r in 0..batch.len() {
                let tokens = batch.row_tokens(r);
                let xs = lookup(table, tokens);
                let ones = vec![1.0; xs.len()];
                let fwd = pred.forward(&xs, &ones, Some(&mut rng));
                let mut dl = task_loss_logit_grad(fwd.probs, batch.labels[r]);
                dl.iter_mut().for_each(|g| *g /= n);
                let back = pred.backward(&xs, &ones, &fwd, dl, &mut grads);
                if let Some(g) = grads.embedding.as_mut() {
                    for (&tok, dz) in tokens.iter().zip(&back.dz) {
                        axpy(1.0, dz, g.row_mut(tok as usize));
                    }
                    g.row_mut(crate::corpus::PAD_ID as usize).fill(0.0);
                }
            }
            adam.update(&mut params.predictor, &grads, skew.learning_rate);
            params.predictor.refresh_spectral(1);
        }
    }
    let table = params.predictor.table(embeddings).clone();
    Ok(predictor_accuracy(&params.predictor, &short, &table))
}

/// Hard cap on generator skew epochs.
pub const SKEW_GENERATOR_MAX_EPOCHS: usize = 100;

/// Accuracy of "select the first token" as a label predictor.
fn first_token_accuracy(params: &ModelParams, corpus: &Corpus, embeddings: &EmbeddingTable) -> f64 {
    let table = params.generator.table(embeddings);
    let correct = corpus
        .examples
        .iter()
        .filter(|e| {
            let xs = lookup(table, &e.tokens);
            let l = params.generator.forward(&xs, None).logits[0];
            usize::from(l[1] >= l[0]) == e.label
        })
        .count();
    correct as f64 / corpus.len().max(1) as f64
}

/// Trains the generator to select the first token exactly for class-1
/// texts, one epoch at a time, until the proxy accuracy reaches
/// `threshold`. Returns that accuracy.
pub fn skew_pretrain_generator(
    params: &mut ModelParams,
    train: &Corpus,
    embeddings: &EmbeddingTable,
    threshold: f64,
    skew: &SkewConfig,
) -> Result<f64> {
    if !(threshold > 0.5 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "generator skew threshold {threshold} outside (0.5, 1)"
        )));
    }
    let mut adam = Adam::new(&params.generator);
    let mut rng = ChaCha8Rng::seed_from_u64(skew.seed);
    rng.set_stream(5);
    let mut best: f64 = 0.0;
    for epoch in 0..SKEW_GENERATOR_MAX_EPOCHS {
        for batch in batchify(train, skew.batch_size, true, epoch_seed(skew.seed, epoch)) {
            let gen = &params.generator;
            let table = gen.table(embeddings);
            let n = batch.len() as f64;
            let mut grads = gen.clone();
            grads.zero();
            let dim = gen.config.embedding_dim;
            for r in 0..batch.len() {
                let tokens = batch.row_tokens(r);
                let xs = lookup(table, tokens);
                let fwd = gen.forward(&xs, Some(&mut rng));
                // Binary cross-entropy on sigmoid(l1 - l0) against the label.
                let l = fwd.logits[0];
                let p = crate::tensor::sigmoid(l[1] - l[0]);
                let g = (p - batch.labels[r] as f64) / n;
                let mut dlogits = vec![[0.0, 0.0]; xs.len()];
                dlogits[0] = [-g, g];
                if grads.embedding.is_some() {
                    let mut dxs = vec![vec![0.0; dim]; xs.len()];
                    gen.backward(&xs, &fwd, &dlogits, &mut grads, Some(&mut dxs));
                    let e = grads.embedding.as_mut().expect("checked above");
                    for (&tok, dx) in tokens.iter().zip(&dxs) {
                        axpy(1.0, dx, e.row_mut(tok as usize));
                    }
                    e.row_mut(crate::corpus::PAD_ID as usize).fill(0.0);
                } else {
                    gen.backward(&xs, &fwd, &dlogits, &mut grads, None);
                }
            }
            adam.update(&mut params.generator, &grads, skew.learning_rate);
        }
        let acc = first_token_accuracy(params, train, embeddings);
        best = best.max(acc);
        if acc >= threshold {
            return Ok(acc);
        }
    }
    Err(Error::Unreachable {
        threshold,
        best,
        epochs: SKEW_GENERATOR_MAX_EPOCHS,
    })
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gru::BiGruCache;
use super::meanpool::{ContextCache, MeanCache};
use super::{
    apply_dropout, dropout_mask, BiGru, ContextProjection, EncoderConfig, EncoderKind, Linear,
    MeanProjection, SpectralState,
};
use crate::corpus::Batch;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::tensor::{dot, matvec_t_add, outer_add, softmax, Parameters, Tensor};

/// Select-channel logit written at padded positions; with a not-select logit
/// of zero the selection probability underflows to exactly 0.
pub const PAD_SELECT_LOGIT: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TokenEncoder {
    MeanPool(ContextProjection),
    BiGru(BiGru),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PoolEncoder {
    MeanPool(MeanProjection),
    BiGru(BiGru),
}

/// The selecting player: per-token 2-way logits `[not-select, select]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub config: EncoderConfig,
    pub encoder: TokenEncoder,
    pub head: Linear,
    /// Private embedding copy when embeddings are fine-tuned.
    pub embedding: Option<Tensor>,
}

#[derive(Clone, Debug)]
enum TokenCache {
    MeanPool(ContextCache),
    BiGru(BiGruCache),
}

#[derive(Clone, Debug)]
pub struct GenForward {
    pub logits: Vec<[f64; 2]>,
    cache: TokenCache,
    features: Vec<Vec<f64>>,
    dropout: Vec<Option<Vec<f64>>>,
}

impl Generator {
    pub fn new(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let encoder = match config.kind {
            EncoderKind::MeanPool => TokenEncoder::MeanPool(ContextProjection::new(
                config.embedding_dim,
                config.hidden,
                rng,
            )),
            EncoderKind::BiGru => {
                TokenEncoder::BiGru(BiGru::new(config.embedding_dim, config.hidden, rng))
            }
        };
        Self {
            config: config.clone(),
            encoder,
            head: Linear::new(config.output_dim(), 2, rng),
            embedding: None,
        }
    }

    pub fn table<'a>(&'a self, shared: &'a EmbeddingTable) -> &'a Tensor {
        self.embedding.as_ref().unwrap_or(&shared.rows)
    }

    /// `dropout_rng = None` switches dropout off.
    pub fn forward(&self, xs: &[&[f64]], dropout_rng: Option<&mut ChaCha8Rng>) -> GenForward {
        let (cache, hidden) = match &self.encoder {
            TokenEncoder::MeanPool(p) => {
                let c = p.forward(xs);
                let h = c.hidden.clone();
                (TokenCache::MeanPool(c), h)
            }
            TokenEncoder::BiGru(g) => {
                let c = g.forward(xs);
                let h = c.outputs.clone();
                (TokenCache::BiGru(c), h)
            }
        };
        let mut rng = dropout_rng;
        let mut features = hidden;
        let mut dropout = Vec::with_capacity(features.len());
        let mut logits = Vec::with_capacity(features.len());
        for f in features.iter_mut() {
            let mask = dropout_mask(f.len(), self.config.dropout, rng.as_deref_mut());
            apply_dropout(f, mask.as_ref());
            let l = self.head.forward(f);
            logits.push([l[0], l[1]]);
            dropout.push(mask);
        }
        GenForward {
            logits,
            cache,
            features,
            dropout,
        }
    }

    pub fn backward(
        &self,
        xs: &[&[f64]],
        fwd: &GenForward,
        dlogits: &[[f64; 2]],
        grads: &mut Generator,
        dxs: Option<&mut [Vec<f64>]>,
    ) {
        let dh: Vec<Vec<f64>> = fwd
            .features
            .iter()
            .zip(dlogits)
            .zip(&fwd.dropout)
            .map(|((f, dl), mask)| {
                let mut d = self.head.backward(f, dl, &mut grads.head);
                apply_dropout(&mut d, mask.as_ref());
                d
            })
            .collect();
        match (&self.encoder, &fwd.cache, &mut grads.encoder) {
            (TokenEncoder::MeanPool(p), TokenCache::MeanPool(c), TokenEncoder::MeanPool(g)) => {
                p.backward(xs, c, &dh, g, dxs);
            }
            (TokenEncoder::BiGru(e), TokenCache::BiGru(c), TokenEncoder::BiGru(g)) => {
                let d = e.backward(xs, c, &dh, g);
                if let Some(dxs) = dxs {
                    for (acc, v) in dxs.iter_mut().zip(d) {
                        crate::tensor::axpy(1.0, &v, acc);
                    }
                }
            }
            _ => unreachable!("encoder/cache kinds disagree"),
        }
    }
}

impl Parameters for Generator {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = match &self.encoder {
            TokenEncoder::MeanPool(p) => p.tensors(),
            TokenEncoder::BiGru(g) => g.tensors(),
        };
        v.extend(self.head.tensors());
        v.extend(self.embedding.iter());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = match &mut self.encoder {
            TokenEncoder::MeanPool(p) => p.tensors_mut(),
            TokenEncoder::BiGru(g) => g.tensors_mut(),
        };
        v.extend(self.head.tensors_mut());
        v.extend(self.embedding.iter_mut());
        v
    }
}

/// The classifying player: sees only `Z = M ⊙ X` and returns class
/// probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub config: EncoderConfig,
    pub encoder: PoolEncoder,
    pub head: Linear,
    /// Power-iteration state when the head is spectrally normalized.
    pub spectral: Option<SpectralState>,
    pub embedding: Option<Tensor>,
}

#[derive(Clone, Debug)]
enum PoolCache {
    MeanPool(MeanCache),
    BiGru {
        inputs: Vec<Vec<f64>>,
        cache: BiGruCache,
        argmax: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
pub struct PredForward {
    pub logits: [f64; 2],
    pub probs: [f64; 2],
    cache: PoolCache,
    features: Vec<f64>,
    dropout: Option<Vec<f64>>,
}

/// Input-side gradients of a predictor backward pass.
#[derive(Clone, Debug)]
pub struct PredBackward {
    /// `dL/dz_t` for the masked embedding `z_t = m_t x_t`.
    pub dz: Vec<Vec<f64>>,
    /// `dL/dm_t`.
    pub dm: Vec<f64>,
}

impl Predictor {
    pub fn new(config: &EncoderConfig, spectral_norm: bool, rng: &mut ChaCha8Rng) -> Self {
        let encoder = match config.kind {
            EncoderKind::MeanPool => PoolEncoder::MeanPool(MeanProjection::new(
                config.embedding_dim,
                config.hidden,
                rng,
            )),
            EncoderKind::BiGru => {
                PoolEncoder::BiGru(BiGru::new(config.embedding_dim, config.hidden, rng))
            }
        };
        let head = Linear::new(config.output_dim(), 2, rng);
        let spectral = spectral_norm.then(|| {
            let mut s = SpectralState::new(2, config.output_dim(), rng);
            s.refresh(&head.w, 1);
            s
        });
        Self {
            config: config.clone(),
            encoder,
            head,
            spectral,
            embedding: None,
        }
    }

    pub fn table<'a>(&'a self, shared: &'a EmbeddingTable) -> &'a Tensor {
        self.embedding.as_ref().unwrap_or(&shared.rows)
    }

    /// One power-iteration step on the head weight; called once per training
    /// step when spectral normalization is on.
    pub fn refresh_spectral(&mut self, iterations: usize) {
        if let Some(s) = &mut self.spectral {
            s.refresh(&self.head.w, iterations);
        }
    }

    fn head_scale(&self) -> f64 {
        self.spectral.as_ref().map_or(1.0, |s| 1.0 / s.sigma)
    }

    pub fn forward(
        &self,
        xs: &[&[f64]],
        mask: &[f64],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> PredForward {
        debug_assert_eq!(xs.len(), mask.len());
        let (cache, mut features) = match &self.encoder {
            PoolEncoder::MeanPool(p) => {
                let c = p.forward(xs, mask);
                let h = c.hidden.clone();
                (PoolCache::MeanPool(c), h)
            }
            PoolEncoder::BiGru(g) => {
                let dim = self.config.embedding_dim;
                let inputs: Vec<Vec<f64>> = xs
                    .iter()
                    .zip(mask)
                    .map(|(x, &m)| {
                        if m == 0.0 {
                            vec![0.0; dim]
                        } else {
                            x.iter().map(|v| m * v).collect()
                        }
                    })
                    .collect();
                let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
                let cache = g.forward(&refs);
                let width = self.config.output_dim();
                let mut pooled = vec![f64::NEG_INFINITY; width];
                let mut argmax = vec![0usize; width];
                for (t, o) in cache.outputs.iter().enumerate() {
                    for j in 0..width {
                        if o[j] > pooled[j] {
                            pooled[j] = o[j];
                            argmax[j] = t;
                        }
                    }
                }
                if cache.outputs.is_empty() {
                    pooled.fill(0.0);
                }
                (
                    PoolCache::BiGru {
                        inputs,
                        cache,
                        argmax,
                    },
                    pooled,
                )
            }
        };
        let dropout = dropout_mask(features.len(), self.config.dropout, dropout_rng);
        apply_dropout(&mut features, dropout.as_ref());
        let scale = self.head_scale();
        let logits = [
            scale * dot(self.head.w.row(0), &features) + self.head.b.data[0],
            scale * dot(self.head.w.row(1), &features) + self.head.b.data[1],
        ];
        let p = softmax(&logits);
        PredForward {
            logits,
            probs: [p[0], p[1]],
            cache,
            features,
            dropout,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the input-side
    /// gradients.
    pub fn backward(
        &self,
        xs: &[&[f64]],
        mask: &[f64],
        fwd: &PredForward,
        dlogits: [f64; 2],
        grads: &mut Predictor,
    ) -> PredBackward {
        let scale = self.head_scale();
        // dL/dW_eff where W_eff = scale · W.
        let mut g_eff = Tensor::zeros(2, fwd.features.len());
        outer_add(&mut g_eff, &dlogits, &fwd.features);
        grads.head.b.data[0] += dlogits[0];
        grads.head.b.data[1] += dlogits[1];
        match &self.spectral {
            None => grads.head.w.add_assign(&g_eff),
            Some(s) => {
                // σ = uᵀ W v with u, v held fixed:
                // dL/dW = (G - <G, W_sn> u vᵀ) / σ.
                let inner: f64 = g_eff
                    .data
                    .iter()
                    .zip(&self.head.w.data)
                    .map(|(g, w)| g * w * scale)
                    .sum();
                let cols = g_eff.cols;
                for r in 0..2 {
                    for c in 0..cols {
                        let g = g_eff.data[r * cols + c] - inner * s.u[r] * s.v[c];
                        grads.head.w.data[r * cols + c] += g * scale;
                    }
                }
            }
        }
        let mut dfeatures = vec![0.0; fwd.features.len()];
        matvec_t_add(&self.head.w, &dlogits, &mut dfeatures);
        dfeatures.iter_mut().for_each(|d| *d *= scale);
        apply_dropout(&mut dfeatures, fwd.dropout.as_ref());

        match (&self.encoder, &fwd.cache, &mut grads.encoder) {
            (PoolEncoder::MeanPool(p), PoolCache::MeanPool(c), PoolEncoder::MeanPool(g)) => {
                let (dz, dm) = p.backward(xs, mask, c, &dfeatures, g);
                PredBackward { dz, dm }
            }
            (
                PoolEncoder::BiGru(e),
                PoolCache::BiGru {
                    inputs,
                    cache,
                    argmax,
                },
                PoolEncoder::BiGru(g),
            ) => {
                let width = dfeatures.len();
                let mut douts = vec![vec![0.0; width]; inputs.len()];
                if !inputs.is_empty() {
                    for j in 0..width {
                        douts[argmax[j]][j] += dfeatures[j];
                    }
                }
                let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
                let dz = e.backward(&refs, cache, &douts, g);
                let dm = dz.iter().zip(xs).map(|(d, x)| dot(d, x)).collect();
                PredBackward { dz, dm }
            }
            _ => unreachable!("encoder/cache kinds disagree"),
        }
    }
}

impl Parameters for Predictor {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = match &self.encoder {
            PoolEncoder::MeanPool(p) => p.tensors(),
            PoolEncoder::BiGru(g) => g.tensors(),
        };
        v.extend(self.head.tensors());
        v.extend(self.embedding.iter());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = match &mut self.encoder {
            PoolEncoder::MeanPool(p) => p.tensors_mut(),
            PoolEncoder::BiGru(g) => g.tensors_mut(),
        };
        v.extend(self.head.tensors_mut());
        v.extend(self.embedding.iter_mut());
        v
    }
}

/// Both players. They share no parameters; with fine-tuned embeddings each
/// holds its own copy of the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub generator: Generator,
    pub predictor: Predictor,
}

impl ModelParams {
    /// Generator and predictor draw from separate seeded streams, so changing
    /// one player's shape leaves the other's initialization untouched.
    pub fn new(
        generator: &EncoderConfig,
        predictor: &EncoderConfig,
        spectral_norm: bool,
        seed: u64,
    ) -> Result<Self> {
        generator.validate()?;
        predictor.validate()?;
        let mut grng = ChaCha8Rng::seed_from_u64(seed);
        grng.set_stream(1);
        let mut prng = ChaCha8Rng::seed_from_u64(seed);
        prng.set_stream(2);
        Ok(Self {
            generator: Generator::new(generator, &mut grng),
            predictor: Predictor::new(predictor, spectral_norm, &mut prng),
        })
    }

    /// Gives each player a private, trainable copy of `table`.
    pub fn with_own_embeddings(mut self, table: &EmbeddingTable) -> Self {
        self.generator.embedding = Some(table.rows.clone());
        self.predictor.embedding = Some(table.rows.clone());
        self
    }

    pub fn check_embeddings(&self, table: &EmbeddingTable) -> Result<()> {
        for (who, cfg, own) in [
            ("generator", &self.generator.config, &self.generator.embedding),
            ("predictor", &self.predictor.config, &self.predictor.embedding),
        ] {
            let dim = own.as_ref().map_or(table.dim(), |t| t.cols);
            if dim != cfg.embedding_dim {
                return Err(Error::Config(format!(
                    "{who} expects {}-dimensional embeddings, table has {dim}",
                    cfg.embedding_dim
                )));
            }
        }
        Ok(())
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.generator.tensors();
        v.extend(self.predictor.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.generator.tensors_mut();
        v.extend(self.predictor.tensors_mut());
        v
    }
}

pub(crate) fn lookup<'a>(table: &'a Tensor, tokens: &[u32]) -> Vec<&'a [f64]> {
    tokens.iter().map(|&t| table.row(t as usize)).collect()
}

/// Per-token logits for a padded batch, `batch × max_len × 2`, dropout off.
/// Padded positions get `[0, PAD_SELECT_LOGIT]`.
pub fn generator_logits(
    params: &ModelParams,
    batch: &Batch,
    embeddings: &EmbeddingTable,
) -> Result<Vec<Vec<[f64; 2]>>> {
    params.check_embeddings(embeddings)?;
    let table = params.generator.table(embeddings);
    let max_len = batch.max_len();
    Ok((0..batch.len())
        .map(|r| {
            let xs = lookup(table, batch.row_tokens(r));
            let mut row = params.generator.forward(&xs, None).logits;
            row.resize(max_len, [0.0, PAD_SELECT_LOGIT]);
            row
        })
        .collect())
}

/// Class probabilities for each row given per-token masks (`batch × max_len`;
/// entries past a row's length are ignored). Dropout off.
pub fn predict(
    params: &ModelParams,
    batch: &Batch,
    embeddings: &EmbeddingTable,
    masks: &[Vec<f64>],
) -> Result<Vec<[f64; 2]>> {
    params.check_embeddings(embeddings)?;
    if masks.len() != batch.len() {
        return Err(Error::Domain(format!(
            "{} masks for a batch of {}",
            masks.len(),
            batch.len()
        )));
    }
    let table = params.predictor.table(embeddings);
    Ok((0..batch.len())
        .map(|r| {
            let len = batch.lengths[r];
            let xs = lookup(table, batch.row_tokens(r));
            params.predictor.forward(&xs, &masks[r][..len], None).probs
        })
        .collect())
}

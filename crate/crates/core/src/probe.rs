//! Diagnostics on trained players: a gradient-norm estimate of the
//! predictor's Lipschitz constant over generated rationales, the averaged
//! embedding distance between rationales, class-centroid gaps, and an audit
//! of `ε_i + ε_j ≥ 1 − d(Z_i, Z_j) · L_c` on opposite-label pairs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{batchify, Corpus};
use crate::embedding::EmbeddingTable;
use crate::encoder::{ModelParams, Predictor};
use crate::error::{Error, Result};
use crate::scorer::batch_rationales;
use crate::tensor::{axpy, norm_p, Parameters, Tensor};

pub const AUDIT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_AUDIT_PAIRS: usize = 10_000;

/// Anything whose positive-class probability can be differentiated with
/// respect to the masked token embeddings `z_t = m_t x_t`.
pub trait PositiveScore {
    /// `∂ p(class 1) / ∂ z_t` for every position.
    fn positive_input_grad(&self, xs: &[&[f64]], mask: &[f64]) -> Vec<Vec<f64>>;
}

impl PositiveScore for Predictor {
    fn positive_input_grad(&self, xs: &[&[f64]], mask: &[f64]) -> Vec<Vec<f64>> {
        let fwd = self.forward(xs, mask, None);
        let [p0, p1] = fwd.probs;
        let mut scratch = self.clone();
        scratch.zero();
        self.backward(xs, mask, &fwd, [-p1 * p0, p1 * p0], &mut scratch)
            .dz
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Max of `norms`; 0 when every rationale was empty.
    pub estimate: f64,
    /// One entry per example with a nonempty rationale.
    pub norms: Vec<f64>,
    pub norm_order: f64,
    pub samples: usize,
    /// Examples skipped because the rationale selected nothing.
    pub skipped_empty: usize,
}

/// Per-example norm of the positive-class gradient averaged over the
/// selected positions, then the max over examples. `inputs` pairs each
/// text's embeddings with its 0/1 rationale.
pub fn lipschitz_from_rationales<P: PositiveScore>(
    model: &P,
    inputs: &[(Vec<&[f64]>, Vec<f64>)],
) -> ProbeReport {
    let mut norms = Vec::with_capacity(inputs.len());
    let mut skipped = 0;
    for (xs, mask) in inputs {
        let selected: Vec<usize> = (0..mask.len()).filter(|&t| mask[t] != 0.0).collect();
        if selected.is_empty() {
            skipped += 1;
            continue;
        }
        let grads = model.positive_input_grad(xs, mask);
        let mut mean = vec![0.0; grads[0].len()];
        for &t in &selected {
            axpy(1.0, &grads[t], &mut mean);
        }
        mean.iter_mut().for_each(|v| *v /= selected.len() as f64);
        norms.push(norm_p(&mean, 2.0));
    }
    ProbeReport {
        estimate: norms.iter().copied().fold(0.0, f64::max),
        samples: norms.len(),
        norms,
        norm_order: 2.0,
        skipped_empty: skipped,
    }
}

/// Noise-free rationales for every example, unpadded, in corpus order.
pub fn corpus_rationales(
    params: &ModelParams,
    corpus: &Corpus,
    embeddings: &EmbeddingTable,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); corpus.len()];
    for batch in batchify(corpus, 256, false, 0) {
        for (r, m) in batch_rationales(params, &batch, embeddings)?
            .into_iter()
            .enumerate()
        {
            out[batch.indices[r]] = m;
        }
    }
    Ok(out)
}

fn lookup<'a>(table: &'a Tensor, tokens: &[u32]) -> Vec<&'a [f64]> {
    tokens.iter().map(|&t| table.row(t as usize)).collect()
}

/// L_c estimate for the predictor over the generator's rationales on
/// `corpus`, with dropout and noise off.
pub fn estimate_lipschitz(
    params: &ModelParams,
    corpus: &Corpus,
    embeddings: &EmbeddingTable,
) -> Result<ProbeReport> {
    let masks = corpus_rationales(params, corpus, embeddings)?;
    let table = params.predictor.table(embeddings);
    let inputs: Vec<(Vec<&[f64]>, Vec<f64>)> = corpus
        .examples
        .iter()
        .zip(masks)
        .map(|(e, m)| (lookup(table, &e.tokens), m))
        .collect();
    Ok(lipschitz_from_rationales(&params.predictor, &inputs))
}

fn mean_vector(tokens: &[&[f64]]) -> Result<Vec<f64>> {
    let first = tokens
        .first()
        .ok_or_else(|| Error::Domain("rationale has no tokens".into()))?;
    let mut mean = vec![0.0; first.len()];
    for t in tokens {
        axpy(1.0, t, &mut mean);
    }
    mean.iter_mut().for_each(|v| *v /= tokens.len() as f64);
    Ok(mean)
}

/// `‖mean(A) − mean(B)‖₂`.
pub fn rationale_distance(a: &[&[f64]], b: &[&[f64]]) -> Result<f64> {
    let (ma, mb) = (mean_vector(a)?, mean_vector(b)?);
    let diff: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| x - y).collect();
    Ok(norm_p(&diff, 2.0))
}

/// Rationales (each a list of token vectors) split by source label; the gap
/// is the order-`p` norm of the difference of the two class centroids.
/// Empty rationales are ignored.
pub fn class_centroid_gap(by_class: [&[Vec<&[f64]>]; 2], p: f64) -> Result<f64> {
    let mut centroids = Vec::with_capacity(2);
    for (c, group) in by_class.iter().enumerate() {
        let means = group
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| mean_vector(r))
            .collect::<Result<Vec<_>>>()?;
        if means.is_empty() {
            return Err(Error::Domain(format!("class {c} has no rationales")));
        }
        let refs: Vec<&[f64]> = means.iter().map(Vec::as_slice).collect();
        centroids.push(mean_vector(&refs)?);
    }
    let diff: Vec<f64> = centroids[0]
        .iter()
        .zip(&centroids[1])
        .map(|(x, y)| x - y)
        .collect();
    Ok(norm_p(&diff, p))
}

/// Centroid gap of the selections `masks` (one per example) over `corpus`.
pub fn centroid_gap_for_masks(
    corpus: &Corpus,
    masks: &[Vec<u8>],
    embeddings: &EmbeddingTable,
    p: f64,
) -> Result<f64> {
    let mut groups: [Vec<Vec<&[f64]>>; 2] = [Vec::new(), Vec::new()];
    for (e, m) in corpus.examples.iter().zip(masks) {
        let toks: Vec<&[f64]> = e
            .tokens
            .iter()
            .zip(m)
            .filter(|(_, &s)| s != 0)
            .map(|(&t, _)| embeddings.row(t))
            .collect();
        groups[e.label].push(toks);
    }
    class_centroid_gap([&groups[0], &groups[1]], p)
}

/// For each example, a uniformly random subset of positions with as many
/// tokens as its gold rationale.
pub fn random_subset_masks(corpus: &Corpus, seed: u64) -> Result<Vec<Vec<u8>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .examples
        .iter()
        .map(|e| {
            let gold = e
                .gold_mask
                .as_ref()
                .ok_or_else(|| Error::Domain("random control needs gold masks".into()))?;
            let k = gold.iter().filter(|&&g| g != 0).count();
            let mut pos: Vec<usize> = (0..e.len()).collect();
            pos.shuffle(&mut rng);
            let mut m = vec![0u8; e.len()];
            for &i in &pos[..k] {
                m[i] = 1;
            }
            Ok(m)
        })
        .collect()
}

/// Gold vs random-control centroid gaps at each norm order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidReport {
    pub norm_order: f64,
    pub gold_gap: f64,
    pub random_gap: f64,
}

pub fn centroid_report(
    corpus: &Corpus,
    embeddings: &EmbeddingTable,
    orders: &[f64],
    seed: u64,
) -> Result<Vec<CentroidReport>> {
    let gold: Vec<Vec<u8>> = corpus
        .examples
        .iter()
        .map(|e| {
            e.gold_mask
                .clone()
                .ok_or_else(|| Error::Domain("centroid analysis needs gold masks".into()))
        })
        .collect::<Result<_>>()?;
    let random = random_subset_masks(corpus, seed)?;
    orders
        .iter()
        .map(|&p| {
            Ok(CentroidReport {
                norm_order: p,
                gold_gap: centroid_gap_for_masks(corpus, &gold, embeddings, p)?,
                random_gap: centroid_gap_for_masks(corpus, &random, embeddings, p)?,
            })
        })
        .collect()
}

/// One opposite-label pair: `i` is from class 0, `j` from class 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistancePair {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    /// `f_P(Z_i) − 0`.
    pub eps_i: f64,
    /// `1 − f_P(Z_j)`.
    pub eps_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub lipschitz: f64,
    pub pairs: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub note: String,
}

pub fn is_violation(pair: &DistancePair, lipschitz: f64) -> bool {
    pair.eps_i + pair.eps_j < 1.0 - pair.distance * lipschitz - AUDIT_TOLERANCE
}

pub fn audit_inequality(pairs: &[DistancePair], lipschitz: f64) -> AuditReport {
    let violations = pairs.iter().filter(|p| is_violation(p, lipschitz)).count();
    AuditReport {
        lipschitz,
        pairs: pairs.len(),
        violations,
        violation_rate: violations as f64 / pairs.len().max(1) as f64,
        note: "L_c is a max over sampled gradient norms, not a supremum; \
               a nonzero violation rate is diagnostic"
            .into(),
    }
}

/// Samples `count` opposite-label pairs (with replacement) among examples
/// whose rationale is nonempty, using the predictor's embedding view.
pub fn sample_pairs(
    params: &ModelParams,
    corpus: &Corpus,
    embeddings: &EmbeddingTable,
    count: usize,
    seed: u64,
) -> Result<Vec<DistancePair>> {
    let masks = corpus_rationales(params, corpus, embeddings)?;
    let table = params.predictor.table(embeddings);
    let mut means: Vec<Option<Vec<f64>>> = Vec::with_capacity(corpus.len());
    let mut positive = Vec::with_capacity(corpus.len());
    for (e, m) in corpus.examples.iter().zip(&masks) {
        let xs = lookup(table, &e.tokens);
        positive.push(params.predictor.forward(&xs, m, None).probs[1]);
        let sel: Vec<&[f64]> = xs
            .iter()
            .zip(m)
            .filter(|(_, &s)| s != 0.0)
            .map(|(x, _)| *x)
            .collect();
        means.push(if sel.is_empty() { None } else { Some(mean_vector(&sel)?) });
    }
    let pools: [Vec<usize>; 2] = [0, 1].map(|c| {
        (0..corpus.len())
            .filter(|&i| corpus.examples[i].label == c && means[i].is_some())
            .collect()
    });
    if pools[0].is_empty() || pools[1].is_empty() {
        return Err(Error::Domain(
            "need nonempty rationales from both classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let i = pools[0][rng.gen_range(0..pools[0].len())];
            let j = pools[1][rng.gen_range(0..pools[1].len())];
            let (a, b) = (means[i].as_ref().unwrap(), means[j].as_ref().unwrap());
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            DistancePair {
                i,
                j,
                distance: norm_p(&diff, 2.0),
                eps_i: positive[i],
                eps_j: 1.0 - positive[j],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct LinearScore(Vec<f64>);

    impl PositiveScore for LinearScore {
        fn positive_input_grad(&self, xs: &[&[f64]], _mask: &[f64]) -> Vec<Vec<f64>> {
            vec![self.0.clone(); xs.len()]
        }
    }

    #[test]
    fn linear_mock_gives_weight_norm() {
        let a: &[f64] = &[1.0, 1.0];
        let inputs = vec![(vec![a], vec![1.0])];
        let r = lipschitz_from_rationales(&LinearScore(vec![3.0, 4.0]), &inputs);
        assert_eq!(r.norms, vec![5.0]);
        assert_eq!(r.estimate, 5.0);
    }

    #[test]
    fn estimate_is_max_and_empty_rationales_are_skipped() {
        struct PerExample;
        impl PositiveScore for PerExample {
            fn positive_input_grad(&self, xs: &[&[f64]], _m: &[f64]) -> Vec<Vec<f64>> {
                vec![xs[0].to_vec(); xs.len()]
            }
        }
        let a: &[f64] = &[3.0, 4.0];
        let b: &[f64] = &[0.0, 2.0];
        let inputs = vec![
            (vec![a], vec![1.0]),
            (vec![b], vec![1.0]),
            (vec![a], vec![0.0]),
        ];
        let r = lipschitz_from_rationales(&PerExample, &inputs);
        assert_eq!(r.estimate, 5.0);
        assert_eq!(r.skipped_empty, 1);
        assert_eq!(r.samples, 2);
    }

    #[test]
    fn zero_weights_give_zero() {
        let a: &[f64] = &[1.0, -2.0];
        let r = lipschitz_from_rationales(&LinearScore(vec![0.0, 0.0]), &[(vec![a], vec![1.0])]);
        assert_eq!(r.estimate, 0.0);
    }

    #[test]
    fn distance_cases() {
        let o: &[f64] = &[0.0, 0.0];
        let x: &[f64] = &[3.0, 4.0];
        assert_eq!(rationale_distance(&[o], &[x]).unwrap(), 5.0);
        assert_eq!(rationale_distance(&[x, o], &[x, o]).unwrap(), 0.0);
        assert!(matches!(rationale_distance(&[], &[x]), Err(Error::Domain(_))));
    }

    #[test]
    fn centroid_cases() {
        let o: &[f64] = &[0.0, 0.0];
        let x: &[f64] = &[3.0, 4.0];
        let c0 = vec![vec![o]];
        let c1 = vec![vec![x]];
        assert_eq!(class_centroid_gap([&c0, &c1], 2.0).unwrap(), 5.0);
        assert_eq!(class_centroid_gap([&c0, &c1], 1.0).unwrap(), 7.0);
        assert_eq!(class_centroid_gap([&c1, &c1], 2.0).unwrap(), 0.0);
        let empty: Vec<Vec<&[f64]>> = Vec::new();
        assert!(class_centroid_gap([&empty, &c1], 2.0).is_err());
    }

    #[test]
    fn audit_arithmetic() {
        let pair = |d, e| DistancePair {
            i: 0,
            j: 1,
            distance: d,
            eps_i: e / 2.0,
            eps_j: e / 2.0,
        };
        assert!(!is_violation(&pair(2.0, 0.3), 0.4));
        assert!(is_violation(&pair(0.5, 0.1), 0.4));
        for d in [0.0, 0.3, 10.0] {
            assert!(!is_violation(&pair(d, 1.0), 0.0));
        }
        let r = audit_inequality(&[pair(2.0, 0.3), pair(0.5, 0.1)], 0.4);
        assert_eq!((r.violations, r.violation_rate), (1, 0.5));
    }
}

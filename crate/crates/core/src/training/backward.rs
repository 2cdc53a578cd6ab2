use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::LossReduction;
use crate::encoder::{backward_sequence, forward_sequence, EncoderParams, ModelConfig, Scalar, SequenceInput};
use crate::error::{Error, Result};
use crate::scoring::{loss_and_score_grad, ScoreNormalization};
use crate::word_index::{WordId, WordIndex};

/// One training sample: an encoded definition and its target word in the
/// target language's candidate list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: SequenceInput,
    pub language: String,
    pub target: WordId,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BackwardOptions {
    pub normalization: ScoreNormalization,
    pub reduction: LossReduction,
    /// Seeds per-sample dropout masks; `None` runs without dropout.
    pub dropout_seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grads: EncoderParams<T>,
}

fn sample_seed(seed: u64, i: usize) -> u64 {
    // splitmix64 finalizer over (seed, index)
    let mut z = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn weight<T: Scalar>(reduction: LossReduction, n: usize) -> T {
    match reduction {
        LossReduction::Sum => T::one(),
        LossReduction::Mean => T::one() / T::from_usize(n.max(1)).unwrap(),
    }
}

fn sample_loss_grad<T: Scalar>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    index: &WordIndex,
    example: &Example,
    opts: &BackwardOptions,
    i: usize,
    w: T,
    with_grad: bool,
) -> Result<(T, Option<EncoderParams<T>>)> {
    let words = index.language(&example.language)?;
    let mut rng = opts.dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(sample_seed(s, i)));
    let cache = forward_sequence(params, cfg, &example.input, rng.as_mut())?;
    let (loss, d_scores) =
        loss_and_score_grad(&cache.scores, words.padded(), example.target, opts.normalization, w)?;
    if !with_grad {
        return Ok((loss, None));
    }
    let mut grads = params.zeros_like();
    backward_sequence(params, cfg, &cache, &d_scores, &mut grads);
    Ok((loss, Some(grads)))
}

/// Loss of a batch and its exact gradient w.r.t. every parameter tensor.
///
/// Samples run in parallel; per-sample results are reduced in input order so
/// the result does not depend on thread scheduling.
pub fn backward<T: Scalar>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    index: &WordIndex,
    examples: &[Example],
    opts: &BackwardOptions,
) -> Result<LossGrad<T>> {
    let w: T = weight(opts.reduction, examples.len());
    let per_sample: Vec<(T, EncoderParams<T>)> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            sample_loss_grad(params, cfg, index, ex, opts, i, w, true).map(|(l, g)| (l, g.unwrap()))
        })
        .collect::<Result<_>>()?;

    let mut loss = T::zero();
    let mut grads = params.zeros_like();
    for (l, g) in &per_sample {
        loss += *l;
        grads.add_scaled(g, T::one());
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    grads.all_finite().map_err(|name| Error::NonFinite(format!("gradient of {name}")))?;
    Ok(LossGrad { loss, grads })
}

/// Batch loss only (no gradient), same reduction as [`backward`].
pub fn batch_loss<T: Scalar>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    index: &WordIndex,
    examples: &[Example],
    opts: &BackwardOptions,
) -> Result<T> {
    let w: T = weight(opts.reduction, examples.len());
    let losses: Vec<T> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| sample_loss_grad(params, cfg, index, ex, opts, i, w, false).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    Ok(losses.into_iter().fold(T::zero(), |a, b| a + b))
}

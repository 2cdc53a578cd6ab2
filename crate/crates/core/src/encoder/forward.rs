use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;

use super::ops::{self, scalar, LayerNormCache};
use super::{EncoderParams, InputBatch, ModelConfig, Scalar, SequenceInput};
use crate::error::{Error, Result};

pub(crate) struct LayerCache<T> {
    pub input: Array2<T>,
    pub query: Array2<T>,
    pub key: Array2<T>,
    pub value: Array2<T>,
    pub probs: Vec<Array2<T>>,
    pub context: Array2<T>,
    pub attn_drop: Option<Array2<T>>,
    pub attn_norm: LayerNormCache<T>,
    pub mid: Array2<T>,
    pub ffn_pre: Array2<T>,
    pub ffn_act: Array2<T>,
    pub ffn_drop: Option<Array2<T>>,
    pub ffn_norm: LayerNormCache<T>,
}

pub(crate) enum HeadCache<T> {
    Mlm {
        pre: Array2<T>,
        norm: LayerNormCache<T>,
        normed: Array2<T>,
    },
    Dot,
}

/// Everything the backward pass needs from one sequence, plus its scores.
pub struct SequenceCache<T> {
    pub(crate) tokens: Vec<usize>,
    pub(crate) segments: Vec<usize>,
    pub(crate) valid: Vec<bool>,
    pub(crate) language: Option<usize>,
    pub(crate) mask_positions: Vec<usize>,
    pub(crate) emb_drop: Option<Array2<T>>,
    pub(crate) layers: Vec<LayerCache<T>>,
    pub(crate) head: HeadCache<T>,
    /// Final-layer hidden states, one row per position.
    pub output: Array2<T>,
    /// Final-layer rows at the mask positions (k x d_model).
    pub masked: Array2<T>,
    /// Subword scores at the mask positions (k x |V|).
    pub scores: Array2<T>,
}

impl<T> SequenceCache<T> {
    /// Attention probabilities of one layer, one T x T matrix per head.
    pub fn attention_probs(&self, layer: usize) -> &[Array2<T>] {
        &self.layers[layer].probs
    }

    /// Layer-normalized rows before gain/bias, `(attention, ffn)` sublayers.
    pub fn normalized(&self, layer: usize) -> (&Array2<T>, &Array2<T>) {
        let l = &self.layers[layer];
        (&l.attn_norm.normalized, &l.ffn_norm.normalized)
    }
}

/// Hidden states for a batch: `layers[0]` is the embedding sum, `layers[l]`
/// the output of block l.
#[derive(Debug, Clone)]
pub struct HiddenStates<T> {
    pub layers: Vec<Array3<T>>,
    /// Final-layer rows at the mask positions (B x k x d_model).
    pub masked: Array3<T>,
}

impl<T> HiddenStates<T> {
    pub fn last(&self) -> &Array3<T> {
        self.layers.last().expect("at least the embedding layer")
    }
}

fn dropout_mask<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, p: f64) -> Array2<T> {
    let keep: T = scalar(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    })
}

fn embed<T: Scalar>(
    params: &EncoderParams<T>,
    tokens: &[usize],
    segments: &[usize],
    language: Option<usize>,
) -> Result<Array2<T>> {
    let d = params.token_emb.ncols();
    let width = tokens.len();
    if width > params.position_emb.nrows() {
        return Err(Error::InvalidConfig(format!(
            "sequence length {width} exceeds max_seq_len {}",
            params.position_emb.nrows()
        )));
    }
    let mut h = Array2::zeros((width, d));
    for (t, mut row) in h.rows_mut().into_iter().enumerate() {
        let tok = tokens[t];
        if tok >= params.token_emb.nrows() {
            return Err(Error::InvalidConfig(format!("token id {tok} outside vocabulary")));
        }
        row += &params.token_emb.row(tok);
        row += &params.position_emb.row(t);
        row += &params.segment_emb.row(segments[t]);
    }
    if let Some(lang) = language {
        let table = params.language_emb.as_ref().ok_or_else(|| {
            Error::InvalidConfig("language id given but the language embedding is disabled".into())
        })?;
        if lang >= table.nrows() {
            return Err(Error::InvalidConfig(format!("language id {lang} outside table")));
        }
        h += &table.row(lang);
    }
    Ok(h)
}

fn run_blocks<T: Scalar, R: Rng + ?Sized>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    mut h: Array2<T>,
    valid: &[bool],
    mut rng: Option<&mut R>,
    mut keep_states: Option<&mut Vec<Array2<T>>>,
) -> Result<(Array2<T>, Vec<LayerCache<T>>)> {
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale: T = scalar(1.0 / (dh as f64).sqrt());
    let eps: T = scalar(cfg.layer_norm_eps);
    let width = h.nrows();
    let mut caches = Vec::with_capacity(params.layers.len());

    for (index, layer) in params.layers.iter().enumerate() {
        let input = h;
        let query = ops::linear(&input.view(), &layer.query_w, &layer.query_b);
        let key = ops::linear(&input.view(), &layer.key_w, &layer.key_b);
        let value = ops::linear(&input.view(), &layer.value_w, &layer.value_b);

        let mut context = Array2::zeros((width, cfg.d_model));
        let mut probs = Vec::with_capacity(heads);
        for head in 0..heads {
            let cols = s![.., head * dh..(head + 1) * dh];
            let mut p = query.slice(cols).dot(&key.slice(cols).t());
            p.mapv_inplace(|v| v * scale);
            for mut row in p.rows_mut() {
                ops::masked_softmax_inplace(&mut row, valid);
            }
            context.slice_mut(cols).assign(&p.dot(&value.slice(cols)));
            probs.push(p);
        }

        let mut attn = ops::linear(&context.view(), &layer.attn_out_w, &layer.attn_out_b);
        let attn_drop = match rng.as_deref_mut() {
            Some(r) if cfg.dropout > 0.0 => {
                let m = dropout_mask(r, width, cfg.d_model, cfg.dropout);
                attn *= &m;
                Some(m)
            }
            _ => None,
        };
        let (mid, attn_norm) = ops::layer_norm(
            &(&input + &attn),
            &layer.attn_norm_gain,
            &layer.attn_norm_bias,
            eps,
        );

        let ffn_pre = ops::linear(&mid.view(), &layer.ffn_in_w, &layer.ffn_in_b);
        let ffn_act = ops::gelu(&ffn_pre);
        let mut ffn = ops::linear(&ffn_act.view(), &layer.ffn_out_w, &layer.ffn_out_b);
        let ffn_drop = match rng.as_deref_mut() {
            Some(r) if cfg.dropout > 0.0 => {
                let m = dropout_mask(r, width, cfg.d_model, cfg.dropout);
                ffn *= &m;
                Some(m)
            }
            _ => None,
        };
        let (out, ffn_norm) =
            ops::layer_norm(&(&mid + &ffn), &layer.ffn_norm_gain, &layer.ffn_norm_bias, eps);
        if !ops::all_finite(&out) {
            return Err(Error::NonFiniteActivation { layer: index });
        }
        if let Some(states) = keep_states.as_deref_mut() {
            states.push(out.clone());
        }
        caches.push(LayerCache {
            input,
            query,
            key,
            value,
            probs,
            context,
            attn_drop,
            attn_norm,
            mid,
            ffn_pre,
            ffn_act,
            ffn_drop,
            ffn_norm,
        });
        h = out;
    }
    Ok((h, caches))
}

fn head_forward<T: Scalar>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    masked: &Array2<T>,
) -> (Array2<T>, HeadCache<T>) {
    match &params.head {
        Some(head) => {
            let pre = ops::linear(&masked.view(), &head.transform_w, &head.transform_b);
            let act = ops::gelu(&pre);
            let (normed, norm) =
                ops::layer_norm(&act, &head.norm_gain, &head.norm_bias, scalar(cfg.layer_norm_eps));
            let mut scores = normed.dot(&params.token_emb.t());
            scores += &head.output_bias;
            (scores, HeadCache::Mlm { pre, norm, normed })
        }
        None => (masked.dot(&params.token_emb.t()), HeadCache::Dot),
    }
}

/// Scores every vocabulary entry at each mask position: the MLM head when
/// the parameters carry one, otherwise `H_k * Emb_token^T`.
pub fn subword_scores<T: Scalar>(params: &EncoderParams<T>, cfg: &ModelConfig, masked: &Array2<T>) -> Array2<T> {
    head_forward(params, cfg, masked).0
}

/// Runs one unpadded sequence through the encoder and head, keeping the
/// intermediates for backpropagation. Dropout is applied only when an RNG is
/// supplied.
pub fn forward_sequence<T: Scalar, R: Rng + ?Sized>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    seq: &SequenceInput,
    mut rng: Option<&mut R>,
) -> Result<SequenceCache<T>> {
    let mut h = embed(params, &seq.tokens, &seq.segments, seq.language)?;
    let emb_drop = match rng.as_deref_mut() {
        Some(r) if cfg.dropout > 0.0 => {
            let m = dropout_mask(r, h.nrows(), h.ncols(), cfg.dropout);
            h *= &m;
            Some(m)
        }
        _ => None,
    };
    let valid = vec![true; seq.len()];
    let (output, layers) = run_blocks(params, cfg, h, &valid, rng, None)?;
    let masked = output.select(Axis(0), &seq.mask_positions);
    let (scores, head) = head_forward(params, cfg, &masked);
    Ok(SequenceCache {
        tokens: seq.tokens.clone(),
        segments: seq.segments.clone(),
        valid,
        language: seq.language,
        mask_positions: seq.mask_positions.clone(),
        emb_drop,
        layers,
        head,
        output,
        masked,
        scores,
    })
}

/// Inference forward over a padded batch (no dropout). Padding positions are
/// never attended to.
pub fn forward<T: Scalar>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    batch: &InputBatch,
) -> Result<HiddenStates<T>> {
    let (b, width) = batch.tokens.dim();
    let d = cfg.d_model;
    let k = batch.mask_positions.first().map_or(0, Vec::len);
    let mut layers = vec![Array3::zeros((b, width, d)); params.layers.len() + 1];
    let mut masked = Array3::zeros((b, k, d));
    for i in 0..b {
        let tokens = batch.tokens.row(i).to_vec();
        let segments = batch.segments.row(i).to_vec();
        let valid = batch.attention.row(i).to_vec();
        let h0 = embed(params, &tokens, &segments, batch.languages[i])?;
        layers[0].index_axis_mut(Axis(0), i).assign(&h0);
        let mut states = Vec::new();
        let (out, _) = run_blocks::<T, rand_chacha::ChaCha8Rng>(params, cfg, h0, &valid, None, Some(&mut states))?;
        for (l, state) in states.iter().enumerate() {
            layers[l + 1].index_axis_mut(Axis(0), i).assign(state);
        }
        masked
            .index_axis_mut(Axis(0), i)
            .assign(&out.select(Axis(0), &batch.mask_positions[i]));
    }
    Ok(HiddenStates { layers, masked })
}

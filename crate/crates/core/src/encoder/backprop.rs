use ndarray::{s, Array2, Axis};

use super::forward::{HeadCache, SequenceCache};
use super::ops::{self, scalar};
use super::{EncoderParams, ModelConfig, Scalar};

/// Backpropagates `d_scores` (k x |V|, gradient of the loss w.r.t. the
/// subword scores of `cache`) and accumulates into `grads`.
pub fn backward_sequence<T: Scalar>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    cache: &SequenceCache<T>,
    d_scores: &Array2<T>,
    grads: &mut EncoderParams<T>,
) {
    // head
    let d_masked = match (&cache.head, &params.head, grads.head.as_mut()) {
        (HeadCache::Mlm { pre, norm, normed }, Some(head), Some(g)) => {
            g.output_bias += &d_scores.sum_axis(Axis(0));
            ndarray::linalg::general_mat_mul(T::one(), &d_scores.t(), normed, T::one(), &mut grads.token_emb);
            let d_normed = d_scores.dot(&params.token_emb);
            let d_act = ops::layer_norm_backward(norm, &head.norm_gain, &d_normed, &mut g.norm_gain, &mut g.norm_bias);
            let d_pre = ops::gelu_backward(pre, &d_act);
            ops::linear_backward(&cache.masked.view(), &head.transform_w, &d_pre, &mut g.transform_w, &mut g.transform_b)
        }
        (HeadCache::Dot, None, None) => {
            ndarray::linalg::general_mat_mul(T::one(), &d_scores.t(), &cache.masked, T::one(), &mut grads.token_emb);
            d_scores.dot(&params.token_emb)
        }
        _ => panic!("head cache does not match parameter layout"),
    };

    let width = cache.tokens.len();
    let mut dh = Array2::zeros((width, cfg.d_model));
    for (row, &pos) in cache.mask_positions.iter().enumerate() {
        let mut target = dh.row_mut(pos);
        target += &d_masked.row(row);
    }

    let heads = cfg.num_heads;
    let dh_size = cfg.head_dim();
    let att_scale: T = scalar(1.0 / (dh_size as f64).sqrt());

    for ((layer, lc), g) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        // FFN sublayer
        let dz = ops::layer_norm_backward(&lc.ffn_norm, &layer.ffn_norm_gain, &dh, &mut g.ffn_norm_gain, &mut g.ffn_norm_bias);
        let mut d_ffn = dz.clone();
        if let Some(m) = &lc.ffn_drop {
            d_ffn *= m;
        }
        let d_act = ops::linear_backward(&lc.ffn_act.view(), &layer.ffn_out_w, &d_ffn, &mut g.ffn_out_w, &mut g.ffn_out_b);
        let d_pre = ops::gelu_backward(&lc.ffn_pre, &d_act);
        let mut d_mid = ops::linear_backward(&lc.mid.view(), &layer.ffn_in_w, &d_pre, &mut g.ffn_in_w, &mut g.ffn_in_b);
        d_mid += &dz;

        // attention sublayer
        let du = ops::layer_norm_backward(&lc.attn_norm, &layer.attn_norm_gain, &d_mid, &mut g.attn_norm_gain, &mut g.attn_norm_bias);
        let mut d_attn = du.clone();
        if let Some(m) = &lc.attn_drop {
            d_attn *= m;
        }
        let d_context =
            ops::linear_backward(&lc.context.view(), &layer.attn_out_w, &d_attn, &mut g.attn_out_w, &mut g.attn_out_b);

        let mut d_query = Array2::zeros((width, cfg.d_model));
        let mut d_key = Array2::zeros((width, cfg.d_model));
        let mut d_value = Array2::zeros((width, cfg.d_model));
        for head in 0..heads {
            let cols = s![.., head * dh_size..(head + 1) * dh_size];
            let p = &lc.probs[head];
            let d_ctx_h = d_context.slice(cols);
            let d_p = d_ctx_h.dot(&lc.value.slice(cols).t());
            d_value.slice_mut(cols).assign(&p.t().dot(&d_ctx_h));
            let mut d_s = ops::softmax_backward(p, &d_p);
            d_s.mapv_inplace(|v| v * att_scale);
            d_query.slice_mut(cols).assign(&d_s.dot(&lc.key.slice(cols)));
            d_key.slice_mut(cols).assign(&d_s.t().dot(&lc.query.slice(cols)));
        }
        let x = lc.input.view();
        let mut d_input = du;
        d_input += &ops::linear_backward(&x, &layer.query_w, &d_query, &mut g.query_w, &mut g.query_b);
        d_input += &ops::linear_backward(&x, &layer.key_w, &d_key, &mut g.key_w, &mut g.key_b);
        d_input += &ops::linear_backward(&x, &layer.value_w, &d_value, &mut g.value_w, &mut g.value_b);
        dh = d_input;
    }

    if let Some(m) = &cache.emb_drop {
        dh *= m;
    }
    for (t, row) in dh.rows().into_iter().enumerate() {
        if !cache.valid[t] {
            continue;
        }
        let mut tok = grads.token_emb.row_mut(cache.tokens[t]);
        tok += &row;
        let mut pos = grads.position_emb.row_mut(t);
        pos += &row;
        let mut seg = grads.segment_emb.row_mut(cache.segments[t]);
        seg += &row;
    }
    if let (Some(lang), Some(table)) = (cache.language, grads.language_emb.as_mut()) {
        let total = dh.sum_axis(Axis(0));
        let mut row = table.row_mut(lang);
        row += &total;
    }
}

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{HeadMode, ModelConfig, Scalar};
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query_w: Array2<T>,
    pub query_b: Array1<T>,
    pub key_w: Array2<T>,
    pub key_b: Array1<T>,
    pub value_w: Array2<T>,
    pub value_b: Array1<T>,
    pub attn_out_w: Array2<T>,
    pub attn_out_b: Array1<T>,
    pub attn_norm_gain: Array1<T>,
    pub attn_norm_bias: Array1<T>,
    pub ffn_in_w: Array2<T>,
    pub ffn_in_b: Array1<T>,
    pub ffn_out_w: Array2<T>,
    pub ffn_out_b: Array1<T>,
    pub ffn_norm_gain: Array1<T>,
    pub ffn_norm_bias: Array1<T>,
}

/// Dense -> GELU -> LN transform followed by the decoder tied to the token
/// embeddings plus an output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHeadParams<T> {
    pub transform_w: Array2<T>,
    pub transform_b: Array1<T>,
    pub norm_gain: Array1<T>,
    pub norm_bias: Array1<T>,
    pub output_bias: Array1<T>,
}

/// All learnable tensors. Linear weights are stored input x output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub token_emb: Array2<T>,
    pub position_emb: Array2<T>,
    pub segment_emb: Array2<T>,
    pub language_emb: Option<Array2<T>>,
    pub layers: Vec<LayerParams<T>>,
    /// Present only in `HeadMode::MlmHead`.
    pub head: Option<MlmHeadParams<T>>,
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.ffn_dim;
        LayerParams {
            query_w: Array2::zeros((d, d)),
            query_b: Array1::zeros(d),
            key_w: Array2::zeros((d, d)),
            key_b: Array1::zeros(d),
            value_w: Array2::zeros((d, d)),
            value_b: Array1::zeros(d),
            attn_out_w: Array2::zeros((d, d)),
            attn_out_b: Array1::zeros(d),
            attn_norm_gain: Array1::zeros(d),
            attn_norm_bias: Array1::zeros(d),
            ffn_in_w: Array2::zeros((d, f)),
            ffn_in_b: Array1::zeros(f),
            ffn_out_w: Array2::zeros((f, d)),
            ffn_out_b: Array1::zeros(d),
            ffn_norm_gain: Array1::zeros(d),
            ffn_norm_bias: Array1::zeros(d),
        }
    }

    fn tensors(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, T>)> {
        vec![
            (format!("{prefix}.attention.query.weight"), self.query_w.view().into_dyn()),
            (format!("{prefix}.attention.query.bias"), self.query_b.view().into_dyn()),
            (format!("{prefix}.attention.key.weight"), self.key_w.view().into_dyn()),
            (format!("{prefix}.attention.key.bias"), self.key_b.view().into_dyn()),
            (format!("{prefix}.attention.value.weight"), self.value_w.view().into_dyn()),
            (format!("{prefix}.attention.value.bias"), self.value_b.view().into_dyn()),
            (format!("{prefix}.attention.output.weight"), self.attn_out_w.view().into_dyn()),
            (format!("{prefix}.attention.output.bias"), self.attn_out_b.view().into_dyn()),
            (format!("{prefix}.attention.norm.gain"), self.attn_norm_gain.view().into_dyn()),
            (format!("{prefix}.attention.norm.bias"), self.attn_norm_bias.view().into_dyn()),
            (format!("{prefix}.ffn.input.weight"), self.ffn_in_w.view().into_dyn()),
            (format!("{prefix}.ffn.input.bias"), self.ffn_in_b.view().into_dyn()),
            (format!("{prefix}.ffn.output.weight"), self.ffn_out_w.view().into_dyn()),
            (format!("{prefix}.ffn.output.bias"), self.ffn_out_b.view().into_dyn()),
            (format!("{prefix}.ffn.norm.gain"), self.ffn_norm_gain.view().into_dyn()),
            (format!("{prefix}.ffn.norm.bias"), self.ffn_norm_bias.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        vec![
            (format!("{prefix}.attention.query.weight"), self.query_w.view_mut().into_dyn()),
            (format!("{prefix}.attention.query.bias"), self.query_b.view_mut().into_dyn()),
            (format!("{prefix}.attention.key.weight"), self.key_w.view_mut().into_dyn()),
            (format!("{prefix}.attention.key.bias"), self.key_b.view_mut().into_dyn()),
            (format!("{prefix}.attention.value.weight"), self.value_w.view_mut().into_dyn()),
            (format!("{prefix}.attention.value.bias"), self.value_b.view_mut().into_dyn()),
            (format!("{prefix}.attention.output.weight"), self.attn_out_w.view_mut().into_dyn()),
            (format!("{prefix}.attention.output.bias"), self.attn_out_b.view_mut().into_dyn()),
            (format!("{prefix}.attention.norm.gain"), self.attn_norm_gain.view_mut().into_dyn()),
            (format!("{prefix}.attention.norm.bias"), self.attn_norm_bias.view_mut().into_dyn()),
            (format!("{prefix}.ffn.input.weight"), self.ffn_in_w.view_mut().into_dyn()),
            (format!("{prefix}.ffn.input.bias"), self.ffn_in_b.view_mut().into_dyn()),
            (format!("{prefix}.ffn.output.weight"), self.ffn_out_w.view_mut().into_dyn()),
            (format!("{prefix}.ffn.output.bias"), self.ffn_out_b.view_mut().into_dyn()),
            (format!("{prefix}.ffn.norm.gain"), self.ffn_norm_gain.view_mut().into_dyn()),
            (format!("{prefix}.ffn.norm.bias"), self.ffn_norm_bias.view_mut().into_dyn()),
        ]
    }
}

impl<T: Scalar> EncoderParams<T> {
    /// All-zero tensors with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        EncoderParams {
            token_emb: Array2::zeros((cfg.vocab_size, d)),
            position_emb: Array2::zeros((cfg.max_seq_len, d)),
            segment_emb: Array2::zeros((cfg.num_segments, d)),
            language_emb: (cfg.num_languages > 0).then(|| Array2::zeros((cfg.num_languages, d))),
            layers: (0..cfg.num_layers).map(|_| LayerParams::zeros(cfg)).collect(),
            head: (cfg.head_mode == HeadMode::MlmHead).then(|| MlmHeadParams {
                transform_w: Array2::zeros((d, d)),
                transform_b: Array1::zeros(d),
                norm_gain: Array1::zeros(d),
                norm_bias: Array1::zeros(d),
                output_bias: Array1::zeros(cfg.vocab_size),
            }),
        }
    }

    /// Normal(0, 0.02) weights and embeddings, zero biases, unit norm gains.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = Self::zeros(cfg);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (name, mut tensor) in params.tensors_mut() {
            if name.ends_with(".gain") {
                tensor.fill(T::one());
            } else if name.ends_with(".weight") || name.starts_with("embeddings.") {
                tensor.mapv_inplace(|_| T::from_f64(normal.sample(rng)).unwrap());
            }
        }
        Ok(params)
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), self.token_emb.view().into_dyn()),
            ("embeddings.position".to_string(), self.position_emb.view().into_dyn()),
            ("embeddings.segment".to_string(), self.segment_emb.view().into_dyn()),
        ];
        if let Some(lang) = &self.language_emb {
            out.push(("embeddings.language".to_string(), lang.view().into_dyn()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.tensors(&format!("layer.{i}")));
        }
        if let Some(head) = &self.head {
            out.push(("head.transform.weight".to_string(), head.transform_w.view().into_dyn()));
            out.push(("head.transform.bias".to_string(), head.transform_b.view().into_dyn()));
            out.push(("head.norm.gain".to_string(), head.norm_gain.view().into_dyn()));
            out.push(("head.norm.bias".to_string(), head.norm_bias.view().into_dyn()));
            out.push(("head.output_bias".to_string(), head.output_bias.view().into_dyn()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), self.token_emb.view_mut().into_dyn()),
            ("embeddings.position".to_string(), self.position_emb.view_mut().into_dyn()),
            ("embeddings.segment".to_string(), self.segment_emb.view_mut().into_dyn()),
        ];
        if let Some(lang) = &mut self.language_emb {
            out.push(("embeddings.language".to_string(), lang.view_mut().into_dyn()));
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.tensors_mut(&format!("layer.{i}")));
        }
        if let Some(head) = &mut self.head {
            out.push(("head.transform.weight".to_string(), head.transform_w.view_mut().into_dyn()));
            out.push(("head.transform.bias".to_string(), head.transform_b.view_mut().into_dyn()));
            out.push(("head.norm.gain".to_string(), head.norm_gain.view_mut().into_dyn()));
            out.push(("head.norm.bias".to_string(), head.norm_bias.view_mut().into_dyn()));
            out.push(("head.output_bias".to_string(), head.output_bias.view_mut().into_dyn()));
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, mut t) in out.tensors_mut() {
            t.fill(T::zero());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Converts element type, e.g. f32 training weights to f64 for checks.
    pub fn cast<U: Scalar>(&self, cfg: &ModelConfig) -> Result<EncoderParams<U>> {
        let mut out = EncoderParams::<U>::zeros(cfg);
        out.copy_from(self.tensors().into_iter().map(|(n, t)| (n, t.mapv(|v| U::from_f64(v.to_f64().unwrap()).unwrap()))))?;
        Ok(out)
    }

    /// Overwrites tensors by name, checking shapes. Every tensor must be
    /// supplied exactly once.
    pub fn copy_from<I>(&mut self, named: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, ndarray::ArrayD<T>)>,
    {
        let mut supplied: std::collections::HashMap<String, ndarray::ArrayD<T>> =
            named.into_iter().collect();
        for (name, mut dst) in self.tensors_mut() {
            let src = supplied
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: dst.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            dst.assign(&src);
        }
        if let Some(extra) = supplied.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }

    /// Sum of squares over every tensor.
    pub fn squared_norm(&self) -> T {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|&v| v * v).sum::<T>())
            .sum()
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.zip_mut_with(&b, |x, &y| *x += y * scale);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn all_finite(&self) -> std::result::Result<(), String> {
        for (name, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(name);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            max_seq_len: 16,
            num_languages: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_follows_conventions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p: EncoderParams<f32> = EncoderParams::init(&cfg(), &mut rng).unwrap();
        assert!(p.layers[0].query_b.iter().all(|&v| v == 0.0));
        assert!(p.layers[1].ffn_norm_gain.iter().all(|&v| v == 1.0));
        let std = (p.token_emb.iter().map(|v| v * v).sum::<f32>() / p.token_emb.len() as f32).sqrt();
        assert!((std - 0.02).abs() < 0.005, "{std}");
        assert!(p.language_emb.as_ref().unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn tensor_names_are_unique() {
        let p: EncoderParams<f64> = EncoderParams::zeros(&cfg());
        let names: std::collections::HashSet<_> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), p.tensors().len());
    }

    #[test]
    fn embedding_dot_has_no_head() {
        let c = ModelConfig {
            head_mode: HeadMode::EmbeddingDot,
            ..cfg()
        };
        let p: EncoderParams<f32> = EncoderParams::zeros(&c);
        assert!(p.head.is_none());
        assert!(p.tensors().iter().all(|(n, _)| !n.starts_with("head.")));
    }

    #[test]
    fn cast_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: EncoderParams<f32> = EncoderParams::init(&cfg(), &mut rng).unwrap();
        let back: EncoderParams<f32> = p.cast::<f64>(&cfg()).unwrap().cast(&cfg()).unwrap();
        assert_eq!(p, back);
    }
}

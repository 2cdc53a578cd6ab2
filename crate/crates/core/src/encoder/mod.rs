//! Toy transformer encoder with post-norm residual blocks, the reverse
//! dictionary input layout, and the two subword-scoring heads.
//!
//! Every layer computes
//!
//! ```text
//! h_mid = LN(h + MHAtt(h))
//! h_out = LN(h_mid + FFN(h_mid))
//! ```
//!
//! on top of `h0 = token + position + segment (+ language)` embeddings.
//! Scores at the k mask positions come either from an MLM head
//! (dense -> GELU -> LN -> tied decoder + bias) or directly from the dot
//! product with the token embedding table.

mod backprop;
mod forward;
mod input;
pub(crate) mod ops;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backprop::backward_sequence;
pub use forward::{forward, forward_sequence, subword_scores, HiddenStates, SequenceCache};
pub use input::{build_input, InputBatch, SequenceInput};
pub use params::{EncoderParams, LayerParams, MlmHeadParams};

/// Floating point element type of the encoder (f32 for training, f64 for
/// gradient checks).
pub trait Scalar:
    LinalgScalar
    + Float
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    #[default]
    MlmHead,
    EmbeddingDot,
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlm_head" | "mlm" => Ok(HeadMode::MlmHead),
            "embedding_dot" | "dot" => Ok(HeadMode::EmbeddingDot),
            other => Err(Error::InvalidConfig(format!("unknown head mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub num_segments: usize,
    /// Size of the language embedding table; 0 disables it.
    pub num_languages: usize,
    pub dropout: f64,
    pub head_mode: HeadMode,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            d_model: 32,
            num_heads: 4,
            ffn_dim: 64,
            vocab_size: 0,
            max_seq_len: 128,
            num_segments: 2,
            num_languages: 0,
            dropout: 0.1,
            head_mode: HeadMode::MlmHead,
            layer_norm_eps: 1e-12,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.d_model == 0 || self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be positive".into());
        }
        if self.num_segments != 2 {
            return bad(format!("num_segments must be 2, got {}", self.num_segments));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Checks that a k-slot mask block plus at least one definition token fits.
    pub fn validate_for_k(&self, k: usize) -> Result<()> {
        self.validate()?;
        if self.max_seq_len < k + 4 {
            return Err(Error::InvalidConfig(format!(
                "max_seq_len {} leaves no room for a definition with k = {k}",
                self.max_seq_len
            )));
        }
        Ok(())
    }

    /// Room left for definition tokens: `max_seq_len - k - 3`.
    pub fn definition_budget(&self, k: usize) -> usize {
        self.max_seq_len.saturating_sub(k + 3)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }
}

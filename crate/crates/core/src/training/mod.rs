//! Exact gradients through the scoring head and encoder, the optimizer,
//! finite-difference verification and the training loop.

mod adam;
mod backward;
mod grad_check;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::encoder::HeadMode;
use crate::error::Error;
use crate::scoring::ScoreNormalization;

pub use adam::{adam_step, AdamConfig, Schedule, StepInfo, TrainState};
pub use backward::{backward, batch_loss, BackwardOptions, Example, LossGrad};
pub use grad_check::{compare_gradients, grad_check, GradCheckOptions, GradCheckReport, TensorCheck};
pub use trainer::{encode_entries, mode_entries, resolve_config, train, EpochRecord, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Monolingual,
    BilingualAligned,
    UnalignedMultilingual,
}

impl TrainMode {
    /// Whether this mode attaches a target-language embedding to each input.
    pub fn uses_language_embedding(self) -> bool {
        !matches!(self, TrainMode::Monolingual)
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "monolingual" => Ok(TrainMode::Monolingual),
            "bilingual_aligned" | "aligned" => Ok(TrainMode::BilingualAligned),
            "unaligned_multilingual" | "unaligned" => Ok(TrainMode::UnalignedMultilingual),
            other => Err(Error::InvalidConfig(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub mode: TrainMode,
    pub head_mode: HeadMode,
    pub loss_reduction: LossReduction,
    pub score_normalization: ScoreNormalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            clip_norm: Some(1.0),
            mode: TrainMode::Monolingual,
            head_mode: HeadMode::MlmHead,
            loss_reduction: LossReduction::Sum,
            score_normalization: ScoreNormalization::Raw,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig(format!(
                "warmup_fraction must lie in [0, 1], got {}",
                self.warmup_fraction
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

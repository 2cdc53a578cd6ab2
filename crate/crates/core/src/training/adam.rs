use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Linear warmup to `peak_lr`, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn constant(lr: f64) -> Self {
        Schedule {
            peak_lr: lr,
            warmup_steps: 0,
            total_steps: 0,
        }
    }

    /// Learning rate used for the update that takes the state from `step` to
    /// `step + 1`.
    pub fn learning_rate(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.total_steps <= self.warmup_steps {
            return self.peak_lr;
        }
        let remaining = self.total_steps.saturating_sub(step) as f64;
        self.peak_lr * remaining / (self.total_steps - self.warmup_steps) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: EncoderParams<f32>,
    pub first_moment: EncoderParams<f32>,
    pub second_moment: EncoderParams<f32>,
    pub step: u64,
    pub seed: u64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
}

impl TrainState {
    pub fn new(params: EncoderParams<f32>, seed: u64, schedule: Schedule, adam: AdamConfig) -> Self {
        let zeros = params.zeros_like();
        TrainState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            params,
            step: 0,
            seed,
            schedule,
            adam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub learning_rate: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

/// One bias-corrected adaptive-moment update. Gradients are clipped to the
/// configured global norm first.
pub fn adam_step(state: &mut TrainState, grads: &EncoderParams<f32>) -> StepInfo {
    let cfg = state.adam;
    let grad_norm = (grads.squared_norm() as f64).sqrt();
    let clip_scale = match cfg.clip_norm {
        Some(max) if grad_norm > max => max / grad_norm,
        _ => 1.0,
    };
    let lr = state.schedule.learning_rate(state.step);
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let (c1, c2) = (bias1 as f32, bias2 as f32);
    let (eps, lr32, scale) = (cfg.eps as f32, lr as f32, clip_scale as f32);

    let params = state.params.tensors_mut();
    let firsts = state.first_moment.tensors_mut();
    let seconds = state.second_moment.tensors_mut();
    for (((_, mut p), (_, mut m)), ((_, mut v), (_, g))) in params
        .into_iter()
        .zip(firsts)
        .zip(seconds.into_iter().zip(grads.tensors()))
    {
        ndarray::Zip::from(&mut p)
            .and(&mut m)
            .and(&mut v)
            .and(&g)
            .for_each(|p, m, v, &g| {
                let g = g * scale;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr32 * m_hat / (v_hat.sqrt() + eps);
            });
    }
    StepInfo {
        learning_rate: lr,
        grad_norm,
        clipped: clip_scale < 1.0,
    }
}

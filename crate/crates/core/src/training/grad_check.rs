use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::backward::{backward, batch_loss, BackwardOptions, Example};
use crate::encoder::{EncoderParams, ModelConfig};
use crate::error::Result;
use crate::word_index::WordIndex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates checked per tensor (all of them for smaller tensors).
    pub samples_per_tensor: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is near zero are judged on absolute error. It sits above the
    /// roundoff level of the difference quotient.
    pub floor: f64,
    pub seed: u64,
    /// Combine steps `h` and `h/2` so the estimate is accurate to `O(h^4)`.
    pub extrapolate: bool,
    pub backward: BackwardOptions,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            tolerance: 1e-4,
            samples_per_tensor: 16,
            floor: 1e-6,
            seed: 0,
            extrapolate: true,
            backward: BackwardOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.tensors.iter().all(|t| t.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.pass)
    }

    pub fn get(&self, name: &str) -> Option<&TensorCheck> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<40} {:>7} {:>12} {:>12}  result", "tensor", "coords", "max rel", "max abs")?;
        for t in &self.tensors {
            writeln!(
                f,
                "{:<40} {:>7} {:>12.3e} {:>12.3e}  {}",
                t.name,
                t.checked,
                t.max_rel_error,
                t.max_abs_error,
                if t.pass { "pass" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Checks analytic gradients against central differences in 64-bit.
/// Dropout is never applied here.
pub fn grad_check(
    params: &EncoderParams<f64>,
    cfg: &ModelConfig,
    index: &WordIndex,
    examples: &[Example],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let bw = BackwardOptions {
        dropout_seed: None,
        ..opts.backward
    };
    let analytic = backward(params, cfg, index, examples, &bw)?.grads;
    compare_gradients(params, cfg, index, examples, &analytic, opts)
}

/// Compares a supplied gradient against central differences of the loss.
pub fn compare_gradients(
    params: &EncoderParams<f64>,
    cfg: &ModelConfig,
    index: &WordIndex,
    examples: &[Example],
    analytic: &EncoderParams<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let bw = BackwardOptions {
        dropout_seed: None,
        ..opts.backward
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let analytic_tensors = analytic.tensors();
    let mut report = Vec::new();

    for (t_idx, (name, tensor)) in params.tensors().into_iter().enumerate() {
        let len = tensor.len();
        let coords: Vec<usize> = if len <= opts.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut picked = sample(&mut rng, len, opts.samples_per_tensor).into_vec();
            picked.sort_unstable();
            picked
        };
        let grad = analytic_tensors[t_idx].1.iter().copied().collect::<Vec<_>>();

        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for &c in &coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                {
                    let mut ts = p.tensors_mut();
                    let slot = ts[t_idx].1.as_slice_mut().expect("contiguous tensor");
                    slot[c] += delta;
                }
                batch_loss(&p, cfg, index, examples, &bw)
            };
            let central = |h: f64| -> Result<f64> { Ok((eval(h)? - eval(-h)?) / (2.0 * h)) };
            let numeric = if opts.extrapolate {
                // Richardson: cancels the h^2 term of the central difference
                (4.0 * central(opts.step / 2.0)? - central(opts.step)?) / 3.0
            } else {
                central(opts.step)?
            };
            let a = grad[c];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            max_abs = max_abs.max(abs);
            max_rel = if rel.is_nan() { f64::NAN } else { max_rel.max(rel) };
        }
        report.push(TensorCheck {
            name,
            checked: coords.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            pass: max_rel < opts.tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        tensors: report,
    })
}

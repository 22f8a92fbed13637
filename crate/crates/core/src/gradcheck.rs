//! Central finite-difference check of the combined-loss gradient.

use crate::dataset::Labels;
use crate::error::Result;
use crate::model::EagerNet;
use crate::nn::Matrix;
use crate::trainer::{combined_backward, combined_loss, forward_with_tape, BackpropMode, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub parameters: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

/// Relative error with a small floor so near-zero gradients compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare every parameter's analytic gradient (dropout off) with
/// `(L(θ+h) - L(θ-h)) / 2h`.
pub fn check_gradients(
    model: &EagerNet,
    x: &Matrix,
    targets: &Labels,
    weights: &LossWeights,
    h: f64,
) -> Result<GradCheck> {
    let tape = forward_with_tape::<rand_chacha::ChaCha8Rng>(model, x, None)?;
    let analytic = combined_backward(model, &tape, targets, weights, BackpropMode::Full)?
        .grads
        .flatten();
    let mut probe = model.clone();
    let mut idx = 0;
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let layers = probe.hidden.len() + probe.heads.len();
    for l in 0..layers {
        let count = {
            let layer = if l < probe.hidden.len() { &probe.hidden[l] } else { &probe.heads[l - probe.hidden.len()] };
            layer.weights.as_slice().len() + layer.bias.len()
        };
        for p in 0..count {
            let mut loss_at = |delta: f64| -> Result<f64> {
                let n_hidden = probe.hidden.len();
                let layer = if l < n_hidden { &mut probe.hidden[l] } else { &mut probe.heads[l - n_hidden] };
                let w_len = layer.weights.as_slice().len();
                let slot = if p < w_len { &mut layer.weights.as_mut_slice()[p] } else { &mut layer.bias[p - w_len] };
                let orig = *slot;
                *slot = orig + delta;
                let loss = combined_loss(&probe, x, targets, weights);
                let n_hidden = probe.hidden.len();
                let layer = if l < n_hidden { &mut probe.hidden[l] } else { &mut probe.heads[l - n_hidden] };
                let slot = if p < w_len { &mut layer.weights.as_mut_slice()[p] } else { &mut layer.bias[p - w_len] };
                *slot = orig;
                loss
            };
            let numeric = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
            let a = analytic[idx];
            worst_rel = worst_rel.max(relative_error(a, numeric));
            worst_abs = worst_abs.max((a - numeric).abs());
            idx += 1;
        }
    }
    Ok(GradCheck {
        parameters: idx,
        max_relative_error: worst_rel,
        max_absolute_error: worst_abs,
    })
}

// SPDX-License-Identifier: Apache-2.0

//! Reference values and gradients for the text and mask training objectives:
//! token cross-entropy, pixel binary cross-entropy, soft DICE, and their
//! weighted sum. All reductions are means over elements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::BinaryMask;

pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0} predictions vs {1} targets")]
    ShapeMismatch(usize, usize),
    #[error("token id {id} at position {pos} outside vocabulary of {vocab}")]
    TokenOutOfRange { pos: usize, id: usize, vocab: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("probability {value} at index {index} outside [0, 1]")]
    NotProbability { index: usize, value: f64 },
    #[error("invalid loss weights: {0}")]
    BadWeights(String),
    #[error("empty input")]
    Empty,
}

/// Target token ids with one logit row per position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    ids: Vec<usize>,
    logits: Vec<Vec<f64>>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, logits: Vec<Vec<f64>>) -> Result<Self, LossError> {
        if ids.len() != logits.len() {
            return Err(LossError::ShapeMismatch(logits.len(), ids.len()));
        }
        if ids.is_empty() {
            return Err(LossError::Empty);
        }
        let vocab = logits[0].len();
        for (pos, (row, &id)) in logits.iter().zip(&ids).enumerate() {
            if row.len() != vocab {
                return Err(LossError::ShapeMismatch(row.len(), vocab));
            }
            if id >= vocab {
                return Err(LossError::TokenOutOfRange { pos, id, vocab });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(LossError::NonFinite(pos));
            }
        }
        Ok(Self { ids, logits })
    }

    pub fn vocab_size(&self) -> usize {
        self.logits[0].len()
    }
}

/// Mean over positions of `-log softmax(logits)[target]`.
pub fn ce_loss(seq: &TokenSequence) -> f64 {
    let total: f64 = seq
        .logits
        .iter()
        .zip(&seq.ids)
        .map(|(row, &id)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[id]
        })
        .sum();
    total / seq.ids.len() as f64
}

/// Per-pixel foreground probabilities in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPrediction {
    probs: Vec<f64>,
}

impl MaskPrediction {
    pub fn new(probs: Vec<f64>) -> Result<Self, LossError> {
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(LossError::NonFinite(index));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(LossError::NotProbability { index, value });
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_bce: f64,
    pub lambda_dice: f64,
    pub smooth_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_bce: 2.0, lambda_dice: 0.5, smooth_eps: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let ok = self.lambda_bce >= 0.0
            && self.lambda_dice >= 0.0
            && self.lambda_bce + self.lambda_dice > 0.0
            && self.smooth_eps >= 0.0
            && [self.lambda_bce, self.lambda_dice, self.smooth_eps].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(LossError::BadWeights(format!("{self:?}")))
        }
    }
}

fn check_shape(pred: &MaskPrediction, gt: &BinaryMask) -> Result<(), LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::ShapeMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(())
}

/// Pixel-mean binary cross-entropy with `p` clamped to `[ε, 1-ε]`, ε = 1e-7.
pub fn bce_loss(pred: &MaskPrediction, gt: &BinaryMask) -> Result<f64, LossError> {
    bce_loss_with(pred, gt, DEFAULT_CLAMP_EPS)
}

pub fn bce_loss_with(pred: &MaskPrediction, gt: &BinaryMask, clamp_eps: f64) -> Result<f64, LossError> {
    check_shape(pred, gt)?;
    let sum: f64 = pred
        .probs
        .iter()
        .zip(gt.bits())
        .map(|(&p, &g)| {
            let p = p.clamp(clamp_eps, 1.0 - clamp_eps);
            if g {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `1 - (2·Σpg + eps) / (Σp + Σg + eps)`.
pub fn dice_loss(pred: &MaskPrediction, gt: &BinaryMask, smooth_eps: f64) -> Result<f64, LossError> {
    check_shape(pred, gt)?;
    let (inter, sum) = dice_terms(pred, gt);
    if sum + smooth_eps == 0.0 {
        // empty prediction on empty target with no smoothing: perfect overlap
        return Ok(0.0);
    }
    Ok(1.0 - (2.0 * inter + smooth_eps) / (sum + smooth_eps))
}

fn dice_terms(pred: &MaskPrediction, gt: &BinaryMask) -> (f64, f64) {
    let mut inter = 0.0;
    let mut sum = 0.0;
    for (&p, &g) in pred.probs.iter().zip(gt.bits()) {
        let g = g as u8 as f64;
        inter += p * g;
        sum += p + g;
    }
    (inter, sum)
}

/// `lambda_bce · bce + lambda_dice · dice`.
pub fn mdlm_loss(pred: &MaskPrediction, gt: &BinaryMask, w: &LossWeights) -> Result<f64, LossError> {
    w.validate()?;
    Ok(w.lambda_bce * bce_loss(pred, gt)? + w.lambda_dice * dice_loss(pred, gt, w.smooth_eps)?)
}

/// Analytic d(bce)/dp. Zero where the clamp is active.
pub fn bce_grad(pred: &MaskPrediction, gt: &BinaryMask) -> Result<Vec<f64>, LossError> {
    check_shape(pred, gt)?;
    let n = pred.len() as f64;
    let lo = DEFAULT_CLAMP_EPS;
    let hi = 1.0 - DEFAULT_CLAMP_EPS;
    Ok(pred
        .probs
        .iter()
        .zip(gt.bits())
        .map(|(&p, &g)| {
            if p < lo || p > hi {
                0.0
            } else if g {
                -1.0 / (p * n)
            } else {
                1.0 / ((1.0 - p) * n)
            }
        })
        .collect())
}

/// Analytic d(dice)/dp.
pub fn dice_grad(pred: &MaskPrediction, gt: &BinaryMask, smooth_eps: f64) -> Result<Vec<f64>, LossError> {
    check_shape(pred, gt)?;
    let (inter, sum) = dice_terms(pred, gt);
    let num = 2.0 * inter + smooth_eps;
    let den = sum + smooth_eps;
    Ok(gt
        .bits()
        .iter()
        .map(|&g| {
            let g = g as u8 as f64;
            -(2.0 * g * den - num) / (den * den)
        })
        .collect())
}

pub fn mdlm_grad(pred: &MaskPrediction, gt: &BinaryMask, w: &LossWeights) -> Result<Vec<f64>, LossError> {
    w.validate()?;
    let b = bce_grad(pred, gt)?;
    let d = dice_grad(pred, gt, w.smooth_eps)?;
    Ok(b.iter().zip(&d).map(|(b, d)| w.lambda_bce * b + w.lambda_dice * d).collect())
}

/// Central finite differences of a scalar function of probabilities.
pub fn finite_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - b| / max(|a|, |b|)`; pairs that are both
/// below 1e-12 in magnitude count as exact.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let scale = x.abs().max(y.abs());
            if scale < 1e-12 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub bce: f64,
    pub dice: f64,
    pub mdlm: f64,
}

impl GradientCheck {
    pub fn max(&self) -> f64 {
        self.bce.max(self.dice).max(self.mdlm)
    }
}

/// Compares analytic gradients of all three mask losses with central
/// differences at step `h`.
pub fn check_gradients(
    pred: &MaskPrediction,
    gt: &BinaryMask,
    w: &LossWeights,
    h: f64,
) -> Result<GradientCheck, LossError> {
    check_shape(pred, gt)?;
    w.validate()?;
    let eval = |f: &dyn Fn(&MaskPrediction) -> f64| {
        finite_difference(|x| f(&MaskPrediction { probs: x.to_vec() }), pred.probs(), h)
    };
    let fd_bce = eval(&|p| bce_loss(p, gt).unwrap());
    let fd_dice = eval(&|p| dice_loss(p, gt, w.smooth_eps).unwrap());
    let fd_mdlm = eval(&|p| w.lambda_bce * bce_loss(p, gt).unwrap() + w.lambda_dice * dice_loss(p, gt, w.smooth_eps).unwrap());
    Ok(GradientCheck {
        bce: max_relative_error(&bce_grad(pred, gt)?, &fd_bce),
        dice: max_relative_error(&dice_grad(pred, gt, w.smooth_eps)?, &fd_dice),
        mdlm: max_relative_error(&mdlm_grad(pred, gt, w)?, &fd_mdlm),
    })
}

// SPDX-License-Identifier: Apache-2.0

//! `loss-check`: evaluates mask and token loss fixtures.
//!
//! Fixture layout:
//! ```json
//! {"grad_tolerance": 1e-4, "value_tolerance": 1e-6, "step": 1e-5,
//!  "mask_cases": [{"name": "..", "pred": [0.5, 0.5], "gt": [1, 0],
//!                  "weights": {"lambda_bce": 2.0, "lambda_dice": 0.5, "smooth_eps": 0.0},
//!                  "expected": {"bce": 0.693147, "dice": 0.5, "mdlm": 1.636294}}],
//!  "ce_cases": [{"name": "..", "ids": [0], "logits": [[0.0, 0.0]], "expected": 0.693147}]}
//! ```
//! Every field except the case arrays' `pred`/`gt`/`ids`/`logits` is optional.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use defectqa::losses::{bce_loss, ce_loss, check_gradients, dice_loss, mdlm_loss, LossWeights, MaskPrediction, TokenSequence};
use defectqa::mask::BinaryMask;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Fixture {
    #[serde(default = "default_grad_tol")]
    grad_tolerance: f64,
    #[serde(default = "default_value_tol")]
    value_tolerance: f64,
    #[serde(default = "default_step")]
    step: f64,
    #[serde(default)]
    mask_cases: Vec<MaskCase>,
    #[serde(default)]
    ce_cases: Vec<CeCase>,
}

fn default_grad_tol() -> f64 {
    1e-4
}

fn default_value_tol() -> f64 {
    1e-6
}

fn default_step() -> f64 {
    1e-5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskCase {
    #[serde(default)]
    name: String,
    pred: Vec<f64>,
    gt: Vec<u8>,
    #[serde(default)]
    weights: Option<LossWeights>,
    #[serde(default)]
    expected: Option<Expected>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Expected {
    bce: Option<f64>,
    dice: Option<f64>,
    mdlm: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CeCase {
    #[serde(default)]
    name: String,
    ids: Vec<usize>,
    logits: Vec<Vec<f64>>,
    expected: Option<f64>,
}

fn off(actual: f64, expected: Option<f64>, tol: f64) -> bool {
    expected.is_some_and(|e| (actual - e).abs() > tol)
}

/// Returns `Ok(false)` if any value or gradient check exceeds tolerance.
pub fn run(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let fx: Fixture = serde_json::from_str(&text).with_context(|| format!("bad fixture {}", path.display()))?;
    let mut ok = true;
    let mut worst_grad: f64 = 0.0;

    for (i, c) in fx.mask_cases.iter().enumerate() {
        let name = if c.name.is_empty() { format!("mask#{i}") } else { c.name.clone() };
        let w = c.weights.unwrap_or_default();
        let pred = MaskPrediction::new(c.pred.clone()).with_context(|| name.clone())?;
        let gt = BinaryMask::from_bits(c.gt.len() as u32, 1, c.gt.iter().map(|&g| g > 0).collect());
        let bce = bce_loss(&pred, &gt).with_context(|| name.clone())?;
        let dice = dice_loss(&pred, &gt, w.smooth_eps)?;
        let mdlm = mdlm_loss(&pred, &gt, &w)?;
        let grad = check_gradients(&pred, &gt, &w, fx.step)?.max();
        worst_grad = worst_grad.max(grad);
        let exp = c.expected.as_ref();
        let bad = off(bce, exp.and_then(|e| e.bce), fx.value_tolerance)
            || off(dice, exp.and_then(|e| e.dice), fx.value_tolerance)
            || off(mdlm, exp.and_then(|e| e.mdlm), fx.value_tolerance)
            || grad >= fx.grad_tolerance;
        ok &= !bad;
        println!(
            "{} {name}: bce={bce:.6} dice={dice:.6} mdlm={mdlm:.6} grad_err={grad:.3e}",
            if bad { "FAIL" } else { "ok  " }
        );
    }

    for (i, c) in fx.ce_cases.iter().enumerate() {
        let name = if c.name.is_empty() { format!("ce#{i}") } else { c.name.clone() };
        let seq = TokenSequence::new(c.ids.clone(), c.logits.clone()).with_context(|| name.clone())?;
        let ce = ce_loss(&seq);
        let bad = off(ce, c.expected, fx.value_tolerance);
        ok &= !bad;
        println!("{} {name}: ce={ce:.6}", if bad { "FAIL" } else { "ok  " });
    }

    println!("max gradient error: {worst_grad:.3e} (tolerance {:.1e})", fx.grad_tolerance);
    Ok(ok)
}

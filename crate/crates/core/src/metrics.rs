// SPDX-License-Identifier: Apache-2.0

//! Pixel-level anomaly segmentation metrics (AUROC, F1-max, AP) over pooled
//! pixels, computed from a mergeable accumulator.
//!
//! A pixel is predicted anomalous when `score >= threshold`. In exact mode the
//! candidate thresholds are the distinct observed scores; in binned mode they
//! are the lower bin edges, and every bin acts as one tie group.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::mask::BinaryMask;
use crate::scoremap::ScoreMap;

pub const DEFAULT_BINS: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("score map is {score_w}x{score_h} but ground truth is {gt_w}x{gt_h}")]
    DimensionMismatch { score_w: u32, score_h: u32, gt_w: u32, gt_h: u32 },
    #[error("score {score} outside binned range [{lo}, {hi}]")]
    OutOfRange { score: f64, lo: f64, hi: f64 },
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("accumulator configurations differ")]
    ConfigMismatch,
    #[error("invalid binned configuration: {0}")]
    BadConfig(String),
    #[error("metrics undefined with {pos} anomalous and {neg} normal pixels")]
    Degenerate { pos: u64, neg: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Binned,
}

#[derive(Debug, Clone)]
enum Store {
    Exact(Vec<(f64, bool)>),
    Binned { lo: f64, hi: f64, pos: Vec<u64>, neg: Vec<u64> },
}

#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    store: Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegMetrics {
    pub auroc: f64,
    pub f1_max: f64,
    pub ap: f64,
    pub pixels_pos: u64,
    pub pixels_neg: u64,
}

impl SegMetrics {
    /// JSON object with metric values at six decimals.
    pub fn to_json_string(&self) -> String {
        format!(
            "{{\"auroc\":{:.6},\"f1_max\":{:.6},\"ap\":{:.6},\"pixels_pos\":{},\"pixels_neg\":{}}}",
            self.auroc, self.f1_max, self.ap, self.pixels_pos, self.pixels_neg
        )
    }
}

impl fmt::Display for SegMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json_string())
    }
}

impl MetricAccumulator {
    /// Retains every observation; finalize sorts.
    pub fn exact() -> Self {
        Self { store: Store::Exact(Vec::new()) }
    }

    /// Histogram with `bins` equal-width bins over `[lo, hi]`.
    pub fn binned(bins: usize, lo: f64, hi: f64) -> Result<Self, MetricError> {
        if bins == 0 {
            return Err(MetricError::BadConfig("bin count must be positive".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(MetricError::BadConfig(format!("range [{lo}, {hi}]")));
        }
        Ok(Self { store: Store::Binned { lo, hi, pos: vec![0; bins], neg: vec![0; bins] } })
    }

    pub fn mode(&self) -> Mode {
        match self.store {
            Store::Exact(_) => Mode::Exact,
            Store::Binned { .. } => Mode::Binned,
        }
    }

    /// An empty accumulator with the same configuration.
    pub fn empty_like(&self) -> Self {
        match &self.store {
            Store::Exact(_) => Self::exact(),
            Store::Binned { lo, hi, pos, .. } => {
                Self { store: Store::Binned { lo: *lo, hi: *hi, pos: vec![0; pos.len()], neg: vec![0; pos.len()] } }
            }
        }
    }

    pub fn counts(&self) -> (u64, u64) {
        match &self.store {
            Store::Exact(v) => {
                let pos = v.iter().filter(|(_, l)| *l).count() as u64;
                (pos, v.len() as u64 - pos)
            }
            Store::Binned { pos, neg, .. } => (pos.iter().sum(), neg.iter().sum()),
        }
    }

    /// Adds one observation.
    pub fn push(&mut self, score: f64, label: bool) -> Result<(), MetricError> {
        if !score.is_finite() {
            return Err(MetricError::NonFinite(score));
        }
        match &mut self.store {
            Store::Exact(v) => v.push((score, label)),
            Store::Binned { lo, hi, pos, neg } => {
                if score < *lo || score > *hi {
                    return Err(MetricError::OutOfRange { score, lo: *lo, hi: *hi });
                }
                let b = bin_index(score, *lo, *hi, pos.len());
                if label {
                    pos[b] += 1;
                } else {
                    neg[b] += 1;
                }
            }
        }
        Ok(())
    }

    /// Adds every pixel of one image. On error the accumulator is unchanged.
    pub fn accumulate(&mut self, scores: &ScoreMap, gt: &BinaryMask) -> Result<(), MetricError> {
        if (scores.width(), scores.height()) != (gt.width(), gt.height()) {
            return Err(MetricError::DimensionMismatch {
                score_w: scores.width(),
                score_h: scores.height(),
                gt_w: gt.width(),
                gt_h: gt.height(),
            });
        }
        for &s in scores.scores() {
            let s = s as f64;
            if !s.is_finite() {
                return Err(MetricError::NonFinite(s));
            }
            if let Store::Binned { lo, hi, .. } = self.store {
                if s < lo || s > hi {
                    return Err(MetricError::OutOfRange { score: s, lo, hi });
                }
            }
        }
        for (&s, &label) in scores.scores().iter().zip(gt.bits()) {
            self.push(s as f64, label)?;
        }
        Ok(())
    }

    /// Combines two accumulators with identical configuration.
    pub fn merge(mut self, other: Self) -> Result<Self, MetricError> {
        self.merge_from(other)?;
        Ok(self)
    }

    pub fn merge_from(&mut self, other: Self) -> Result<(), MetricError> {
        match (&mut self.store, other.store) {
            (Store::Exact(a), Store::Exact(b)) => a.extend(b),
            (
                Store::Binned { lo, hi, pos, neg },
                Store::Binned { lo: lo2, hi: hi2, pos: pos2, neg: neg2 },
            ) => {
                if lo.to_bits() != lo2.to_bits() || hi.to_bits() != hi2.to_bits() || pos.len() != pos2.len() {
                    return Err(MetricError::ConfigMismatch);
                }
                pos.iter_mut().zip(pos2).for_each(|(a, b)| *a += b);
                neg.iter_mut().zip(neg2).for_each(|(a, b)| *a += b);
            }
            _ => return Err(MetricError::ConfigMismatch),
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<SegMetrics, MetricError> {
        let groups = self.tie_groups();
        curve_metrics(&groups)
    }

    /// (positives, negatives) per distinct threshold, highest threshold first.
    fn tie_groups(&self) -> Vec<(u64, u64)> {
        match &self.store {
            Store::Exact(v) => {
                let mut sorted = v.clone();
                sorted.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
                let mut groups: Vec<(u64, u64)> = Vec::new();
                let mut prev = f64::NAN;
                for (s, label) in sorted {
                    // -0.0 and 0.0 compare equal here, as scores
                    if groups.is_empty() || s != prev {
                        groups.push((0, 0));
                        prev = s;
                    }
                    let g = groups.last_mut().unwrap();
                    if label {
                        g.0 += 1;
                    } else {
                        g.1 += 1;
                    }
                }
                groups
            }
            Store::Binned { pos, neg, .. } => pos
                .iter()
                .zip(neg)
                .rev()
                .filter(|(p, n)| **p + **n > 0)
                .map(|(&p, &n)| (p, n))
                .collect(),
        }
    }
}

fn bin_index(score: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let t = (score - lo) / (hi - lo);
    ((t * bins as f64) as usize).min(bins - 1)
}

/// Metrics from tie groups ordered by descending threshold.
fn curve_metrics(groups: &[(u64, u64)]) -> Result<SegMetrics, MetricError> {
    let pos: u64 = groups.iter().map(|g| g.0).sum();
    let neg: u64 = groups.iter().map(|g| g.1).sum();
    if pos == 0 || neg == 0 {
        return Err(MetricError::Degenerate { pos, neg });
    }

    // Mann-Whitney with ties counted half: 2·U = Σ n_g·(2·tp_before + p_g)
    let mut twice_u: u128 = 0;
    let mut tp: u64 = 0;
    let mut fp: u64 = 0;
    let mut f1_max: f64 = 0.0;
    let mut ap: f64 = 0.0;
    for &(p, n) in groups {
        twice_u += n as u128 * (2 * tp as u128 + p as u128);
        tp += p;
        fp += n;
        // F1 = 2TP / (2TP + FP + FN) = 2TP / (TP + FP + P)
        let f1 = 2.0 * tp as f64 / (tp + fp + pos) as f64;
        f1_max = f1_max.max(f1);
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    let auroc = twice_u as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(SegMetrics { auroc, f1_max, ap: ap.min(1.0), pixels_pos: pos, pixels_neg: neg })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact(scores: &[f64], labels: &[u8]) -> SegMetrics {
        let mut acc = MetricAccumulator::exact();
        for (&s, &l) in scores.iter().zip(labels) {
            acc.push(s, l == 1).unwrap();
        }
        acc.finalize().unwrap()
    }

    #[test]
    fn auroc_example() {
        let m = exact(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        assert!((m.auroc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn perfect_separation() {
        let m = exact(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]);
        assert_eq!((m.auroc, m.f1_max, m.ap), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_ties() {
        let m = exact(&[0.3; 6], &[0, 1, 0, 1, 1, 0]);
        assert_eq!(m.auroc, 0.5);
        assert!((m.ap - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ap_and_f1_examples() {
        let m = exact(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]);
        assert!((m.ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((m.f1_max - 0.8).abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_nan() {
        let mut acc = MetricAccumulator::exact();
        acc.push(0.5, true).unwrap();
        assert_eq!(acc.finalize(), Err(MetricError::Degenerate { pos: 1, neg: 0 }));
        assert!(matches!(acc.push(f64::NAN, false), Err(MetricError::NonFinite(_))));
        assert!(matches!(acc.push(f64::INFINITY, false), Err(MetricError::NonFinite(_))));
    }

    #[test]
    fn accumulate_counts_and_dimension_check() {
        let scores = ScoreMap::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let gt = BinaryMask::from_pixels(2, 2, [(1, 1)]).unwrap();
        let mut acc = MetricAccumulator::binned(16, 0.0, 1.0).unwrap();
        acc.accumulate(&scores, &gt).unwrap();
        assert_eq!(acc.counts(), (1, 3));
        let wrong = BinaryMask::new(3, 2);
        assert!(matches!(acc.accumulate(&scores, &wrong), Err(MetricError::DimensionMismatch { .. })));
        let nan = ScoreMap::new(2, 2, vec![0.1, f32::NAN, 0.3, 0.4]);
        assert!(nan.is_err());
    }

    #[test]
    fn binned_range_enforced_atomically() {
        let scores = ScoreMap::new(2, 1, vec![0.5, 1.5]).unwrap();
        let gt = BinaryMask::from_pixels(2, 1, [(0, 0)]).unwrap();
        let mut acc = MetricAccumulator::binned(8, 0.0, 1.0).unwrap();
        assert!(matches!(acc.accumulate(&scores, &gt), Err(MetricError::OutOfRange { .. })));
        assert_eq!(acc.counts(), (0, 0));
    }

    #[test]
    fn merge_rules() {
        let a = MetricAccumulator::binned(8, 0.0, 1.0).unwrap();
        let b = MetricAccumulator::binned(16, 0.0, 1.0).unwrap();
        assert_eq!(a.clone().merge(b).unwrap_err(), MetricError::ConfigMismatch);
        assert_eq!(a.clone().merge(MetricAccumulator::exact()).unwrap_err(), MetricError::ConfigMismatch);
        let mut c = a.clone();
        c.push(0.9, true).unwrap();
        c.push(0.1, false).unwrap();
        let m = c.clone().merge(a.empty_like()).unwrap();
        assert_eq!(m.finalize().unwrap(), c.finalize().unwrap());
    }

    #[test]
    fn degenerate_range_single_bin() {
        let mut acc = MetricAccumulator::binned(4, 0.5, 0.5).unwrap();
        acc.push(0.5, true).unwrap();
        acc.push(0.5, false).unwrap();
        assert_eq!(acc.finalize().unwrap().auroc, 0.5);
        assert!(MetricAccumulator::binned(0, 0.0, 1.0).is_err());
        assert!(MetricAccumulator::binned(4, 1.0, 0.0).is_err());
    }

    #[test]
    fn json_six_decimals() {
        let m = exact(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        let s = m.to_json_string();
        assert!(s.starts_with("{\"auroc\":0.750000,\"f1_max\":"), "{s}");
        assert!(s.ends_with("\"pixels_pos\":2,\"pixels_neg\":2}"), "{s}");
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["auroc"], 0.75);
    }
}

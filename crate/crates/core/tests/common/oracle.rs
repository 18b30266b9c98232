// SPDX-License-Identifier: Apache-2.0

//! Brute-force reference implementations of the pixel metrics. Each works
//! straight from the definition, with no sorting or cumulative counts.

#![allow(dead_code)]

/// P(score_pos > score_neg) + ½·P(tie), over all pos/neg pairs.
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn distinct_desc(scores: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = Vec::new();
    for &s in scores {
        if !t.contains(&s) {
            t.push(s);
        }
    }
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t
}

/// (tp, fp, fn) for the rule `score >= t`, by direct count.
fn confusion(scores: &[f64], labels: &[bool], t: f64) -> (f64, f64, f64) {
    let mut c = (0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= t, l) {
            (true, true) => c.0 += 1.0,
            (true, false) => c.1 += 1.0,
            (false, true) => c.2 += 1.0,
            _ => {}
        }
    }
    c
}

/// Σ (R_k − R_{k−1})·P_k over thresholds taken from high to low.
pub fn ap_enumeration(scores: &[f64], labels: &[bool]) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in distinct_desc(scores) {
        let (tp, fp, fnn) = confusion(scores, labels, t);
        let recall = tp / (tp + fnn);
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Maximum F1 of the positive class over every distinct threshold.
pub fn f1_sweep(scores: &[f64], labels: &[bool]) -> f64 {
    distinct_desc(scores)
        .into_iter()
        .map(|t| {
            let (tp, fp, fnn) = confusion(scores, labels, t);
            if tp == 0.0 {
                return 0.0;
            }
            let p = tp / (tp + fp);
            let r = tp / (tp + fnn);
            2.0 * p * r / (p + r)
        })
        .fold(0.0, f64::max)
}

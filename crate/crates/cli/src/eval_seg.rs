// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use defectqa::mask::{decode_mask, BinaryMask};
use defectqa::metrics::{MetricAccumulator, MetricError, SegMetrics};
use defectqa::scoremap::ScoreMap;
use rayon::prelude::*;

use crate::{Log, MetricMode};

pub struct Options {
    pub mode: MetricMode,
    pub bins: usize,
    pub range: Option<(f64, f64)>,
    pub per_image: bool,
}

/// Score-map files in `pred_dir`, each paired with `<stem>.png` in `gt_dir`.
fn pairs(pred_dir: &Path, gt_dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(pred_dir).with_context(|| format!("cannot list {}", pred_dir.display()))? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let stem = path.file_stem().context("file without a name")?.to_owned();
        let mut gt = gt_dir.join(&stem);
        gt.set_extension("png");
        if !gt.is_file() {
            bail!("no ground-truth mask {} for {}", gt.display(), path.display());
        }
        out.push((path, gt));
    }
    out.sort();
    if out.is_empty() {
        bail!("no score maps in {}", pred_dir.display());
    }
    Ok(out)
}

fn load(pred: &Path, gt: &Path) -> Result<(ScoreMap, BinaryMask)> {
    let scores = ScoreMap::read(pred).with_context(|| pred.display().to_string())?;
    let bytes = fs::read(gt).with_context(|| gt.display().to_string())?;
    let mask = decode_mask(&bytes).with_context(|| gt.display().to_string())?;
    Ok((scores, mask))
}

fn score_range(pairs: &[(PathBuf, PathBuf)]) -> Result<(f64, f64)> {
    let ranges: Vec<(f32, f32)> = pairs
        .par_iter()
        .map(|(p, _)| {
            let map = ScoreMap::read(p).with_context(|| p.display().to_string())?;
            map.range().with_context(|| format!("{} is empty", p.display()))
        })
        .collect::<Result<_>>()?;
    let lo = ranges.iter().map(|r| r.0).fold(f32::INFINITY, f32::min);
    let hi = ranges.iter().map(|r| r.1).fold(f32::NEG_INFINITY, f32::max);
    Ok((lo as f64, hi as f64))
}

pub fn run(pred_dir: &Path, gt_dir: &Path, opts: &Options, log: &mut Log) -> Result<SegMetrics> {
    let pairs = pairs(pred_dir, gt_dir)?;
    let template = match opts.mode {
        MetricMode::Exact => MetricAccumulator::exact(),
        MetricMode::Binned => {
            let (lo, hi) = match opts.range {
                Some(r) => r,
                None => score_range(&pairs)?,
            };
            MetricAccumulator::binned(opts.bins, lo, hi)?
        }
    };

    let per_file: Vec<MetricAccumulator> = pairs
        .par_iter()
        .map(|(p, g)| {
            let (scores, mask) = load(p, g)?;
            let mut acc = template.empty_like();
            acc.accumulate(&scores, &mask).with_context(|| p.display().to_string())?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    if !opts.per_image {
        let mut total = template.empty_like();
        for acc in per_file {
            total.merge_from(acc)?;
        }
        return Ok(total.finalize()?);
    }

    let mut sum = (0.0, 0.0, 0.0);
    let mut used = 0usize;
    let (mut pos, mut neg) = (0, 0);
    for ((path, _), acc) in pairs.iter().zip(&per_file) {
        let (p, n) = acc.counts();
        pos += p;
        neg += n;
        match acc.finalize() {
            Ok(m) => {
                sum = (sum.0 + m.auroc, sum.1 + m.f1_max, sum.2 + m.ap);
                used += 1;
            }
            Err(MetricError::Degenerate { .. }) => {
                log.warn(format!("{}: skipped, needs both anomalous and normal pixels", path.display()))
            }
            Err(e) => return Err(e.into()),
        }
    }
    if used == 0 {
        bail!("no image has both anomalous and normal pixels");
    }
    let k = used as f64;
    Ok(SegMetrics { auroc: sum.0 / k, f1_max: sum.1 / k, ap: sum.2 / k, pixels_pos: pos, pixels_neg: neg })
}

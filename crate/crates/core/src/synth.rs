// SPDX-License-Identifier: Apache-2.0

//! Seeded synthetic datasets: a manifest plus one PNG mask per defect,
//! each mask an axis-aligned ellipse or rectangle at a random position.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::manifest::{DatasetManifest, DefectInstance, SampleRecord};
use crate::mask::{encode_mask, BinaryMask};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub dataset_name: String,
    pub samples: usize,
    pub anomalous_fraction: f64,
    pub max_defects: usize,
    pub width: u32,
    pub height: u32,
    pub object_classes: Vec<String>,
    pub defect_classes: Vec<String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dataset_name: "synthetic".into(),
            samples: 100,
            anomalous_fraction: 0.5,
            max_defects: 2,
            width: 48,
            height: 48,
            object_classes: ["bottle", "cable", "capsule", "screw"].map(String::from).to_vec(),
            defect_classes: ["scratch", "dent", "crack", "hole", "stain", "contamination"].map(String::from).to_vec(),
            seed: 0,
        }
    }
}

/// Random blob fully inside a `w`×`h` canvas.
pub fn random_blob(rng: &mut impl Rng, w: u32, h: u32) -> BinaryMask {
    let mut mask = BinaryMask::new(w, h);
    let bw = rng.gen_range(1..=(w / 3).max(1));
    let bh = rng.gen_range(1..=(h / 3).max(1));
    let x0 = rng.gen_range(0..=w - bw);
    let y0 = rng.gen_range(0..=h - bh);
    if rng.gen_bool(0.5) {
        mask.fill_rect(x0, y0, x0 + bw - 1, y0 + bh - 1);
    } else {
        let (cx, cy) = (x0 as f64 + (bw as f64 - 1.0) / 2.0, y0 as f64 + (bh as f64 - 1.0) / 2.0);
        let (rx, ry) = ((bw as f64 / 2.0).max(0.5), (bh as f64 / 2.0).max(0.5));
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                if dx * dx + dy * dy <= 1.0 {
                    mask.set(x, y, true);
                }
            }
        }
        if mask.is_empty() {
            mask.set(cx.round() as u32, cy.round() as u32, true);
        }
    }
    mask
}

/// Writes `manifest.json` and `masks/*.png` under `dir`; returns the manifest path.
pub fn write_synthetic_dataset(dir: &Path, cfg: &SynthConfig) -> io::Result<PathBuf> {
    fs::create_dir_all(dir.join("masks"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut jobs: Vec<(PathBuf, u64)> = Vec::new();
    for i in 0..cfg.samples {
        let id = format!("{:06}", i);
        let anomalous = rng.gen_bool(cfg.anomalous_fraction.clamp(0.0, 1.0));
        let n_defects = if anomalous { rng.gen_range(1..=cfg.max_defects.max(1)) } else { 0 };
        let defects = (0..n_defects)
            .map(|k| {
                let rel = PathBuf::from(format!("masks/{id}_{k}.png"));
                jobs.push((dir.join(&rel), rng.gen()));
                DefectInstance {
                    mask_path: rel,
                    defect_class: cfg.defect_classes[rng.gen_range(0..cfg.defect_classes.len())].clone(),
                }
            })
            .collect();
        samples.push(SampleRecord {
            id: id.clone(),
            image_path: PathBuf::from(format!("images/{id}.png")),
            width: cfg.width,
            height: cfg.height,
            object_class: cfg.object_classes[rng.gen_range(0..cfg.object_classes.len())].clone(),
            anomalous,
            defects,
        });
    }
    jobs.par_iter().try_for_each(|(path, blob_seed)| {
        let mut blob_rng = ChaCha8Rng::seed_from_u64(*blob_seed);
        let mask = random_blob(&mut blob_rng, cfg.width, cfg.height);
        let bytes = encode_mask(&mask).map_err(|e| io::Error::other(e.to_string()))?;
        fs::write(path, bytes)
    })?;

    let manifest = DatasetManifest {
        dataset_name: cfg.dataset_name.clone(),
        object_classes: cfg.object_classes.clone(),
        defect_classes: cfg.defect_classes.clone(),
        samples,
        root: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, manifest.to_json_pretty())?;
    Ok(path)
}

// SPDX-License-Identifier: Apache-2.0

//! Dataset manifest: the single JSON document describing a source anomaly
//! dataset (images, per-defect mask files, object and defect vocabularies).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{decode_mask, BinaryMask, MaskError};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest is not valid JSON: {0}")]
    Parse(serde_json::Error),
    #[error("manifest schema error: {0}")]
    Schema(serde_json::Error),
    #[error("manifest integrity error in sample {sample:?}: {reason}")]
    Integrity { sample: String, reason: String },
}

impl ManifestError {
    fn integrity(sample: &str, reason: impl Into<String>) -> Self {
        Self::Integrity { sample: sample.to_owned(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectInstance {
    #[serde(rename = "mask")]
    pub mask_path: PathBuf,
    pub defect_class: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    #[serde(rename = "image")]
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub object_class: String,
    pub anomalous: bool,
    #[serde(default)]
    pub defects: Vec<DefectInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(rename = "dataset")]
    pub dataset_name: String,
    pub object_classes: Vec<String>,
    pub defect_classes: Vec<String>,
    pub samples: Vec<SampleRecord>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Parses and validates manifest bytes; `root` anchors relative paths.
    pub fn from_slice(bytes: &[u8], root: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        let mut manifest: Self = serde_json::from_slice(bytes).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => ManifestError::Schema(e),
            _ => ManifestError::Parse(e),
        })?;
        manifest.root = root.into();
        manifest.check()?;
        Ok(manifest)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn sample(&self, id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    fn check(&self) -> Result<(), ManifestError> {
        let objects: HashSet<&str> = self.object_classes.iter().map(String::as_str).collect();
        let defects: HashSet<&str> = self.defect_classes.iter().map(String::as_str).collect();
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(ManifestError::integrity(&s.id, "duplicate sample id"));
            }
            if s.width == 0 || s.height == 0 {
                return Err(ManifestError::integrity(&s.id, "width and height must be positive"));
            }
            if !objects.contains(s.object_class.as_str()) {
                return Err(ManifestError::integrity(
                    &s.id,
                    format!("object class {:?} not in object_classes", s.object_class),
                ));
            }
            if s.anomalous == s.defects.is_empty() {
                return Err(ManifestError::integrity(
                    &s.id,
                    format!("anomalous={} inconsistent with {} defect(s)", s.anomalous, s.defects.len()),
                ));
            }
            for d in &s.defects {
                if !defects.contains(d.defect_class.as_str()) {
                    return Err(ManifestError::integrity(
                        &s.id,
                        format!("defect class {:?} not in defect_classes", d.defect_class),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Reads and validates a manifest file; relative paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ManifestError::Io { path: path.to_owned(), source })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::from_slice(&bytes, root)
}

/// Reads and decodes one defect's mask.
pub fn load_defect_mask(manifest: &DatasetManifest, defect: &DefectInstance) -> Result<BinaryMask, MaskIssue> {
    let path = manifest.resolve(&defect.mask_path);
    let bytes = fs::read(&path).map_err(|e| MaskIssue::Unreadable(format!("{}: {e}", path.display())))?;
    decode_mask(&bytes).map_err(MaskIssue::Undecodable)
}

/// Why a defect mask is not build-ready.
#[derive(Debug, Error)]
pub enum MaskIssue {
    #[error("unreadable mask: {0}")]
    Unreadable(String),
    #[error("undecodable mask: {0}")]
    Undecodable(MaskError),
    #[error("dimension mismatch: mask {mask_w}x{mask_h}, sample {sample_w}x{sample_h}")]
    DimensionMismatch { mask_w: u32, mask_h: u32, sample_w: u32, sample_h: u32 },
    #[error("empty mask")]
    EmptyMask,
}

/// Loads a defect mask and checks it against the owning sample.
pub fn checked_defect_mask(
    manifest: &DatasetManifest,
    sample: &SampleRecord,
    defect: &DefectInstance,
) -> Result<BinaryMask, MaskIssue> {
    let mask = load_defect_mask(manifest, defect)?;
    if (mask.width(), mask.height()) != (sample.width, sample.height) {
        return Err(MaskIssue::DimensionMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            sample_w: sample.width,
            sample_h: sample.height,
        });
    }
    if mask.is_empty() {
        return Err(MaskIssue::EmptyMask);
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskFailure {
    pub sample_id: String,
    pub defect_index: usize,
    pub mask: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub masks_checked: usize,
    pub failures: Vec<MaskFailure>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn failed_samples(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.failures.iter().map(|f| f.sample_id.as_str()).collect();
        ids.dedup();
        ids
    }
}

/// Decodes every defect mask and checks dimensions and non-emptiness.
/// Per-instance I/O failures are reported, never fatal.
pub fn validate_masks(manifest: &DatasetManifest) -> ValidationReport {
    let jobs: Vec<(&SampleRecord, usize, &DefectInstance)> = manifest
        .samples
        .iter()
        .flat_map(|s| s.defects.iter().enumerate().map(move |(i, d)| (s, i, d)))
        .collect();
    let mut failures: Vec<MaskFailure> = jobs
        .par_iter()
        .filter_map(|&(s, i, d)| {
            checked_defect_mask(manifest, s, d).err().map(|issue| MaskFailure {
                sample_id: s.id.clone(),
                defect_index: i,
                mask: d.mask_path.clone(),
                reason: issue.to_string(),
            })
        })
        .collect();
    failures.sort_by(|a, b| (&a.sample_id, a.defect_index).cmp(&(&b.sample_id, b.defect_index)));
    ValidationReport { samples: manifest.samples.len(), masks_checked: jobs.len(), failures }
}

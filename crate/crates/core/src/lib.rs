// SPDX-License-Identifier: Apache-2.0

//! Rule-based synthesis of defect question-answering data from industrial
//! anomaly datasets, plus the evaluation side: answer scoring, pixel-level
//! segmentation metrics, and reference loss numerics.

pub mod forge;
pub mod losses;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub mod scoremap;
pub mod scoring;
pub mod synth;

pub use forge::{build_dataset, BuildConfig, BuildOutput, QaMeta, QaRecord, Statistics, Task};
pub use losses::{LossWeights, MaskPrediction, TokenSequence};
pub use manifest::{load_manifest, validate_masks, DatasetManifest, DefectInstance, SampleRecord, ValidationReport};
pub use mask::{BinaryMask, BoundingBox, GridRegion};
pub use metrics::{MetricAccumulator, SegMetrics};
pub use scoremap::ScoreMap;
pub use scoring::{PredictionRecord, TaskReport};

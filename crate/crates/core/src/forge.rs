// SPDX-License-Identifier: Apache-2.0

//! Rule-based generation of the four defect question-answering tasks:
//! anomaly discrimination (AD), rough defect localization on a 3×3 grid
//! (RDL), defect fine mapping as a bounding box (DFM) and defect
//! classification (DC).
//!
//! Every record carries a content-derived `qid`; its random choices come
//! from a generator seeded by hashing `(seed, qid)`, so output does not
//! depend on iteration order or thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::manifest::{checked_defect_mask, DatasetManifest, MaskIssue, SampleRecord};
use crate::mask::{grid_region, tight_bbox, BinaryMask, BoundingBox, GridRegion, MaskError};

pub const OPTION_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

const AD_TEMPLATE: &str = "Is there any defect in the {object_class}?";
const RDL_TEMPLATE: &str = "In which region of the image is the defect on the {object_class} located?";
const DFM_TEMPLATE: &str =
    "Give the bounding box of the defect on the {object_class} as [x_min,y_min,x_max,y_max] in pixel coordinates.";
const DC_TEMPLATE: &str = "What type of defect is present on the {object_class}?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    AD,
    RDL,
    DFM,
    DC,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::AD, Task::RDL, Task::DFM, Task::DC];

    pub fn code(&self) -> &'static str {
        match self {
            Task::AD => "AD",
            Task::RDL => "RDL",
            Task::DFM => "DFM",
            Task::DC => "DC",
        }
    }

    /// Number of answer options, `None` for the open-ended DFM task.
    pub fn option_count(&self) -> Option<usize> {
        match self {
            Task::AD => Some(2),
            Task::RDL | Task::DC => Some(4),
            Task::DFM => None,
        }
    }

    fn template(&self) -> &'static str {
        match self {
            Task::AD => AD_TEMPLATE,
            Task::RDL => RDL_TEMPLATE,
            Task::DFM => DFM_TEMPLATE,
            Task::DC => DC_TEMPLATE,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown task {s:?} (expected ad, rdl, dfm or dc)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildConfig {
    pub seed: u64,
    pub tasks: BTreeSet<Task>,
    pub fallback_defect_classes: Vec<String>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self { seed: 42, tasks: Task::ALL.into_iter().collect(), fallback_defect_classes: Vec::new() }
    }
}

impl BuildConfig {
    pub fn with_tasks(seed: u64, tasks: impl IntoIterator<Item = Task>) -> Self {
        Self { seed, tasks: tasks.into_iter().collect(), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaMeta {
    pub dataset: String,
    pub object_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_index: Option<usize>,
}

/// One generated instruction item. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub qid: String,
    pub image: String,
    pub task: Task,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub answer: String,
    pub meta: QaMeta,
}

impl QaRecord {
    /// Zero-based index of the correct option for choice tasks.
    pub fn answer_index(&self) -> Option<usize> {
        let mut chars = self.answer.chars();
        let c = chars.next()?;
        if chars.next().is_some() {
            return None;
        }
        OPTION_LETTERS.iter().position(|&l| l == c)
    }

    /// Option text without its "A. " label.
    pub fn option_text(&self, index: usize) -> Option<&str> {
        self.options.as_ref()?.get(index).map(|o| o.get(3..).unwrap_or(""))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("QaRecord serializes")
    }
}

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    MaskFile(#[from] MaskIssue),
    #[error("need 3 distinct distractor classes, only {available} available")]
    VocabularyExhausted { available: usize },
    #[error("sample {sample:?} has no defect #{index}")]
    NoSuchDefect { sample: String, index: usize },
    #[error("sample {0:?} is not anomalous")]
    NotAnomalous(String),
}

/// Content-derived record id: task prefix plus a hash of
/// `(dataset, sample id, task, defect index)`.
pub fn make_qid(dataset: &str, sample_id: &str, task: Task, defect_index: Option<usize>) -> String {
    let mut h = Sha256::new();
    h.update(dataset.as_bytes());
    h.update([0]);
    h.update(sample_id.as_bytes());
    h.update([0]);
    h.update(task.code().as_bytes());
    h.update([0]);
    if let Some(i) = defect_index {
        h.update((i as u64).to_le_bytes());
    }
    let digest = h.finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("{}-{hex}", task.code().to_ascii_lowercase())
}

/// Generator for one record, seeded from `(seed, qid)`.
pub fn record_rng(seed: u64, qid: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(qid.as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(key)
}

fn question(task: Task, object_class: &str) -> String {
    task.template().replace("{object_class}", object_class)
}

/// Shuffles `correct` among `distractors`; returns labelled options and the answer letter.
fn shuffle_options(correct: &str, distractors: Vec<String>, rng: &mut ChaCha8Rng) -> (Vec<String>, String) {
    let mut opts: Vec<(bool, String)> = std::iter::once((true, correct.to_owned()))
        .chain(distractors.into_iter().map(|d| (false, d)))
        .collect();
    opts.shuffle(rng);
    let answer = opts.iter().position(|(ok, _)| *ok).expect("correct option present");
    let labelled = opts.into_iter().enumerate().map(|(i, (_, text))| format!("{}. {text}", OPTION_LETTERS[i])).collect();
    (labelled, OPTION_LETTERS[answer].to_string())
}

fn image_string(sample: &SampleRecord) -> String {
    sample.image_path.to_string_lossy().replace('\\', "/")
}

fn base_meta(manifest: &DatasetManifest, sample: &SampleRecord) -> QaMeta {
    QaMeta {
        dataset: manifest.dataset_name.clone(),
        object_class: sample.object_class.clone(),
        defect_class: None,
        region: None,
        bbox: None,
        defect_index: None,
    }
}

fn defect_class(sample: &SampleRecord, index: usize) -> Result<&str, ForgeError> {
    if !sample.anomalous {
        return Err(ForgeError::NotAnomalous(sample.id.clone()));
    }
    sample
        .defects
        .get(index)
        .map(|d| d.defect_class.as_str())
        .ok_or_else(|| ForgeError::NoSuchDefect { sample: sample.id.clone(), index })
}

/// Anomaly discrimination: Yes/No in seeded order, "Yes" iff the sample is anomalous.
pub fn gen_ad(manifest: &DatasetManifest, sample: &SampleRecord, cfg: &BuildConfig) -> QaRecord {
    let qid = make_qid(&manifest.dataset_name, &sample.id, Task::AD, None);
    let mut rng = record_rng(cfg.seed, &qid);
    let (correct, wrong) = if sample.anomalous { ("Yes", "No") } else { ("No", "Yes") };
    let (options, answer) = shuffle_options(correct, vec![wrong.to_owned()], &mut rng);
    QaRecord {
        qid,
        image: image_string(sample),
        task: Task::AD,
        question: question(Task::AD, &sample.object_class),
        options: Some(options),
        answer,
        meta: base_meta(manifest, sample),
    }
}

/// Rough localization: the dominant grid cell of the defect among three
/// other cell names.
pub fn gen_rdl(
    manifest: &DatasetManifest,
    sample: &SampleRecord,
    defect_index: usize,
    mask: &BinaryMask,
    cfg: &BuildConfig,
) -> Result<QaRecord, ForgeError> {
    let class = defect_class(sample, defect_index)?;
    let region = grid_region(mask)?;
    let qid = make_qid(&manifest.dataset_name, &sample.id, Task::RDL, Some(defect_index));
    let mut rng = record_rng(cfg.seed, &qid);
    let others: Vec<GridRegion> = GridRegion::all().filter(|r| *r != region).collect();
    let distractors = others.choose_multiple(&mut rng, 3).map(|r| r.name().to_owned()).collect();
    let (options, answer) = shuffle_options(region.name(), distractors, &mut rng);
    let mut meta = base_meta(manifest, sample);
    meta.defect_class = Some(class.to_owned());
    meta.region = Some(region.name().to_owned());
    meta.defect_index = Some(defect_index);
    Ok(QaRecord {
        qid,
        image: image_string(sample),
        task: Task::RDL,
        question: question(Task::RDL, &sample.object_class),
        options: Some(options),
        answer,
        meta,
    })
}

/// Fine mapping: the tight box over every pixel of the defect's mask.
pub fn gen_dfm(
    manifest: &DatasetManifest,
    sample: &SampleRecord,
    defect_index: usize,
    mask: &BinaryMask,
    _cfg: &BuildConfig,
) -> Result<QaRecord, ForgeError> {
    let class = defect_class(sample, defect_index)?;
    let bbox = tight_bbox(mask)?;
    let mut meta = base_meta(manifest, sample);
    meta.defect_class = Some(class.to_owned());
    meta.bbox = Some(bbox);
    meta.defect_index = Some(defect_index);
    Ok(QaRecord {
        qid: make_qid(&manifest.dataset_name, &sample.id, Task::DFM, Some(defect_index)),
        image: image_string(sample),
        task: Task::DFM,
        question: question(Task::DFM, &sample.object_class),
        options: None,
        answer: bbox.to_string(),
        meta,
    })
}

/// Classification: the true class among three distractors drawn from the
/// manifest vocabulary, padded from the fallback list when it runs short.
pub fn gen_dc(
    manifest: &DatasetManifest,
    sample: &SampleRecord,
    defect_index: usize,
    cfg: &BuildConfig,
) -> Result<QaRecord, ForgeError> {
    let class = defect_class(sample, defect_index)?;
    let qid = make_qid(&manifest.dataset_name, &sample.id, Task::DC, Some(defect_index));
    let mut rng = record_rng(cfg.seed, &qid);

    // Sorted so the draw is independent of vocabulary order in the file.
    let primary: Vec<&str> = manifest
        .defect_classes
        .iter()
        .map(String::as_str)
        .filter(|&c| c != class)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut distractors: Vec<String> = primary.choose_multiple(&mut rng, 3).map(|s| s.to_string()).collect();
    if distractors.len() < 3 {
        let fallback: Vec<&str> = cfg
            .fallback_defect_classes
            .iter()
            .map(String::as_str)
            .filter(|&c| c != class && !primary.contains(&c))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let need = 3 - distractors.len();
        if fallback.len() < need {
            return Err(ForgeError::VocabularyExhausted { available: distractors.len() + fallback.len() });
        }
        distractors.extend(fallback.choose_multiple(&mut rng, need).map(|s| s.to_string()));
    }
    let (options, answer) = shuffle_options(class, distractors, &mut rng);
    let mut meta = base_meta(manifest, sample);
    meta.defect_class = Some(class.to_owned());
    meta.defect_index = Some(defect_index);
    Ok(QaRecord {
        qid,
        image: image_string(sample),
        task: Task::DC,
        question: question(Task::DC, &sample.object_class),
        options: Some(options),
        answer,
        meta,
    })
}

/// Supplies decoded defect masks to the builder.
pub trait MaskSource: Sync {
    fn mask(&self, manifest: &DatasetManifest, sample: &SampleRecord, defect_index: usize)
        -> Result<BinaryMask, MaskIssue>;
}

/// Reads masks from disk relative to the manifest root, checking them
/// against the owning sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct FsMasks;

impl MaskSource for FsMasks {
    fn mask(&self, manifest: &DatasetManifest, sample: &SampleRecord, i: usize) -> Result<BinaryMask, MaskIssue> {
        checked_defect_mask(manifest, sample, &sample.defects[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BuildFailure {
    pub sample_id: String,
    pub task: Task,
    pub defect_index: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutput {
    /// Sorted by qid.
    pub records: Vec<QaRecord>,
    pub failures: Vec<BuildFailure>,
}

impl BuildOutput {
    pub fn write_jsonl<W: Write>(&self, out: W) -> io::Result<()> {
        write_jsonl(&self.records, out)
    }
}

/// Builds every enabled task from masks on disk.
pub fn build_dataset(manifest: &DatasetManifest, cfg: &BuildConfig) -> BuildOutput {
    build_dataset_with(manifest, cfg, &FsMasks)
}

/// AD: one record per sample. RDL, DFM, DC: one record per defect instance.
/// Failing records are skipped and reported.
pub fn build_dataset_with(manifest: &DatasetManifest, cfg: &BuildConfig, masks: &dyn MaskSource) -> BuildOutput {
    let per_sample: Vec<(Vec<QaRecord>, Vec<BuildFailure>)> = manifest
        .samples
        .par_iter()
        .map(|sample| build_sample(manifest, sample, cfg, masks))
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_sample {
        records.extend(r);
        failures.extend(f);
    }
    records.par_sort_unstable_by(|a, b| a.qid.cmp(&b.qid));

    let mut unique: Vec<QaRecord> = Vec::with_capacity(records.len());
    for rec in records {
        if unique.last().is_some_and(|prev| prev.qid == rec.qid) {
            failures.push(BuildFailure {
                sample_id: rec.image.clone(),
                task: rec.task,
                defect_index: rec.meta.defect_index,
                reason: format!("qid collision on {}", rec.qid),
            });
            continue;
        }
        unique.push(rec);
    }
    failures.sort_by(|a, b| {
        (&a.sample_id, a.task, a.defect_index).cmp(&(&b.sample_id, b.task, b.defect_index))
    });
    BuildOutput { records: unique, failures }
}

fn build_sample(
    manifest: &DatasetManifest,
    sample: &SampleRecord,
    cfg: &BuildConfig,
    masks: &dyn MaskSource,
) -> (Vec<QaRecord>, Vec<BuildFailure>) {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut fail = |task, idx, e: ForgeError| {
        failures.push(BuildFailure { sample_id: sample.id.clone(), task, defect_index: idx, reason: e.to_string() })
    };

    if cfg.tasks.contains(&Task::AD) {
        records.push(gen_ad(manifest, sample, cfg));
    }
    if !sample.anomalous {
        return (records, failures);
    }
    let wants_mask = cfg.tasks.contains(&Task::RDL) || cfg.tasks.contains(&Task::DFM);
    for i in 0..sample.defects.len() {
        if wants_mask {
            match masks.mask(manifest, sample, i) {
                Ok(mask) => {
                    if cfg.tasks.contains(&Task::RDL) {
                        match gen_rdl(manifest, sample, i, &mask, cfg) {
                            Ok(r) => records.push(r),
                            Err(e) => fail(Task::RDL, Some(i), e),
                        }
                    }
                    if cfg.tasks.contains(&Task::DFM) {
                        match gen_dfm(manifest, sample, i, &mask, cfg) {
                            Ok(r) => records.push(r),
                            Err(e) => fail(Task::DFM, Some(i), e),
                        }
                    }
                }
                Err(issue) => {
                    let reason = issue.to_string();
                    for task in [Task::RDL, Task::DFM].into_iter().filter(|t| cfg.tasks.contains(t)) {
                        fail(task, Some(i), ForgeError::MaskFile(MaskIssue::Unreadable(reason.clone())));
                    }
                }
            }
        }
        if cfg.tasks.contains(&Task::DC) {
            match gen_dc(manifest, sample, i, cfg) {
                Ok(r) => records.push(r),
                Err(e) => fail(Task::DC, Some(i), e),
            }
        }
    }
    (records, failures)
}

pub fn write_jsonl<'a, W: Write>(records: impl IntoIterator<Item = &'a QaRecord>, mut out: W) -> io::Result<()> {
    for r in records {
        out.write_all(r.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Line { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(input: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| JsonlError::Line { line: i + 1, source })?);
    }
    Ok(out)
}

/// Per-task, per-dataset question counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Statistics {
    pub datasets: Vec<String>,
    /// task -> dataset -> count
    pub counts: BTreeMap<Task, BTreeMap<String, usize>>,
}

impl Statistics {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a QaRecord>) -> Self {
        let mut counts: BTreeMap<Task, BTreeMap<String, usize>> = BTreeMap::new();
        let mut datasets = BTreeSet::new();
        for r in records {
            datasets.insert(r.meta.dataset.clone());
            *counts.entry(r.task).or_default().entry(r.meta.dataset.clone()).or_default() += 1;
        }
        Self { datasets: datasets.into_iter().collect(), counts }
    }

    pub fn task_total(&self, task: Task) -> usize {
        self.counts.get(&task).map_or(0, |m| m.values().sum())
    }

    pub fn count(&self, task: Task, dataset: &str) -> usize {
        self.counts.get(&task).and_then(|m| m.get(dataset)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        Task::ALL.iter().map(|&t| self.task_total(t)).sum()
    }

    /// Task rows (AD, RDL, DFM, DC, Total) against a Questions column and one
    /// column per dataset.
    pub fn render_text(&self) -> String {
        let mut header = vec!["Task".to_owned(), "Questions".to_owned()];
        header.extend(self.datasets.iter().cloned());
        let mut rows = vec![header];
        for task in Task::ALL {
            let mut row = vec![task.code().to_owned(), self.task_total(task).to_string()];
            row.extend(self.datasets.iter().map(|d| self.count(task, d).to_string()));
            rows.push(row);
        }
        let mut total = vec!["Total".to_owned(), self.total().to_string()];
        total.extend(
            self.datasets.iter().map(|d| Task::ALL.iter().map(|&t| self.count(t, d)).sum::<usize>().to_string()),
        );
        rows.push(total);

        let widths: Vec<usize> =
            (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            if i == rows.len() - 1 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut tasks = serde_json::Map::new();
        for task in Task::ALL {
            let per: serde_json::Map<String, serde_json::Value> =
                self.datasets.iter().map(|d| (d.clone(), self.count(task, d).into())).collect();
            tasks.insert(
                task.code().to_owned(),
                serde_json::json!({"questions": self.task_total(task), "datasets": per}),
            );
        }
        serde_json::json!({"tasks": tasks, "total": self.total()})
    }
}

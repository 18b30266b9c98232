// SPDX-License-Identifier: Apache-2.0

//! Scores answer files against generated ground truth and renders
//! result tables.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forge::{QaRecord, Task, OPTION_LETTERS};
use crate::mask::BoundingBox;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Column order of rendered tables.
pub const REPORT_COLUMNS: [Task; 4] = [Task::AD, Task::DC, Task::RDL, Task::DFM];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub qid: String,
    #[serde(rename = "answer")]
    pub raw_answer: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("duplicate prediction for qid {0:?}")]
    DuplicateQid(String),
    #[error("prediction for unknown qid {0:?}")]
    UnknownQid(String),
    #[error("ground truth record {0:?} has no bounding box")]
    MissingBox(String),
}

/// Extracts an option letter from a free-form answer.
///
/// Accepted forms (case-insensitive, surrounding whitespace ignored): a bare
/// letter, `B.`, `B)`, and either of the latter followed by whitespace and text.
pub fn parse_choice(raw: &str, n_options: usize) -> Option<char> {
    let s = raw.trim();
    let mut chars = s.chars();
    let letter = chars.next()?.to_ascii_uppercase();
    let idx = OPTION_LETTERS.iter().position(|&l| l == letter)?;
    if idx >= n_options {
        return None;
    }
    match chars.next() {
        None => Some(letter),
        Some('.') | Some(')') => match chars.next() {
            None => Some(letter),
            Some(c) if c.is_whitespace() => Some(letter),
            Some(_) => None,
        },
        Some(_) => None,
    }
}

/// True iff `raw` parses as a box whose IoU with `gt` reaches `iou_threshold`.
pub fn score_dfm(raw: &str, gt: &BoundingBox, iou_threshold: f64) -> bool {
    raw.parse::<BoundingBox>().is_ok_and(|pred| pred.iou(gt) >= iou_threshold)
}

/// Accuracy in tenths of a percent, rounded half-up.
fn accuracy_tenths(correct: usize, total: usize) -> u32 {
    if total == 0 {
        return 0;
    }
    let (c, t) = (correct as u128, total as u128);
    ((2000 * c + t) / (2 * t)) as u32
}

/// Fixed one-decimal percentage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tenths(pub u32);

impl Tenths {
    pub fn value(&self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl std::fmt::Display for Tenths {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: Tenths,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskReport {
    pub tasks: BTreeMap<Task, TaskScore>,
    /// Mean over the present multiple-choice tasks (AD, DC, RDL).
    pub average: Option<Tenths>,
}

impl TaskReport {
    pub fn accuracy(&self, task: Task) -> Option<f64> {
        self.tasks.get(&task).map(|s| s.accuracy.value())
    }

    fn from_counts(counts: BTreeMap<Task, (usize, usize)>) -> Self {
        let tasks: BTreeMap<Task, TaskScore> = counts
            .into_iter()
            .map(|(t, (correct, total))| (t, TaskScore { correct, total, accuracy: Tenths(accuracy_tenths(correct, total)) }))
            .collect();
        let choice: Vec<u32> =
            tasks.iter().filter(|(t, _)| t.option_count().is_some()).map(|(_, s)| s.accuracy.0).collect();
        let average = (!choice.is_empty()).then(|| {
            let sum: u64 = choice.iter().map(|&v| v as u64).sum();
            let n = choice.len() as u64;
            // half-up rounding of sum / n, in tenths
            Tenths(((2 * sum + n) / (2 * n)) as u32)
        });
        Self { tasks, average }
    }
}

/// Scores predictions against ground truth. Missing predictions are wrong.
pub fn score_run(
    preds: &[PredictionRecord],
    gt: &[QaRecord],
    iou_threshold: f64,
) -> Result<TaskReport, ScoreError> {
    let index: HashMap<&str, &QaRecord> = gt.iter().map(|r| (r.qid.as_str(), r)).collect();
    let mut answers: HashMap<&str, &str> = HashMap::with_capacity(preds.len());
    for p in preds {
        if !index.contains_key(p.qid.as_str()) {
            return Err(ScoreError::UnknownQid(p.qid.clone()));
        }
        if answers.insert(p.qid.as_str(), p.raw_answer.as_str()).is_some() {
            return Err(ScoreError::DuplicateQid(p.qid.clone()));
        }
    }

    let mut counts: BTreeMap<Task, (usize, usize)> = BTreeMap::new();
    for rec in gt {
        let entry = counts.entry(rec.task).or_default();
        entry.1 += 1;
        let Some(raw) = answers.get(rec.qid.as_str()) else { continue };
        if is_correct(rec, raw, iou_threshold)? {
            entry.0 += 1;
        }
    }
    Ok(TaskReport::from_counts(counts))
}

fn is_correct(rec: &QaRecord, raw: &str, iou_threshold: f64) -> Result<bool, ScoreError> {
    match rec.task.option_count() {
        Some(_) => {
            let n = rec.options.as_ref().map_or(0, Vec::len);
            Ok(parse_choice(raw, n).is_some_and(|c| rec.answer.starts_with(c) && rec.answer.len() == 1))
        }
        None => {
            let gt = match rec.meta.bbox {
                Some(b) => b,
                None => rec.answer.parse().map_err(|_| ScoreError::MissingBox(rec.qid.clone()))?,
            };
            Ok(score_dfm(raw, &gt, iou_threshold))
        }
    }
}

/// Uniformly random letter answers for every multiple-choice record;
/// DFM records are left unanswered.
pub fn random_responder(gt: &[QaRecord], seed: u64) -> Vec<PredictionRecord> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    gt.iter()
        .filter_map(|r| {
            let n = r.options.as_ref()?.len();
            let letter = OPTION_LETTERS[rng.gen_range(0..n)];
            Some(PredictionRecord { qid: r.qid.clone(), raw_answer: letter.to_string() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Markdown,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(Self::Text),
            "markdown" | "md" => Ok(Self::Markdown),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

/// Renders a report row under AD, DC, RDL, DFM, Average; absent tasks show "-".
pub fn render_table(report: &TaskReport, format: TableFormat) -> String {
    let cell = |t: Task| report.tasks.get(&t).map_or("-".to_owned(), |s| s.accuracy.to_string());
    let avg = report.average.map_or("-".to_owned(), |a| a.to_string());
    let mut header: Vec<String> = REPORT_COLUMNS.iter().map(|t| t.code().to_owned()).collect();
    header.push("Average".into());
    let mut values: Vec<String> = REPORT_COLUMNS.iter().map(|&t| cell(t)).collect();
    values.push(avg);

    match format {
        TableFormat::Text => {
            let widths: Vec<usize> = header.iter().zip(&values).map(|(h, v)| h.len().max(v.len())).collect();
            let line = |cells: &[String]| {
                cells.iter().zip(&widths).map(|(c, &w)| format!("{c:>w$}")).collect::<Vec<_>>().join(" | ")
            };
            format!("{}\n{}\n", line(&header), line(&values))
        }
        TableFormat::Markdown => {
            let sep = vec!["---:"; header.len()].join(" | ");
            format!("| {} |\n| {} |\n| {} |\n", header.join(" | "), sep, values.join(" | "))
        }
        TableFormat::Json => {
            let mut obj = serde_json::Map::new();
            for t in REPORT_COLUMNS {
                let v = report.tasks.get(&t).map_or(serde_json::Value::Null, |s| {
                    serde_json::json!({"accuracy": s.accuracy.value(), "correct": s.correct, "total": s.total})
                });
                obj.insert(t.code().to_owned(), v);
            }
            obj.insert("average".into(), report.average.map_or(serde_json::Value::Null, |a| a.value().into()));
            serde_json::Value::Object(obj).to_string() + "\n"
        }
    }
}

// SPDX-License-Identifier: Apache-2.0

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use defectqa::forge::{self, read_jsonl, BuildConfig, QaRecord, Statistics, Task};
use defectqa::manifest::{load_manifest, validate_masks};
use defectqa::scoring::{random_responder, render_table, score_run, PredictionRecord, TableFormat};
use defectqa::synth::{write_synthetic_dataset, SynthConfig};

mod eval_seg;
mod loss_check;

#[derive(Debug, Parser)]
#[command(name = "defectqa", version, about = "Defect QA dataset builder and evaluator")]
struct Cli {
    /// Append warnings to this file instead of discarding them.
    #[arg(long, global = true, value_name = "FILE")]
    log: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Markdown,
    Json,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => TableFormat::Text,
            Format::Markdown => TableFormat::Markdown,
            Format::Json => TableFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricMode {
    Exact,
    Binned,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a manifest and every defect mask it references.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Generate question-answer records as JSON Lines.
    Build {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Comma-separated subset of ad,rdl,dfm,dc.
        #[arg(long, value_delimiter = ',', default_value = "ad,rdl,dfm,dc")]
        tasks: Vec<Task>,
        /// Extra defect class names used when the vocabulary is too small for 4 options.
        #[arg(long, value_delimiter = ',')]
        fallback_classes: Vec<String>,
    },
    /// Per-task, per-dataset question counts of a QA file.
    Stats {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Score a predictions file against a QA file.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// IoU needed for a bounding-box answer to count as correct.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Pixel-level AUROC, F1-max and AP of score maps against mask PNGs.
    EvalSeg {
        /// Directory of score-map files.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth masks named `<stem>.png`.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "binned")]
        mode: MetricMode,
        #[arg(long, default_value_t = 4096)]
        bins: usize,
        /// Fixed binned score range `LO,HI`; detected from the data when omitted.
        #[arg(long, value_name = "LO,HI", value_parser = parse_range, allow_hyphen_values = true)]
        range: Option<(f64, f64)>,
        /// Average per-image metrics instead of pooling all pixels.
        #[arg(long)]
        per_image: bool,
    },
    /// Evaluate loss fixtures and check analytic gradients.
    LossCheck {
        #[arg(long)]
        fixture: PathBuf,
    },
    /// Uniformly random answers for every multiple-choice record.
    #[command(hide = true)]
    RandomResponder {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a seeded synthetic dataset (manifest and masks).
    #[command(hide = true)]
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        anomalous_fraction: f64,
        #[arg(long, default_value_t = 2)]
        max_defects: usize,
        #[arg(long, default_value_t = 48)]
        width: u32,
        #[arg(long, default_value_t = 48)]
        height: u32,
    },
}

/// Collects warnings for the optional `--log` file.
pub struct Log {
    path: Option<PathBuf>,
    lines: Vec<String>,
}

impl Log {
    pub fn warn(&mut self, msg: impl Into<String>) {
        self.lines.push(msg.into());
    }

    fn flush(&self) -> Result<()> {
        if let (Some(path), false) = (&self.path, self.lines.is_empty()) {
            let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
            for l in &self.lines {
                writeln!(f, "{l}")?;
            }
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut log = Log { path: cli.log.clone(), lines: Vec::new() };
    let result = run(cli.command, &mut log);
    if let Err(e) = log.flush() {
        eprintln!("error: cannot write log: {e:#}");
    }
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// `Ok(false)` means the command ran but a check failed.
fn run(cmd: Command, log: &mut Log) -> Result<bool> {
    match cmd {
        Command::Validate { manifest, format } => validate(&manifest, format),
        Command::Build { manifest, out, seed, tasks, fallback_classes } => {
            build(&manifest, &out, seed, tasks, fallback_classes, log)
        }
        Command::Stats { qa, format } => {
            let records = read_qa(&qa)?;
            let stats = Statistics::from_records(&records);
            match format {
                Format::Json => println!("{}", stats.to_json()),
                _ => print!("{}", stats.render_text()),
            }
            Ok(true)
        }
        Command::Score { pred, gt, iou, format } => {
            if !(iou > 0.0 && iou <= 1.0) {
                bail!("--iou must lie in (0, 1], got {iou}");
            }
            let gt = read_qa(&gt)?;
            let preds: Vec<PredictionRecord> = read_jsonl(open(&pred)?).with_context(|| pred.display().to_string())?;
            let report = score_run(&preds, &gt, iou)?;
            print!("{}", render_table(&report, format.into()));
            Ok(true)
        }
        Command::EvalSeg { pred, gt, mode, bins, range, per_image } => {
            let opts = eval_seg::Options { mode, bins, range, per_image };
            let metrics = eval_seg::run(&pred, &gt, &opts, log)?;
            println!("{}", metrics.to_json_string());
            Ok(true)
        }
        Command::LossCheck { fixture } => loss_check::run(&fixture),
        Command::RandomResponder { qa, out, seed } => {
            let records = read_qa(&qa)?;
            let mut w = BufWriter::new(File::create(&out).with_context(|| out.display().to_string())?);
            for p in random_responder(&records, seed) {
                writeln!(w, "{}", serde_json::to_string(&p)?)?;
            }
            w.flush()?;
            Ok(true)
        }
        Command::Synth { out, samples, seed, anomalous_fraction, max_defects, width, height } => {
            if width < 3 || height < 3 {
                bail!("synthetic images must be at least 3x3");
            }
            let cfg = SynthConfig { samples, seed, anomalous_fraction, max_defects, width, height, ..Default::default() };
            let path = write_synthetic_dataset(&out, &cfg)?;
            println!("{}", path.display());
            Ok(true)
        }
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("LO: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("HI: {e}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err("need finite LO < HI".into());
    }
    Ok((lo, hi))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn read_qa(path: &Path) -> Result<Vec<QaRecord>> {
    read_jsonl(open(path)?).with_context(|| path.display().to_string())
}

fn validate(manifest: &Path, format: Format) -> Result<bool> {
    let m = load_manifest(manifest)?;
    let report = validate_masks(&m);
    match format {
        Format::Json => println!("{}", serde_json::to_string(&report)?),
        _ => {
            for f in &report.failures {
                println!("FAIL {} defect {} ({}): {}", f.sample_id, f.defect_index, f.mask.display(), f.reason);
            }
            println!(
                "{}: {} samples, {} masks checked, {} failure(s)",
                m.dataset_name,
                report.samples,
                report.masks_checked,
                report.failures.len()
            );
        }
    }
    Ok(report.is_ok())
}

fn build(
    manifest: &Path,
    out: &Path,
    seed: u64,
    tasks: Vec<Task>,
    fallback: Vec<String>,
    log: &mut Log,
) -> Result<bool> {
    if tasks.is_empty() {
        bail!("--tasks must name at least one task");
    }
    let m = load_manifest(manifest)?;
    let cfg = BuildConfig { seed, tasks: tasks.into_iter().collect(), fallback_defect_classes: fallback };
    let output = forge::build_dataset(&m, &cfg);
    let file = File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
    output.write_jsonl(BufWriter::new(file))?;
    for f in &output.failures {
        let idx = f.defect_index.map_or(String::new(), |i| format!(" defect {i}"));
        log.warn(format!("skipped {} for sample {}{idx}: {}", f.task, f.sample_id, f.reason));
    }
    println!("wrote {} records to {} ({} skipped)", output.records.len(), out.display(), output.failures.len());
    Ok(true)
}

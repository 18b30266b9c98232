// SPDX-License-Identifier: Apache-2.0

//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use defectqa::losses::{ce_loss, check_gradients, mdlm_loss, LossWeights, MaskPrediction, TokenSequence};
use defectqa::mask::{
    connected_components_with, encode_mask, grid_region, tight_bbox, BinaryMask, Connectivity,
};
use defectqa::metrics::MetricAccumulator;
use defectqa::scoremap::ScoreMap;
use defectqa::synth::random_blob;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_defectqa"))
}

fn run_ok(args: &[&str]) -> Result<Output, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    if !out.stderr.is_empty() {
        return Err(format!("{args:?} wrote to stderr on success: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Criterion 1. Random-chance baseline: AD 50.0±1.5, RDL 25.0±1.5, DC 25.0±1.5, average 33.3±1.0.
fn random_chance(dir: &Path) -> Outcome {
    let start = Instant::now();
    let data = dir.join("chance");
    run_ok(&[
        "synth", "--out", p(&data), "--samples", "10000", "--seed", "2024",
        "--anomalous-fraction", "0.7", "--max-defects", "1",
    ])?;
    let qa = dir.join("chance.jsonl");
    let preds = dir.join("chance_pred.jsonl");
    run_ok(&["build", "--manifest", p(&data.join("manifest.json")), "--out", p(&qa), "--seed", "42"])?;
    let questions = fs::read_to_string(&qa).map_err(|e| e.to_string())?.lines().count();
    check(questions >= 20_000, || format!("only {questions} questions"))?;
    run_ok(&["random-responder", "--qa", p(&qa), "--out", p(&preds), "--seed", "7"])?;
    let out = run_ok(&["score", "--pred", p(&preds), "--gt", p(&qa), "--format", "json"])?;
    let v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let acc = |t: &str| v[t]["accuracy"].as_f64().unwrap_or(f64::NAN);
    let (ad, rdl, dc, avg) = (acc("AD"), acc("RDL"), acc("DC"), v["average"].as_f64().unwrap_or(f64::NAN));
    let elapsed = start.elapsed();
    check(
        within(ad, 50.0, 1.5) && within(rdl, 25.0, 1.5) && within(dc, 25.0, 1.5) && within(avg, 33.3, 1.0),
        || format!("AD {ad} RDL {rdl} DC {dc} avg {avg}"),
    )?;
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{questions} questions: AD {ad:.1} DC {dc:.1} RDL {rdl:.1} avg {avg:.1} in {:.1}s", elapsed.as_secs_f64()))
}

/// Criterion 2. Exact-mode metrics equal brute-force oracles within 1e-12 on 100 instances.
fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=500);
        let levels = rng.gen_range(2..200);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.35)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| (rng.gen_range(0..levels) + if l { levels / 4 } else { 0 }) as f64 / levels as f64)
            .collect();
        let mut acc = MetricAccumulator::exact();
        for (&s, &l) in scores.iter().zip(&labels) {
            acc.push(s, l).map_err(|e| e.to_string())?;
        }
        let m = acc.finalize().map_err(|e| e.to_string())?;
        worst = worst
            .max((m.auroc - oracle::auroc_pairwise(&scores, &labels)).abs())
            .max((m.ap - oracle::ap_enumeration(&scores, &labels)).abs())
            .max((m.f1_max - oracle::f1_sweep(&scores, &labels)).abs());
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("max deviation {worst:.1e} in {:.1}s", elapsed.as_secs_f64()))
}

/// Criterion 3. Binned (B = 4096) within 1e-3 of exact on 10^6 pixels; 8-way merges bit-exact.
fn binned_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let n = 1_000_000;
    let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.05)).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&l| {
            let u: f64 = rng.gen();
            if l { 0.3 + 0.7 * u } else { 0.8 * u * u }
        })
        .collect();
    let (lo, hi) = scores.iter().fold((f64::MAX, f64::MIN), |(a, b), &s| (a.min(s), b.max(s)));
    let fresh = || MetricAccumulator::binned(4096, lo, hi).unwrap();

    let mut exact = MetricAccumulator::exact();
    let mut single = fresh();
    let mut parts: Vec<MetricAccumulator> = (0..8).map(|_| fresh()).collect();
    for (&s, &l) in scores.iter().zip(&labels) {
        exact.push(s, l).unwrap();
        single.push(s, l).unwrap();
        parts[rng.gen_range(0..8)].push(s, l).unwrap();
    }
    let e = exact.finalize().map_err(|e| e.to_string())?;
    let b = single.finalize().map_err(|e| e.to_string())?;
    let dev = (b.auroc - e.auroc).abs().max((b.f1_max - e.f1_max).abs()).max((b.ap - e.ap).abs());
    check(dev <= 1e-3, || format!("binned {b} vs exact {e}"))?;

    let left = parts.iter().cloned().reduce(|a, x| a.merge(x).unwrap()).unwrap();
    let right = parts.iter().rev().cloned().reduce(|a, x| x.merge(a).unwrap()).unwrap();
    let mut tree = parts.clone();
    while tree.len() > 1 {
        tree = tree.chunks(2).map(|c| c[0].clone().merge(c[1].clone()).unwrap()).collect();
    }
    let mut shuffled = parts;
    shuffled.shuffle(&mut rng);
    let random = shuffled.into_iter().reduce(|a, x| a.merge(x).unwrap()).unwrap();
    let bits = |acc: &MetricAccumulator| {
        let m = acc.finalize().unwrap();
        [m.auroc.to_bits(), m.f1_max.to_bits(), m.ap.to_bits(), m.pixels_pos, m.pixels_neg]
    };
    let reference = bits(&single);
    for (name, acc) in [("left fold", &left), ("right fold", &right), ("tree", &tree[0]), ("shuffled", &random)] {
        check(bits(acc) == reference, || format!("{name} merge differs from single pass"))?;
    }
    Ok(format!("max |binned - exact| {dev:.2e}; 8-way merges bit-identical"))
}

/// Criterion 4. Geometry: bbox tightness/containment, grid upscale invariance, connectivity fixtures.
fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for i in 0..1000 {
        let (w, h) = (rng.gen_range(1..80), rng.gen_range(1..80));
        let mut mask = random_blob(&mut rng, w, h);
        for _ in 0..rng.gen_range(0..3) {
            for (x, y) in random_blob(&mut rng, w, h).pixels().collect::<Vec<_>>() {
                mask.set(x, y, true);
            }
        }
        let b = tight_bbox(&mask).map_err(|e| e.to_string())?;
        let contains = mask.pixels().all(|(x, y)| b.contains(x, y));
        let tight = mask.pixels().any(|(x, _)| x == b.x_min)
            && mask.pixels().any(|(x, _)| x == b.x_max)
            && mask.pixels().any(|(_, y)| y == b.y_min)
            && mask.pixels().any(|(_, y)| y == b.y_max);
        check(contains && tight, || format!("mask #{i}: box {b} not tight/containing"))?;
    }
    for i in 0..300 {
        let (w, h) = (3 * rng.gen_range(1..12), 3 * rng.gen_range(1..12));
        let mask = random_blob(&mut rng, w, h);
        let k = rng.gen_range(2..5);
        let (a, b) = (grid_region(&mask).unwrap(), grid_region(&mask.upscale(k)).unwrap());
        check(a == b, || format!("mask #{i}: {a} became {b} at x{k}"))?;
    }
    let diag = BinaryMask::from_pixels(2, 2, [(0, 0), (1, 1)]).unwrap();
    let eight = connected_components_with(&diag, Connectivity::Eight).len();
    let four = connected_components_with(&diag, Connectivity::Four).len();
    check(eight == 1 && four == 2, || format!("8-conn {eight}, 4-conn {four}"))?;
    Ok("1000 boxes tight, 300 upscales invariant, {(0,0),(1,1)}: 1 vs 2 components".into())
}

/// Criterion 5. Loss numerics: perfect mdlm ≤ 1e-6; gradients vs finite differences < 1e-4; ce(uniform) = ln V.
fn loss_numerics(dir: &Path) -> Outcome {
    let w = LossWeights::default();
    let gt = BinaryMask::from_pixels(8, 8, [(1, 1), (2, 1), (2, 2), (5, 6)]).unwrap();
    let perfect = MaskPrediction::new(gt.bits().iter().map(|&g| g as u8 as f64).collect()).unwrap();
    let perfect_loss = mdlm_loss(&perfect, &gt, &w).map_err(|e| e.to_string())?;
    check(perfect_loss <= 1e-6, || format!("perfect prediction loss {perfect_loss:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let gt = BinaryMask::from_bits(8, 8, (0..64).map(|_| rng.gen_bool(0.3)).collect());
        let pred = MaskPrediction::new((0..64).map(|_| rng.gen_range(0.02..0.98)).collect()).unwrap();
        let weights = LossWeights {
            lambda_bce: rng.gen_range(0.0..3.0),
            lambda_dice: rng.gen_range(0.1..3.0),
            smooth_eps: rng.gen_range(0.0..2.0),
        };
        worst = worst.max(check_gradients(&pred, &gt, &weights, 1e-5).map_err(|e| e.to_string())?.max());
    }
    check(worst < 1e-4, || format!("gradient relative error {worst:e}"))?;

    let mut ce_dev: f64 = 0.0;
    for v in [2usize, 7, 100, 50_000] {
        let seq = TokenSequence::new(vec![0, v - 1, v / 3], vec![vec![1.25; v]; 3]).unwrap();
        ce_dev = ce_dev.max((ce_loss(&seq) - (v as f64).ln()).abs());
    }
    check(ce_dev <= 1e-9, || format!("uniform ce deviates by {ce_dev:e}"))?;

    let fixture = dir.join("losses.json");
    fs::write(
        &fixture,
        r#"{"mask_cases":[{"name":"half","pred":[0.5,0.5],"gt":[1,0],
            "weights":{"lambda_bce":2.0,"lambda_dice":0.5,"smooth_eps":0.0},
            "expected":{"bce":0.693147,"dice":0.5,"mdlm":1.636294}}],
           "ce_cases":[{"name":"uniform","ids":[1],"logits":[[0,0,0,0]],"expected":1.386294}]}"#,
    )
    .map_err(|e| e.to_string())?;
    run_ok(&["loss-check", "--fixture", p(&fixture)])?;
    Ok(format!("perfect {perfect_loss:.1e}, grad err {worst:.1e}, |ce - ln V| {ce_dev:.1e}"))
}

/// Criterion 6. `build` is byte-identical across runs and across a permuted manifest.
fn determinism(dir: &Path) -> Outcome {
    let data = dir.join("det");
    run_ok(&["synth", "--out", p(&data), "--samples", "300", "--seed", "6"])?;
    let manifest = data.join("manifest.json");
    let build = |m: &Path, out: &str| -> Result<Vec<u8>, String> {
        let path = dir.join(out);
        run_ok(&["build", "--manifest", p(m), "--out", p(&path), "--seed", "99"])?;
        fs::read(path).map_err(|e| e.to_string())
    };
    let a = build(&manifest, "det_a.jsonl")?;
    let b = build(&manifest, "det_b.jsonl")?;
    check(a == b, || "two runs differ".into())?;

    let mut doc: Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    let samples = doc["samples"].as_array_mut().unwrap();
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(66));
    let permuted = data.join("manifest_permuted.json");
    fs::write(&permuted, serde_json::to_vec(&doc).unwrap()).unwrap();
    let c = build(&permuted, "det_c.jsonl")?;
    check(a == c, || "permuted manifest output differs".into())?;
    Ok(format!("{} bytes identical over 3 builds", a.len()))
}

fn six_decimals(raw: &str, key: &str) -> Option<String> {
    let start = raw.find(&format!("\"{key}\":"))? + key.len() + 3;
    let rest = &raw[start..];
    let end = rest.find([',', '}'])?;
    Some(rest[..end].to_owned())
}

/// Criterion 7. `eval-seg` emits the metric triple with 6-decimal values that
/// match oracle results on a synthetic score-map set.
fn eval_seg_format(dir: &Path) -> Outcome {
    let pred = dir.join("maps");
    let gt = dir.join("masks");
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let (mut all_s, mut all_l) = (Vec::new(), Vec::new());
    for i in 0..5 {
        let (w, h) = (24, 18);
        let mask = if i == 4 { BinaryMask::new(w, h) } else { random_blob(&mut rng, w, h) };
        let scores: Vec<f32> = mask
            .bits()
            .iter()
            .map(|&l| ((rng.gen_range(0..50) + if l { 20 } else { 0 }) as f32) / 64.0)
            .collect();
        all_s.extend(scores.iter().map(|&s| s as f64));
        all_l.extend_from_slice(mask.bits());
        ScoreMap::new(w, h, scores).unwrap().write(pred.join(format!("img{i}.bin"))).unwrap();
        fs::write(gt.join(format!("img{i}.png")), encode_mask(&mask).unwrap()).unwrap();
    }
    let expected = [
        ("auroc", oracle::auroc_pairwise(&all_s, &all_l)),
        ("f1_max", oracle::f1_sweep(&all_s, &all_l)),
        ("ap", oracle::ap_enumeration(&all_s, &all_l)),
    ];
    let pos = all_l.iter().filter(|&&l| l).count();
    let neg = all_l.len() - pos;

    let out = run_ok(&["eval-seg", "--pred", p(&pred), "--gt", p(&gt), "--mode", "exact"])?;
    let raw = String::from_utf8(out.stdout).unwrap();
    let v: Value = serde_json::from_str(&raw).map_err(|e| format!("{e}: {raw}"))?;
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    let mut sorted_expected = vec!["auroc", "f1_max", "ap", "pixels_pos", "pixels_neg"];
    sorted_expected.sort();
    check(keys == sorted_expected, || format!("keys {keys:?}"))?;
    let order: Vec<usize> = ["auroc", "f1_max", "ap", "pixels_pos", "pixels_neg"]
        .iter()
        .map(|k| raw.find(&format!("\"{k}\"")).unwrap())
        .collect();
    check(order.windows(2).all(|w| w[0] < w[1]), || format!("key order in {raw}"))?;
    for (key, value) in expected {
        let text = six_decimals(&raw, key).unwrap_or_default();
        check(text == format!("{value:.6}"), || format!("{key}: printed {text}, oracle {value:.6}"))?;
    }
    check(v["pixels_pos"] == pos && v["pixels_neg"] == neg, || format!("pixel counts in {raw}"))?;

    let out = run_ok(&["eval-seg", "--pred", p(&pred), "--gt", p(&gt)])?;
    let vb: Value = serde_json::from_slice(&out.stdout).unwrap();
    for (key, value) in expected {
        let got = vb[key].as_f64().unwrap_or(f64::NAN);
        check(within(got, value, 1e-3), || format!("binned {key} {got} vs {value}"))?;
    }
    Ok(format!(
        "eval-seg emits auroc/f1_max/ap at 6 decimals matching oracle ({}); trained-model results not reproduced",
        raw.trim()
    ))
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let criteria: Vec<(&str, Check)> = vec![
        ("1 random-chance reproduction", Box::new(|| random_chance(d))),
        ("2 metric oracle equivalence", Box::new(metric_oracles)),
        ("3 binned-mode fidelity", Box::new(binned_fidelity)),
        ("4 geometry property suite", Box::new(geometry)),
        ("5 loss numerics", Box::new(|| loss_numerics(d))),
        ("6 build determinism", Box::new(|| determinism(d))),
        ("7 eval-seg output contract", Box::new(|| eval_seg_format(d))),
    ];
    let mut failed = Vec::new();
    for (name, f) in &criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use diskfail::eval::{compute_metrics, f1_score, Report};
use diskfail::featurize::{
    cumulative_sum, cusum, edge_change, reversal_counts, CusumMode, CusumParams, EdgeKernel,
};
use diskfail::synth::{generate_corpus, AbruptChange, ScenarioSpec, Trend};
use diskfail::Matrix;
use rand::Rng;
use serde_json::Value;

const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const E2E_BUDGET: Duration = Duration::from_secs(600);
const E2E_MIN_F1: f64 = 0.90;
const E2E_MIN_GAIN: f64 = 0.03;
const HORIZON_SLACK: f64 = 0.02;
const EDGE_CUMSUM_TOL: f64 = 1e-9;
const REFERENCE_F1: f64 = 0.7858;
const REFERENCE_F1_TOL: f64 = 1e-4;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&Path) -> Outcome);

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_diskfail"))
}

fn run(args: &[&str]) -> Result<Output, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`diskfail {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradient_oracle(_: &Path) -> Outcome {
    let start = Instant::now();
    let out = run(&["gradcheck", "--configs", "3", "--seed", "11"])?;
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let worst = text
        .lines()
        .last()
        .and_then(|l| l.split_whitespace().nth(3))
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or("could not read max relative error")?;
    let configs = text.lines().filter(|l| l.starts_with("config")).count();
    check(
        configs >= 3 && worst < GRADCHECK_TOL && elapsed < GRADCHECK_BUDGET,
        format!(
            "{configs} configs, max relative error {worst:.2e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn brute_reversal(x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| (0..t).filter(|&i| x[i] < x[t]).count() as f64)
        .collect()
}

fn direct_cusum(x: &[f64], mode: CusumMode, init: usize) -> (Vec<f64>, Vec<f64>) {
    let s: Vec<f64> = (0..x.len())
        .map(|t| match mode {
            CusumMode::F1 => x[t],
            CusumMode::F2 if t == 0 => 0.0,
            CusumMode::F2 => x[t] - x[t - 1],
        })
        .collect();
    let target = s[..init].iter().sum::<f64>() / init as f64;
    let (mut gp, mut gn) = (vec![0.0; x.len()], vec![0.0; x.len()]);
    let (mut p, mut n) = (0.0f64, 0.0f64);
    for t in 0..x.len() {
        p = f64::max(0.0, p + s[t] - target);
        n = f64::max(0.0, n - s[t] + target);
        gp[t] = p;
        gn[t] = n;
    }
    (gp, gn)
}

fn transform_oracles(_: &Path) -> Outcome {
    let mut rng = diskfail::seed::rng(2024);
    for i in 0..200 {
        let len = rng.gen_range(1..100);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(0..8) as f64).collect();
        if reversal_counts(&Matrix::from_column(&x)).column(0) != brute_reversal(&x) {
            return Err(format!("reversal mismatch on series {i}"));
        }
    }
    for i in 0..200 {
        let len = rng.gen_range(2..80);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let init = rng.gen_range(1..=len);
        for mode in [CusumMode::F1, CusumMode::F2] {
            let params = CusumParams::new(mode).with_init_period(init);
            let (gp, gn) = cusum(&Matrix::from_column(&x), &params).map_err(|e| e.to_string())?;
            if (gp.column(0), gn.column(0)) != direct_cusum(&x, mode, init) {
                return Err(format!("cusum mismatch on series {i} {mode:?}"));
            }
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let len = rng.gen_range(2..100);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let edge = edge_change(&Matrix::from_column(&x), EdgeKernel::Adjacent)
            .map_err(|e| e.to_string())?;
        let back = cumulative_sum(&edge).column(0);
        for t in 0..len {
            worst = worst.max((back[t] - (x[t] - x[0])).abs());
        }
    }
    check(
        worst <= EDGE_CUMSUM_TOL,
        format!("reversal and cusum exact on 200 series each; edge/cumsum max error {worst:.1e}"),
    )
}

fn signature_recovery(_: &Path) -> Outcome {
    let quiet = ScenarioSpec {
        devices: 40,
        failure_fraction: 0.5,
        noise: 0.0,
        baseline_spread: 0.0,
        ..ScenarioSpec::default()
    };
    let (magnitude, lead) = (5.0, 3);
    let steps = generate_corpus(&ScenarioSpec {
        abrupt: Some(AbruptChange {
            magnitude,
            lead_time: lead,
        }),
        ..quiet.clone()
    })
    .map_err(|e| e.to_string())?;
    let mut located = 0;
    for h in steps.histories.iter().filter(|h| h.failed) {
        let edge = edge_change(&h.values, EdgeKernel::Adjacent).map_err(|e| e.to_string())?;
        let at = h.len() - 1 - lead;
        for a in 0..edge.cols() {
            let col = edge.column(a);
            let nz: Vec<usize> = (0..col.len()).filter(|&t| col[t] != 0.0).collect();
            match nz.as_slice() {
                [] => {}
                [t] if *t == at && col[*t] == magnitude => located += 1,
                _ => {
                    return Err(format!(
                        "{} attr {a}: edge nonzero at {nz:?}",
                        h.serial_number
                    ))
                }
            }
        }
    }
    let trends = generate_corpus(&ScenarioSpec {
        trend: Some(Trend {
            slope: 0.25,
            onset: None,
        }),
        ..quiet
    })
    .map_err(|e| e.to_string())?;
    let mut monotone = 0;
    for h in trends.histories.iter().filter(|h| h.failed) {
        let r = reversal_counts(&h.values);
        for a in 0..h.values.cols() {
            if h.values.get(1, a) > h.values.get(0, a) {
                if (0..h.len()).any(|t| r.get(t, a) != t as f64) {
                    return Err(format!(
                        "{} attr {a}: reversal channel is not t",
                        h.serial_number
                    ));
                }
                monotone += 1;
            }
        }
    }
    check(
        located == 20 * 3 && monotone == 20 * 3,
        format!("{located} steps localized, {monotone} trend channels equal t"),
    )
}

fn corpus(dir: &Path, preset: &str, seed: &str) -> Result<PathBuf, String> {
    let path = dir.join(format!("{preset}-{seed}.json"));
    if !path.exists() {
        run(&[
            "synth",
            "--preset",
            preset,
            "--devices",
            "400",
            "--seed",
            seed,
            "--out",
            p(&path),
        ])?;
    }
    Ok(path)
}

fn load_report(path: &Path) -> Result<Report, String> {
    Report::from_json(&fs::read_to_string(path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())
}

fn f1_of(report: &Report, feature_set: &str, horizon: usize) -> Result<f64, String> {
    report
        .rows
        .iter()
        .find(|r| r.feature_set == feature_set && r.horizon == horizon && r.metric.as_str() == "f1")
        .map(|r| r.mean)
        .ok_or_else(|| format!("no f1 row for {feature_set} at horizon {horizon}"))
}

fn end_to_end(dir: &Path) -> Outcome {
    let c = corpus(dir, "noisy-trend", "7")?;
    let out = dir.join("e2e.json");
    let start = Instant::now();
    run(&[
        "evaluate",
        "--corpus",
        p(&c),
        "--features",
        "original",
        "--features",
        "all",
        "--runs",
        "5",
        "--seed",
        "1",
        "--out",
        p(&out),
    ])?;
    let elapsed = start.elapsed();
    let report = load_report(&out)?;
    let base = f1_of(&report, "original", 0)?;
    let all = f1_of(&report, "all", 0)?;
    check(
        all >= E2E_MIN_F1 && all >= base + E2E_MIN_GAIN && elapsed < E2E_BUDGET,
        format!(
            "all-features F1 {all:.4}, original F1 {base:.4}, gain {:+.4}, {:.1}s",
            all - base,
            elapsed.as_secs_f64()
        ),
    )
}

fn ensemble_gain(dir: &Path) -> Outcome {
    let c = corpus(dir, "noisy-trend", "7")?;
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in ["1", "2", "3"] {
        let report = dir.join(format!("ens-{seed}.json"));
        let model = dir.join(format!("ens-{seed}"));
        run(&[
            "ensemble",
            "--corpus",
            p(&c),
            "--k",
            "25",
            "--seed",
            seed,
            "--out",
            p(&model),
            "--report",
            p(&report),
        ])?;
        let v: Value =
            serde_json::from_str(&fs::read_to_string(&report).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        let ens = v["ensemble_accuracy"]
            .as_f64()
            .ok_or("missing ensemble_accuracy")?;
        let mean = v["mean_member_accuracy"]
            .as_f64()
            .ok_or("missing mean_member_accuracy")?;
        ok &= ens >= mean;
        lines.push(format!("seed {seed}: {ens:.4} vs {mean:.4}"));
    }
    check(
        ok,
        format!("ensemble vs mean member accuracy, {}", lines.join("; ")),
    )
}

fn horizon_degradation(dir: &Path) -> Outcome {
    let c = corpus(dir, "abrupt-near-failure", "7")?;
    let out = dir.join("sweep.json");
    run(&[
        "sweep",
        "--corpus",
        p(&c),
        "--horizons",
        "1,10,15",
        "--seed",
        "1",
        "--out",
        p(&out),
    ])?;
    let report = load_report(&out)?;
    let (f1, f10, f15) = (
        f1_of(&report, "all", 1)?,
        f1_of(&report, "all", 10)?,
        f1_of(&report, "all", 15)?,
    );
    check(
        f1 >= f10 - HORIZON_SLACK && f10 >= f15 - HORIZON_SLACK,
        format!("F1 at n=1 {f1:.4}, n=10 {f10:.4}, n=15 {f15:.4}"),
    )
}

fn weak_feature_harness(dir: &Path) -> Outcome {
    let c = corpus(dir, "noisy-trend", "7")?;
    let mut payloads = Vec::new();
    for i in 0..2 {
        let out = dir.join(format!("weak-{i}.json"));
        run(&[
            "evaluate",
            "--corpus",
            p(&c),
            "--features",
            "all",
            "--features",
            "all,-smoothed,-cumsum,-cusum-f1",
            "--seed",
            "3",
            "--out",
            p(&out),
        ])?;
        payloads.push(fs::read(&out).map_err(|e| e.to_string())?);
    }
    let report = load_report(&dir.join("weak-0.json"))?;
    let all = f1_of(&report, "all", 0)?;
    let reduced_name = report
        .rows
        .iter()
        .map(|r| r.feature_set.clone())
        .find(|s| s != "all")
        .ok_or("no reduced feature-set row")?;
    let reduced = f1_of(&report, &reduced_name, 0)?;
    check(
        payloads[0] == payloads[1],
        format!("rows all F1 {all:.4} and {reduced_name} F1 {reduced:.4}; rerun byte-identical"),
    )
}

/// Runs `args` twice with `{out}` replaced by two different directories and
/// compares the produced files (and stdout) byte for byte.
fn twice(dir: &Path, name: &str, args: &[&str], outputs: &[&str]) -> Result<(), String> {
    let mut captures = Vec::new();
    for i in 0..2 {
        let d = dir.join(format!("{name}-{i}"));
        fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        let a: Vec<String> = args.iter().map(|s| s.replace("{out}", p(&d))).collect();
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        let out = run(&a)?;
        let mut files = vec![out.stdout];
        for f in outputs {
            files.push(fs::read(d.join(f)).map_err(|e| format!("{name}: {f}: {e}"))?);
        }
        captures.push(files);
    }
    if captures[0] != captures[1] {
        return Err(format!("{name}: outputs differ between identical runs"));
    }
    Ok(())
}

fn determinism(dir: &Path) -> Outcome {
    let dir = dir.join("det");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let small = dir.join("small.json");
    let csv = dir.join("small.csv");
    run(&[
        "synth",
        "--preset",
        "wearout",
        "--devices",
        "60",
        "--seed",
        "5",
        "--out",
        p(&small),
        "--csv",
        p(&csv),
    ])?;
    let c = p(&small);
    let fast = [
        "--epochs",
        "3",
        "--conv1-filters",
        "8",
        "--conv2-filters",
        "8",
        "--dense-width",
        "8",
    ];
    let with = |base: &[&'static str]| -> Vec<&str> {
        let mut v: Vec<&str> = base.to_vec();
        v.extend_from_slice(&fast);
        v
    };
    let cases: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        (
            "synth",
            vec![
                "synth",
                "--preset",
                "noisy-trend",
                "--devices",
                "50",
                "--seed",
                "7",
                "--out",
                "{out}/c.json",
                "--csv",
                "{out}/c.csv",
            ],
            vec!["c.json", "c.csv"],
        ),
        (
            "ingest",
            vec![
                "ingest",
                "--input",
                p(&csv),
                "--out",
                "{out}/c.json",
                "--attributes",
                "smart_1_raw,smart_4_raw,smart_5_raw,smart_7_raw,smart_9_raw,smart_10_raw",
            ],
            vec!["c.json"],
        ),
        (
            "derive",
            vec![
                "derive",
                "--corpus",
                c,
                "--out",
                "{out}/d.json",
                "--seed",
                "2",
            ],
            vec!["d.json"],
        ),
        (
            "render",
            vec![
                "render",
                "--corpus",
                c,
                "--device",
                "SYN000003",
                "--out-dir",
                "{out}",
                "--seed",
                "2",
            ],
            vec!["SYN000003_original.pgm", "SYN000003_reversal.pgm"],
        ),
        (
            "train",
            [
                vec![
                    "train",
                    "--corpus",
                    c,
                    "--out",
                    "{out}/m.bin",
                    "--report",
                    "{out}/r.json",
                    "--seed",
                    "4",
                ],
                with(&[]),
            ]
            .concat(),
            vec!["m.bin", "r.json"],
        ),
        (
            "ensemble",
            [
                vec![
                    "ensemble",
                    "--corpus",
                    c,
                    "--k",
                    "3",
                    "--out",
                    "{out}/e",
                    "--report",
                    "{out}/r.json",
                    "--seed",
                    "4",
                ],
                with(&[]),
            ]
            .concat(),
            vec![
                "r.json",
                "e/manifest.json",
                "e/member_000.model",
                "e/member_002.model",
            ],
        ),
        (
            "evaluate",
            [
                vec![
                    "evaluate",
                    "--corpus",
                    c,
                    "--runs",
                    "2",
                    "--out",
                    "{out}/r.json",
                    "--csv",
                    "{out}/r.csv",
                    "--seed",
                    "4",
                ],
                with(&[]),
            ]
            .concat(),
            vec!["r.json", "r.csv"],
        ),
        (
            "sweep",
            [
                vec![
                    "sweep",
                    "--corpus",
                    c,
                    "--runs",
                    "1",
                    "--horizons",
                    "0,5",
                    "--out",
                    "{out}/r.json",
                    "--seed",
                    "4",
                ],
                with(&[]),
            ]
            .concat(),
            vec!["r.json"],
        ),
        ("gradcheck", vec!["gradcheck", "--seed", "4"], vec![]),
    ];
    let mut names = Vec::new();
    for (name, args, outputs) in &cases {
        twice(&dir, name, args, outputs)?;
        names.push(*name);
    }
    // predict against a model trained above
    let model = dir.join("train-0/m.bin");
    twice(
        &dir,
        "predict",
        &[
            "predict",
            "--model",
            p(&model),
            "--corpus",
            c,
            "--out",
            "{out}/p.csv",
        ],
        &["p.csv"],
    )?;
    let ens = dir.join("ensemble-0/e");
    twice(
        &dir,
        "predict-ensemble",
        &[
            "predict",
            "--model",
            p(&ens),
            "--corpus",
            c,
            "--out",
            "{out}/p.csv",
        ],
        &["p.csv"],
    )?;
    names.push("predict");
    Ok(format!("byte-identical reruns: {}", names.join(", ")))
}

fn metric_identities(_: &Path) -> Outcome {
    let f1 = f1_score(0.95, 0.67);
    if (f1 - REFERENCE_F1).abs() >= REFERENCE_F1_TOL {
        return Err(format!("F1 from P=0.95, R=0.67 is {f1:.6}"));
    }
    let mut rng = diskfail::seed::rng(99);
    for i in 0..1000 {
        let n = rng.gen_range(1..60);
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let label: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let m = compute_metrics(&pred, &label).map_err(|e| e.to_string())?;
        let mut c = [[0usize; 2]; 2];
        for (a, b) in pred.iter().zip(&label) {
            c[*a][*b] += 1;
        }
        let (tp, fp, tn, fn_) = (c[1][1], c[1][0], c[0][0], c[0][1]);
        let prec = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let rec = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f = if prec + rec == 0.0 {
            0.0
        } else {
            2.0 * prec * rec / (prec + rec)
        };
        if (m.tp, m.fp, m.tn, m.fn_) != (tp, fp, tn, fn_)
            || m.precision != prec
            || m.recall != rec
            || (m.f1 - f).abs() > 1e-12
        {
            return Err(format!("vector {i}: {m:?}"));
        }
    }
    Ok(format!(
        "F1(0.95, 0.67) = {f1:.4}; 1000 random vectors match the confusion oracle"
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: [Criterion; 9] = [
        ("gradient oracle", gradient_oracle),
        ("transform oracles", transform_oracles),
        ("signature recovery", signature_recovery),
        ("end-to-end synthetic classification", end_to_end),
        ("ensemble gain", ensemble_gain),
        ("horizon degradation", horizon_degradation),
        ("weak-feature inclusion harness", weak_feature_harness),
        ("determinism", determinism),
        ("metric identities", metric_identities),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let (tag, detail) = match f(tmp.path()) {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} {name}: {detail} [{:.1}s]",
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adversarial_examiner::numerics::stream;
use adversarial_examiner::targets::AnalyticLandscape;
use adversarial_examiner::{standard_metric, Direction, ExamTrace, Scenario, TraceStep};
use examiner_harness::{
    cmd_examine, cmd_report, cmd_strength, cmd_weakness_study, ExaminerKind, ExperimentConfig, Restriction,
    TargetSpec,
};
use tempfile::TempDir;

fn examiner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_examiner"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn landscape_config(name: &str, kind: ExaminerKind, steps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        target: TargetSpec::Landscape {
            name: Some(name.into()),
            path: None,
        },
        steps,
        seeds: vec![0, 1],
        ..Default::default()
    };
    c.examiner.kind = kind;
    c
}

fn write_three_step_trace(dir: &Path) -> PathBuf {
    let steps = (1..=3)
        .map(|t| TraceStep {
            t,
            scenario: Scenario::new(vec![0.1 * t as f64, 0.5]),
            loss: 0.2 * t as f64,
        })
        .collect();
    let trace = ExamTrace::from_steps("disk", Direction::Weakness, steps).unwrap();
    let path = dir.join("run.jsonl");
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

#[test]
fn report_of_three_steps_has_three_rows() {
    let dir = TempDir::new().unwrap();
    let trace = write_three_step_trace(dir.path());
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    cmd_report(None, &[trace], &out).unwrap();
    let csv = fs::read_to_string(out.join("curves/run/disk.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "instance,t,loss,p_true");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("disk,1,0.2,"));
}

#[test]
fn report_is_byte_stable() {
    let dir = TempDir::new().unwrap();
    let trace = write_three_step_trace(dir.path());
    let mut bundles = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        fs::create_dir(&out).unwrap();
        cmd_report(None, &[trace.clone()], &out).unwrap();
        let files: Vec<(String, Vec<u8>)> = ["report.json", "classes.csv", "scenarios.csv", "curves/run/disk.csv"]
            .iter()
            .map(|f| (f.to_string(), fs::read(out.join(f)).unwrap()))
            .collect();
        bundles.push(files);
    }
    assert_eq!(bundles[0], bundles[1]);
}

#[test]
fn class_aggregates_recompute_from_curve_csvs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    let mut cfg = landscape_config("three-bump", ExaminerKind::Random, 40);
    cfg.seeds = vec![3, 4, 5];
    let outcome = cmd_examine(&cfg, &out).unwrap();
    let mut finals = Vec::new();
    let mut bests = Vec::new();
    for seed in &cfg.seeds {
        let csv = fs::read_to_string(out.join(format!("curves/seed-{seed}/three-bump.csv"))).unwrap();
        let losses: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        finals.push(1.0 - losses[losses.len() - 1]);
        bests.push(1.0 - losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    let class = &outcome.report.classes[0];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((class.mean_final_p_true - mean(&finals)).abs() < 1e-9);
    assert!((class.mean_best_p_true - mean(&bests)).abs() < 1e-9);
    let csv = fs::read_to_string(out.join("classes.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert!((row[5].parse::<f64>().unwrap() - mean(&bests)).abs() < 1e-9);
}

#[test]
fn corrupt_trace_names_file_and_line() {
    let dir = TempDir::new().unwrap();
    let trace = write_three_step_trace(dir.path());
    let mut text = fs::read_to_string(&trace).unwrap();
    text.push_str("{\"instance\": \"disk\", \"t\": oops}\n");
    fs::write(&trace, text).unwrap();
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    let o = examiner(&["report", "--out", out.to_str().unwrap(), trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("run.jsonl") && err.contains("line 4"), "{err}");
}

#[test]
fn missing_output_directory_exits_2() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope");
    let o = examiner(&["train", "--m", "1", "--out", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot write"));
}

#[test]
fn bad_flags_exit_2() {
    let o = examiner(&["examine", "--examiner", "genetic", "--out", "."]);
    assert_eq!(o.status.code(), Some(2));
    let o = examiner(&["examine", "--seed", "", "--out", "."]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn examiner_space_mismatch_fails_before_evaluation() {
    let dir = TempDir::new().unwrap();
    let mut cfg = landscape_config("ridge", ExaminerKind::Rl, 10);
    cfg.examiner.rl.factor_order = Some(vec![0, 1, 2, 3, 4, 5]);
    let err = cmd_examine(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!dir.path().join("traces").exists());
}

#[test]
fn random_examiner_is_a_sequence_of_uniform_draws() {
    let dir = TempDir::new().unwrap();
    let cfg = landscape_config("single-bump", ExaminerKind::Random, 500);
    let outcome = cmd_examine(&cfg, dir.path()).unwrap();
    let land = cfg.landscape().unwrap();
    for (run, &seed) in outcome.report.runs.iter().zip(&cfg.seeds) {
        // Cell 0's examiner stream, drawn by hand.
        let mut rng = stream(seed, 1);
        let draws: Vec<f64> = (0..500).map(|_| land.loss(&land.space.sample_uniform(&mut rng))).collect();
        let best = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(run.best_loss, best);
        assert_eq!(run.final_loss, draws[499]);
    }
}

#[test]
fn checkpoints_are_monotone_under_best_mode() {
    let dir = TempDir::new().unwrap();
    for kind in [ExaminerKind::Random, ExaminerKind::Rl, ExaminerKind::Bo] {
        let out = dir.path().join(format!("{kind:?}"));
        fs::create_dir(&out).unwrap();
        let mut cfg = landscape_config("three-bump", kind, 60);
        cfg.t_checkpoints = vec![0, 10, 30, 60];
        let outcome = cmd_examine(&cfg, &out).unwrap();
        let rows = &outcome.report.checkpoints;
        assert_eq!(rows.len(), 4);
        let land = cfg.landscape().unwrap();
        let t0: f64 = cfg
            .seeds
            .iter()
            .map(|&s| standard_metric(&land, cfg.standard_samples, s).unwrap())
            .sum::<f64>()
            / cfg.seeds.len() as f64;
        assert_eq!(rows[0].best_p_true, 1.0 - t0);
        for w in rows[1..].windows(2) {
            assert!(w[1].best_p_true <= w[0].best_p_true);
        }
        let csv = fs::read_to_string(out.join("checkpoints.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
    }
}

#[test]
fn separate_budgets_equal_slices_of_one_run() {
    for kind in [ExaminerKind::Random, ExaminerKind::Rl, ExaminerKind::Bo] {
        let dir = TempDir::new().unwrap();
        let (short, long) = (dir.path().join("short"), dir.path().join("long"));
        fs::create_dir(&short).unwrap();
        fs::create_dir(&long).unwrap();
        cmd_examine(&landscape_config("ridge", kind, 24), &short).unwrap();
        cmd_examine(&landscape_config("ridge", kind, 40), &long).unwrap();
        for seed in [0, 1] {
            let name = format!("traces/seed-{seed}.jsonl");
            let a = fs::read_to_string(short.join(&name)).unwrap();
            let b = fs::read_to_string(long.join(&name)).unwrap();
            let prefix: Vec<&str> = b.lines().take(24).collect();
            assert_eq!(a.lines().collect::<Vec<_>>(), prefix, "{kind:?}");
        }
    }
}

#[test]
fn strength_and_weakness_find_different_scenarios() {
    let dir = TempDir::new().unwrap();
    let (w, s) = (dir.path().join("w"), dir.path().join("s"));
    fs::create_dir(&w).unwrap();
    fs::create_dir(&s).unwrap();
    let cfg = landscape_config("three-bump", ExaminerKind::Bo, 40);
    let weak = cmd_examine(&cfg, &w).unwrap();
    let strong = cmd_strength(&cfg, &s).unwrap();
    assert_eq!(strong.report.direction, Direction::Strength);
    let land: AnalyticLandscape = cfg.landscape().unwrap();
    for (a, b) in weak.report.runs.iter().zip(&strong.report.runs) {
        assert!(b.best_loss < a.best_loss);
    }
    for (view, run) in strong.report.easiest_views.iter().zip(&weak.report.runs) {
        assert!(land.loss(&view.scenario) < run.best_loss);
    }
    let curves = &strong.report.curves;
    for c in curves {
        assert!(c.mean_best_loss.windows(2).all(|p| p[1] <= p[0]));
    }
}

#[test]
fn weakness_study_requires_restriction() {
    let dir = TempDir::new().unwrap();
    let cfg = ExperimentConfig::default();
    let err = cmd_weakness_study(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("restriction"));
}

#[test]
fn full_range_restriction_is_not_applicable() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ExperimentConfig {
        steps: 3,
        instances: Some(vec!["disk".into()]),
        ..Default::default()
    };
    cfg.examiner.kind = ExaminerKind::Random;
    cfg.training.m = 1;
    cfg.training.epochs = 5;
    cfg.training.restriction = Some(Restriction {
        factor: "foreground_brightness".into(),
        lower: 0.2,
        upper: 1.0,
    });
    let outcome = cmd_weakness_study(&cfg, dir.path()).unwrap();
    let rec = outcome.report.recovery.unwrap();
    assert_eq!(rec.excluded_fraction, 0.0);
    assert!(rec.mean_rate.is_none() && rec.per_seed.is_none());
    let json = fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(json.contains("\"mean_rate\": null"));
}

#[test]
fn train_writes_checkpoint_and_examine_reads_it() {
    let dir = TempDir::new().unwrap();
    let train_dir = dir.path().join("train");
    fs::create_dir(&train_dir).unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{"training": {"m": 2, "epochs": 40, "seed": 3, "heldout_samples": 5}, "T": 12, "seeds": [1]}"#,
    )
    .unwrap();
    let o = examiner(&["train", "--config", cfg_path.to_str().unwrap(), "--out", train_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(train_dir.join("classifier.json").is_file());
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(train_dir.join("training_metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["num_images"], 12);
    assert_eq!(metrics["loss_curve"].as_array().unwrap().len(), 41);

    let exam_cfg = dir.path().join("exam.json");
    fs::write(
        &exam_cfg,
        r#"{"target": {"kind": "shapes", "checkpoint": "train/classifier.json"}, "T": 12, "seeds": [1],
            "instances": ["disk", "bar"], "examiner": {"kind": "random"}}"#,
    )
    .unwrap();
    let exam_dir = dir.path().join("exam");
    fs::create_dir(&exam_dir).unwrap();
    let o = examiner(&[
        "examine",
        "--config",
        exam_cfg.to_str().unwrap(),
        "--out",
        exam_dir.to_str().unwrap(),
        "--dump-images",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read_to_string(exam_dir.join("images/seed-1/bar-best.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n32 32\n255\n"));
    let matrix = fs::read_to_string(exam_dir.join("scenarios.csv")).unwrap();
    assert!(matrix.starts_with(
        "source,instance,class,t,rotation,scale,translate_x,translate_y,foreground_brightness,background_level,loss,p_true,correct\n"
    ));
    assert_eq!(matrix.lines().count(), 1 + 2 * 12);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(exam_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
    assert!(manifest["artifacts"]["traces/seed-1.jsonl"].as_str().unwrap().len() == 64);
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fs::create_dir(&a).unwrap();
    fs::create_dir(&b).unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"target": {"kind": "landscape", "name": "ridge"}, "T": 30, "seeds": [4, 9]}"#).unwrap();
    let o = examiner(&["examine", "--config", cfg.to_str().unwrap(), "--examiner", "bo", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = a.join("manifest.json");
    let o = examiner(&["examine", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ma: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    let mb: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["artifacts"], mb["artifacts"]);
    assert_eq!(ma["config"]["examiner"]["kind"], "bo");
    for f in ["traces/seed-4.jsonl", "traces/seed-9.jsonl", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use debiased_att::cli;
use debiased_att::panel::{load_panel, PanelSchema};
use debiased_att::write_panel;

const BIN: &str = env!("CARGO_BIN_EXE_debiased-att");

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["debiased-att"];
    full.extend_from_slice(args);
    cli::run(full)
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_panels_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let code = run(&["simulate", "--preset", "paper-1cov", "--reps", "2", "--seed", "7", "--set", "n=50", "--out", s(out)]);
        assert_eq!(code, 0);
    }
    assert_eq!(names(&a), vec!["manifest.json", "panel_rep0.csv", "panel_rep1.csv"]);
    for f in ["panel_rep0.csv", "panel_rep1.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let panel = load_panel(a.join("panel_rep0.csv"), &PanelSchema::default()).unwrap();
    assert_eq!(panel.len(), 50);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["reps"], 2);
}

#[test]
fn estimate_writes_one_set_per_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    write_panel(&common::simulate(400, 0.8, 3), &panel).unwrap();
    let out = dir.path().join("est");
    let code = run(&["estimate", "--panel", s(&panel), "--estimators", "oracle,uncorrected,debiased", "--out", s(&out)]);
    assert_eq!(code, 0);
    let coef: Vec<String> = names(&out).into_iter().filter(|n| n.starts_with("coef_")).collect();
    assert_eq!(coef, vec!["coef_debiased.csv", "coef_oracle.csv", "coef_uncorrected.csv"]);
    let text = fs::read_to_string(out.join("coef_debiased.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t_index,t,estimator,coef_name,value,cumulative,flag_fallback");
    // 11 intervals × 6 coefficients.
    assert_eq!(text.lines().count(), 1 + 11 * 6);
}

#[test]
fn estimate_names_subject_without_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let mut panel = common::simulate(60, 0.4, 5);
    let ids: Vec<u64> = panel.subjects().iter().map(|s| s.id).collect();
    let mut subjects = panel.subjects().to_vec();
    subjects[3].treatment_start = Some(0);
    subjects[3].counterfactuals = None;
    panel = debiased_att::PanelDataset::new(panel.grid().clone(), 3, 1, subjects).unwrap();
    let path = dir.path().join("panel.csv");
    write_panel(&panel, &path).unwrap();
    let output = Command::new(BIN)
        .args(["estimate", "--panel", s(&path), "--estimators", "debiased", "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains(&ids[3].to_string()), "{stderr}");
}

fn csv_values(path: &Path) -> Vec<(String, String, f64)> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[3].to_string(), r[4].parse().unwrap_or(f64::NAN))
        })
        .collect()
}

#[test]
fn noiseless_oracle_matches_debiased_csv() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&["simulate", "--preset", "paper-1cov", "--set", "sigma=0", "--set", "n=500", "--seed", "3", "--out", s(dir.path())]);
    assert_eq!(code, 0);
    let out = dir.path().join("est");
    let code = run(&[
        "estimate",
        "--panel",
        s(&dir.path().join("panel_rep0.csv")),
        "--estimators",
        "oracle,debiased",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let oracle = csv_values(&out.join("coef_oracle.csv"));
    let debiased = csv_values(&out.join("coef_debiased.csv"));
    assert_eq!(oracle.len(), debiased.len());
    for (a, b) in oracle.iter().zip(&debiased) {
        assert_eq!((&a.0, &a.1), (&b.0, &b.1));
        if a.2.is_nan() {
            assert!(b.2.is_nan());
            continue;
        }
        // The X coefficient is ill conditioned late in follow-up, where the
        // noiseless counterfactuals have decayed towards zero.
        assert!((a.2 - b.2).abs() < 1e-9 * a.2.abs().max(1.0), "{a:?} vs {b:?}");
    }
}

#[test]
fn benchmark_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let go = |out: &Path, jobs: &str| {
        run(&[
            "benchmark",
            "--preset",
            "paper-1cov",
            "--set",
            "sigma=0.4",
            "--set",
            "n=300",
            "--reps",
            "10",
            "--truth-reps",
            "10",
            "--seed",
            "1",
            "--jobs",
            jobs,
            "--out",
            s(out),
        ])
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(go(&a, "2"), 0);
    assert_eq!(go(&b, "1"), 0);
    let replicates = fs::read_to_string(a.join("benchmark_replicates.csv")).unwrap();
    let mut lines = replicates.lines();
    assert_eq!(lines.next().unwrap(), "scenario,sigma,replicate,estimator,mise");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5 * 10);
    for est in ["oracle", "naive", "uncorrected", "debiased", "debiased-true"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(3) == Some(est)).count(), 10);
    }
    let table = fs::read_to_string(a.join("benchmark_table.txt")).unwrap();
    let header = table.lines().next().unwrap();
    for est in ["oracle", "naive", "uncorrected", "debiased", "debiased-true"] {
        assert!(header.contains(est));
    }
    for f in ["benchmark_replicates.csv", "benchmark_summary.csv", "benchmark_table.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = dir.path().join("report");
    assert_eq!(run(&["report", "--input", s(&a.join("benchmark_summary.csv")), "--out", s(&report)]), 0);
}

#[test]
fn config_errors_exit_with_two() {
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(BIN)
        .args(["simulate", "--preset", "paper-1cov", "--set", "no_such_key=1", "--out"])
        .arg(out.path())
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));
    let status = Command::new(BIN).args(["simulate", "--no-such-flag"]).output().unwrap().status;
    assert_eq!(status.code(), Some(2));
    let status = Command::new(BIN)
        .args(["simulate", "--preset", "paper-9cov", "--out"])
        .arg(out.path())
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));
}

#[test]
fn config_file_matches_preset_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.cfg");
    fs::write(&cfg, "preset = paper-1cov\n# smaller cohort\nn = 40\nsigma = 0.8\n").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--seed", "2", "--out", s(&a)]), 0);
    assert_eq!(
        run(&["simulate", "--preset", "paper-1cov", "--set", "n=40", "--set", "sigma=0.8", "--seed", "2", "--out", s(&b)]),
        0
    );
    assert_eq!(fs::read(a.join("panel_rep0.csv")).unwrap(), fs::read(b.join("panel_rep0.csv")).unwrap());
}

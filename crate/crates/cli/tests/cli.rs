mod common;

use std::fs;

use common::{factor_panel_csv, fixture, ok, panelctrl, read_csv, read_json};
use panelctrl_core::{load_panel_path, split_and_center, Estimator, EstimatorSpec};

#[test]
fn estimate_writes_one_gap_row_per_period() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("three_units.csv");
    let out = dir.path().join("est");
    ok(&[
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--treated",
        "KS",
        "--treatment-time",
        "3",
        "--estimator",
        "scm",
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows = read_csv(&out.join("gap.csv"));
    assert_eq!(rows.len(), 4);
    let times: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(times, ["1", "2", "3", "4"]);

    let panel = load_panel_path(&input, "KS", "3").unwrap();
    let fit = Estimator::new(EstimatorSpec::Scm).estimate(&split_and_center(&panel, true)).unwrap();
    for t in 0..2 {
        let gap: f64 = rows[t][3].parse().unwrap();
        assert_eq!(gap, fit.gap_pre[t], "pre row {t}");
    }
    for t in 0..2 {
        let gap: f64 = rows[2 + t][3].parse().unwrap();
        assert_eq!(gap, fit.att[t], "post row {t}");
    }

    let weights = read_csv(&out.join("weights.csv"));
    assert_eq!(weights.len(), 2);
    assert_eq!(read_csv(&out.join("balance.csv")).len(), 2);

    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["tool"], "panelctrl");
    assert_eq!(m["command"], "estimate");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config"]["panel"]["treated"], "KS");
    assert_eq!(m["outputs"], serde_json::json!(["weights.csv", "gap.csv", "balance.csv"]));
}

#[test]
fn estimate_with_intervals_fills_every_post_row() {
    let dir = tempfile::tempdir().unwrap();
    let (input, treated, time) = factor_panel_csv(dir.path());
    let out = dir.path().join("est");
    for method in ["conformal", "jackknife+"] {
        ok(&[
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--treated",
            &treated,
            "--treatment-time",
            &time,
            "--lambda",
            "1",
            "--inference",
            method,
            "--alpha",
            "0.2",
            "--out",
            out.to_str().unwrap(),
        ]);
        let rows = read_csv(&out.join("gap.csv"));
        assert_eq!(rows.len(), 20);
        for row in &rows[15..] {
            let (gap, lo, hi): (f64, f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap(), row[5].parse().unwrap());
            assert!(lo <= gap && gap <= hi, "{method}: {gap} outside [{lo}, {hi}]");
        }
        assert!(rows[..15].iter().all(|r| r[4].is_empty()));
    }
}

#[test]
fn covariates_are_balanced_in_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let (input, treated, time) = factor_panel_csv(dir.path());
    // add a covariate column: the unit's outcome at the first period plus noise-free offset
    let text = fs::read_to_string(&input).unwrap();
    let mut lines = text.lines();
    let mut augmented = format!("{},size\n", lines.next().unwrap());
    for (k, line) in lines.enumerate() {
        augmented.push_str(&format!("{line},{}\n", (k % 7) as f64 * 0.5));
    }
    let cov_input = dir.path().join("cov.csv");
    fs::write(&cov_input, augmented).unwrap();
    for mode in ["joint", "residualize"] {
        let out = dir.path().join(mode);
        ok(&[
            "estimate",
            "--input",
            cov_input.to_str().unwrap(),
            "--treated",
            &treated,
            "--treatment-time",
            &time,
            "--lambda",
            "0.5",
            "--covariates",
            "size",
            "--covariate-mode",
            mode,
            "--out",
            out.to_str().unwrap(),
        ]);
        let rows = read_csv(&out.join("balance.csv"));
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0][0], "size");
        if mode == "residualize" {
            let after: f64 = rows[0][2].parse().unwrap();
            assert!(after < 1e-8, "two-step weights leave covariate gap {after}");
        }
    }
}

#[test]
fn cv_records_the_selected_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let (input, treated, time) = factor_panel_csv(dir.path());
    let out = dir.path().join("cv");
    ok(&[
        "cv",
        "--input",
        input.to_str().unwrap(),
        "--treated",
        &treated,
        "--treatment-time",
        &time,
        "--lambda-grid",
        "0.01,0.1,1,10,100",
        "--select",
        "one-se",
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows = read_csv(&out.join("cv.csv"));
    let grid: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(grid, [100.0, 10.0, 1.0, 0.1, 0.01]);
    let m = read_json(&out.join("manifest.json"));
    let r = &m["results"];
    assert_eq!(r["selected"], r["lambda_1se"]);
    assert!(r["lambda_1se"].as_f64().unwrap() >= r["lambda_min"].as_f64().unwrap());
}

#[test]
fn placebo_writes_a_file_per_time() {
    let dir = tempfile::tempdir().unwrap();
    let (input, treated, _) = factor_panel_csv(dir.path());
    let out = dir.path().join("placebo");
    ok(&[
        "placebo",
        "--input",
        input.to_str().unwrap(),
        "--treated",
        &treated,
        "--treatment-time",
        "15",
        "--estimator",
        "scm",
        "--placebo-times",
        "10,12",
        "--out",
        out.to_str().unwrap(),
    ]);
    for (t, n_post) in [("10", 5), ("12", 3)] {
        let rows = read_csv(&out.join(format!("placebo_{t}.csv")));
        let post = rows.iter().filter(|r| r[1].parse::<f64>().unwrap() >= t.parse::<f64>().unwrap()).count();
        assert_eq!(post, n_post, "placebo at {t}");
    }
}

#[test]
fn diagnose_passes_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let (input, treated, time) = factor_panel_csv(dir.path());
    for lambda in [None, Some("0.3")] {
        let out = dir.path().join("diag");
        let mut args = vec![
            "diagnose",
            "--input",
            input.to_str().unwrap(),
            "--treated",
            &treated,
            "--treatment-time",
            &time,
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(l) = lambda {
            args.extend(["--lambda", l]);
        }
        ok(&args);
        let checks = read_csv(&out.join("identity_checks.csv"));
        assert_eq!(checks.len(), 24);
        for c in &checks {
            assert_eq!(c[5], "PASS", "{c:?}");
        }
        let sketch = read_csv(&out.join("bound_sketch.csv"));
        assert_eq!(sketch.len(), 51 * 4);
    }
}

#[test]
fn diagnose_also_passes_on_the_three_unit_panel() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("three_units.csv");
    let out = dir.path().join("diag");
    ok(&[
        "diagnose",
        "--input",
        input.to_str().unwrap(),
        "--treated",
        "KS",
        "--treatment-time",
        "3",
        "--lambda",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(read_csv(&out.join("identity_checks.csv")).iter().all(|c| c[5] == "PASS"));
}

#[test]
fn simulate_reports_every_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc");
    ok(&["simulate", "--dgp", "ar3", "--reps", "6", "--seed", "7", "--stratify", "--raw", "--out", out.to_str().unwrap()]);
    let rows = read_csv(&out.join("mc_report.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["scm", "ridge-ascm", "ridge", "fixed-effects", "demeaned-scm"]);
    assert_eq!(read_csv(&out.join("mc_raw.csv")).len(), 6);
    assert!(out.join("mc_strata.csv").exists());
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["reps"], 6);
}

#[test]
fn errors_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let three = fixture("three_units.csv");
    let three = three.to_str().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let base = |treated: &'static str, time: &'static str| {
        vec!["estimate", "--input", three, "--treated", treated, "--treatment-time", time, "--estimator", "scm", "--out", out]
    };

    assert_eq!(panelctrl(&["estimate", "--input", three]).status.code(), Some(2));
    assert_eq!(panelctrl(&["estimate", "--bogus"]).status.code(), Some(2));

    let unknown = panelctrl(&base("XX", "3"));
    assert_eq!(unknown.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("XX"));
    assert_eq!(panelctrl(&base("KS", "1")).status.code(), Some(3));
    let dup = fixture("duplicate_cell.csv");
    let mut a = base("KS", "2");
    a[2] = dup.to_str().unwrap();
    assert_eq!(panelctrl(&a).status.code(), Some(3));

    let mut a = base("KS", "3");
    a.extend(["--alpha", "1.5"]);
    assert_eq!(panelctrl(&a).status.code(), Some(4));
    let mut a = base("KS", "3");
    a[8] = "ridge-ascm";
    // cross-validation needs three pre-periods; the fixture has two
    assert_eq!(panelctrl(&a).status.code(), Some(4));

    let mut a = base("KS", "3");
    a[2] = "/nonexistent/panel.csv";
    assert_eq!(panelctrl(&a).status.code(), Some(6));
}

#[test]
fn input_file_is_left_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (input, treated, time) = factor_panel_csv(dir.path());
    let before = fs::read(&input).unwrap();
    let out = dir.path().join("est");
    ok(&[
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--treated",
        &treated,
        "--treatment-time",
        &time,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(&input).unwrap(), before);
}

//! Drives `execute` in-process: artifacts, exit codes and input handling.

use std::path::Path;

use tempfile::TempDir;

use super::execute;

fn audit(args: &[&str]) -> (u8, String) {
    let mut out = Vec::new();
    let code = execute(std::iter::once("audit").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Writes `d.csv` and `d.toml` into `dir`.
fn synth(dir: &Path, n: &str, shift: &str) {
    let data = path(dir, "d.csv");
    let (code, _) = audit(&["synth", "--n", n, "--shift", shift, "--seed", "3", "--out", &data]);
    assert_eq!(code, 0);
}

#[test]
fn run_writes_reports_and_prints_accuracy() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| path(dir.path(), n);
    synth(dir.path(), "1500", "0.4");
    let (code, stdout) = audit(&[
        "run", "--data", &p("d.csv"), "--schema", &p("d.toml"), "--k", "10", "--seed", "7", "--out", &p("rep"),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("logistic_regression: mean held-out accuracy"));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("  ")).count(), 14);
    for f in ["report.json", "report.md", "predictions.csv"] {
        assert!(dir.path().join("rep").join(f).exists(), "{f}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep/report.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["verdicts"].as_array().unwrap().len(), 14);
    assert_eq!(json["config"]["k"], 10);
    let md = std::fs::read_to_string(dir.path().join("rep/report.md")).unwrap();
    assert!(md.contains("## 14. Fairness Through Awareness"));
}

#[test]
fn reports_differ_only_in_timestamp() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| path(dir.path(), n);
    synth(dir.path(), "900", "0.2");
    for out in ["a", "b"] {
        let (code, _) = audit(&["run", "--data", &p("d.csv"), "--schema", &p("d.toml"), "--k", "6", "--out", &p(out)]);
        assert_eq!(code, 0);
    }
    let strip = |d: &str| -> Vec<String> {
        std::fs::read_to_string(dir.path().join(d).join("report.json"))
            .unwrap()
            .lines()
            .filter(|l| !l.contains("\"timestamp\""))
            .map(str::to_owned)
            .collect()
    };
    assert_eq!(strip("a"), strip("b"));
    let preds = |d: &str| std::fs::read(dir.path().join(d).join("predictions.csv")).unwrap();
    assert_eq!(preds("a"), preds("b"));
}

#[test]
fn external_predictions_skip_training() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| path(dir.path(), n);
    synth(dir.path(), "800", "0.3");
    let (code, _) = audit(&["run", "--data", &p("d.csv"), "--schema", &p("d.toml"), "--k", "5", "--out", &p("a")]);
    assert_eq!(code, 0);
    let (code, _) = audit(&[
        "run", "--predictions", &p("a/predictions.csv"), "--schema", &p("d.toml"), "--out", &p("b"), "--model-id", "gbm",
    ]);
    assert_eq!(code, 0);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("b/report.json")).unwrap()).unwrap();
    assert_eq!(json["model_id"], "gbm");
    assert_eq!(json["config"]["input"], "predictions");
    let causal = &json["verdicts"][12];
    assert_eq!(causal["id"], "causal_discrimination");
    assert_eq!(causal["verdict"], "not_evaluable");
    // without --data there are no features to match on
    assert_eq!(json["verdicts"][13]["verdict"], "not_evaluable");
}

#[test]
fn report_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| path(dir.path(), n);
    synth(dir.path(), "600", "0.0");
    std::env::set_var("AUDIT_REPORT_DIR", p("from_env"));
    let (code, _) = audit(&["run", "--data", &p("d.csv"), "--schema", &p("d.toml"), "--k", "4", "--skip-matching"]);
    std::env::remove_var("AUDIT_REPORT_DIR");
    assert_eq!(code, 0);
    assert!(dir.path().join("from_env/report.json").exists());
}

#[test]
fn fail_on_violation_is_opt_in() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| path(dir.path(), n);
    synth(dir.path(), "2000", "0.8");
    let (data, schema, out) = (p("d.csv"), p("d.toml"), p("r"));
    let args = ["run", "--data", &data, "--schema", &schema, "--k", "10", "--skip-matching", "--out", &out];
    assert_eq!(audit(&args).0, 0);
    let mut gated = args.to_vec();
    gated.push("--fail-on-violation");
    assert_eq!(audit(&gated).0, 1);
}

#[test]
fn input_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| path(dir.path(), n);
    synth(dir.path(), "300", "0.0");
    std::fs::write(dir.path().join("bad.csv"), "row_id,x1\n1,abc\n").unwrap();
    std::fs::write(dir.path().join("bad.toml"), "outcome_column = 3").unwrap();
    std::fs::write(
        dir.path().join("preds.csv"),
        "row_id,fold_id,y_true,y_pred,score,group\n1,0,0,0,1.5,protected\n",
    )
    .unwrap();
    let (d, s, bad, bad_s, preds, missing, x) =
        (p("d.csv"), p("d.toml"), p("bad.csv"), p("bad.toml"), p("preds.csv"), p("missing.csv"), p("x.csv"));
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--data", &missing, "--schema", &s],
        vec!["run", "--data", &bad, "--schema", &s],
        vec!["run", "--data", &d, "--schema", &bad_s],
        vec!["run", "--data", &d],
        vec!["run"],
        vec!["run", "--data", &d, "--schema", &s, "--k", "1"],
        vec!["run", "--data", &d, "--schema", &s, "--alpha", "1.5"],
        vec!["run", "--predictions", &preds],
        vec!["run", "--k", "notanumber"],
        vec!["frobnicate"],
        vec!["synth", "--mix", "1.0", "--out", &x],
        vec!["synth", "--bias", "relabel", "--magnitude", "0.1", "--out", &x],
        vec!["validate", "--data", &bad, "--schema", &s],
        vec!["validate"],
    ];
    for args in cases {
        assert_eq!(audit(&args).0, 2, "{args:?}");
    }
}

#[test]
fn validate_reports_counts() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| path(dir.path(), n);
    synth(dir.path(), "400", "0.0");
    let (code, stdout) = audit(&["validate", "--data", &p("d.csv"), "--schema", &p("d.toml")]);
    assert_eq!(code, 0);
    assert!(stdout.starts_with("data ok: 400 rows, 4 features"), "{stdout}");
}

#[test]
fn synth_bias_changes_data_deterministically() {
    let dir = TempDir::new().unwrap();
    let run = |out: &str, extra: &[&str]| {
        let target = path(dir.path(), out);
        let mut args = vec!["synth", "--n", "500", "--seed", "2", "--out", &target];
        args.extend_from_slice(extra);
        assert_eq!(audit(&args).0, 0);
        std::fs::read(&target).unwrap()
    };
    let plain = run("a.csv", &[]);
    assert_eq!(plain, run("b.csv", &[]));
    let biased = run("c.csv", &["--bias", "outcome_shift", "--magnitude", "0.3"]);
    assert_ne!(plain, biased);
    assert_eq!(plain, run("d.csv", &["--bias", "outcome_shift", "--magnitude", "0"]));
}

#[test]
fn help_is_not_an_error() {
    assert_eq!(audit(&["--help"]).0, 0);
}

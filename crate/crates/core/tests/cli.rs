use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_calibra"))
}

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("demo")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "expected a single error line, got {text:?}");
    serde_json::from_str(text.trim()).unwrap()
}

#[test]
fn pipeline_on_demo_writes_every_artifact() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&["pipeline", "--config", s(&demo().join("run.toml")), "--out", s(out.path())]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    for file in [
        "propensity_model.csv",
        "ipsw_weights.csv",
        "weights.csv",
        "calibration_report.toml",
        "estimates.csv",
        "manifest.toml",
    ] {
        assert!(out.path().join(file).is_file(), "missing {file}");
    }
    let estimates = std::fs::read_to_string(out.path().join("estimates.csv")).unwrap();
    assert!(estimates.starts_with("estimand,outcome,domain,point,variance,ci_low,ci_high,n,weight_sum\n"));
    assert!(estimates.contains("ratio,y_flag,region=north,"));
    let manifest = std::fs::read_to_string(out.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("config_sha256"));
    assert!(manifest.contains(&format!("version = \"{}\"", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn missing_benchmark_file_exits_3_naming_the_path() {
    let out = tempfile::tempdir().unwrap();
    let missing = out.path().join("no_such_benchmarks.csv");
    let result = run(&[
        "pipeline",
        "--config",
        s(&demo().join("run.toml")),
        "--benchmarks",
        s(&missing),
        "--out",
        s(&out.path().join("run")),
    ]);
    assert_eq!(result.status.code(), Some(3));
    let err = stderr_json(&result);
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("no_such_benchmarks.csv"));
}

#[test]
fn pipeline_equals_composed_subcommands() {
    let config = demo().join("run.toml");
    let whole = tempfile::tempdir().unwrap();
    let steps = tempfile::tempdir().unwrap();
    assert!(run(&["pipeline", "--config", s(&config), "--out", s(whole.path())]).status.success());

    let (fit, weigh, est) = (steps.path().join("fit"), steps.path().join("weigh"), steps.path().join("est"));
    assert!(run(&["fit-propensity", "--config", s(&config), "--out", s(&fit)]).status.success());
    let model = fit.join("propensity_model.csv");
    assert!(run(&["weigh", "--config", s(&config), "--model", s(&model), "--out", s(&weigh)]).status.success());
    let weights = weigh.join("weights.csv");
    assert!(run(&["estimate", "--config", s(&config), "--weights", s(&weights), "--out", s(&est)]).status.success());

    for (dir, file) in [
        (&fit, "propensity_model.csv"),
        (&weigh, "ipsw_weights.csv"),
        (&weigh, "weights.csv"),
        (&weigh, "calibration_report.toml"),
        (&est, "estimates.csv"),
    ] {
        assert_eq!(std::fs::read(whole.path().join(file)).unwrap(), std::fs::read(dir.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let config = demo().join("run.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run(&["pipeline", "--config", s(&config), "--out", s(a.path())]).status.success());
    assert!(run(&["pipeline", "--config", s(&config), "--alpha", "1", "--out", s(b.path())]).status.success());
    let ea = std::fs::read_to_string(a.path().join("estimates.csv")).unwrap();
    let eb = std::fs::read_to_string(b.path().join("estimates.csv")).unwrap();
    assert_ne!(ea, eb);
    assert_eq!(
        std::fs::read(a.path().join("weights.csv")).unwrap(),
        std::fs::read(b.path().join("weights.csv")).unwrap()
    );
}

#[test]
fn every_subcommand_writes_a_manifest() {
    let config = demo().join("run.toml");
    let out = tempfile::tempdir().unwrap();
    let fit = out.path().join("fit");
    assert!(run(&[
        "fit-propensity",
        "--frame",
        s(&demo().join("frame.csv")),
        "--schema",
        s(&demo().join("schema.toml")),
        "--l2",
        "1",
        "--out",
        s(&fit)
    ])
    .status
    .success());
    let manifest = std::fs::read_to_string(fit.join("manifest.toml")).unwrap();
    assert!(manifest.contains("subcommand = \"fit-propensity\""));
    assert!(manifest.contains("[inputs.frame]"));
    assert!(!manifest.contains("[inputs.config]"));
    let cells = out.path().join("cells");
    let result = run(&[
        "weigh",
        "--config",
        s(&config),
        "--benchmarks",
        s(&demo().join("benchmark_cells.csv")),
        "--mode",
        "cells",
        "--model",
        s(&fit.join("propensity_model.csv")),
        "--out",
        s(&cells),
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let report = std::fs::read_to_string(cells.join("calibration_report.toml")).unwrap();
    assert!(report.contains("mode = \"cells\""));
}

#[test]
fn mode_disagreeing_with_benchmark_layout_is_a_validation_error() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&["pipeline", "--config", s(&demo().join("run.toml")), "--mode", "cells", "--out", s(out.path())]);
    assert_eq!(result.status.code(), Some(1));
    assert_eq!(stderr_json(&result)["error"], "validation");
}

#[test]
fn degenerate_fit_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let frame = dir.path().join("frame.csv");
    std::fs::write(&frame, "unit_id,region,sampled,responded,age,gender,activity\nu1,north,1,1,25-44,male,low\nu2,north,1,1,65+,female,high\n").unwrap();
    let result = run(&[
        "fit-propensity",
        "--frame",
        s(&frame),
        "--schema",
        s(&demo().join("schema.toml")),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert_eq!(stderr_json(&result)["error"], "numerical");
}

#[test]
fn unknown_flag_exits_1_with_json() {
    let result = run(&["weigh", "--no-such-flag"]);
    assert_eq!(result.status.code(), Some(1));
    assert_eq!(stderr_json(&result)["error"], "validation");
}

fn validate_output(extra: &[&str]) -> (Output, String) {
    let config = demo().join("run.toml");
    let mut args = vec!["validate", "--config", s(&config)];
    args.extend_from_slice(extra);
    let out = run(&args);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    (out, text)
}

#[test]
fn validate_demo_has_no_findings() {
    let (out, text) = validate_output(&[]);
    assert!(out.status.success());
    assert_eq!(text.trim(), "no findings");
}

#[test]
fn validate_names_row_and_unknown_region() {
    let dir = tempfile::tempdir().unwrap();
    let original = std::fs::read_to_string(demo().join("respondents.csv")).unwrap();
    let mut lines: Vec<String> = original.lines().map(str::to_string).collect();
    lines[3] = lines[3].replacen(",north,", ",atlantis,", 1).replacen(",south,", ",atlantis,", 1).replacen(
        ",east,",
        ",atlantis,",
        1,
    );
    let path = dir.path().join("respondents.csv");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let (out, text) = validate_output(&["--respondents", s(&path)]);
    assert!(out.status.success());
    assert!(text.contains("row 3: region `atlantis` is absent from the region margin"), "{text}");
    assert!(std::fs::read_dir(dir.path()).unwrap().count() == 1, "validate must not write");
}

#[test]
fn validate_reports_both_margin_totals() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("margins.csv");
    std::fs::write(
        &path,
        "margin,category,population\nregion,north,500\nregion,south,500\nage:gender,18-24:female,999\n",
    )
    .unwrap();
    let (out, text) = validate_output(&["--benchmarks", s(&path)]);
    assert!(out.status.success());
    assert!(text.contains("999") && text.contains("1000"), "{text}");
}

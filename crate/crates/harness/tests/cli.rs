use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn surge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("output_dir = \"{}\"\n{body}", dir.join("out").display())).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn train_then_strip_then_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "steps = 30\ninstrument_layer = 2\n");
    for m in ["STE", "STE+SURGE"] {
        let out = surge(&["train", "--config", &cfg, "--method", m, "--seed", "1"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let run = dir.path().join("out/ste_surge-seed1");
    let model = run.join("model.srge");
    let lean = dir.path().join("lean.srge");
    let out = surge(&[
        "strip",
        "--in",
        model.to_str().unwrap(),
        "--out",
        lean.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(fs::metadata(&lean).unwrap().len() < fs::metadata(&model).unwrap().len());

    let base = dir.path().join("out/ste-seed1");
    let out = surge(&[
        "histogram",
        "--run",
        run.to_str().unwrap(),
        "--layer",
        "2",
        "--baseline",
        base.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["run"]["zero_fraction"].as_f64().unwrap() <= 1.0);
    assert!(report["baseline"]["bins"].is_array());

    let out = surge(&["histogram", "--run", run.to_str().unwrap(), "--layer", "1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn compare_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "steps = 10\nmethods = [\"STE\", \"BiReal+SURGE\"]\nseeds = [0, 1]\n",
    );
    let out = surge(&["compare", "--config", &cfg, "--workers", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/summary.csv").exists());
    assert!(dir.path().join("out/bireal_surge-seed1/manifest.json").exists());

    let other = dir.path().join("elsewhere");
    let out = surge(&[
        "train",
        "--config",
        &cfg,
        "--method",
        "BiReal+SURGE",
        "--eta",
        "0.05",
        "--scope",
        "clipped_only",
        "--steps",
        "3",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(other.join("bireal_surge-seed0/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
}

#[test]
fn theory_prints_a_report() {
    let out = surge(&["theory", "--d", "8", "--samples", "5000", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in [
        "lambda_star_analytic",
        "lambda_star_oracle",
        "relative_error",
        "mse_curve",
        "norm_ratio",
    ] {
        assert!(report.get(key).is_some(), "{key}");
    }
    let out = surge(&["theory", "--d", "0", "--samples", "10"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // usage errors
    assert_eq!(code(&surge(&["frobnicate"])), 1);
    assert_eq!(code(&surge(&["train"])), 1);
    assert_eq!(code(&surge(&["--help"])), 0);

    // config errors
    let cfg = write_config(dir.path(), "eta = -1.0\n");
    assert_eq!(code(&surge(&["train", "--config", &cfg])), 1);
    let cfg = write_config(dir.path(), "etta = 0.1\n");
    let out = surge(&["train", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("etta"));
    let cfg = write_config(dir.path(), "methods = [\"STE\", \"STE\"]\n");
    assert_eq!(code(&surge(&["compare", "--config", &cfg])), 1);

    // divergence
    let cfg = write_config(dir.path(), "steps = 50\noptimizer = { kind = \"sgd\", lr = 1e300 }\n");
    let out = surge(&["train", "--config", &cfg, "--method", "FP"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));

    // io
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&surge(&["train", "--config", missing.to_str().unwrap()])), 3);
    let junk = dir.path().join("junk.srge");
    fs::write(&junk, b"SRGE").unwrap();
    let out = surge(&[
        "strip",
        "--in",
        junk.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
}

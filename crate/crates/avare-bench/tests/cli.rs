//! End-to-end tests of the `avare-bench` binary: config validation, runs
//! with output overrides, determinism of the written files, and the
//! inspection subcommands.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avare-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const TINY: &str = r#"{
    "dataset": {"synthetic": {"n": 12, "d": 2, "seed": 4}},
    "iterations": {"steps": 25},
    "samplers": ["avare", "uniform"],
    "seeds": [0, 1],
    "metrics": "full"
}"#;

#[test]
fn validate_then_run_then_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);

    let out = bench(&["validate", "--config", &config]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("config ok: 12 examples, 25 steps"));

    let run_dir = dir.path().join("out");
    let out = bench(&["run", "--config", &config, "--out", run_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("config digest"), "{text}");
    assert!(text.contains("effectiveness ratios"), "{text}");
    for name in [
        "trace_avare_0.csv",
        "trace_avare_1.csv",
        "trace_uniform_0.csv",
        "trace_uniform_1.csv",
        "aggregate_avare.csv",
        "aggregate_uniform.csv",
        "summary.json",
    ] {
        assert!(run_dir.join(name).exists(), "missing {name}");
    }

    let out = bench(&["ratios", "--config", &config]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let grab = |label: &str| -> f64 {
        let tail = &text[text.find(label).unwrap() + label.len()..];
        tail.split([',', '\n'])
            .next()
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    assert!(grab("smoothness ratio") >= 1.0, "{text}");
    assert!(grab("variance ratio") >= 1.0, "{text}");
}

#[test]
fn reruns_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = bench(&["run", "--config", &config, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let env_dir = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_avare-bench"))
        .args(["run", "--config", &config, "--seeds", "0"])
        .env("AVARE_OUT", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(env_dir.join("summary.json").exists());
    assert!(env_dir.join("trace_avare_0.csv").exists());
    assert!(!env_dir.join("trace_avare_1.csv").exists(), "seed override ignored");
}

#[test]
fn invalid_configs_fail_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();

    // Batch larger than the dataset.
    let config = write_config(
        dir.path(),
        r#"{
            "dataset": {"synthetic": {"n": 4, "d": 2, "seed": 0}},
            "iterations": {"steps": 5},
            "batch": 99
        }"#,
    );
    let out = bench(&["validate", "--config", &config]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("batch"), "{}", stderr(&out));

    // Unknown field.
    let config = write_config(
        dir.path(),
        r#"{"dataset": {"synthetic": {"n": 4, "d": 2, "seed": 0}},
            "iterations": {"steps": 5}, "stepsize": 0.1}"#,
    );
    let out = bench(&["validate", "--config", &config]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("stepsize"), "{}", stderr(&out));

    // Missing file names the path.
    let missing = dir.path().join("nope.json");
    let out = bench(&["validate", "--config", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nope.json"), "{}", stderr(&out));
}

#[test]
fn samplers_lists_the_menu() {
    let out = bench(&["samplers"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for needle in ["avare", "uniform", "oracle", "single", "minibatch_wor", "sgld"] {
        assert!(text.contains(needle), "missing {needle}: {text}");
    }
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sfl(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sfl"));
    cmd.args(args).env_remove("SFL_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("run sfl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const SMALL: &str = r#"{"p": 30, "n": 150, "T": 90, "spikes": [40, 12],
  "seed": 17, "replications": 6, "mode": "clt_simple"}"#;

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn lsd_prints_support_and_transform() {
    let o = sfl(&["lsd", "--c", "0.3333333", "--y", "0.2"], &[]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "a,b");
    assert_eq!(lines[1], "0.1569,4.4264");
    assert_eq!(lines[2], "z,S");
    assert_eq!(lines.len(), 6);
}

#[test]
fn lsd_custom_grid() {
    let o = sfl(
        &["lsd", "--c", "0.3333333333333333", "--y", "0.2", "--z", "8"],
        &[],
    );
    let text = stdout(&o);
    let row = text.lines().nth(3).unwrap();
    let s: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((s + 0.1518760329804431).abs() < 1e-9, "{row}");
}

#[test]
fn lsd_inside_support_is_invalid_input() {
    let o = sfl(&["lsd", "--c", "0.3", "--y", "0.2", "--z", "1"], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("inside the support"));
}

#[test]
fn theta_shows_classical_limit() {
    let o = sfl(
        &["theta", "--lambda", "50", "--c", "0.3333333", "--y", "0.2"],
        &[],
    );
    assert!(o.status.success());
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], "63.248");
    assert!(row[1].starts_with("63.24"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sfl(&["bogus"], &[]).status.code(), Some(2));
    assert_eq!(
        sfl(&["lsd", "--c", "0.3", "--y", "0.2", "--w", "1"], &[])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        sfl(&["verify", "--suite", "everything"], &[]).status.code(),
        Some(2)
    );
    assert_eq!(sfl(&[], &[]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_3_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad_n = SMALL.replace("\"n\": 150", "\"n\": 20");
    let o = sfl(
        &["simulate", "--config", &write_config(dir.path(), &bad_n)],
        &[],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("`n`"), "{}", stderr(&o));

    let unknown = SMALL.replace("\"seed\"", "\"colour\": 1, \"seed\"");
    let o = sfl(
        &["simulate", "--config", &write_config(dir.path(), &unknown)],
        &[],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("colour"));

    let o = sfl(&["simulate", "--config", "/nonexistent/config.json"], &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_thread_variable_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = sfl(
        &[
            "simulate",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
        ],
        &[("SFL_THREADS", "many")],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("SFL_THREADS"));
}

#[test]
fn degenerate_experiment_exits_4_and_marks_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("[40, 12]", "[1.05]");
    let out = dir.path().join("out");
    let o = sfl(
        &[
            "simulate",
            "--config",
            &write_config(dir.path(), &body),
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
}

#[test]
fn simulate_writes_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = sfl(
        &[
            "simulate",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["spikes"].as_array().unwrap().len(), 2);
    assert_eq!(summary["successful"], 6);

    for i in [1, 2] {
        let samples = fs::read_to_string(out.join(format!("samples_{i}.csv"))).unwrap();
        assert!(samples.starts_with("replication,lambda_hat,delta,normalized\n"));
        assert_eq!(samples.lines().count(), 7);
        assert!(!samples.contains('\r'));
        let qq = fs::read_to_string(out.join(format!("qq_{i}.csv"))).unwrap();
        assert!(qq.starts_with("normal_quantile,sample_quantile\n"));
        assert_eq!(qq.lines().count(), 7);
    }

    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["master_seed"], 17);
    assert_eq!(manifest["config"]["T"], 90);
    assert!(manifest["duration_seconds"].as_f64().unwrap() >= 0.0);
    assert!(manifest["started"].as_str().unwrap().ends_with('Z'));
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 6);
}

#[test]
fn single_replication_has_null_variance() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = sfl(
        &[
            "simulate",
            "--config",
            &config,
            "--reps",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let moments = &summary["spikes"][0]["fluctuation"]["moments"];
    assert_eq!(moments["count"], 1);
    assert!(moments["variance"].is_null());
    assert!(moments["mean"].is_number());
}

#[test]
fn empty_targets_write_no_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("\"mode\"", "\"targets\": [], \"mode\"");
    let out = dir.path().join("out");
    let o = sfl(
        &[
            "simulate",
            "--config",
            &write_config(dir.path(), &body),
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["spikes"].as_array().unwrap().is_empty());
    let csvs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "csv")
        })
        .count();
    assert_eq!(csvs, 0);
}

#[test]
fn thread_count_and_reruns_give_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &SMALL.replace("\"replications\": 6", "\"replications\": 24"),
    );
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = sfl(
            &[
                "simulate",
                "--config",
                &config,
                "--seed",
                "5",
                "--out",
                out.to_str().unwrap(),
            ],
            &[("SFL_THREADS", threads)],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", "1");
    let b = run("b", "8");
    let c = run("c", "1");
    for file in [
        "samples_1.csv",
        "samples_2.csv",
        "qq_1.csv",
        "qq_2.csv",
        "summary.json",
    ] {
        let first = fs::read(a.join(file)).unwrap();
        assert_eq!(first, fs::read(b.join(file)).unwrap(), "{file}");
        assert_eq!(first, fs::read(c.join(file)).unwrap(), "{file}");
    }
}

use std::path::Path;
use std::process::{Command, Output};

fn fformation(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fformation"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
windows_s = [15.0]
combos = ["proximity", "fusion"]
[experiment]
repetitions = 2
[experiment.train]
epochs = 1
[synth]
seed = 5
session_s = 240
"#;

fn write_config(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn print_defaults_is_a_loadable_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fformation(tmp.path(), &["--print-defaults"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[experiment.train]"));
    let parsed = fformation::config::RunConfig::from_toml_str(&text).unwrap();
    assert_eq!(parsed, fformation::config::RunConfig::default());
}

#[test]
fn gen_writes_identical_files_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "c.toml", SMALL);
    let a = fformation(tmp.path(), &["gen", "--config", "c.toml", "--out", "a"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = fformation(tmp.path(), &["gen", "--config", "c.toml", "--out", "b"]);
    assert_eq!(code(&b), 0);
    let fa = files_under(&tmp.path().join("a"));
    assert!(fa.iter().any(|(n, _)| n.ends_with("P01_accel.csv")));
    assert!(fa.iter().any(|(n, _)| n == "manifest.json"));
    assert_eq!(fa, files_under(&tmp.path().join("b")));
    assert!(String::from_utf8_lossy(&a.stdout).contains("12 participants"));
}

#[test]
fn gen_without_seed_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "c.toml", "[synth]\nn_participants = 10\n");
    let o = fformation(tmp.path(), &["gen", "--config", "c.toml"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("`seed`"), "{}", stderr(&o));
}

#[test]
fn gen_into_unwritable_location_fails() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "c.toml", SMALL);
    std::fs::write(tmp.path().join("file"), "").unwrap();
    let o = fformation(
        tmp.path(),
        &["gen", "--config", "c.toml", "--out", "file/sub"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn configuration_and_data_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "bad.toml", "windows_s = []\n");
    assert_eq!(
        code(&fformation(tmp.path(), &["run", "--config", "bad.toml"])),
        1
    );
    assert_eq!(
        code(&fformation(
            tmp.path(),
            &["run", "--config", "missing.toml"]
        )),
        2
    );
    assert_eq!(code(&fformation(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(code(&fformation(tmp.path(), &["run", "--jobs", "0"])), 1);
    write_config(
        tmp.path(),
        "nodata.toml",
        "[data]\nsessions = [\"nowhere\"]\n",
    );
    assert_eq!(
        code(&fformation(
            tmp.path(),
            &["run", "--config", "nodata.toml", "--out", "x"]
        )),
        2
    );
    std::fs::write(tmp.path().join("p.csv"), "id,label\n").unwrap();
    assert_eq!(code(&fformation(tmp.path(), &["metrics", "p.csv"])), 2);
}

#[test]
fn check_gradients_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fformation(tmp.path(), &["check-gradients"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("over 20 models"), "{out}");
}

#[test]
fn run_eval_and_metrics_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "c.toml", SMALL);
    let r1 = fformation(dir, &["run", "--config", "c.toml", "--out", "r1"]);
    assert_eq!(code(&r1), 0, "{}", stderr(&r1));
    for f in [
        "reports/binary_w15_fusion.json",
        "reports/binary_w15_proximity.json",
        "predictions/binary_w15_fusion.csv",
        "checkpoints/binary_w15_fusion_r01.json",
        "summary.txt",
        "run_config.toml",
    ] {
        assert!(dir.join("r1").join(f).is_file(), "{f}");
    }

    let r2 = fformation(
        dir,
        &[
            "run",
            "--config",
            "c.toml",
            "--out",
            "r2",
            "--strict-determinism",
        ],
    );
    assert_eq!(code(&r2), 0);
    let s1 = std::fs::read(dir.join("r1/summary.txt")).unwrap();
    assert_eq!(s1, std::fs::read(dir.join("r2/summary.txt")).unwrap());
    assert_eq!(r1.stdout, r2.stdout);

    let ck = "r1/checkpoints/binary_w15_fusion_r00.json";
    let bad = fformation(
        dir,
        &[
            "eval",
            "--config",
            "c.toml",
            "--checkpoint",
            ck,
            "--combo",
            "proximity",
            "--window",
            "15",
        ],
    );
    assert_eq!(code(&bad), 2);
    let msg = stderr(&bad);
    assert!(
        msg.contains("expects 7 input channels") && msg.contains("has 1"),
        "{msg}"
    );

    let ev = fformation(
        dir,
        &[
            "eval",
            "--config",
            "c.toml",
            "--checkpoint",
            ck,
            "--combo",
            "fusion",
            "--window",
            "15",
            "--out",
            "ev",
        ],
    );
    assert_eq!(code(&ev), 0, "{}", stderr(&ev));
    let manifest: serde_json::Value = serde_json::from_slice(
        &std::fs::read(dir.join("r1/reports/binary_w15_fusion.json")).unwrap(),
    )
    .unwrap();
    let n_samples = manifest["dataset"]["n_samples"].as_u64().unwrap() as usize;
    let rows = fformation::metrics::read_predictions(&dir.join("ev/predictions.csv")).unwrap();
    assert_eq!(rows.len(), n_samples);

    let m = fformation(dir, &["metrics", "ev/predictions.csv", "--out", "m"]);
    assert_eq!(code(&m), 0);
    assert_eq!(m.stdout, ev.stdout);
    assert_eq!(
        std::fs::read(dir.join("m/metrics.json")).unwrap(),
        std::fs::read(dir.join("ev/metrics.json")).unwrap()
    );

    let replay = fformation(
        dir,
        &["run", "--replay", "r1/reports/binary_w15_proximity.json"],
    );
    assert_eq!(code(&replay), 0, "{}", stderr(&replay));
    assert!(String::from_utf8_lossy(&replay.stdout).starts_with("reproduced"));
}

#[test]
fn sweep_covers_every_window_and_combo() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(
        dir,
        "c.toml",
        "windows_s = [10.0, 15.0]\n[experiment]\nrepetitions = 2\n[experiment.train]\nepochs = 1\n[synth]\nseed = 2\nsession_s = 240\n",
    );
    let o = fformation(
        dir,
        &["run", "--config", "c.toml", "--out", "o", "--jobs", "2"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports = std::fs::read_dir(dir.join("o/reports")).unwrap().count();
    assert_eq!(reports, 6);
    let csv = std::fs::read_to_string(dir.join("o/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn joint_task_reports_a_four_class_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(
        dir,
        "c.toml",
        "task = \"joint4\"\ncombos = [\"fusion\"]\n[experiment]\nrepetitions = 2\n[experiment.train]\nepochs = 1\n[synth]\nseed = 4\n",
    );
    let o = fformation(dir, &["run", "--config", "c.toml", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fformation::experiment::RepetitionReport::load(
        &dir.join("o/reports/joint4_w15_fusion.json"),
    )
    .unwrap();
    let confusion = report.confusion.unwrap();
    assert_eq!(confusion.normalized.rows.len(), 4);
    for row in &confusion.normalized.rows {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let summary = String::from_utf8(o.stdout).unwrap();
    assert!(summary.contains("speaker_listener"), "{summary}");
}

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn exec(args: &[&str], config: Option<&Path>) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_webmine"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    let Output { status, stdout, stderr } = cmd.args(args).env("RUST_LOG", "warn").output().unwrap();
    Run {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn fixture(dir: &Path) -> PathBuf {
    let out = dir.join("fx");
    let r = exec(&["make-fixture", "--out", out.to_str().unwrap()], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let info: Value = serde_json::from_str(&r.stdout).unwrap();
    PathBuf::from(info["config"].as_str().unwrap())
}

fn summaries(stdout: &str) -> Vec<Value> {
    stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn run_all_completes_and_a_rerun_is_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture(tmp.path());
    let r = exec(&["run-all"], Some(&config));
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = summaries(&r.stdout);
    let names: Vec<&str> = s.iter().map(|v| v["stage"].as_str().unwrap()).collect();
    assert_eq!(names.first(), Some(&"train1"));
    assert_eq!(names.last(), Some(&"audit"));
    assert!(s.iter().all(|v| v["status"] == "done"));
    let sft = config.parent().unwrap().join("out/assemble/sft.jsonl");
    let before = fs::read(&sft).unwrap();
    assert!(!before.is_empty());

    let again = exec(&["run-all"], Some(&config));
    assert_eq!(again.code, 0, "{}", again.stderr);
    assert!(summaries(&again.stdout).iter().all(|v| v["status"] == "up-to-date" && v["units_run"] == 0));
    let r = exec(&["resume", "decontaminate"], Some(&config));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(summaries(&r.stdout)[0]["status"], "up-to-date");
    assert_eq!(fs::read(&sft).unwrap(), before);
}

#[test]
fn changed_inputs_refuse_to_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture(tmp.path());
    let r = exec(&["train-classifier", "--round", "1"], Some(&config));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(summaries(&r.stdout)[0]["status"], "done");

    let seeds = config.parent().unwrap().join("seeds.jsonl");
    let mut f = OpenOptions::new().append(true).open(&seeds).unwrap();
    writeln!(f, r#"{{"text":"one more positive seed","label":"positive"}}"#).unwrap();
    drop(f);
    let r = exec(&["train-classifier", "--round", "1"], Some(&config));
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(r.stderr.contains("changed"), "{}", r.stderr);

    let r = exec(&["--fresh", "train-classifier", "--round", "1"], Some(&config));
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture(tmp.path());
    let r = exec(&["--set", "recall.threshold=1.5", "recall", "--round", "1"], Some(&config));
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("recall.threshold"), "{}", r.stderr);

    let r = exec(&["--set", "decontam.n=0", "decontaminate"], Some(&config));
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("decontam.n"), "{}", r.stderr);

    let r = exec(&["stats"], Some(&tmp.path().join("missing.toml")));
    assert_eq!(r.code, 2, "{}", r.stderr);
    let r = exec(&["stats"], None);
    assert_eq!(r.code, 2, "{}", r.stderr);
}

#[test]
fn no_benchmark_entries_pass_pairs_through_with_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture(tmp.path());
    let empty = tmp.path().join("no-benchmarks");
    fs::create_dir(&empty).unwrap();
    let set = format!("paths.benchmarks=[{:?}]", empty.display().to_string());
    let r = exec(&["--set", &set, "run-all", "--until", "decontaminate"], Some(&config));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("no benchmark entries"), "{}", r.stderr);
    let s = summaries(&r.stdout);
    let d = s.iter().find(|v| v["stage"] == "decontaminate").unwrap();
    assert_eq!(d["counters"]["dropped"], 0, "{d}");
    assert_eq!(s.last().unwrap()["stage"], "decontaminate");
}

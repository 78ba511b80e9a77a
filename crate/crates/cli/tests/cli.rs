use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FAST: &str = "sampler.chains = 2\nsampler.warmup = 300\nsampler.iter = 300\nbf.repeats = 2\n";

fn bfwork(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfwork"))
        .current_dir(dir)
        .env_remove("BFWORK_JOBS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn record(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn default_simulate_writes_sixty_rows_and_a_record() {
    let d = tempfile::tempdir().unwrap();
    let o = bfwork(d.path(), &["simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.path().join("bfwork-out/data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 61);
    let rec = record(&d.path().join("bfwork-out/simulate.record.json"));
    assert_eq!(rec["invocation"]["name"], "simulate");
    assert_eq!(rec["outputs"]["n_rows"], 60);
    assert_eq!(rec["schema_version"], 1);
}

#[test]
fn unknown_config_key_exits_3_and_names_it() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.cfg", "run.seed = 3\nsampler.itre = 100\n");
    let o = bfwork(d.path(), &["--config", "c.cfg", "simulate"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("sampler.itre"), "{}", stderr(&o));
    assert!(stderr(&o).contains("line 2"));

    write(d.path(), "bad.cfg", "sampler.iter = many\n");
    assert_eq!(code(&bfwork(d.path(), &["--config", "bad.cfg", "simulate"])), 3);
    assert_eq!(code(&bfwork(d.path(), &["--jobs", "0", "simulate"])), 3);
    assert_eq!(code(&bfwork(d.path(), &["fit"])), 3, "no data path");
}

#[test]
fn missing_files_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&bfwork(d.path(), &["fit", "--data", "nope.csv"])), 2);
    assert_eq!(code(&bfwork(d.path(), &["--config", "nope.cfg", "simulate"])), 2);
    assert_eq!(code(&bfwork(d.path(), &["report", "nope.json"])), 2);
    write(d.path(), "junk.csv", "subj,x,rt\n1,2\n");
    assert_eq!(code(&bfwork(d.path(), &["bf", "--data", "junk.csv"])), 2);
    // readable but without a required column
    write(d.path(), "short.csv", "subj,x\n1,2\n");
    assert_eq!(code(&bfwork(d.path(), &["bf", "--data", "short.csv"])), 4);
}

#[test]
fn meta_with_one_study_exits_4() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "m.csv", "expt,b,SE\nE1,0.05,0.02\n");
    let o = bfwork(d.path(), &["meta", "--meta", "m.csv"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("two studies"));
}

#[test]
fn decide_on_counts() {
    let d = tempfile::tempdir().unwrap();
    let o = bfwork(d.path(), &["decide", "--counts", "23,222,170,83"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rec = record(&d.path().join("bfwork-out/decide.record.json"));
    assert!((rec["outputs"]["average_utility"].as_f64().unwrap() - 2.5).abs() < 1e-9);
    bfwork(d.path(), &["decide", "--counts", "0,245,121,132"]);
    let rec = record(&d.path().join("bfwork-out/decide.record.json"));
    assert!((rec["outputs"]["average_utility"].as_f64().unwrap() - 3.564257).abs() < 1e-6);
    let rates = std::fs::read_to_string(d.path().join("bfwork-out/rates.csv")).unwrap();
    assert!(rates.starts_with("truth,no_discovery,discovery"));
    assert_eq!(code(&bfwork(d.path(), &["decide"])), 3);
    assert_eq!(code(&bfwork(d.path(), &["decide", "--counts", "1,2,3"])), 3);
}

#[test]
fn replay_reproduces_simulate_and_bf() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.cfg", FAST);
    assert_eq!(code(&bfwork(d.path(), &["--seed", "9", "simulate"])), 0);
    assert_eq!(code(&bfwork(d.path(), &["--config", "c.cfg", "bf", "--data", "bfwork-out/data.csv"])), 0);

    let o = bfwork(d.path(), &["replay", "bfwork-out/simulate.record.json", "--out", "again"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = std::fs::read(d.path().join("bfwork-out/data.csv")).unwrap();
    let b = std::fs::read(d.path().join("again/data.csv")).unwrap();
    assert_eq!(a, b);

    let o = bfwork(d.path(), &["replay", "bfwork-out/bf.record.json", "--out", "again"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = std::fs::read(d.path().join("bfwork-out/bf_repeats.csv")).unwrap();
    let b = std::fs::read(d.path().join("again/bf_repeats.csv")).unwrap();
    assert_eq!(a, b);
    let (r1, r2) =
        (record(&d.path().join("bfwork-out/bf.record.json")), record(&d.path().join("again/bf.record.json")));
    assert_eq!(r1["outputs"], r2["outputs"]);
    assert_eq!(r1["config"], r2["config"]);

    // a tampered record no longer replays
    let mut t = r1.clone();
    t["outputs"]["median_log_bf10"] = Value::from(123.0);
    write(d.path(), "t.json", &serde_json::to_string(&t).unwrap());
    assert_eq!(code(&bfwork(d.path(), &["replay", "t.json", "--out", "t"])), 1);

    let o = bfwork(d.path(), &["report", "bfwork-out/bf.record.json"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("median_bf10"));
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.cfg", &format!("{FAST}bf.repeats = 3\n").replace("bf.repeats = 2\n", ""));
    assert_eq!(code(&bfwork(d.path(), &["simulate"])), 0);
    let one =
        bfwork(d.path(), &["--config", "c.cfg", "--jobs", "1", "--out", "j1", "bf", "--data", "bfwork-out/data.csv"]);
    assert_eq!(code(&one), 0, "{}", stderr(&one));
    let three = Command::new(env!("CARGO_BIN_EXE_bfwork"))
        .current_dir(d.path())
        .env("BFWORK_JOBS", "3")
        .args(["--config", "c.cfg", "--out", "j3", "bf", "--data", "bfwork-out/data.csv"])
        .output()
        .unwrap();
    assert_eq!(code(&three), 0, "{}", stderr(&three));
    let a = std::fs::read(d.path().join("j1/bf_repeats.csv")).unwrap();
    let b = std::fs::read(d.path().join("j3/bf_repeats.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn lmm_sbc_smoke_and_decide_from_ensemble() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.cfg", &format!("{FAST}sbc.runs = 20\ndesign.subjects = 8\n"));
    let o = bfwork(d.path(), &["--config", "c.cfg", "sbc"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = d.path().join("bfwork-out");
    let jsonl = std::fs::read_to_string(out.join("sbc_runs.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 20);
    assert!(out.join("sbc_truth_table.csv").exists());
    let rec = record(&out.join("sbc.record.json"));
    assert_eq!(rec["outputs"]["verdict"], "insufficient runs");
    assert_eq!(rec["status"], "warn");

    let o = bfwork(d.path(), &["decide", "--ensemble", "bfwork-out/sbc_runs.jsonl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let curve = std::fs::read_to_string(out.join("utility_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("threshold,avg_utility"));
    assert_eq!(curve.lines().count(), 41);
    assert!(out.join("rates_three_way.csv").exists());
}

#[test]
fn conjugate_sbc_recovers_the_prior() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.cfg", "sbc.pipeline = conjugate\nsbc.runs = 400\nhypothesis.p_h1 = 0.3\n");
    let o = bfwork(d.path(), &["--config", "c.cfg", "sbc"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rec = record(&d.path().join("bfwork-out/sbc.record.json"));
    assert_eq!(rec["outputs"]["verdict"], "pass");
    assert_eq!(rec["outputs"]["recovery"]["prior_p_h1"], 0.3);
    let summary = std::fs::read_to_string(d.path().join("bfwork-out/sbc_summary.csv")).unwrap();
    assert!(summary.starts_with("n,prior_p_h1,mean_p_h1,ci_low,ci_high,pass"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use convperf::io::read_runs;
use convperf::scenario::{forced_count, identify_easy, label_runs, LabelSet};

fn convperf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convperf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn convperf")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = convperf(dir, args);
    assert!(
        out.status.success(),
        "convperf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_gen(dir: &Path, out: &str, seed: &str) {
    ok(
        dir,
        &[
            "gen",
            "--n",
            "40",
            "--turns",
            "4",
            "--dim",
            "8",
            "--catalogue",
            "300",
            "--top-n",
            "30",
            "--seed",
            seed,
            "--out",
            out,
        ],
    );
}

#[test]
fn gen_writes_one_line_per_conversation() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "gen",
            "--n",
            "200",
            "--turns",
            "10",
            "--dim",
            "32",
            "--seed",
            "7",
            "--out",
            "runs.jsonl",
        ],
    );
    let text = fs::read_to_string(dir.path().join("runs.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 200);
    let runs = read_runs(dir.path().join("runs.jsonl")).unwrap();
    assert!(runs.iter().all(|r| r.num_turns() == 10));
}

#[test]
fn scenario_forces_rounded_share_of_easy() {
    let dir = tempfile::tempdir().unwrap();
    small_gen(dir.path(), "runs.jsonl", "5");
    let out = ok(
        dir.path(),
        &[
            "scenario",
            "--runs",
            "runs.jsonl",
            "--fraction",
            "0.3",
            "--seed",
            "13",
            "--cutoff",
            "30",
            "--out",
            "runs_mt.jsonl",
            "--labels",
            "labels_mt.csv",
        ],
    );
    let runs = read_runs(dir.path().join("runs.jsonl")).unwrap();
    let n_easy = identify_easy(&label_runs(&runs, 30).unwrap())
        .unwrap()
        .len();
    let labels =
        LabelSet::read_csv(fs::File::open(dir.path().join("labels_mt.csv")).unwrap()).unwrap();
    assert_eq!(labels.forced.len(), forced_count(0.3, n_easy));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains(&format!("forced {} of {n_easy}", labels.forced.len())));
    let header = fs::read_to_string(dir.path().join("labels_mt.csv")).unwrap();
    assert!(header.starts_with("# convperf scenario") && header.contains("seed=13"));
}

#[test]
fn eval_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    small_gen(dir.path(), "runs.jsonl", "2");
    ok(
        dir.path(),
        &[
            "label",
            "--runs",
            "runs.jsonl",
            "--cutoff",
            "30",
            "--out",
            "labels.csv",
        ],
    );
    for tag in ["a", "b"] {
        ok(
            dir.path(),
            &[
                "eval",
                "--runs",
                "runs.jsonl",
                "--labels",
                "labels.csv",
                "--predictor",
                "ae",
                "--top-n",
                "30",
                "--epochs",
                "20",
                "--seed",
                "9",
                "--mode",
                "both",
                "--out",
                &format!("rep_{tag}.csv"),
                "--predictions",
                &format!("pred_{tag}.csv"),
            ],
        );
    }
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("rep_a.csv"), read("rep_b.csv"));
    assert_eq!(read("pred_a.csv"), read("pred_b.csv"));
    let report = String::from_utf8(read("rep_a.csv")).unwrap();
    // header + column names + 2 pairs x 2 modes
    assert_eq!(report.lines().count(), 6);
    assert!(report.lines().next().unwrap().contains("seed=9"));
}

#[test]
fn features_and_compare_and_report_compose() {
    let dir = tempfile::tempdir().unwrap();
    small_gen(dir.path(), "runs.jsonl", "3");
    ok(
        dir.path(),
        &[
            "label",
            "--runs",
            "runs.jsonl",
            "--cutoff",
            "30",
            "--out",
            "labels.csv",
        ],
    );
    ok(
        dir.path(),
        &[
            "features",
            "--runs",
            "runs.jsonl",
            "--predictor",
            "wand",
            "--turn",
            "3",
            "--top-n",
            "30",
            "--out",
            "f.csv",
        ],
    );
    let f = fs::read_to_string(dir.path().join("f.csv")).unwrap();
    // header comment + column names + 40 rows
    assert_eq!(f.lines().count(), 42);
    assert!(f.lines().nth(1).unwrap().ends_with("f_0,f_1,f_2"));

    for (p, c, tag) in [("score", "lasso", "s"), ("wand", "forest", "w")] {
        ok(
            dir.path(),
            &[
                "eval",
                "--runs",
                "runs.jsonl",
                "--labels",
                "labels.csv",
                "--predictor",
                p,
                "--classifier",
                c,
                "--top-n",
                "30",
                "--trees",
                "10",
                "--out",
                &format!("rep_{tag}.csv"),
                "--predictions",
                &format!("pred_{tag}.csv"),
            ],
        );
    }
    let out = ok(
        dir.path(),
        &[
            "compare",
            "--a",
            "pred_s.csv",
            "--b",
            "pred_w.csv",
            "--out",
            "cmp.csv",
        ],
    );
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
    ok(
        dir.path(),
        &[
            "compare",
            "--a",
            "pred_s.csv",
            "--b",
            "pred_w.csv",
            "--pool",
            "--out",
            "pooled.csv",
        ],
    );
    let pooled = fs::read_to_string(dir.path().join("pooled.csv")).unwrap();
    assert!(pooled.lines().nth(2).unwrap().starts_with("pooled,"));

    ok(
        dir.path(),
        &[
            "report",
            "--input",
            "rep_s.csv",
            "--input",
            "rep_w.csv",
            "--csv",
            "grid.csv",
            "--text",
            "grid.txt",
        ],
    );
    let grid = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 4);
    let text = fs::read_to_string(dir.path().join("grid.txt")).unwrap();
    assert!(text.contains("score/lasso") && text.contains("wand/forest"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = convperf(dir.path(), &["gen", "--bogus", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = convperf(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validation_failure_exits_one_with_message() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.jsonl"), "{not json}\n").unwrap();
    let out = convperf(
        dir.path(),
        &["label", "--runs", "bad.jsonl", "--out", "l.csv"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert!(!dir.path().join("l.csv").exists());

    let out = convperf(dir.path(), &["gen", "--turns", "1", "--out", "r.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_turns"));
}

#[test]
fn ae_predictor_rejects_other_classifiers() {
    let dir = tempfile::tempdir().unwrap();
    small_gen(dir.path(), "runs.jsonl", "4");
    ok(
        dir.path(),
        &[
            "label",
            "--runs",
            "runs.jsonl",
            "--cutoff",
            "30",
            "--out",
            "labels.csv",
        ],
    );
    let out = convperf(
        dir.path(),
        &[
            "eval",
            "--runs",
            "runs.jsonl",
            "--labels",
            "labels.csv",
            "--predictor",
            "ae",
            "--classifier",
            "forest",
            "--out",
            "r.csv",
            "--predictions",
            "p.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ae-head"));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        "gen", "label", "scenario", "features", "eval", "compare", "report",
    ] {
        let out = convperf(dir.path(), &[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub} --help");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--"));
    }
}

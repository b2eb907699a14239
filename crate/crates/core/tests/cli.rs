use std::path::PathBuf;
use std::process::{Command, Output};

use ptr_rational::experiments::{CSV_COLUMNS, CSV_VERSION_LINE};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptr-rational")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ptr-rational-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn rows(out: &Output) -> Vec<Vec<String>> {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_VERSION_LINE));
    assert_eq!(lines.next(), Some(CSV_COLUMNS));
    lines.map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn solve_prints_one_record() {
    let out = run(&["solve", "--p2", "0.26"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = rows(&out);
    assert_eq!(rows.len(), 1);
    let num = |i: usize| rows[0][i].parse::<f64>().unwrap();
    assert_eq!(num(0), 0.26);
    assert_eq!(num(1), 25.0);
    assert_eq!(num(2), 20.0);
    assert_eq!(num(2) + num(3), num(4));
    assert!((num(5) - 4.55).abs() < 0.01);
    assert_eq!(rows[0][8], "closed");
}

#[test]
fn config_file_and_flags_combine() {
    let cfg = scratch("cfg.json");
    std::fs::write(&cfg, r#"{"p2": 0.15, "uncertainty_pct": 10}"#).unwrap();
    let out = run(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = &rows(&out)[0];
    assert_eq!((r[0].as_str(), r[1].as_str()), ("0.15", "10"));

    let out = run(&["solve", "--config", cfg.to_str().unwrap(), "--p2", "0"]);
    assert_eq!(rows(&out)[0][0], "0");
}

#[test]
fn sweep_writes_requested_file() {
    let path = scratch("sweep.csv");
    let out = run(&["sweep", "--steps", "7", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2 + 7);
}

#[test]
fn invalid_input_exits_with_one() {
    let bad = scratch("bad.json");
    std::fs::write(&bad, "{\n  \"gamma\": -1\n}").unwrap();
    let out = run(&["solve", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));

    for args in [
        &["solve", "--p2", "-0.1"][..],
        &["thermal", "--pct", "0"],
        &["solve", "--pct", "10,20"],
        &["dp", "--periods", "4"],
        &["solve", "--no-such-flag"],
    ] {
        assert_eq!(run(args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn oversized_state_space_exits_with_three() {
    let out = run(&["dp", "--grid-step", "0.0001"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cells"));
}

#[test]
fn policy_table_round_trips_through_files() {
    let table = scratch("policy.txt");
    let t = table.to_str().unwrap();
    let out = run(&["dp", "--periods", "2", "--baseline", "mean", "--grid-step", "0.1", "--table", t]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(rows(&out)[0][8], "dp");

    let eval = |extra: &[&str]| {
        let mut args = vec!["dp", "--periods", "2", "--baseline", "mean", "--rollouts", "500"];
        args.extend_from_slice(extra);
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0));
        String::from_utf8(out.stderr).unwrap()
    };
    let fresh = eval(&["--grid-step", "0.1"]);
    let loaded = eval(&["--load", t]);
    assert!(loaded.contains("policy value"));
    assert_eq!(fresh.lines().last(), loaded.lines().last());

    std::fs::write(&table, "# ptr-rational policy table v1\nhorizon nonsense\n").unwrap();
    assert_eq!(run(&["dp", "--load", t, "--rollouts", "10"]).status.code(), Some(1));
}

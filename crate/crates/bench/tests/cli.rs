use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ncdecomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncdecomp")).args(args).output().expect("binary runs")
}

fn run_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run", "--example", "4", "--algorithm", "dd", "--blocks", "100", "--samples", "3", "--inits", "3", "--seed", "7", "--out", out];
    v.extend_from_slice(extra);
    v
}

#[test]
fn run_writes_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = ncdecomp(&run_args(out.to_str().unwrap(), &[]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<_> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 9);
    // the aggregate line agrees with the rows
    let converged = rows.iter().filter(|r| r.split(',').nth(2) == Some("true")).count();
    assert!(text.lines().last().unwrap().ends_with(&format!("({converged}/9)")));
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let o = ncdecomp(&["run", "--example", "4", "--algorithm", "admm", "--blocks", "3", "--samples", "1", "--inits", "1", "--seed", "1", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("possible values: pd, spd, dd, sdd"));
}

#[test]
fn inapplicable_pair_in_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let out = dir.path().join("r.csv");
    let json = format!(
        r#"{{"example": 1, "algorithm": "spd", "blocks": 5, "samples": 1, "inits": 1, "seed": 1, "out": {:?}}}"#,
        out.to_str().unwrap()
    );
    fs::write(&cfg, json).unwrap();
    let o = ncdecomp(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not apply"));
    assert!(!out.exists());
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"example": 4, "algorithm": "dd", "blocks": 5, "bogus": 1}"#).unwrap();
    assert_eq!(ncdecomp(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn io_failures_exit_with_two() {
    let o = ncdecomp(&run_args("/nonexistent-dir/r.csv", &[]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent-dir/r.csv"));
    assert_eq!(ncdecomp(&["run", "--config", "/nonexistent-dir/c.json"]).status.code(), Some(2));
}

#[test]
fn reports_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = ncdecomp(&run_args(out.to_str().unwrap(), &["--parallelism", threads, "--no-timing"]));
        assert_eq!(o.status.code(), Some(0));
        fs::read(&out).unwrap()
    };
    let first = bytes("a.csv", "1");
    assert_eq!(first, bytes("b.csv", "4"));
    assert_eq!(first, bytes("c.csv", "8"));
    assert_eq!(first, bytes("d.csv", "1"));
}

#[test]
fn plot_files_are_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let plots = dir.path().join("plots");
    let o = ncdecomp(&run_args(out.to_str().unwrap(), &["--plot-dir", plots.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(0));
    let body = fs::read_to_string(Path::new(&plots).join("sample2_init2.dat")).unwrap();
    assert_eq!(body.lines().count(), 11);
    assert!(body.lines().all(|l| l.split_whitespace().count() == 2));
}

#[test]
fn quick_verify_exit_code_matches_its_output() {
    let o = ncdecomp(&["verify", "--quick"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("checks passed"));
    let failed = text.contains("[FAIL]");
    assert_eq!(o.status.code(), Some(if failed { 3 } else { 0 }));
}

#[test]
fn help_exits_cleanly() {
    let o = ncdecomp(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("table3"));
}

use std::path::PathBuf;
use std::process::{Command, Output};

fn oneq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oneq")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_and_rejects() {
    let ok = oneq(&["validate", "--scenario", &scenario("fig5.toml")]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let bad = oneq(&["validate", "--scenario", &scenario("malformed/04_duplicate_node_id.toml")]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("nodes[3].id"), "{}", stderr(&bad));
    let syntax = oneq(&["validate", "--scenario", &scenario("malformed/07_garbled_syntax.toml")]);
    assert_eq!(syntax.status.code(), Some(1));
    assert!(stderr(&syntax).contains("line"));
}

#[test]
fn run_writes_outputs_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let read = |d: &str, f: &str| std::fs::read(tmp.path().join(d).join(f)).unwrap();
    for d in ["a", "b"] {
        let out_dir = tmp.path().join(d).display().to_string();
        let o = oneq(&["run", "--scenario", &scenario("fig7.toml"), "--seed", "9", "--out", &out_dir]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("seed 9"));
    }
    for f in ["trace.jsonl", "metrics.csv", "summary.json"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    let csv = String::from_utf8(read("a", "metrics.csv")).unwrap();
    assert!(csv.starts_with("run_id,seed,metric,value,unit\n"));
    assert!(csv.lines().skip(1).all(|l| l.starts_with("fig7,9,")));
}

#[test]
fn zero_horizon_gives_empty_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().display().to_string();
    let o = oneq(&["run", "--scenario", &scenario("fig5.toml"), "--until", "0", "--out", &dir]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(tmp.path().join("trace.jsonl")).unwrap(), "");
    assert_eq!(std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap(), "run_id,seed,metric,value,unit\n");
}

#[test]
fn replications_get_their_own_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().display().to_string();
    let o = oneq(&["run", "--scenario", &scenario("fig7.toml"), "--replications", "3", "--out", &dir]);
    assert!(o.status.success(), "{}", stderr(&o));
    let traces: Vec<Vec<u8>> =
        (0..3).map(|r| std::fs::read(tmp.path().join(format!("rep-{r}")).join("trace.jsonl")).unwrap()).collect();
    assert_ne!(traces[0], traces[1]);
    assert_ne!(traces[1], traces[2]);
}

#[test]
fn strict_mode_fails_on_hard_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("fig7.toml")).unwrap();
    // Out of every cell, QUE3 cannot register, so the application errors.
    let path = tmp.path().join("far.toml");
    std::fs::write(&path, text.replace("[6600.0, 0.0, 0.0]", "[60000.0, 0.0, 0.0]")).unwrap();
    let dir = tmp.path().join("out").display().to_string();
    let lax = oneq(&["run", "--scenario", &path.display().to_string(), "--out", &dir]);
    assert!(lax.status.success());
    let strict = oneq(&["run", "--scenario", &path.display().to_string(), "--out", &dir, "--strict"]);
    assert_eq!(strict.status.code(), Some(3), "{}", stdout(&strict));
}

#[test]
fn invalid_scenario_cannot_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().display().to_string();
    let o = oneq(&["run", "--scenario", &scenario("malformed/05_werner_out_of_range.toml"), "--out", &dir]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("quantum_links[0].w0"));
    let missing = oneq(&["run", "--scenario", "/nonexistent.toml", "--out", &dir]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn sweep_writes_wide_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().display().to_string();
    let o = oneq(&[
        "sweep",
        "--scenario",
        &scenario("fig7.toml"),
        "--param",
        "defaults.f_min",
        "--values",
        "0.8,0.9,0.95",
        "--replications",
        "2",
        "--out",
        &dir,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("row,param,value,replication,seed,"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.iter().filter(|l| l.starts_with("run,")).count(), 6);
    assert_eq!(rows.iter().filter(|l| l.starts_with("mean,")).count(), 3);
    assert_eq!(rows.iter().filter(|l| l.starts_with("std,")).count(), 3);

    let bad = oneq(&["sweep", "--scenario", &scenario("fig7.toml"), "--param", "nope.x", "--values", "1"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("nope.x"));
}

#[test]
fn plan_prints_tables() {
    let o = oneq(&["plan", "--p-err-q", "0.2", "--p-err-c", "0.1", "--k-max", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,p_block,p_retry,p_all");
    assert_eq!(lines.len(), 4);
    let p_retry: f64 = lines[3].split(',').nth(2).unwrap().parse().unwrap();
    assert!((p_retry - 0.978048).abs() < 1e-9);

    let q = oneq(&["plan", "--scenario", &scenario("qkd.toml"), "--p-deliver", "0.5"]);
    assert!(q.status.success(), "{}", stderr(&q));
    assert!(stdout(&q).contains("app,n_pairs,k_target,p_deliver,p_success"));

    let bad = oneq(&["plan", "--p-err-q", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
}

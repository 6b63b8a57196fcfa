use std::path::{Path, PathBuf};

use oneq::scenario::{
    load_file, load_str, parse_document, read_file, run, set_param, sweep, to_toml, ScenarioError, SCHEMA_VERSION,
};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn tomls(path: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(path)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

#[test]
fn shipped_scenarios_validate() {
    let files = tomls(&dir());
    assert!(files.len() >= 4);
    for f in files {
        let cfg = load_file(&f).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
        assert_eq!(cfg.schema_version, Some(SCHEMA_VERSION));
        assert!(!cfg.name.is_empty());
    }
}

#[test]
fn malformed_corpus_is_rejected_with_locations() {
    let files = tomls(&dir().join("malformed"));
    assert_eq!(files.len(), 10);
    for f in files {
        match load_file(&f) {
            Err(ScenarioError::Invalid(v)) => {
                // Each file breaks exactly one rule.
                assert_eq!(v.len(), 1, "{}: {v:?}", f.display());
                assert!(!v[0].path.is_empty());
            }
            Err(ScenarioError::Parse(msg)) => assert!(msg.contains("line"), "{}: {msg}", f.display()),
            other => panic!("{} was accepted or failed oddly: {other:?}", f.display()),
        }
    }
}

#[test]
fn configs_round_trip_through_toml() {
    for f in tomls(&dir()) {
        let cfg = load_file(&f).unwrap();
        let again = load_str(&to_toml(&cfg)).unwrap();
        assert_eq!(cfg, again, "{}", f.display());
    }
}

#[test]
fn zero_horizon_simulates_nothing() {
    let cfg = load_file(&dir().join("fig5.toml")).unwrap();
    let out = run(&cfg, None, Some(0.0), "zero");
    assert!(out.trace.is_empty());
    assert!(out.apps.is_empty());
    let mut csv = Vec::new();
    out.write_metrics_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap(), "run_id,seed,metric,value,unit\n");
}

#[test]
fn outputs_are_written() {
    let cfg = load_file(&dir().join("fig7.toml")).unwrap();
    let out = run(&cfg, Some(3), None, "fig7");
    let tmp = tempfile::tempdir().unwrap();
    out.write_to(tmp.path()).unwrap();
    let trace = std::fs::read_to_string(tmp.path().join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), out.trace.len());
    let parsed = oneq::engine::Trace::parse_jsonl(&trace).unwrap();
    assert_eq!(parsed, out.trace);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["apps"].as_array().unwrap().len(), 1);
}

#[test]
fn seed_controls_the_run() {
    let cfg = load_file(&dir().join("fig5.toml")).unwrap();
    let a = run(&cfg, Some(1), None, "x");
    let b = run(&cfg, Some(1), None, "x");
    let c = run(&cfg, Some(2), None, "x");
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.metrics, b.metrics);
    assert_ne!(a.trace, c.trace);
}

#[test]
fn qkd_scenario_produces_key() {
    let cfg = load_file(&dir().join("qkd.toml")).unwrap();
    let out = run(&cfg, None, None, "qkd");
    assert_eq!(out.hard_failures(), 0);
    let rate = out.metrics.series("secret_key_rate").unwrap().mean().unwrap();
    assert!(rate > 0.0);
    assert_eq!(out.trace.of_kind("service_complete").count(), cfg.apps[0].repeat as usize);
}

#[test]
fn fig5_runs_every_application() {
    let cfg = load_file(&dir().join("fig5.toml")).unwrap();
    let out = run(&cfg, None, None, "fig5");
    assert_eq!(out.hard_failures(), 0, "{:#?}", out.apps);
    for app in &cfg.apps {
        let n = out.apps.iter().filter(|a| a.app == app.name).count();
        assert_eq!(n, app.repeat as usize, "{}", app.name);
    }
    // QUE2 leaves QBS1's quantum cell during the run but still teleports.
    assert!(out.trace.of_kind("session_rejected").any(|r| r.node == "QUE2"));
    assert_eq!(out.metrics.get("app.teleport-outside.ok"), Some(1.0));
}

#[test]
fn qber_falls_as_source_improves() {
    let doc = parse_document(&read_file(&dir().join("qkd.toml")).unwrap()).unwrap();
    let mut doc = doc;
    set_param(&mut doc, "apps[0].repeat", 4.0).unwrap();
    let grid = [0.85, 0.9, 0.95, 1.0];
    let result = sweep(&doc, "quantum_links[0].w0", &grid, 2, Some(5)).unwrap();
    assert_eq!(result.rows.len(), 8);
    let qber: Vec<f64> = result.aggregates.iter().map(|a| a.mean["qber.mean"]).collect();
    for w in qber.windows(2) {
        assert!(w[1] < w[0], "{qber:?}");
    }
    assert_eq!(qber[3], 0.0);
    let mut csv = Vec::new();
    result.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("row,param,value,replication,seed,"));
    assert_eq!(text.lines().count(), 1 + 8 + 2 * 4);
}

#[test]
fn single_replication_aggregate_is_the_run() {
    let doc = parse_document(&read_file(&dir().join("fig7.toml")).unwrap()).unwrap();
    let result = sweep(&doc, "defaults.f_min", &[0.8, 0.95], 1, None).unwrap();
    for (row, agg) in result.rows.iter().zip(&result.aggregates) {
        assert_eq!(row.value, agg.value);
        assert_eq!(&row.metrics, &agg.mean);
        assert!(agg.std.values().all(|s| *s == 0.0));
    }
}

#[test]
fn sweep_rejects_bad_paths_and_values() {
    let doc = parse_document(&read_file(&dir().join("fig7.toml")).unwrap()).unwrap();
    assert!(matches!(sweep(&doc, "nodes[9].t_coh_s", &[1.0], 1, None), Err(ScenarioError::UnknownPath(_))));
    assert!(matches!(sweep(&doc, "quantum_links[0].w0", &[1.5], 1, None), Err(ScenarioError::Invalid(_))));
    assert!(matches!(sweep(&doc, "defaults.f_min", &[0.9], 0, None), Err(ScenarioError::Usage(_))));
}

const HANDOVER: &str = r#"
schema_version = 1
name = "handover"
seed = 8
duration_s = 5.0
repeater_graph = [["QBS1", "QBS2"]]

[defaults]
f_min = 0.5
access_link = { rate_bps = 1e6, prop_delay_s = 1e-3 }
backhaul_link = { rate_bps = 1e9, prop_delay_s = 1e-4 }

[[nodes]]
id = "QBS1"
kind = "QBS"
t_coh_s = 10.0
memory_slots = 8
mobility = { type = "static", position = [0.0, 0.0, 0.0] }

[[nodes]]
id = "QBS2"
kind = "QBS"
t_coh_s = 10.0
memory_slots = 8
mobility = { type = "static", position = [2000.0, 0.0, 0.0] }

[[nodes]]
id = "QUE1"
kind = "QUE"
t_coh_s = 10.0
memory_slots = 4
mobility = { type = "static", position = [1000.0, 0.0, 0.0] }

[[cells]]
bs = "QBS1"
classical_radius = 3000.0
quantum_radius = 1500.0

[[cells]]
bs = "QBS2"
classical_radius = 3000.0
quantum_radius = 1500.0

[[quantum_links]]
endpoints = ["QUE1", "QBS1"]
source = "QBS1"
q_attempt = 0.5
attempt_period_s = 1e-3
w0 = 0.95

[[quantum_links]]
endpoints = ["QUE1", "QBS2"]
source = "QBS2"
q_attempt = 0.5
attempt_period_s = 1e-3
w0 = 0.95

[[quantum_links]]
endpoints = ["QBS1", "QBS2"]
source = "QBS1"
q_attempt = 0.5
attempt_period_s = 1e-3
w0 = 0.95

[policy]
mode = "proactive"
buffer = 1
refresh_interval_s = 10.0
provision = [["QUE1", "QBS1"]]

[[apps]]
name = "move"
type = "handover"
parties = ["QUE1", "QBS2"]
start_s = 1.0
handover_mode = "soft"
"#;

#[test]
fn handover_application_keeps_the_pair() {
    let cfg = load_str(HANDOVER).unwrap();
    let out = run(&cfg, None, None, "handover");
    assert_eq!(out.hard_failures(), 0, "{:?}", out.apps);
    let h: Vec<_> = out.trace.of_kind("handover").collect();
    assert_eq!(h.len(), 1);
    assert_eq!(h[0].details["mode"], "Soft");
    assert_eq!(h[0].details["downtime"].parse::<f64>().unwrap(), 0.0);
    assert_eq!(out.world.serving(&"QUE1".into()).map(|s| s.as_str()), Some("QBS2"));
}

#[test]
fn unknown_fields_and_versions_are_reported() {
    let bad = HANDOVER.replace("schema_version = 1", "schema_version = 7");
    match load_str(&bad) {
        Err(ScenarioError::Invalid(v)) => assert!(v.iter().any(|x| x.path == "schema_version")),
        other => panic!("{other:?}"),
    }
    let no_access = HANDOVER.replace("access_link = { rate_bps = 1e6, prop_delay_s = 1e-3 }\n", "");
    match load_str(&no_access) {
        Err(ScenarioError::Invalid(v)) => assert!(v.iter().any(|x| x.path == "defaults.access_link")),
        other => panic!("{other:?}"),
    }
    let typo = HANDOVER.replace("buffer = 1", "bufer = 1");
    assert!(matches!(load_str(&typo), Err(ScenarioError::Parse(_))));
}

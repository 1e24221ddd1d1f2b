use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ldesc-sim"))
}

fn sample(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn sim(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_writes_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let o = sim(&["run", p(&sample("histo.json")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for key in [
        "demand_accesses",
        "l1_hits",
        "l1_inflight_hits",
        "l1_misses",
        "l1_hit_rate",
        "inflight_hit_rate",
        "working_set",
        "avg_working_set",
        "access_efficiency",
        "zone_access_distribution",
        "prefetch_accuracy",
        "total_cycles",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let demand = v["demand_accesses"].as_u64().unwrap();
    let parts: u64 = ["l1_hits", "l1_inflight_hits", "l1_misses"]
        .iter()
        .map(|k| v[*k].as_u64().unwrap())
        .sum();
    assert_eq!(demand, parts);
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ \"grid\": ").unwrap();
    let o = sim(&["run", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn unknown_structure_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("u.json");
    let text = std::fs::read_to_string(sample("irregular.json"))
        .unwrap()
        .replace("\"data\": \"out\"", "\"data\": \"missing\"");
    std::fs::write(&cfg, text).unwrap();
    let o = sim(&["run", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("descriptors[1].data"));
}

#[test]
fn compare_rows_follow_input_order() {
    let o = sim(&["compare", p(&sample("histo.json")), "--policies", "rr,bcs,ldesc"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "policy,l1_hit_rate,inflight_hit_rate,avg_working_set,access_efficiency,total_cycles,prefetch_accuracy"
    );
    assert_eq!(lines.len(), 4);
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["rr", "bcs", "ldesc"]);
}

#[test]
fn compare_duplicates_and_arity() {
    let o = sim(&["compare", p(&sample("histo.json")), "--policies", "rr,rr"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);

    let o = sim(&["compare", p(&sample("histo.json")), "--policies", "ldesc"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sim(&["compare", p(&sample("histo.json")), "--policies", "rr,gto"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_zone_count() {
    let o = sim(&[
        "sweep",
        p(&sample("irregular.json")),
        "--axis",
        "zone_count",
        "--values",
        "1,2,4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("zone_count,"));
}

#[test]
fn sweep_seed_varies_rates_not_totals() {
    let o = sim(&[
        "sweep",
        p(&sample("irregular.json")),
        "--axis",
        "seed",
        "--values",
        "1,2,3,4,5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    let totals: Vec<&String> = rows.iter().map(|r| r.last().unwrap()).collect();
    assert!(totals.iter().all(|t| *t == totals[0]));
    let rates: std::collections::BTreeSet<&String> = rows.iter().map(|r| &r[1]).collect();
    assert!(rates.len() > 1, "hit rates identical across seeds");
}

#[test]
fn sweep_rejects_bad_axis_and_empty_values() {
    let cfg = sample("histo.json");
    let o = sim(&["sweep", p(&cfg), "--axis", "warps", "--values", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sim(&["sweep", p(&cfg), "--axis", "seed", "--values", ""]);
    assert_eq!(o.status.code(), Some(2));
    let o = sim(&["sweep", p(&cfg), "--axis", "zone_count", "--values", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trace_round_trip_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["histo.json", "numa_stripes.json", "irregular.json"] {
        let cfg = sample(name);
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let t = dir.path().join("t.jsonl");
        let o = sim(&["run", p(&cfg), "--out", p(&a), "--trace-out", p(&t)]);
        assert_eq!(o.status.code(), Some(0));
        let first = std::fs::read_to_string(&t).unwrap();
        let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        assert!(line["addr"].as_str().unwrap().starts_with("0x"));
        let o = sim(&["run", p(&cfg), "--out", p(&b), "--trace-in", p(&t)]);
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{name}");
    }
}

#[test]
fn outputs_are_byte_stable() {
    let cfg = sample("irregular.json");
    let a = sim(&["compare", p(&cfg), "--policies", "rr,bcs,ldesc,ldesc-pref"]);
    let b = sim(&["compare", p(&cfg), "--policies", "rr,bcs,ldesc,ldesc-pref"]);
    assert_eq!(a.stdout, b.stdout);
    let a = sim(&["run", p(&cfg)]);
    let b = sim(&["run", p(&cfg)]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn schedule_export_and_preset() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.json");
    let o = sim(&["run", p(&sample("numa_stripes.json")), "--schedule-out", p(&s)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&s).unwrap()).unwrap();
    assert_eq!(v["assignment"].as_array().unwrap().len(), 16);
    assert_eq!(v["numa_plan"]["mappings"]["tiles"]["low_bit"], 14);

    let o = sim(&["run", p(&sample("histo.json")), "--preset", "paper-numa"]);
    assert_eq!(o.status.code(), Some(0));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["working_set"].as_array().unwrap().len(), 64);
    let o = sim(&["run", p(&sample("histo.json")), "--preset", "huge"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulation_error_exits_3() {
    // a workload line size the caches do not use is a simulation mismatch
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sample("histo.json")).unwrap()).unwrap();
    v["line_size"] = 64.into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = sim(&["run", p(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mesopolis::analytics::{read_metrics, write_metrics, MetricsRow};
use mesopolis::netmodel::{load_network, validate_network, LinkClass};
use mesopolis::scenarios::LeverSettings;

fn mesopolis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mesopolis")).args(args).env("MESOPOLIS_LOG", "off").output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn make_toy(dir: &Path, pop: &str) {
    let out = mesopolis(&["make-toy", "--grid", "8x8", "--pop", pop, "--seed", "7", "--out", path(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn make_toy_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    make_toy(&a, "20000");
    make_toy(&b, "20000");
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() >= 8);
    assert_eq!(fa, fb);
}

#[test]
fn toy_city_validates_and_ring_is_the_tollable_inventory() {
    let tmp = tempfile::tempdir().unwrap();
    make_toy(tmp.path(), "20000");
    let net = load_network(tmp.path()).unwrap();
    let report = validate_network(&net);
    assert!(report.issues.is_empty(), "{:?}", report.issues);

    // Ring nodes lie one block outside the grid's bounding box; an 8x8
    // grid has 2·(8+8)+4 of them, joined both ways.
    let (w, h) = (7.0 * 800.0, 7.0 * 800.0);
    let outside = |n: usize| {
        let (x, y) = (net.nodes[n].x, net.nodes[n].y);
        x < 0.0 || y < 0.0 || x > w || y > h
    };
    let ring: Vec<u32> = net.links.iter().filter(|l| outside(l.from) && outside(l.to)).map(|l| l.id).collect();
    assert_eq!(ring.len(), 2 * (2 * (8 + 8) + 4));
    for l in &net.links {
        assert_eq!(l.class == LinkClass::Expressway, ring.contains(&l.id), "link {}", l.id);
    }
    let mut tollable = report.tollable_links.clone();
    tollable.sort();
    assert_eq!(tollable, ring);
}

#[test]
fn invalid_grid_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mesopolis(&["make-toy", "--grid", "2x2", "--seed", "7", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let log = fs::read_to_string(tmp.path().join("errors.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(rec["command"], "make-toy");
    assert_eq!(rec["kind"], "spec");
}

#[test]
fn missing_seed_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mesopolis(&["make-toy", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_network_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mesopolis(&["run", "--network", "/nonexistent", "--seed", "1", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(tmp.path().join("errors.jsonl").exists());
}

fn model_file(name: &str) -> String {
    format!("{}/../core/data/models/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn optimize_reference_vht_model() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mesopolis(&["optimize", "--model", &model_file("vht"), "--weight", "vht=1", "--out", path(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(tmp.path().join("optimize_report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "pricing,transit,signals,tnc,ohd,ecomm_high,ev_low,ev_med,ev_high,objective");
    assert!(lines[1].starts_with("1,0,1,1,1,1,1,0,0,"));
    assert_eq!(lines[3], "metric,weight,baseline,predicted,percent_change");
    assert!(lines[4].ends_with(",-7.0"), "{}", lines[4]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("-7.0%"));

    let dec = fs::read_to_string(tmp.path().join("decomposition.csv")).unwrap();
    let last = dec.lines().last().unwrap();
    assert!(last.starts_with("vht,5,ecomm,") && last.ends_with(",-7.0"), "{last}");
}

#[test]
fn optimize_rejects_weights_without_models() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mesopolis(&["optimize", "--model", &model_file("vht"), "--weight", "energy_kwh=1", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = mesopolis(&["optimize", "--model", &model_file("vht"), "--weight", "vht", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_writes_the_coefficient_table_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let rows: Vec<MetricsRow> = LeverSettings::all()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = MetricsRow::zero(s, 0, i as u64);
            r.vht = 7.0 - 0.06 * s.pricing as u8 as f64 - 0.12 * s.signals as u8 as f64 + 0.01 * ((i * 37) % 11) as f64;
            r
        })
        .collect();
    let table = tmp.path().join("metrics.csv");
    write_metrics(&rows, fs::File::create(&table).unwrap()).unwrap();
    let cfg = tmp.path().join("analysis.json");
    fs::write(&cfg, r#"{"responses": ["vht"]}"#).unwrap();
    let out_dir = tmp.path().join("out");
    let out = mesopolis(&["analyze", "--metrics", path(&table), "--config", path(&cfg), "--out", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(out_dir.join("vht_report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "term,coef,std_err,t,p,signif,sensitivity");
    assert!(lines[1].starts_with("const,"));
    assert!(lines.iter().any(|l| l.starts_with("N,192,")));
    assert!(lines.last().unwrap().starts_with("adj_R2,"));
    assert!(out_dir.join("vht.json").exists());
}

#[test]
fn analyze_logs_unknown_responses() {
    let tmp = tempfile::tempdir().unwrap();
    let rows: Vec<MetricsRow> = LeverSettings::all().iter().map(|s| MetricsRow::zero(s, 0, 0)).collect();
    let table = tmp.path().join("metrics.csv");
    write_metrics(&rows, fs::File::create(&table).unwrap()).unwrap();
    let cfg = tmp.path().join("analysis.json");
    fs::write(&cfg, r#"{"responses": ["nonsense"]}"#).unwrap();
    let out = mesopolis(&["analyze", "--metrics", path(&table), "--config", path(&cfg), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let log = fs::read_to_string(tmp.path().join("errors.jsonl")).unwrap();
    assert!(log.contains("nonsense"));
}

#[test]
fn doe_writes_one_row_per_cell_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = tmp.path().join("toy");
    make_toy(&toy, "20000");
    let cfg = tmp.path().join("doe.json");
    fs::write(&cfg, r#"{"population": {"total": 0}, "doe": {"max_iterations": 2}}"#).unwrap();
    let run = |out: &str, workers: &str| {
        let dir = tmp.path().join(out);
        let o = mesopolis(&[
            "doe", "--network", path(&toy), "--config", path(&cfg), "--seed", "5", "--workers", workers, "--out", path(&dir),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.join("metrics.csv")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "4");
    assert_eq!(a, b);
    let rows = read_metrics(a.as_slice()).unwrap();
    assert_eq!(rows.len(), 192);
    assert!(rows.iter().all(|r| !r.failed()));
}

#[test]
fn failed_plans_exit_one_with_logged_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = tmp.path().join("toy");
    make_toy(&toy, "1000");
    let cfg = tmp.path().join("doe.json");
    fs::write(&cfg, r#"{"population": {"total": 0}, "doe": {"max_iterations": 0}}"#).unwrap();
    let out_dir = tmp.path().join("out");
    let o = mesopolis(&["doe", "--network", path(&toy), "--config", path(&cfg), "--seed", "5", "--out", path(&out_dir)]);
    assert_eq!(o.status.code(), Some(1));
    let rows = read_metrics(fs::File::open(out_dir.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 192);
    assert!(rows.iter().all(|r| r.failed()));
    let log = fs::read_to_string(out_dir.join("errors.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 192);
    let rec: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(rec["kind"], "plan");
    assert!(rec["cell"].is_u64());
}

#[test]
fn single_run_writes_metrics_and_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = tmp.path().join("toy");
    make_toy(&toy, "20000");
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"population": {"total": 300}, "doe": {"max_iterations": 2},
            "levers": {"pricing": true, "transit": true, "signals": false, "tnc_policy": true, "ohd": true,
                       "ecomm_level": "high", "ev_level": "med"}}"#,
    )
    .unwrap();
    let run = |out: &str| {
        let dir = tmp.path().join(out);
        let o = mesopolis(&["run", "--network", path(&toy), "--config", path(&cfg), "--seed", "3", "--out", path(&dir)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        files(&dir)
    };
    let a = run("a");
    for f in ["metrics.csv", "gaps.csv", "fleet_events.csv", "tours.csv", "transit_edits.csv", "run_summary.json"] {
        assert!(a.contains_key(f), "{f}");
    }
    assert!(!a.contains_key("errors.jsonl"));
    let rows = read_metrics(a["metrics.csv"].as_slice()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].pricing && rows[0].toll_revenue >= 0.0);
    assert_eq!(a, run("b"));
}

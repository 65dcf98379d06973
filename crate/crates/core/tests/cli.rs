mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_skillaudit"));
    c.env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn fx(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden").join(name)).unwrap()
}

#[test]
fn clean_fixture_exits_zero_with_json_on_stdout() {
    let o = run(&["audit", &fx("clean-csv-stats")]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).expect("stdout is exactly one JSON document");
    assert_eq!(v["verdict"]["level"], "APPROVED");
    assert_eq!(v["scorecard"]["risk_score"], 0);
}

#[test]
fn text_reports_match_goldens() {
    for (name, exit) in [("clean-csv-stats", 0), ("shadow-word-count", 2), ("mal-reverse-shell", 3)] {
        let o = run(&["audit", &fx(name), "--format", "text"]);
        assert_eq!(code(&o), exit, "{name}");
        assert_eq!(String::from_utf8(o.stdout).unwrap(), golden(&format!("{name}.txt")), "{name}");
    }
}

#[test]
fn verdicts_map_to_exit_codes() {
    assert_eq!(code(&run(&["audit", &fx("mal-pipe-installer")])), 3);
    assert_eq!(code(&run(&["audit", &fx("shadow-disk-report")])), 2);
    assert_eq!(code(&run(&["audit", &fx("clean-agenda-formatter"), "--mode", "quick"])), 0);
}

#[test]
fn usage_errors_exit_five() {
    let o = run(&["audit", "/no/such/skill/dir"]);
    assert_eq!(code(&o), 5);
    assert!(o.stdout.is_empty());
    assert!(!o.stderr.is_empty());
    assert_eq!(code(&run(&["audit"])), 5);
    assert_eq!(code(&run(&["audit", &fx("clean-csv-stats"), "--bogus-flag"])), 5);
    assert_eq!(code(&run(&["audit", &fx("clean-csv-stats"), "--workers", "0"])), 5);
    assert_eq!(code(&run(&["frobnicate"])), 5);
    assert_eq!(code(&run(&[])), 5);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn broken_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "schema_version = 99\n").unwrap();
    let o = run(&["audit", &fx("clean-csv-stats"), "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(o.stdout.is_empty());
}

#[test]
fn report_can_go_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = run(&["audit", &fx("clean-unit-converter"), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out).unwrap()).unwrap();
    assert_eq!(v["verdict"]["level"], "APPROVED");
}

#[test]
fn batch_of_three_writes_three_reports_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "batch",
        &fx("clean-csv-stats"),
        &fx("mal-reverse-shell"),
        &fx("shadow-disk-report"),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["total"], 3);
    assert_eq!(summary["counts"]["approved_clean"], 1);
    assert_eq!(summary["counts"]["rejected"], 1);
    assert_eq!(summary["counts"]["conditional"], 1);
    assert!(summary["rank_bins"].is_null());
    let reports: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    assert_eq!(reports.len(), 3, "{reports:?}");
    assert!(out.join("risk-graph.graphml").exists());
    assert!(out.join("risk-graph.tsv").exists());
}

#[test]
fn fail_on_verdict_reports_the_worst_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let args = ["batch", &fx("clean-csv-stats"), &fx("mal-reverse-shell"), "--out-dir", out.to_str().unwrap()];
    assert_eq!(code(&run(&args)), 0);
    let mut with = args.to_vec();
    with.push("--fail-on-verdict");
    assert_eq!(code(&run(&with)), 3);
}

#[test]
fn batch_with_a_missing_source_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["batch", &fx("clean-csv-stats"), "/no/such/skill", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["counts"]["error"], 1);
}

#[test]
fn manifest_drives_rank_bins_and_linked_pair_gives_one_edge() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("skills.txt");
    fs::write(
        &manifest,
        format!(
            "# two linked skills and a bystander\n{} download_count=900\n{} download_count=50\n{} download_count=400\n",
            fx("p6-token-reader"),
            fx("p6-webhook-notifier"),
            fx("clean-unit-converter")
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["batch", "--manifest", manifest.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["rank_bins"].as_array().unwrap().len(), 3);
    assert_eq!(summary["edge_counts"]["DataExfiltration"], 1);
    let tsv = fs::read_to_string(out.join("risk-graph.tsv")).unwrap();
    let edges: Vec<&str> = tsv.lines().skip(1).filter(|l| !l.trim().is_empty()).collect();
    assert!(tsv.starts_with("source\ttarget\tchain_types"));
    assert_eq!(edges.len(), 1, "{tsv}");
    assert!(edges[0].contains("token-reader") && edges[0].contains("webhook-notifier"));
    let graphml = fs::read_to_string(out.join("risk-graph.graphml")).unwrap();
    assert_eq!(graphml.matches("<edge ").count(), 1);
}

#[test]
fn empty_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("empty.txt");
    fs::write(&manifest, "# nothing here\n\n").unwrap();
    let o = run(&["batch", "--manifest", manifest.to_str().unwrap(), "--out-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 5);
    assert!(o.stdout.is_empty());
    assert_eq!(code(&run(&["batch"])), 5);
}

#[test]
fn text_summary_is_human_readable() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "batch",
        &fx("clean-csv-stats"),
        "--format",
        "text",
        "--out-dir",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let s = String::from_utf8(o.stdout).unwrap();
    assert!(s.starts_with("Audited 1 source(s)"));
    assert!(dir.path().join("o").read_dir().unwrap().any(|e| e.unwrap().file_name().to_string_lossy().ends_with(".txt")));
}

#[test]
fn registry_lookup_and_graph_export() {
    let dir = tempfile::tempdir().unwrap();
    let reg = dir.path().join("reg.jsonl");
    let reg_s = reg.to_str().unwrap();
    let o = run(&[
        "batch",
        &fx("p6-token-reader"),
        &fx("p6-webhook-notifier"),
        "--registry",
        reg_s,
        "--out-dir",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);

    let list = run(&["registry", "list", "--registry", reg_s]);
    assert_eq!(code(&list), 0);
    let text = String::from_utf8(list.stdout).unwrap();
    assert!(text.contains("token-reader") && text.contains("webhook-notifier"));

    let audit = run(&["audit", &fx("p6-token-reader"), "--registry", reg_s]);
    let fp = serde_json::from_slice::<serde_json::Value>(&audit.stdout).unwrap()["skill"]["fingerprint"]
        .as_str()
        .unwrap()
        .to_string();
    let got = run(&["registry", "get", &fp, "--registry", reg_s]);
    assert_eq!(code(&got), 0);
    let rec: serde_json::Value = serde_json::from_slice(&got.stdout).unwrap();
    assert_eq!(rec["fingerprint"], fp.as_str());

    let g = run(&["graph", "--registry", reg_s, "--format", "tsv"]);
    assert_eq!(code(&g), 0);
    assert!(String::from_utf8(g.stdout).unwrap().contains("DataExfiltration"));

    assert_eq!(code(&run(&["registry", "get", "ffffffffffff", "--registry", reg_s])), 4);
    assert_eq!(code(&run(&["registry", "list", "--registry", dir.path().join("absent.jsonl").to_str().unwrap()])), 4);
}

#[test]
fn graph_of_empty_registry_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let reg = dir.path().join("reg.jsonl");
    fs::write(&reg, "").unwrap();
    let out = dir.path().join("g.graphml");
    let o = run(&["graph", "--registry", reg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let xml = fs::read_to_string(out).unwrap();
    assert!(xml.contains("<graphml"));
    assert_eq!(xml.matches("<node ").count(), 0);
    assert_eq!(xml.matches("<edge ").count(), 0);
}

#[test]
fn shipped_rules_validate() {
    let o = run(&["rules", "validate"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert!(lines.iter().all(|l| l.contains("\tvalid\t")), "{text}");
}

#[test]
fn exported_rules_round_trip_and_broken_rules_fail() {
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("rules");
    assert_eq!(code(&run(&["rules", "export", rules.to_str().unwrap()])), 0);
    let o = run(&["rules", "validate", rules.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().lines().all(|l| l.ends_with("\tvalid\tfile")));

    fs::write(rules.join("policies.toml"), "schema_version = 1\n[[policy]]\nid = \"P1\"\n").unwrap();
    let o = run(&["rules", "validate", rules.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8(o.stdout).unwrap().contains("policies.toml\tinvalid"));
    assert_eq!(code(&run(&["audit", &fx("clean-csv-stats"), "--rules-dir", rules.to_str().unwrap()])), 4);
}

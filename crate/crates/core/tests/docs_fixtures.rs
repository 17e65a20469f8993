use std::collections::BTreeSet;
use std::path::PathBuf;

use effmass_core::config::ExperimentConfig;
use effmass_core::pipeline::{run, Subcommand};
use effmass_core::report::{key_paths, reference_table, report_json, splice_table, stored_table};

fn repo(rel: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", rel].iter().collect()
}

fn preset(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(&repo(&format!("presets/{name}"))).unwrap()
}

/// Backticked tokens of a markdown file.
fn documented(file: &str) -> BTreeSet<String> {
    let text = std::fs::read_to_string(repo(file)).unwrap();
    text.split('`').skip(1).step_by(2).map(str::to_string).collect()
}

#[test]
fn reference_tables_match_fixtures() {
    let path = repo("docs/reference_tables.md");
    let mut doc = std::fs::read_to_string(&path).unwrap();
    let tables = [
        ("free", run(Subcommand::Sandwich, &preset("free.json")).unwrap()),
        ("toy", run(Subcommand::Sandwich, &preset("toy.json")).unwrap()),
        ("tiny-oracle", run(Subcommand::OracleCheck, &preset("tiny.json")).unwrap()),
    ];
    let regenerate = std::env::var_os("REGENERATE_REFERENCE_TABLES").is_some();
    let mut drift = Vec::new();
    for (name, r) in &tables {
        let body = reference_table(r);
        if regenerate {
            doc = splice_table(&doc, name, &body).unwrap_or_else(|| panic!("table {name}: markers missing"));
        } else {
            match stored_table(&doc, name) {
                None => drift.push(format!("table {name}: missing")),
                Some(stored) if stored != body => drift.push(format!("table {name}: drifted\n--- stored\n{stored}--- computed\n{body}")),
                Some(_) => {}
            }
        }
    }
    if regenerate {
        std::fs::write(&path, doc).unwrap();
    }
    assert!(drift.is_empty(), "{}", drift.join("\n"));
}

#[test]
fn every_report_key_is_documented() {
    let docs = documented("docs/report_keys.md");
    let mut keys = BTreeSet::new();
    for (sub, name) in [
        (Subcommand::Sandwich, "free.json"),
        (Subcommand::Converge, "toy.json"),
        (Subcommand::OracleCheck, "tiny.json"),
    ] {
        let r = run(sub, &preset(name)).unwrap();
        keys.extend(key_paths(&report_json(&r)));
    }
    let missing: Vec<_> = keys
        .iter()
        .filter(|k| !k.starts_with("config.echo.") && !k.starts_with("timings_seconds."))
        .filter(|k| !docs.contains(*k))
        .collect();
    assert!(missing.is_empty(), "undocumented report keys: {missing:?}");
}

#[test]
fn every_config_key_is_documented() {
    let docs = documented("docs/config.md");
    let mut missing = BTreeSet::new();
    for entry in std::fs::read_dir(repo("presets")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::from_path(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&cfg.canonical_json()).unwrap();
        for k in key_paths(&v) {
            if !docs.contains(&k) {
                missing.insert(k);
            }
        }
    }
    assert!(missing.is_empty(), "undocumented config keys: {missing:?}");
}

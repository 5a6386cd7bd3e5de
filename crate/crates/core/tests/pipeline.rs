//! Orchestrator, store, analysis and CLI working together on mock backends.

mod common;

use std::path::Path;
use std::process::Command;

use tom_harness::analysis::{analyze_batch, StatCell};
use tom_harness::backend::{MockEntry, MockScript};
use tom_harness::model::{validate_record, TrialStatus, VerdictKind};
use tom_harness::orchestrator::check_isolation;
use tom_harness::store::{self, RecordWriter};
use tom_harness::RoleId;

use common::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tom-harness"))
}

fn run_cli(args: &[&str]) -> std::process::Output {
    bin().args(args).output().unwrap()
}

#[test]
fn builtin_mock_batch_is_complete_and_isolated() {
    let records = run_mock_batch(MockScript::builtin(), 6);
    assert_eq!(records.len(), 6);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.trial_index, i);
        assert!(r.is_complete(), "{:?}", r.status);
        assert_eq!(r.transcripts.len(), 9);
        assert_eq!(r.answers.len(), 3);
        assert!(r.answers.values().all(|a| a.len() == 16));
        assert_eq!(r.sheets.len(), 3);
        assert!(validate_record(r).is_empty());
        assert!(check_isolation(r).is_empty());
    }
}

#[test]
fn fixed_clock_runs_are_reproducible_whatever_the_order() {
    let a = run_mock_batch(MockScript::builtin(), 5);
    let b = run_mock_batch(MockScript::builtin(), 5);
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn empty_advisor_output_gives_base_prompt() {
    let mut entries: Vec<MockEntry> = MockScript::builtin()
        .entries()
        .iter()
        .filter(|e| e.key != tom_harness::backend::MatchKey::Template("advisor-generic".into()))
        .cloned()
        .collect();
    entries.push(MockEntry::template("advisor-generic", &["  \n"]));
    let records = run_mock_batch(MockScript::new("empty", entries).unwrap(), 2);
    for r in &records {
        assert!(r.is_complete());
        let a = r.instruction(RoleId::ADVISOR_GENERIC).unwrap();
        assert!(a.is_empty);
        assert_eq!((a.char_length, a.entropy_bits), (0, 0.0));
        let t5 = r.transcript(RoleId::TAKER_GENERIC).unwrap();
        assert_eq!(t5.request_text, tom_harness::protocol::base_test_prompt());
        assert!(validate_record(r).is_empty());
    }
}

#[test]
fn missing_fixture_fails_the_trial_and_skips_dependents() {
    let entries: Vec<MockEntry> = MockScript::builtin()
        .entries()
        .iter()
        .filter(|e| e.key != tom_harness::backend::MatchKey::Template("taker-instructed-generic".into()))
        .cloned()
        .collect();
    let records = run_mock_batch(MockScript::new("gap", entries).unwrap(), 3);
    for r in &records {
        match &r.status {
            TrialStatus::Failed { stage, failures } => {
                assert_eq!(*stage, RoleId::TAKER_GENERIC);
                let roles: Vec<u8> = failures.iter().map(|f| f.role.ordinal()).collect();
                assert_eq!(roles, vec![5, 8]);
            }
            other => panic!("expected failure, got {other:?}"),
        }
        // independent branches still ran
        assert!(r.sheet(RoleId::SCORER_CLONE_AWARE).is_some());
        assert!(validate_record(r).is_empty(), "{:?}", validate_record(r));
    }
    assert!(matches!(analyze_batch(&records), Err(tom_harness::analysis::AnalysisError::TooFewRecords(0))));
}

#[test]
fn engineered_batch_matches_hand_computation() {
    let records = engineered_batch();
    assert!(records.iter().all(|r| r.is_complete()));
    let expect = engineered_expectations();
    let a = analyze_batch(&records).unwrap();

    for (k, source) in [RoleId::ADVISOR_GENERIC, RoleId::ADVISOR_CLONE_AWARE].into_iter().enumerate() {
        for (i, r) in records.iter().enumerate() {
            let art = r.instruction(source).unwrap();
            assert_eq!(art.char_length as f64, expect.len[k][i]);
            assert!((art.entropy_bits - expect.ent[k][i]).abs() < 1e-12);
        }
        assert!((a.table1[k].length.mean - mean(&expect.len[k])).abs() < 1e-9);
        assert!((a.table1[k].length.sd - sample_var(&expect.len[k]).sqrt()).abs() < 1e-9);
    }

    let t = a.length_test.value().unwrap();
    assert_eq!(t.df, 22.0);
    assert!(rel_err(t.t, expect.t_length) < 1e-10, "{} vs {}", t.t, expect.t_length);
    assert!(rel_err(t.p_two_sided, expect.p_length) < 1e-6);
    let t = a.entropy_test.value().unwrap();
    assert!(rel_err(t.t, expect.t_entropy) < 1e-10);
    assert!(rel_err(t.p_two_sided, expect.p_entropy) < 1e-6);

    assert_eq!(a.verdict_counts[&VerdictKind::NotUseful], 1);
    assert_eq!(a.verdict_counts[&VerdictKind::Noncompliant], 1);
    assert_eq!(a.n_preference as u64, expect.n_preference);
    let b = a.binomial.value().unwrap();
    assert_eq!((b.k, b.n), (expect.k_passage1, expect.n_preference));
    assert!(rel_err(b.p_value, expect.binomial_p) < 1e-12);

    let logit = a.logit.value().unwrap();
    for (got, want) in logit.coef.iter().zip(&expect.logit) {
        assert!((got - want).abs() < 1e-4, "{:?} vs {:?}", logit.coef, expect.logit);
    }

    for (row, want) in a.table4.iter().zip(&expect.table4) {
        assert!((row.mental.mean - want[0]).abs() < 1e-12);
        assert!((row.physical.mean - want[1]).abs() < 1e-12);
        assert!((row.combined.mean - want[2]).abs() < 1e-12);
    }

    let ols = a.ols.value().unwrap();
    for (got, want) in ols.coef.iter().zip(&expect.ols) {
        assert!((got - want).abs() < 1e-8 * want.abs().max(1.0), "{:?} vs {:?}", ols.coef, expect.ols);
    }
}

#[test]
fn analysis_ignores_record_order() {
    let mut records = engineered_batch();
    let forward = analyze_batch(&records).unwrap();
    records.reverse();
    assert_eq!(analyze_batch(&records).unwrap(), forward);
}

#[test]
fn store_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let records = engineered_batch();
    let hash = records[0].config_hash.clone();
    let path = dir.path().join("records.jsonl");
    let mut w = RecordWriter::open(&path, &hash).unwrap();
    for r in &records {
        w.append(r).unwrap();
    }
    drop(w);
    let (header, back) = store::read_records(dir.path()).unwrap();
    assert_eq!(header.config_hash, hash);
    assert_eq!(back, records);
    let report = store::validate_file(&path).unwrap();
    assert!(report.is_valid());
    assert_eq!((report.records, report.complete), (12, 12));

    // a hand-edited score no longer matches the scorer's raw response
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut v: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
    let scores = &mut v["sheets"][0]["scores"]["1"];
    *scores = serde_json::json!((scores.as_u64().unwrap() + 1) % 3);
    lines[3] = v.to_string();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let report = store::validate_file(&path).unwrap();
    assert!(!report.is_valid());
    assert_eq!(report.problems.len(), 1);
    assert_eq!(report.problems[0].line, 4);
}

fn records_in(dir: &Path) -> Vec<tom_harness::TrialRecord> {
    store::read_records(dir).unwrap().1
}

#[test]
fn cli_run_analyze_report_validate_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    let o = run_cli(&["run", "--backend", "mock", "--trials", "8", "--out", out_s, "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("8 complete"));
    let records = records_in(&out);
    assert_eq!(records.len(), 8);
    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(config["config_hash"], records[0].config_hash.as_str());

    let o = run_cli(&["validate", "--in", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));

    let o = run_cli(&["analyze", "--in", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("n_trials=8"));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(doc["schema"], "tom-harness.report");
    assert_eq!(doc["analysis"]["n_trials"], 8);

    let o = run_cli(&["report", "--in", out_s]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success());
    for table in ["Table 1.", "Table 3.", "Table 4.", "Table 5."] {
        assert!(text.contains(table), "{table} missing");
    }

    let o = run_cli(&["summarize", "--in", out_s, "--source", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ex: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("exemplar-2.json")).unwrap()).unwrap();
    assert_eq!(ex["n_instructions"], 8);
    assert!(ex["request_text"].as_str().unwrap().contains("Instruction set 8:"));

    // a second run with another configuration cannot append to this file
    let o = run_cli(&["run", "--trials", "1", "--out", out_s, "--temperature", "7=0.5"]);
    assert!(!o.status.success());
    assert_eq!(records_in(&out).len(), 8);
}

#[test]
fn cli_errors_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = run_cli(&["run", "--trials", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--trials"));

    assert_eq!(run_cli(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run_cli(&["run", "--trials"]).status.code(), Some(2));

    let o = run_cli(&["analyze", "--in", dir.path().join("absent").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    // a live run with no key in the environment refuses to start
    let o = bin()
        .args(["run", "--backend", "live", "--trials", "1", "--out", out.to_str().unwrap()])
        .args(["--api-key-env", "TOM_HARNESS_TEST_NO_SUCH_KEY"])
        .env_remove("TOM_HARNESS_TEST_NO_SUCH_KEY")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("TOM_HARNESS_TEST_NO_SUCH_KEY"));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"schema\":\"something-else\",\"schema_version\":1,\"config_hash\":\"x\"}\n").unwrap();
    assert_eq!(run_cli(&["validate", "--in", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn flagged_statistics_serialise_with_reason() {
    let records = run_mock_batch(MockScript::builtin(), 2);
    let a = analyze_batch(&records).unwrap();
    let json = serde_json::to_value(&a).unwrap();
    for key in ["length_test", "binomial", "logit", "ols"] {
        let status = json[key]["status"].as_str().unwrap();
        assert!(status == "value" || status == "flagged", "{key}: {status}");
        if status == "flagged" {
            assert!(json[key]["reason"].as_str().is_some_and(|r| !r.is_empty()));
        }
    }
    assert!(matches!(a.logit, StatCell::Value { .. } | StatCell::Flagged { .. }));
}

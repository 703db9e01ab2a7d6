//! End-to-end tests driving the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn folbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_folbench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert_eq!(
        out.status.code(),
        Some(0),
        "expected success\nstdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

#[test]
fn help_exits_zero() {
    let out = folbench(&["--help"]);
    assert_ok(&out);
    for command in ["ingest", "sample", "generate", "evaluate", "report"] {
        assert!(stdout(&out).contains(command), "help lists {command}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = folbench(&["ingest", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_graph_file_is_a_config_error() {
    let out = folbench(&["ingest", "--kg", "/no/such/file.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("does not exist"));

    let out = folbench(&["ingest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--kg or --fixture"));
}

#[test]
fn unknown_setting_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "fixture = true\nbogus = 1\n").unwrap();
    let out = folbench(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown setting"));
    assert!(stderr(&out).contains("bogus"));
}

#[test]
fn ingest_reports_fixture_shape() {
    let out = folbench(&["ingest", "--fixture"]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("entities:  400"), "got:\n{text}");
    assert!(text.contains("relations: 4"));
    assert!(text.contains("mentors"));
}

#[test]
fn shortfall_exits_one_and_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let kg = dir.path().join("tiny.tsv");
    std::fs::write(&kg, "a\tr\tb\n").unwrap();
    let out_dir = dir.path().join("run");
    let out = folbench(&[
        "sample",
        "--kg",
        kg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--questions-per-pattern",
        "2",
        "--max-retries-per-question",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sampling quota missed"));
    assert!(out_dir.join("samples.jsonl").is_file(), "partial artifact kept");
}

fn sample_fixture(out_dir: &Path, quota: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "sample",
        "--fixture",
        "--out",
        out_dir.to_str().unwrap(),
        "--questions-per-pattern",
        quota,
    ];
    args.extend_from_slice(extra);
    folbench(&args)
}

#[test]
fn flags_override_settings_and_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# defaults for this run\nseed = 3\n").unwrap();

    let from_config = dir.path().join("a");
    let flag_wins = dir.path().join("b");
    let plain_nine = dir.path().join("c");
    let rerun = dir.path().join("d");
    assert_ok(&sample_fixture(&from_config, "1", &["--config", cfg.to_str().unwrap()]));
    assert_ok(&sample_fixture(
        &flag_wins,
        "1",
        &["--config", cfg.to_str().unwrap(), "--seed", "9"],
    ));
    assert_ok(&sample_fixture(&plain_nine, "1", &["--seed", "9"]));
    assert_ok(&sample_fixture(&rerun, "1", &["--seed", "9"]));

    let read = |d: &Path| std::fs::read(d.join("samples.jsonl")).unwrap();
    assert_eq!(read(&flag_wins), read(&plain_nine), "flag beats settings file");
    assert_eq!(read(&plain_nine), read(&rerun), "same seed, same bytes");
    assert_ne!(read(&from_config), read(&plain_nine), "different seed differs");
}

#[test]
fn corrupting_client_scores_seven_of_ten() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_ok(&sample_fixture(&run, "1", &["--seed", "5"]));
    assert_ok(&folbench(&["generate", "--fixture", "--out", run.to_str().unwrap()]));
    let out = folbench(&[
        "evaluate",
        "--out",
        run.to_str().unwrap(),
        "--client",
        "mock-corrupting",
        "--corrupt",
        "3",
        "--seed",
        "5",
    ]);
    assert_ok(&out);
    assert!(
        stdout(&out).contains("mean precision@10: 0.7000"),
        "got:\n{}",
        stdout(&out)
    );
}

#[test]
fn fixture_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");

    assert_ok(&sample_fixture(&run, "2", &["--seed", "11"]));
    assert_ok(&folbench(&[
        "generate",
        "--fixture",
        "--out",
        run.to_str().unwrap(),
        "--subquestions",
    ]));
    assert!(run.join("questions.jsonl").is_file());
    assert!(run.join("subquestions.jsonl").is_file());

    // Plain and chain-of-thought passes with the offline oracle.
    let plain = folbench(&[
        "evaluate",
        "--out",
        run.to_str().unwrap(),
        "--client",
        "mock-oracle",
        "--seed",
        "11",
        "--workers",
        "2",
    ]);
    assert_ok(&plain);
    assert!(stdout(&plain).contains("mean precision@10: 1.0000"));
    let cot = folbench(&[
        "evaluate",
        "--out",
        run.to_str().unwrap(),
        "--client",
        "mock-oracle",
        "--cot",
        "--seed",
        "11",
    ]);
    assert_ok(&cot);
    assert!(stdout(&cot).contains("mean precision@10: 1.0000"));
    assert!(run.join("records-plain-2-shot.jsonl").is_file());
    assert!(run.join("records-cot-4-shot.jsonl").is_file());

    // Operand questions get their own records file.
    let sub_questions = run.join("subquestions.jsonl");
    let sub_records = run.join("subrecords.jsonl");
    let subs = folbench(&[
        "evaluate",
        "--out",
        run.to_str().unwrap(),
        "--questions",
        sub_questions.to_str().unwrap(),
        "--records",
        sub_records.to_str().unwrap(),
        "--client",
        "mock-oracle",
        "--seed",
        "11",
    ]);
    assert_ok(&subs);

    let report = folbench(&[
        "report",
        "--out",
        run.to_str().unwrap(),
        "--subrecords",
        sub_records.to_str().unwrap(),
    ]);
    assert_ok(&report);
    let text = stdout(&report);
    assert!(text.contains("== mode plain-2-shot =="), "got:\n{text}");
    assert!(text.contains("== mode cot-4-shot =="));
    assert!(text.contains("match threshold: 0.90 (profile: general)"));
    assert!(text.contains("by family and depth"));
    assert!(text.contains("Chain-of-thought gain"));
    assert!(text.contains("Composite versus parts"));
    assert!(run.join("report.txt").is_file());
    let csv = std::fs::read_to_string(run.join("report.csv")).unwrap();
    assert!(csv.contains("overall,plain-2-shot,all,52,100.00"), "got:\n{csv}");
    assert!(csv.contains("overall,cot-4-shot,all,52,100.00"));
    assert!(csv.contains("set-op-drop,plain-2-shot,Intersection,"));

    // A resumed run with nothing left to do evaluates zero questions.
    let resumed = folbench(&[
        "evaluate",
        "--out",
        run.to_str().unwrap(),
        "--client",
        "mock-oracle",
        "--seed",
        "11",
        "--resume",
    ]);
    assert_ok(&resumed);
    assert!(
        stdout(&resumed).contains("evaluated 0 questions (52 skipped, 0 failed)"),
        "got:\n{}",
        stdout(&resumed)
    );
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_causa");

struct Fixtures {
    _dir: tempfile::TempDir,
    path: PathBuf,
}

impl Fixtures {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().to_path_buf();
        let out = causa(&["fixtures", "materialize", path.to_str().unwrap()], &[]);
        assert!(out.status.success());
        Fixtures { _dir: dir, path }
    }

    fn manifest(&self, name: &str) -> String {
        self.path.join(format!("{name}.json")).to_str().unwrap().to_owned()
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

fn causa(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("CAUSA_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_error(o: &Output, code: i32, kind: &str) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "stderr is not one line: {err}");
    assert!(err.starts_with(&format!("causa: error[{kind}]: ")), "{err}");
}

#[test]
fn hex_text_report_lists_failing_and_passing() {
    let f = Fixtures::new();
    let o = causa(&["run", "--manifest", &f.manifest("hexparser"), "--seed", "42"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("Failing: \"0Xfade\"")).count(), 1, "{text}");
    assert!(text.lines().any(|l| l.starts_with("Passing: \"0xfade\"  diff: \"0[x]fade\"")), "{text}");
    assert!(text.contains("2 only-in-failing"), "{text}");
}

#[test]
fn original_that_passes_exits_3() {
    let f = Fixtures::new();
    let o = causa(&["run", "--manifest", &f.manifest("hexparser"), "--args-json", r#"["0xfade"]"#], &[]);
    assert_error(&o, 3, "original-passed");
    assert!(o.stdout.is_empty());
}

#[test]
fn unreachable_harness_exits_4() {
    let o = causa(
        &["run", "--harness-cmd", "/nonexistent/harness --flag", "--args-json", r#"["x"]"#, "--oracle", "o"],
        &[],
    );
    assert_error(&o, 4, "harness-dead");
}

#[test]
fn configuration_errors_exit_4() {
    let f = Fixtures::new();
    let hex = f.manifest("hexparser");
    for (args, kind) in [
        (vec!["run", "--manifest", &hex, "--weights", "1,2"], "invalid-config"),
        (vec!["run", "--manifest", &hex, "--weights", "one"], "invalid-config"),
        (vec!["run", "--manifest", &hex, "--target-passing", "0"], "invalid-config"),
        (vec!["run", "--manifest", &hex, "--parallelism", "0"], "invalid-config"),
        (vec!["run", "--manifest", &hex, "--args-json", "[]"], "invalid-spec"),
        (vec!["run", "--manifest", &hex, "--args-json", "not json"], "invalid-config"),
        (vec!["run", "--manifest", "/nonexistent/manifest.json"], "invalid-config"),
        (vec!["run", "--args-json", r#"["x"]"#], "invalid-config"),
        (vec!["run", "--harness-cmd", "h"], "invalid-config"),
    ] {
        let o = causa(&args, &[]);
        assert_error(&o, 4, kind);
    }
}

#[test]
fn unknown_mutator_in_manifest_exits_4() {
    let f = Fixtures::new();
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(f.manifest("hexparser")).unwrap()).unwrap();
    m["disabled_mutators"] = serde_json::json!(["text.nope"]);
    let path = f.file("bad.json");
    std::fs::write(&path, m.to_string()).unwrap();
    let o = causa(&["run", "--manifest", path.to_str().unwrap()], &[]);
    assert_error(&o, 4, "invalid-config");
}

#[test]
fn covering_mutators_must_stay_enabled() {
    let f = Fixtures::new();
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(f.manifest("off-by-one")).unwrap()).unwrap();
    let all_integer = [
        "integer.plus-one", "integer.minus-one", "integer.negate", "integer.zero",
        "integer.double", "integer.halve", "integer.boundary",
    ];
    m["disabled_mutators"] = serde_json::json!(all_integer);
    let path = f.file("no-int.json");
    std::fs::write(&path, m.to_string()).unwrap();
    let o = causa(&["run", "--manifest", path.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn flags_alone_describe_a_run() {
    let o = causa(
        &[
            "run",
            "--harness-cmd",
            &format!("'{BIN}' harness off-by-one"),
            "--args-json",
            "[16]",
            "--oracle",
            "lookup",
            "--format",
            "json",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["schema"], "causal-report/1");
    assert_eq!(r["nearest_passing"].as_array().unwrap().len(), 3);
}

#[test]
fn seed_falls_back_to_environment() {
    let f = Fixtures::new();
    let hex = f.manifest("hexparser");
    let run = |args: &[&str], env: &[(&str, &str)]| {
        let o = causa(&[&["run", "--manifest", &hex, "--format", "json", "--max-candidates", "300"], args].concat(), env);
        let r: Value = serde_json::from_slice(&o.stdout).unwrap();
        r["config"]["rng_seed"].as_u64().unwrap()
    };
    assert_eq!(run(&[], &[]), 0);
    assert_eq!(run(&[], &[("CAUSA_SEED", "9")]), 9);
    assert_eq!(run(&["--seed", "3"], &[("CAUSA_SEED", "9")]), 3);
    let o = causa(&["run", "--manifest", &hex], &[("CAUSA_SEED", "nine")]);
    assert_error(&o, 4, "invalid-config");
}

#[test]
fn output_progress_and_verbose() {
    let f = Fixtures::new();
    let out = f.file("report.txt");
    let o = causa(
        &[
            "run",
            "--manifest",
            &f.manifest("date-range"),
            "--output",
            out.to_str().unwrap(),
            "--progress",
            "--verbose",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("Failing: 360, 370"), "{text}");
    assert!(text.contains("      only in failing: mapToCalendar"), "{text}");
    let log = stderr(&o);
    assert!(log.lines().count() > 3, "{log}");
    assert!(log.lines().all(|l| l.starts_with('[')), "{log}");
}

#[test]
fn report_flags_override_manifest_config() {
    let f = Fixtures::new();
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(f.manifest("off-by-one")).unwrap()).unwrap();
    m["config"] = serde_json::json!({"target_passing": 5, "report_k": 5, "max_candidates": 50,
        "per_execution_timeout_ms": 1000, "total_budget_ms": 60000, "rng_seed": 1, "parallelism": 1, "repeat": 1});
    let path = f.file("custom.json");
    std::fs::write(&path, m.to_string()).unwrap();
    let p = path.to_str().unwrap();
    let config = |extra: &[&str]| {
        let o = causa(&[&["run", "--manifest", p, "--format", "json"], extra].concat(), &[]);
        let r: Value = serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stderr(&o)));
        r["config"].clone()
    };
    let base = config(&[]);
    assert_eq!(base["target_passing"], 5);
    for (flag, value, field, expected) in [
        ("--target-passing", "6", "target_passing", serde_json::json!(6)),
        ("--max-candidates", "40", "max_candidates", serde_json::json!(40)),
        ("--timeout-ms", "900", "per_execution_timeout_ms", serde_json::json!(900)),
        ("--total-budget-ms", "50000", "total_budget_ms", serde_json::json!(50000)),
        ("--seed", "2", "rng_seed", serde_json::json!(2)),
        ("--parallelism", "2", "parallelism", serde_json::json!(2)),
        ("--weights", "2.5", "weights", serde_json::json!([2.5])),
        ("--repeat", "2", "repeat", serde_json::json!(2)),
    ] {
        let c = config(&[flag, value]);
        assert_eq!(c[field], expected, "{flag}");
        assert_ne!(base[field], expected, "{flag} test is vacuous");
    }
}

#[test]
fn validate_harness_reports_each_check() {
    let f = Fixtures::new();
    let o = causa(&["validate-harness", "--manifest", &f.manifest("hexparser")], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for check in ["PASS spawn", "PASS handshake id echoed", "PASS echo id echoed", "PASS shutdown"] {
        assert!(text.contains(check), "{text}");
    }
    assert!(text.ends_with("harness is conformant\n"));

    let o = causa(&["validate-harness", "--harness-cmd", "/nonexistent/h", "--args-json", "[1]", "--oracle", "o"], &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAIL spawn"));
    assert_error(&o, 4, "non-conformant");
}

#[test]
fn silent_harness_fails_validation_on_timeout() {
    let o = causa(
        &[
            "validate-harness",
            "--harness-cmd",
            "sh -c 'cat > /dev/null'",
            "--args-json",
            "[1]",
            "--oracle",
            "o",
            "--timeout-ms",
            "200",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAIL handshake response received"), "{}", stdout(&o));
}

#[test]
fn replay_without_the_harness_is_deterministic() {
    let f = Fixtures::new();
    let t = f.file("t.jsonl");
    let hex = f.manifest("off-by-one");
    let base = ["run", "--manifest", &hex, "--format", "json"];
    let live = causa(&[&base[..], &["--record-transcript", t.to_str().unwrap()]].concat(), &[]);
    assert_eq!(live.status.code(), Some(0));

    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(&hex).unwrap()).unwrap();
    m["harness"]["command"] = "/nonexistent/harness".into();
    let broken = f.file("broken.json");
    std::fs::write(&broken, m.to_string()).unwrap();
    let replay = |manifest: &Path| {
        causa(&["run", "--manifest", manifest.to_str().unwrap(), "--format", "json", "--replay-transcript", t.to_str().unwrap()], &[])
    };
    let a = replay(&broken);
    let b = replay(&broken);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, live.stdout);
}

#[test]
fn total_budget_expiry_yields_a_partial_report() {
    let f = Fixtures::new();
    let o = causa(
        &["run", "--manifest", &f.manifest("hexparser-slow"), "--total-budget-ms", "300", "--format", "json"],
        &[],
    );
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["stop_reason"], "budget-expired");
    assert_eq!(o.status.code(), Some(2));
    assert!(r["executed_count"].as_u64().unwrap() < 20);
}

#[test]
fn interrupt_stops_the_search_with_a_partial_report() {
    let f = Fixtures::new();
    let child = Command::new(BIN)
        .args(["run", "--manifest", &f.manifest("hexparser-slow"), "--format", "json"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(Duration::from_millis(600));
    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let start = Instant::now();
    let o = child.wait_with_output().unwrap();
    assert!(start.elapsed() < Duration::from_secs(5));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stderr(&o)));
    assert_eq!(r["stop_reason"], "budget-expired");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fixtures_list_names_the_bundled_subjects() {
    let o = causa(&["fixtures", "list"], &[]);
    let text = stdout(&o);
    for name in ["hexparser", "date-range", "off-by-one", "reject-all"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{text}");
    }
    assert!(!text.contains("malformed-json"));
}

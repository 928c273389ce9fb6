use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.toml"))
}

fn ctxauthz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxauthz"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(summary: &str, key: &str) -> u64 {
    summary
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{summary}"))
        .parse()
        .unwrap()
}

#[test]
fn dynamic_run_is_clean() {
    let sc = scenario("smart-home");
    let out = ctxauthz(&["--scenario", path(&sc), "--mode", "dynamic"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(field(&stdout(&out), "leaks"), 0);
}

#[test]
fn quasi_run_reports_leaks_but_succeeds() {
    let sc = scenario("smart-home");
    let out = ctxauthz(&[
        "--scenario",
        path(&sc),
        "--mode",
        "quasi",
        "--lease-ms",
        "60000",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(field(&stdout(&out), "leaks") > 0);
}

#[test]
fn short_leases_are_warned_about() {
    let sc = scenario("smart-home");
    let out = ctxauthz(&[
        "--scenario",
        path(&sc),
        "--mode",
        "quasi",
        "--lease-ms",
        "1000",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(
        stderr(&out).contains("below the recommended floor"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn malformed_scenario_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "[scenario]\nname = \"x\"\nseed = 1\nproducer = \"hub\"\nend_ms = [\n",
    )
    .unwrap();
    let out = ctxauthz(&["--scenario", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line "), "{}", stderr(&out));
}

#[test]
fn invalid_reference_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario("door-lock")).unwrap()
        + "\n[[timeline]]\nat = 9000\naction = \"subscribe\"\nsubject = \"mallory\"\nchannel = \"x\"\n";
    std::fs::write(&bad, &text).unwrap();
    let out = ctxauthz(&["--scenario", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let line = text.lines().count() - 4;
    assert!(
        stderr(&out).contains(&format!("line {line}:")),
        "{}",
        stderr(&out)
    );
}

#[test]
fn missing_file_exits_with_usage_error() {
    let out = ctxauthz(&["--scenario", "/nonexistent/none.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_mode_is_rejected() {
    let sc = scenario("smart-home");
    let out = ctxauthz(&["--scenario", path(&sc), "--mode", "sometimes"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inverted_jitter_is_rejected() {
    let sc = scenario("smart-home");
    let out = ctxauthz(&["--scenario", path(&sc), "--jitter-ms", "9,3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("exceeds"), "{}", stderr(&out));
}

#[test]
fn compare_prints_one_row_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("cmp.toml");
    let sc = scenario("smart-home");
    let out = ctxauthz(&[
        "--scenario",
        path(&sc),
        "--compare",
        "--metrics-out",
        path(&metrics),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = stdout(&out);
    let rows: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(rows, ["static", "quasi", "dynamic"]);
    let written = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(written.matches("[[reports]]").count(), 3);
}

#[test]
fn compare_and_mode_conflict() {
    let sc = scenario("smart-home");
    let out = ctxauthz(&["--scenario", path(&sc), "--compare", "--mode", "static"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn outputs_are_written_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("smart-home");
    let mut texts = Vec::new();
    for i in 0..2 {
        let trace = dir.path().join(format!("trace{i}.txt"));
        let metrics = dir.path().join(format!("metrics{i}.toml"));
        let out = ctxauthz(&[
            "--scenario",
            path(&sc),
            "--mode",
            "quasi",
            "--seed",
            "11",
            "--jitter-ms",
            "0,20",
            "--trace-out",
            path(&trace),
            "--metrics-out",
            path(&metrics),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let trace = std::fs::read_to_string(&trace).unwrap();
        let metrics = std::fs::read_to_string(&metrics).unwrap();
        assert!(trace.lines().all(|l| l.starts_with("t=")));
        assert!(metrics.contains("leaks = "), "{metrics}");
        assert!(metrics.contains("seed = 11"), "{metrics}");
        texts.push((stdout(&out), trace, metrics));
    }
    assert_eq!(texts[0], texts[1]);
}

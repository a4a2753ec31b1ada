use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures");

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_promptforge"));
    cmd.env_remove("PROMPTFORGE_LLM_KEY");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn promptforge")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes a small sim config next to copies of the fixtures.
fn sim_config(dir: &Path, extra: &str) -> PathBuf {
    fs::copy(format!("{FIXTURES}/queries.txt"), dir.join("queries.txt")).unwrap();
    fs::copy(
        format!("{FIXTURES}/professional.json"),
        dir.join("professional.json"),
    )
    .unwrap();
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!(
            r#"[run]
iterations = 4
batch_size = 3
query_pool = "queries.txt"
seed = 7
{extra}
[scorer]
kind = "simulated"
sim_seed = 7

[professional_source]
kind = "fixture"
path = "professional.json"
"#
        ),
    )
    .unwrap();
    path
}

fn optimize(dir: &Path, config: &Path, out: &str) -> (Output, PathBuf) {
    let out_dir = dir.join(out);
    let o = run(&[
        "optimize",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    (o, out_dir)
}

#[test]
fn optimize_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = sim_config(dir.path(), "");
    let (o, out) = optimize(dir.path(), &config, "run");
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).starts_with("4 iterations"));

    let log = fs::read_to_string(out.join("run.jsonl")).unwrap();
    assert!(log.lines().count() > 4);
    let best = fs::read_to_string(out.join("best_instruction.txt")).unwrap();
    assert!(best.contains("{query}"));
    // The snapshot is a loadable config on its own.
    let snapshot = out.join("config.toml");
    let (again, _) = optimize(dir.path(), &snapshot, "rerun");
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(stdout(&again).lines().next(), stdout(&o).lines().next());
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = sim_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = run(&[
        "optimize",
        "--config",
        config.to_str().unwrap(),
        "--iterations",
        "2",
        "--batch-size",
        "2",
        "--strategy",
        "epsilon_greedy",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).starts_with("2 iterations"));
    let snapshot = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(
        snapshot.contains("strategy = \"epsilon_greedy\""),
        "{snapshot}"
    );
    assert!(snapshot.contains("batch_size = 2"));
}

#[test]
fn report_renders_text_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = sim_config(dir.path(), "");
    let (_, out) = optimize(dir.path(), &config, "run");
    let text = run(&["report", "--run", out.to_str().unwrap()]);
    assert_eq!(text.status.code(), Some(0));
    assert!(stdout(&text).contains("Per-iteration scores"));

    let csv = run(&[
        "report",
        "--run",
        out.join("run.jsonl").to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(csv.status.code(), Some(0));
    let body = stdout(&csv);
    let lines: Vec<&str> = body.lines().filter(|l| !l.is_empty()).collect();
    assert!(lines.len() >= 4);
    let widths: Vec<usize> = lines.iter().map(|l| l.matches(',').count()).collect();
    assert!(widths.iter().all(|&w| w > 0));

    // Same log, same report.
    let twice = run(&["report", "--run", out.to_str().unwrap()]);
    assert_eq!(stdout(&twice), stdout(&text));
}

#[test]
fn baseline_appends_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let config = sim_config(dir.path(), "baseline_queries = 4");
    let (_, out) = optimize(dir.path(), &config, "run");
    let o = run(&[
        "baseline",
        "--config",
        config.to_str().unwrap(),
        "--instruction-file",
        out.join("best_instruction.txt").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).starts_with("4 queries"));
    assert_eq!(stdout(&o).lines().count(), 4);
    let log = fs::read_to_string(out.join("run.jsonl")).unwrap();
    assert!(log.contains("baseline_summary"));
    let report = run(&["report", "--run", out.to_str().unwrap()]);
    assert_eq!(report.status.code(), Some(0));
}

#[test]
fn simulate_prints_regret() {
    let o = run(&[
        "simulate",
        "--bandit-arms",
        "5",
        "--rounds",
        "2000",
        "--strategy",
        "ucb",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        let line = text
            .lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("{key} in {text}"));
        line.rsplit(' ').next().unwrap().parse().unwrap()
    };
    assert!(value("cumulative regret:") < value("uniform regret:"));
    assert!(value("best arm fraction:") > 0.5);
}

#[test]
fn simulate_needs_two_arms() {
    let o = run(&["simulate", "--bandit-arms", "1", "--rounds", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[run]\niterations = \"ten\"\n").unwrap();
    let o = run(&[
        "optimize",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn missing_config_exits_2() {
    let o = run(&[
        "optimize",
        "--config",
        "/nonexistent/run.toml",
        "--out",
        "/tmp/never",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn live_mode_without_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = sim_config(dir.path(), "");
    let out = dir.path().join("live");
    let o = run(&[
        "optimize",
        "--config",
        config.to_str().unwrap(),
        "--mode",
        "live",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn truncated_log_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = sim_config(dir.path(), "");
    let (_, out) = optimize(dir.path(), &config, "run");
    let log = out.join("run.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    fs::write(&log, &text[..text.len() - 20]).unwrap();
    let o = run(&["report", "--run", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn missing_run_log_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["report", "--run", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_instruction_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = sim_config(dir.path(), "");
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "  \n").unwrap();
    let o = run(&[
        "baseline",
        "--config",
        config.to_str().unwrap(),
        "--instruction-file",
        empty.to_str().unwrap(),
        "--out",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

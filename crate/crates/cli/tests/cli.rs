use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cpsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpsim")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const COMPARE_ARXIV: [&str; 9] =
    ["compare", "--config", "cluster_a", "--dataset", "arxiv", "--total-len", "65536", "--seed", "3"];

#[test]
fn compare_prints_one_row_per_strategy() {
    let out = cpsim(&COMPARE_ARXIV);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("strategy,attention_makespan_s"));
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["zeppelin", "te_cp", "llama_cp", "hybrid_dp"]);
    let te_speedup = lines[2].split(',').nth(5).unwrap();
    assert_eq!(te_speedup, "1.000000");
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let csv = dir.path().join(format!("{run}.csv"));
        let traces = dir.path().join(run);
        let mut args = COMPARE_ARXIV.to_vec();
        args.extend(["--out", p(&csv), "--trace-dir", p(&traces)]);
        let out = cpsim(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        let mut files = vec![fs::read(&csv).unwrap()];
        for s in ["zeppelin", "te_cp", "llama_cp", "hybrid_dp"] {
            files.push(fs::read(traces.join(format!("{s}.trace.json"))).unwrap());
        }
        runs.push(files);
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn sample_plan_simulate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("batch.json");
    let plan = dir.path().join("plan.json");
    let trace = dir.path().join("step.trace.json");
    let report = dir.path().join("report.csv");
    let steps: [Vec<&str>; 3] = [
        vec!["sample", "--dataset", "github", "--total-len", "32768", "--seed", "5", "--out", p(&batch)],
        vec!["plan", "--config", "cluster_a", "--batch", p(&batch), "--out", p(&plan)],
        vec!["simulate", "--config", "cluster_a", "--plan", p(&plan), "--trace", p(&trace), "--report", p(&report)],
    ];
    for args in &steps {
        let out = cpsim(args);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
        assert!(out.stdout.is_empty());
    }
    let mut written: Vec<String> =
        fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    written.sort();
    assert_eq!(written, ["batch.json", "plan.json", "report.csv", "step.trace.json"]);
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("zeppelin,"));
    let trace: serde_json::Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    let events = trace["traceEvents"].as_array().unwrap();
    assert!(events.iter().any(|e| e["ph"] == "X"));
}

#[test]
fn missing_batch_file_is_an_io_error_naming_the_path() {
    let out = cpsim(&["plan", "--config", "cluster_a", "--batch", "/nonexistent/batch.json"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("/nonexistent/batch.json"));
}

#[test]
fn malformed_inputs_are_usage_errors_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("bad.json");
    fs::write(&batch, r#"[{"id": 0, "len": "long"}]"#).unwrap();
    let out = cpsim(&["plan", "--config", "cluster_a", "--batch", p(&batch)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("len"), "{}", stderr(&out));

    let config = dir.path().join("bad.toml");
    fs::write(&config, "nodes = 2\ngpus_per_node = \"eight\"\n").unwrap();
    let out = cpsim(&["plan", "--config", p(&config), "--batch", p(&batch)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("gpus_per_node"), "{}", stderr(&out));
}

#[test]
fn infeasible_batch_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("big.json");
    fs::write(&batch, r#"[{"id": 0, "len": 200000}]"#).unwrap();
    for args in [
        vec!["plan", "--config", "cluster_a", "--batch", p(&batch)],
        vec!["compare", "--config", "cluster_a", "--batch", p(&batch)],
    ] {
        let out = cpsim(&args);
        assert_eq!(out.status.code(), Some(3), "{args:?}");
        assert!(stderr(&out).contains("infeasible"));
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cpsim(&["bogus"]).status.code(), Some(2));
    let both = cpsim(&["compare", "--config", "cluster_a", "--batch", "x.json", "--dataset", "arxiv", "--total-len", "10"]);
    assert_eq!(both.status.code(), Some(2));
    assert_eq!(cpsim(&["compare", "--config", "cluster_a"]).status.code(), Some(2));
    assert_eq!(cpsim(&["plan", "--config", "cluster_a:zero", "--batch", "x.json"]).status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let out = cpsim(&["compare", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in ["--config", "--batch", "--dataset", "--total-len", "--seed", "--strategies", "--out", "--trace-dir", "--verbose"] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

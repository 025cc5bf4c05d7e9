use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nearopt"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_spec(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const COINS: &str = r#"{
  "spec_version": 1,
  "task": "pair",
  "scheme": [{ "kind": "discrete", "outcomes": 3, "repeat": 2 }],
  "sets": {
    "p": { "dim": 3, "lower": [0.1, 0.1, 0.1], "upper": [0.6, 0.8, 0.8], "eq": [{ "a": [1, 1, 1], "b": 1 }],
           "ineq": [{ "a": [-1, 1, 0], "b": 0 }] },
    "q": { "dim": 3, "lower": [0.1, 0.1, 0.1], "upper": [0.8, 0.8, 0.8], "eq": [{ "a": [1, 1, 1], "b": 1 }],
           "ineq": [{ "a": [1, -1, 0], "b": -0.3 }] }
  },
  "x": "p",
  "y": "q"
}"#;

#[test]
fn gaussian_boxes_summary() {
    let o = run(&["solve-pair", config("gauss_boxes.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("eps_star=0.606531"), "{s}");
    assert!(s.contains("certified_risk=0.158655"), "{s}");
}

#[test]
fn spec_flag_is_accepted() {
    let o = run(&["solve-pair", "--spec", config("gauss_boxes.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("eps_star=0.606531"));
}

#[test]
fn queue_plan_summary_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["markov-plan", config("queue_50.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("K_min=6"), "{}", stdout(&o));
    let csv = fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(json["alternatives"][0]["k_min"], 6);
}

#[test]
fn malformed_json_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "bad.json", "{ \"spec_version\": 1, \"task\": ");
    let out = dir.path().join("out");
    let o = run(&["solve-pair", &spec, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let version = COINS.replace("\"spec_version\": 1", "\"spec_version\": 7");
    let undefined = COINS.replace("\"y\": \"q\"", "\"y\": \"nope\"");
    let mismatch = config("gauss_boxes.json");
    let cases = [
        vec!["solve-pair".to_string(), write_spec(dir.path(), "v.json", &version)],
        vec!["solve-pair".to_string(), write_spec(dir.path(), "u.json", &undefined)],
        vec!["markov-plan".to_string(), mismatch.to_str().unwrap().to_string()],
        vec!["solve-pair".to_string(), dir.path().join("missing.json").to_str().unwrap().to_string()],
        vec!["solve-pair".to_string()],
        vec!["no-such-command".to_string()],
    ];
    for args in cases {
        let o = bin().args(&args).output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn empty_set_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = COINS.replace("\"b\": -0.3", "\"b\": -0.9");
    let o = run(&["solve-pair", &write_spec(dir.path(), "e.json", &empty)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn iteration_cap_exits_4_with_result() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "c.json", COINS);
    let out = dir.path().join("out");
    let o = run(&["solve-pair", &spec, "--max-iters", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stdout(&o));
    assert!(out.join("result.json").exists());
    assert!(stdout(&o).contains("converged=false"));
}

#[test]
fn saved_solution_reproduces_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "c.json", COINS);
    let obs = dir.path().join("obs.txt");
    let lines: Vec<String> = (1..=3).flat_map(|a| (1..=3).map(move |b| format!("{a} {b}"))).collect();
    fs::write(&obs, lines.join("\n") + "\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["solve-pair", &spec, "--obs", obs.to_str().unwrap(), "--out", out.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let first: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let saved = out.join("result.json");
    let o = run(&["decide", "--solution", saved.to_str().unwrap(), "--obs", obs.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let second: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(first["decisions"], second["decisions"]);
    let ds = second["decisions"].as_array().unwrap();
    assert_eq!(ds.len(), 9);
    assert!(ds.iter().any(|d| d == "accept-x") && ds.iter().any(|d| d == "accept-y"));
}

#[test]
fn seed_determines_simulation() {
    let spec = config("gauss_simulate.json");
    let go = |seed: &str| stdout(&run(&["simulate", spec.to_str().unwrap(), "--seed", seed, "--reps", "3000", "--format", "json"]));
    let (a, b, c) = (go("5"), go("5"), go("6"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    for r in v["reports"].as_array().unwrap() {
        let rate = r["report"]["rate"].as_f64().unwrap();
        assert!(rate <= r["report"]["bound"].as_f64().unwrap());
    }
}

#[test]
fn aggregate_and_resolve_configs() {
    let o = run(&["aggregate", config("gauss_three.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("eps="));
    let o = run(&["aggregate", config("gauss_blocks.json").to_str().unwrap()]);
    assert!(stdout(&o).contains("two_stage_eps="));
    let o = run(&["aggregate", config("coin_union.json").to_str().unwrap(), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["eps"].as_f64().unwrap() - 2f64.sqrt() * 0.987_877f64.powi(100)).abs() < 5e-3);
    let o = run(&["resolve", config("functional_toy.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("eps=0.800000 rho=0.300000"), "{}", stdout(&o));
}

#[test]
fn help_exits_0() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clockgame"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes `name` with `edit` applied to its JSON into `dir`.
fn edited(name: &str, dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = read_json(&config(name));
    edit(&mut v);
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

#[test]
fn zero_cost_problem_converges_and_every_command_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("zero_cost.json");
    for cmd in ["solve-follower", "verify", "simulate", "sweep", "nash"] {
        let o = run(&[cmd], &cfg, dir.path());
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["converged"], true);
    assert_eq!(report["iterations"], 1);
    let value = read_json(&dir.path().join("value.json"));
    assert!(value.is_object());
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "nash");
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve-follower", "--max-iters", "1"], &config("scalar_pursuit.json"), dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["converged"], false);
    assert_eq!(report["iterations"], 1);
}

#[test]
fn scalar_baseline_prints_unit_solution() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["baseline"], &config("scalar_are.json"), dir.path());
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("P =\n1.0000000000\nK1 =\n1.0000000000\n"), "{stdout}");
    let sol = read_json(&dir.path().join("baseline.json"));
    assert_eq!(sol["p"][0][0][0], 1.0);
}

#[test]
fn malformed_config_names_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"game\": {\n    \"scalar_pursuit\": {,\n}\n").unwrap();
    let o = run(&["solve-follower"], &bad, dir.path());
    assert_eq!(code(&o), 1);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("bad.json:3:"), "{stderr}");

    let unknown = edited("zero_cost.json", dir.path(), |v| v["grid"]["nodes"] = 3.into());
    let o = run(&["solve-follower"], &unknown, dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
}

#[test]
fn verify_without_artifacts_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify"], &config("zero_cost.json"), dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
}

#[test]
fn verify_passes_on_solved_scalar_game() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("scalar_pursuit.json");
    assert_eq!(code(&run(&["solve-follower"], &cfg, dir.path())), 0);
    let o = run(&["verify"], &cfg, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rep = read_json(&dir.path().join("verify.json"));
    assert_eq!(rep["pass"], true);
}

fn manifest_files(dir: &Path) -> Vec<(String, String)> {
    let m = read_json(&dir.join("manifest.json"));
    m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["path"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn reruns_with_the_same_seed_are_identical() {
    let cfg = config("scalar_pursuit.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for d in &dirs {
        for cmd in ["solve-follower", "simulate"] {
            assert_eq!(code(&run(&[cmd, "--seed", "17"], &cfg, d.path())), 0);
        }
        files.push(manifest_files(d.path()));
    }
    assert!(!files[0].is_empty());
    assert_eq!(files[0], files[1]);
    for name in ["value.bin", "follower_policy.json", "trajectory.csv", "trajectory_events.json"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn constant_leader_sweep_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited("zero_cost.json", dir.path(), |v| v["sweep"]["target"] = "leader".into());
    assert_eq!(code(&run(&["sweep"], &cfg, dir.path())), 0);
    let text = std::fs::read_to_string(dir.path().join("sensitivity.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sigma_opp,distance,dwell,control_norm"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r[2] == 0.4 && r[3] == 0.5));
}

fn history(dir: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(dir.join("history.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn zero_outer_iterations_evaluate_the_initial_leader() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited("scalar_pursuit.json", dir.path(), |v| v["optimize"]["outer_iters"] = 0.into());
    assert_eq!(code(&run(&["optimize-leader"], &cfg, dir.path())), 0);
    let h = history(dir.path());
    assert_eq!(h.len(), 1);
    assert_eq!(&h[0][6..], ["0", "0", "1"]);
    let leader = read_json(&dir.path().join("leader.json"));
    assert_eq!(leader["xi"], serde_json::json!([0.0, 0.0, 1.0]));
}

#[test]
fn implicit_and_finite_difference_first_steps_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited("scalar_pursuit.json", dir.path(), |v| v["optimize"]["outer_iters"] = 1.into());
    let mut steps = Vec::new();
    for grad in ["implicit", "fd"] {
        let out = dir.path().join(grad);
        let o = run(&["optimize-leader", "--grad", grad], &cfg, &out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let h = history(&out);
        let xi = |r: &Vec<String>| r[6..].iter().map(|c| c.parse::<f64>().unwrap()).collect::<Vec<_>>();
        let (a, b) = (xi(&h[0]), xi(&h[1]));
        steps.push(a.iter().zip(&b).map(|(x, y)| y - x).collect::<Vec<f64>>());
    }
    let dot: f64 = steps[0].iter().zip(&steps[1]).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = dot / (norm(&steps[0]) * norm(&steps[1]));
    assert!(cos > 5f64.to_radians().cos(), "steps {steps:?}");
}

#[test]
fn damping_outside_unit_interval_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["nash", "--damping", "1.5"], &config("zero_cost.json"), dir.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

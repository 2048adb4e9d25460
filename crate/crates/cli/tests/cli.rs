use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const LINE: &str = r#"{
  "name": "line",
  "seed": 3,
  "classes": [{
    "name": "line",
    "model": {
      "modes": [
        {"name": "down", "field": [[{"coeff": -1.0, "exps": [1]}, {"coeff": -1.0, "exps": [0]}]], "K": 1.0, "M": 1.0, "lambda": 1.0, "delta_bar": 0.01},
        {"name": "up", "field": [[{"coeff": -1.0, "exps": [1]}, {"coeff": 1.0, "exps": [0]}]], "K": 1.0, "M": 1.0, "lambda": 1.0, "delta_bar": 0.01}
      ],
      "domain": {"lo": [-2.0], "hi": [2.0]}
    },
    "abstraction": {"eta": 0.2, "tau": 0.5},
    "fleet": {"N": 20, "init": {"kind": "uniform"}},
    "cycles": {"mode": "enumerate", "max_len": 8}
  }],
  "constraints": [
    {"name": "upper band", "region": {"box": {"lo": [0.6], "hi": ["inf"]}}, "fraction": 0.7, "kind": "max"},
    {"name": "mode up", "region": "all", "modes": [1], "fraction": 0.8, "kind": "max"}
  ],
  "synthesis": {"T": 5, "node_limit": 20000},
  "simulation": {"horizon": 12}
}"#;

fn fleetcount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleetcount")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_all_artifacts_and_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "line.json", LINE);
    let out = dir.path().join("out");
    let o = fleetcount(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}\n{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("verification passed"));
    for f in ["solution.json", "plan.csv", "counts.csv", "density.csv", "deviations.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let dev = std::fs::read_to_string(out.join("deviations.csv")).unwrap();
    assert!(dev.starts_with("step,max_deviation"));
    assert_eq!(dev.lines().count(), 1 + 13);
}

#[test]
fn simulate_reads_a_saved_solution() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "line.json", LINE);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(fleetcount(&["synthesize", "--config", &cfg, "--out-dir", out]).status.code(), Some(0));
    let o = fleetcount(&["simulate", "--config", &cfg, "--out-dir", out, "--sim-horizon", "30"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let counts = std::fs::read_to_string(Path::new(out).join("counts.csv")).unwrap();
    // one row per sampled step and constraint
    assert_eq!(counts.lines().count(), 1 + 30 * 2);
}

#[test]
fn abstract_prints_the_margin_ledger() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("abs");
    let o = fleetcount(&["abstract", "--preset", "numerical", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("4941 states"), "{text}");
    assert!(text.contains("eps* = 0.0983"), "{text}");
    let docs: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("abstraction.json")).unwrap()).unwrap();
    assert_eq!(docs.as_array().unwrap().len(), 1);
}

#[test]
fn failing_certificate_exits_with_two() {
    let dir = TempDir::new().unwrap();
    // M e^{-lambda tau} = 2 e^{-0.05} > 1
    let text = LINE.replace(r#""M": 1.0, "lambda": 1.0"#, r#""M": 2.0, "lambda": 0.1"#);
    let cfg = write_config(dir.path(), "bad.json", &text);
    let o = fleetcount(&["abstract", "--config", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
}

#[test]
fn malformed_config_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "broken.json", "{\"name\": ");
    let o = fleetcount(&["synthesize", "--config", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreachable_bound_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let text = LINE.replace(r#""modes": [1], "fraction": 0.8"#, r#""modes": [0, 1], "fraction": 0.0"#);
    let cfg = write_config(dir.path(), "empty.json", &text);
    let o = fleetcount(&["synthesize", "--config", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("no discrete solution"));
}

#[test]
fn mps_export_without_import_succeeds() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "line.json", LINE);
    let out = dir.path().join("mps");
    let o = fleetcount(&["synthesize", "--config", &cfg, "--solver", "mps", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let mps = std::fs::read_to_string(out.join("model.mps")).unwrap();
    assert!(mps.starts_with("NAME"));
    assert!(mps.contains("MARKER"));
}

#[test]
fn rejected_external_solution_is_inconclusive() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "line.json", LINE);
    let out = dir.path().join("ext");
    let out_s = out.to_str().unwrap();
    assert_eq!(fleetcount(&["synthesize", "--config", &cfg, "--solver", "mps", "--out-dir", out_s]).status.code(), Some(0));
    let mps = std::fs::read_to_string(out.join("model.mps")).unwrap();
    // the all-zero point loses the fleet mass, so validation must reject it
    let zeros: String = mps
        .lines()
        .skip_while(|l| !l.starts_with("COLUMNS"))
        .skip(1)
        .take_while(|l| l.starts_with(' '))
        .filter(|l| !l.contains("MARKER"))
        .filter_map(|l| l.split_whitespace().next())
        .map(|n| format!("{n} 0\n"))
        .collect();
    let sol = write_config(dir.path(), "zero.sol", &zeros);
    let o = fleetcount(&["synthesize", "--config", &cfg, "--solver", "mps", "--import", &sol, "--out-dir", out_s]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(!out.join("solution.json").exists());
}

#[test]
fn unknown_preset_is_rejected_by_the_parser() {
    let o = fleetcount(&["abstract", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

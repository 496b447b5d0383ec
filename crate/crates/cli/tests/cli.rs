use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_regionshop");

const SMALL: &str = r#"{"synth": {"city": {"grid": {"mode": "planar", "cell_size_km": 1.0, "n_rows": 8, "n_cols": 8},
  "n": 5, "m": 6, "l": 3}, "records": {"c_s": 40, "c_m": 30}},
  "hyperparams": {"max_iters": 300}, "evaluation": {"repeats": 2}}"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("REGIONSHOP_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes a small city into `dir`; returns the written run config.
fn synth(dir: &Path, seed: &str) -> PathBuf {
    let base = dir.join("base.json");
    std::fs::write(&base, SMALL).unwrap();
    ok(&[
        "synth",
        "--config",
        s(&base),
        "--output-dir",
        s(dir),
        "--seed",
        seed,
    ]);
    dir.join("run_config.json")
}

fn pipeline(dir: &Path, seed: &str) -> PathBuf {
    let cfg = synth(dir, seed);
    ok(&["extract", "--config", s(&cfg)]);
    ok(&["fit-gravity", "--config", s(&cfg)]);
    cfg
}

#[test]
fn full_pipeline_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = pipeline(dir, "5");
    ok(&["train", "--config", s(&cfg), "--seed", "5"]);
    ok(&["predict", "--config", s(&cfg), "--pgm"]);
    ok(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--seed",
        "5",
        "--repeats",
        "1",
        "--fractions",
        "0.8",
    ]);
    for name in [
        "browsing.csv",
        "towers.csv",
        "checkins.csv",
        "trips.csv",
        "truth.json",
        "p_s.csv",
        "p_m.csv",
        "r_s.csv",
        "r_s_mask.csv",
        "r_m.csv",
        "tower_coefficients.csv",
        "user_coefficients.csv",
        "top_shopping.csv",
        "top_mobility.csv",
        "gravity_taxi.json",
        "gravity_bus.json",
        "q_taxi.csv",
        "q_bus.csv",
        "w_interaction.csv",
        "model.json",
        "loss_trace.csv",
        "report.json",
        "report.txt",
        "lifestyle_top_categories.csv",
        "heatmaps/shopping_pattern_00.csv",
        "heatmaps/shopping_pattern_04.pgm",
    ] {
        assert!(dir.join(name).is_file(), "missing {name}");
    }
    let trace = std::fs::read_to_string(dir.join("loss_trace.csv")).unwrap();
    let losses: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(losses.len() > 1);
    assert!(losses.windows(2).all(|w| w[1] < w[0]));
    let leftovers: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn train_and_evaluate_require_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = pipeline(tmp.path(), "1");
    for cmd in ["train", "evaluate"] {
        let out = run(&[cmd, "--config", s(&cfg)]);
        assert_eq!(out.status.code(), Some(1), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    }
}

#[test]
fn missing_tower_is_reported_by_id() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = synth(dir, "2");
    let towers = std::fs::read_to_string(dir.join("towers.csv")).unwrap();
    let mut lines: Vec<&str> = towers.lines().collect();
    let dropped = lines.remove(1).split(',').next().unwrap().to_string();
    std::fs::write(dir.join("towers.csv"), lines.join("\n") + "\n").unwrap();
    let out = run(&["extract", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&dropped));
}

#[test]
fn malformed_trip_row_names_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = synth(dir, "3");
    let trips = std::fs::read_to_string(dir.join("trips.csv")).unwrap();
    let mut lines: Vec<String> = trips.lines().map(String::from).collect();
    lines[3] = "taxi,not-a-number,1,2,3".into();
    std::fs::write(dir.join("trips.csv"), lines.join("\n") + "\n").unwrap();
    let out = run(&["fit-gravity", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trips.csv:4"));
}

#[test]
fn predict_writes_one_heatmap_per_pattern() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg_path = dir.join("cfg.json");
    std::fs::write(
        &cfg_path,
        r#"{"grid": {"mode": "planar", "cell_size_km": 1.0, "n_rows": 2, "n_cols": 2}, "output_dir": "."}"#,
    )
    .unwrap();
    std::fs::write(dir.join("r_s.csv"), "region,0,1\n0,1,0\n1,0,0\n2,0,0\n3,0,2\n").unwrap();
    std::fs::write(
        dir.join("r_s_mask.csv"),
        "region,0,1\n0,1,1\n1,0,0\n2,0,0\n3,1,1\n",
    )
    .unwrap();
    let model = r#"{"dims": {"r": 4, "n": 2, "m": 1, "l": 1},
      "r_l": [1, 2, 3, 4], "v1": [0.5, 0.25], "v2": [1],
      "shop_scale": 2, "mob_scale": 1,
      "hyperparams": {"l": 1, "lambda1": 1, "lambda2": 0.01, "alpha": 1, "max_iters": 10,
        "epsilon": 1e-9, "seed": 0, "gradient_mode": "exact"},
      "variant": "cmf", "final_loss": 0, "stop": "converged", "accepted_steps": 1}"#;
    std::fs::write(dir.join("model.json"), model).unwrap();
    ok(&["predict", "--config", s(&cfg_path)]);
    let maps: Vec<_> = std::fs::read_dir(dir.join("heatmaps")).unwrap().collect();
    assert_eq!(maps.len(), 2);
    let col0 = std::fs::read_to_string(dir.join("heatmaps/shopping_pattern_00.csv")).unwrap();
    let values: Vec<f64> = col0
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 4);
    assert_eq!(values[0], 1.0);
    assert!(values[1] > 0.0 && values[2] > values[1]);
}

#[test]
fn outputs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let cfg = pipeline(dir, "11");
        ok(&["train", "--config", s(&cfg), "--seed", "11"]);
    }
    for name in [
        "trips.csv",
        "r_s.csv",
        "r_m.csv",
        "w_interaction.csv",
        "model.json",
        "loss_trace.csv",
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn evaluate_report_covers_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = pipeline(dir, "4");
    ok(&["evaluate", "--config", s(&cfg), "--seed", "4"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["means"].as_array().unwrap().len(), 8);
    assert_eq!(report["cells"].as_array().unwrap().len(), 16);
    let table = std::fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(table.contains("CMF + I") && table.contains("Total"));
}

#[test]
fn output_dir_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("from_env");
    let flag_dir = tmp.path().join("from_flag");
    let base = tmp.path().join("base.json");
    std::fs::write(&base, SMALL).unwrap();
    let status = Command::new(BIN)
        .args(["synth", "--config", s(&base), "--seed", "1"])
        .env("REGIONSHOP_OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(env_dir.join("trips.csv").is_file());
    let status = Command::new(BIN)
        .args([
            "synth",
            "--config",
            s(&base),
            "--seed",
            "1",
            "--output-dir",
            s(&flag_dir),
        ])
        .env("REGIONSHOP_OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(flag_dir.join("trips.csv").is_file());
}

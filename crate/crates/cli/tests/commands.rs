use std::path::Path;
use std::process::{Command, Output};

use atom_core::sim::{parse_metrics_csv, ScenarioConfig, METRICS_FILE};

fn atom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atom"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = atom(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_then_recompute_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&[
        "simulate",
        "--scenario",
        "doorway",
        "--rounds",
        "1",
        "--seed",
        "4",
        "--out",
        s(&run),
    ]);
    for f in [METRICS_FILE, "steps.jsonl", "rounds.jsonl", "config.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let cfg = ScenarioConfig::load(&run.join("config.json")).unwrap();
    assert_eq!((cfg.rounds, cfg.seed), (1, 4));

    let csv = dir.path().join("again.csv");
    ok(&["metrics", "--in", s(&run), "--csv", s(&csv)]);
    let written =
        parse_metrics_csv(&std::fs::read_to_string(run.join(METRICS_FILE)).unwrap()).unwrap();
    let again = parse_metrics_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(written.len(), 1);
    assert_eq!(written[0].time_to_goal, again[0].time_to_goal);
    assert!((written[0].detour - again[0].detour).abs() <= 1e-9);

    let svg = dir.path().join("trend.svg");
    ok(&["plot", "--in", s(&run), "--out", s(&svg)]);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn compare_runs_every_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("doorway.json");
    let cfg = ScenarioConfig::preset("doorway").unwrap().with_rounds(1);
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = dir.path().join("cmp");
    ok(&["compare", "--configs", s(&cfg_path), "--out", s(&out)]);
    let all =
        parse_metrics_csv(&std::fs::read_to_string(out.join("compare.csv")).unwrap()).unwrap();
    let mut kinds: Vec<_> = all.iter().map(|r| r.predictor.as_str()).collect();
    kinds.sort();
    assert_eq!(kinds, ["atom", "cv", "sf"]);
    assert!(out.join("doorway.svg").exists());
    assert!(out.join("doorway-sf").join(METRICS_FILE).exists());
}

#[test]
fn scenario_prints_a_loadable_config() {
    let text = ok(&["scenario", "corridor"]);
    assert_eq!(
        ScenarioConfig::from_json(&text).unwrap(),
        ScenarioConfig::preset("corridor").unwrap()
    );
}

#[test]
fn bad_invocations_fail() {
    assert!(!atom(&["simulate"]).status.success());
    assert!(!atom(&["simulate", "--scenario", "nowhere"])
        .status
        .success());
    assert!(!atom(&["scenario", "nowhere"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    assert!(!atom(&[
        "metrics",
        "--in",
        s(dir.path()),
        "--csv",
        s(&dir.path().join("x.csv"))
    ])
    .status
    .success());
}

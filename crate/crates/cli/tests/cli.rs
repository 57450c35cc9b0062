use std::path::Path;
use std::process::{Command, Output};

fn qre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qre"))
        .args(args)
        .env("QRE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn error_json(o: &Output) -> serde_json::Value {
    assert!(!o.status.success());
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("not JSON ({e}): {text}"))
}

#[test]
fn solve_lists_three_equilibria() {
    let out = stdout(&qre(&["solve", "--game", "battle_of_sexes", "--beta", "5,5"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(
        lines[0],
        "beta_0,beta_1,branch_id,q_0_0,q_0_1,q_1_0,q_1_1,eu_0,eu_1,fold_indicator"
    );
    assert_eq!(lines.len(), 4);
}

#[test]
fn one_point_sweep_matches_solve() {
    let solve = stdout(&qre(&["solve", "--game", "battle_of_sexes", "--beta", "5,5"]));
    let sweep = stdout(&qre(&[
        "sweep",
        "--game",
        "battle_of_sexes",
        "--beta-min",
        "5,5",
        "--beta-max",
        "5,5",
        "--points",
        "1,1",
    ]));
    assert_eq!(solve, sweep);
}

#[test]
fn compare_writes_fifty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("welfare.csv");
    let p = path.to_str().unwrap();
    let args = [
        "compare",
        "--game",
        "battle_of_sexes_negated",
        "--beta",
        "4,4",
        "--start-branch",
        "min-welfare",
        "--delta",
        "0.05",
        "--gamma",
        "0.01:2.0:50",
        "--output",
        p,
    ];
    let o = qre(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "gamma,Q_anarchy,Q_socialism,Q_market");
    assert_eq!(lines.len(), 51);

    // Refuses to clobber without --force, and reruns are byte-identical.
    let again = qre(&args);
    assert_eq!(error_json(&again)["error"], "io");
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(qre(&forced).status.success());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn trace_reports_jump() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let o = qre(&[
        "trace",
        "--game",
        "battle_of_sexes",
        "--waypoints",
        "5,5;0,5;5,5",
        "--step",
        "0.05",
        "--start-branch",
        "max-eu:0",
        "--output",
        path.to_str().unwrap(),
    ]);
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(summary["steps"], 201);
    assert_eq!(summary["jumps"], 1);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("t,beta_0,beta_1,branch_id,"));
    assert!(text
        .lines()
        .next()
        .unwrap()
        .ends_with("fold_indicator,jump_flag,dbeta_0,dbeta_1"));
}

#[test]
fn procedure_and_pareto_path_run() {
    let o = qre(&[
        "procedure",
        "--game",
        "battle_of_sexes_negated",
        "--beta",
        "4,4",
        "--start-branch",
        "min-welfare",
        "--procedure",
        "socialism",
        "--delta",
        "0.05",
        "--gamma",
        "0.5",
    ]);
    assert!(o.status.success());
    let summary: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert!(summary["Q"].as_f64().unwrap().is_finite());

    let out = stdout(&qre(&[
        "pareto-path",
        "--game",
        "battle_of_sexes_negated",
        "--beta",
        "4,4",
        "--start-branch",
        "min-welfare",
        "--delta",
        "0.05",
    ]));
    assert!(out.lines().count() > 2);
}

#[test]
fn config_file_supplies_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"game": "battle_of_sexes", "betas": [0, 0]}"#).unwrap();
    let out = stdout(&qre(&["solve", "--config", cfg.to_str().unwrap()]));
    assert_eq!(out.lines().count(), 2);

    std::fs::write(&cfg, r#"{"game": "battle_of_sexes", "betas": [0, 0], "colour": 1}"#).unwrap();
    assert_eq!(
        error_json(&qre(&["solve", "--config", cfg.to_str().unwrap()]))["error"],
        "config"
    );
}

#[test]
fn game_file_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let game = dir.path().join("g.json");
    std::fs::write(
        &game,
        r#"{"players":["Row","Column"],"strategies":[["a","b"],["c","d"]],
            "utilities":[[[2,0,1],[0,1]],[[1,0],[0,2]]]}"#,
    )
    .unwrap();
    let err = error_json(&qre(&["solve", "--game", game.to_str().unwrap(), "--beta", "1,1"]));
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("Row"));
}

#[test]
fn usage_errors_are_json() {
    assert_eq!(error_json(&qre(&["frobnicate"]))["error"], "usage");
    assert_eq!(
        error_json(&qre(&["solve", "--game", "battle_of_sexes", "--beta", "x"]))["error"],
        "usage"
    );
    assert_eq!(
        error_json(&qre(&["solve", "--game", "battle_of_sexes", "--beta", "1,2,3"]))["error"],
        "config"
    );
    assert!(!Path::new("never-written.csv").exists());
}

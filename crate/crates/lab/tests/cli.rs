use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strategic-lab"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "minrisk",
        "--scenario",
        "identity_d3",
        "--seed",
        "11",
        "--reps",
        "2",
        "--budget",
        "200",
        "--init-samples",
        "5000",
        "--out",
        "r.csv",
    ];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&args, b.path()).status.success());
    for name in ["r.csv", "r.csv.trace.csv", "r.csv.manifest.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn different_seeds_give_different_rows() {
    let dir = tempfile::tempdir().unwrap();
    for seed in ["1", "2"] {
        let out = format!("s{seed}.csv");
        let res = run(
            &[
                "evaluate",
                "--scenario",
                "car_insurance",
                "--rule",
                "0,1,0,0",
                "--seed",
                seed,
                "--out",
                &out,
            ],
            dir.path(),
        );
        assert!(res.status.success(), "{}", stderr(&res));
    }
    let a = std::fs::read_to_string(dir.path().join("s1.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("s2.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn manifest_describes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(
        &[
            "alg1",
            "--scenario",
            "car_insurance",
            "--reps",
            "2",
            "--oracle",
            "--out",
            "a.json",
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert!(res.status.success(), "{}", stderr(&res));
    let manifest: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("a.json.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["output_schema_version"], 1);
    assert_eq!(manifest["format"], "json");
    assert_eq!(manifest["config"]["oracle"], true);
    assert_eq!(manifest["config"]["params"]["algorithm"], "alg1");
    assert_eq!(
        manifest["config"]["params"]["lambda_max_source"],
        "scenario"
    );
    let columns: Vec<&str> = manifest["columns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    assert!(columns.contains(&"oracle_regret"));

    let rows: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row["rounds_used"], 4);
        assert_eq!(row["rule"].as_array().unwrap().len(), 4);
        assert!(row["oracle_regret"].as_f64().unwrap() < 0.1);
    }
}

#[test]
fn csv_header_matches_manifest_columns() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(
        &["alg3", "--scenario", "weak_direction", "--out", "r.csv"],
        dir.path(),
    );
    assert!(res.status.success(), "{}", stderr(&res));
    let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let manifest: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("r.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    let columns: Vec<&str> = manifest["columns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    assert_eq!(header, columns);
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn scenario_files_load_like_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("world.toml"),
        "schema = 1\n\
         dim_total = 3\n\
         visible_mask = [1, 1, 1]\n\
         mean = [0.0, 0.0, 0.0]\n\
         second_moment = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]\n\
         dist_kind = \"gaussian\"\n\
         effort_matrix = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]\n\
         true_params = [1.0, 0.0, 0.0]\n\
         noise_sigma = 0.1\n\
         gaming_fraction = 1.0\n",
    )
    .unwrap();
    let base = [
        "evaluate", "--rule", "1,0,0", "--seed", "3", "--oracle", "--format", "csv",
    ];
    let from_file = run(
        &[&base[..], &["--scenario", "world.toml", "--out", "f.csv"]].concat(),
        dir.path(),
    );
    assert!(from_file.status.success(), "{}", stderr(&from_file));
    let from_fixture = run(
        &[&base[..], &["--scenario", "identity_d3", "--out", "g.csv"]].concat(),
        dir.path(),
    );
    assert!(from_fixture.status.success());
    let f = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let g = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    assert_eq!(f, g);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "decompose",
            "--scenario",
            "car_insurance",
            "--rule",
            "0,1,0,0",
        ],
        vec!["alg3", "--scenario", "car_insurance"],
        vec![
            "evaluate",
            "--scenario",
            "car_insurance",
            "--rule",
            "0,0,0,1",
        ],
        vec!["evaluate", "--scenario", "car_insurance", "--rule", "1,0"],
        vec!["evaluate", "--scenario", "no_such_world", "--rule", "1"],
    ];
    for args in cases {
        let res = run(&[&args[..], &["--out", "x.csv"]].concat(), dir.path());
        assert_eq!(res.status.code(), Some(2), "{args:?}: {}", stderr(&res));
        assert!(!stderr(&res).is_empty());
    }
    let bad_file = dir.path().join("bad.toml");
    std::fs::write(
        &bad_file,
        "schema = 1\ndim_total = 2\nvisible_mask = [1, 1]\n",
    )
    .unwrap();
    let res = run(
        &[
            "evaluate",
            "--scenario",
            "bad.toml",
            "--rule",
            "1,0",
            "--out",
            "x.csv",
        ],
        dir.path(),
    );
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(
        &[
            "evaluate",
            "--scenario",
            "identity_d3",
            "--rule",
            "1,0,0",
            "--out",
            "missing/dir/x.csv",
        ],
        dir.path(),
    );
    assert_eq!(res.status.code(), Some(3), "{}", stderr(&res));
}

#[test]
fn decompose_reports_the_split_under_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(
        &[
            "decompose",
            "--scenario",
            "car_insurance",
            "--rule",
            "0,1,1,0",
            "--oracle",
            "--out",
            "d.json",
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert!(res.status.success(), "{}", stderr(&res));
    let rows: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
    let row = &rows[0];
    let total = row["oracle_total_risk"].as_f64().unwrap();
    let parts: f64 = [
        "oracle_static_risk",
        "oracle_gaming_risk",
        "oracle_offset_c",
    ]
    .iter()
    .map(|k| row[*k].as_f64().unwrap())
    .sum();
    assert!((total - parts).abs() < 1e-12);
    assert!(row["oracle_gaming_risk"].as_f64().unwrap() > 0.0);
    assert!((total - row["oracle_risk"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn sweep_emits_one_row_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(
        &[
            "sweep",
            "--scenario",
            "car_insurance",
            "--alphas",
            "0,0.5,1",
            "--budget",
            "100",
            "--init-samples",
            "5000",
            "--out",
            "s.csv",
        ],
        dir.path(),
    );
    assert!(res.status.success(), "{}", stderr(&res));
    let mut reader = csv::Reader::from_path(dir.path().join("s.csv")).unwrap();
    let alpha_col = reader
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "alpha")
        .unwrap();
    let alphas: Vec<String> = reader
        .records()
        .map(|r| r.unwrap()[alpha_col].to_string())
        .collect();
    assert_eq!(alphas, ["0", "0.5", "1"]);
    let trace = std::fs::read_to_string(dir.path().join("s.csv.trace.csv")).unwrap();
    assert!(trace.lines().count() > 100);
}

#[test]
fn timing_adds_wall_time_column() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(
        &[
            "evaluate",
            "--scenario",
            "identity_d3",
            "--rule",
            "1,0,0",
            "--timing",
            "--out",
            "t.csv",
        ],
        dir.path(),
    );
    assert!(res.status.success());
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(text.lines().next().unwrap().ends_with("wall_time_ms"));
}

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn polopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polopt"))
        .args(args)
        .env_remove("POLOPT_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `data.csv` and `run.conf` into a fresh directory.
fn workspace(csv: &str, conf: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data.csv"), csv).unwrap();
    let conf_path = dir.path().join("run.conf");
    fs::write(&conf_path, format!("data = data.csv\n{conf}")).unwrap();
    (dir, conf_path)
}

const RULE_CSV: &str = "\
y,treat,age,edu,tau
1.0,1,25,10,1.5
2.0,0,31,12,-0.5
0.5,1,44,16,3.0
3.0,0,52,8,2.0
1.5,1,38,14,0.75
0.0,0,41,12,-1.25
2.5,1,47,11,4.0
1.0,0,29,13,0.25
2.0,1,60,9,1.0
0.5,0,35,16,2.5
";

const RULE_CONF: &str = "\
outcome = y
treatment = treat
tau = tau
covariates = age, edu
select = age
pair = age, edu
menu_fixed = age=35
menu_varying = edu
";

#[test]
fn table_one_fixture_exact() {
    let out_dir = tempfile::tempdir().unwrap();
    let out = polopt(&[
        "--config",
        s(&common::fixture("table1.conf")),
        "--out",
        s(out_dir.path()),
        "welfare",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let w = json(&out_dir.path().join("welfare.json"));
    assert_eq!(w["actual"]["total_welfare"], 10);
    assert_eq!(w["actual"]["w_star"], 26);
    assert_eq!(w["actual"]["regret"], 16);
    assert_eq!(w["optimal"]["n_treated"], 4);
    assert_eq!(w["tau_source"], "tau");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("W=10 W*=26 regret=16"), "{stdout}");
}

#[test]
fn all_negative_effects_give_zero_optimum() {
    let out_dir = tempfile::tempdir().unwrap();
    let (_d, conf) = workspace(
        &fs::read_to_string(common::fixture("negative.csv")).unwrap(),
        "outcome = y\ntreatment = treat\ntau = tau\n",
    );
    let out = polopt(&["--config", s(&conf), "--out", s(out_dir.path()), "welfare"]);
    assert_eq!(code(&out), 0);
    let w = json(&out_dir.path().join("welfare.json"));
    assert_eq!(w["actual"]["w_star"], 0);
    assert_eq!(w["optimal"]["n_treated"], 0);
}

#[test]
fn missing_data_file_exits_2() {
    let (dir, conf) = workspace("", "outcome = y\ntreatment = treat\n");
    fs::remove_file(dir.path().join("data.csv")).unwrap();
    let out = polopt(&["--config", s(&conf), "estimate"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_errors_exit_2() {
    let (_d, conf) = workspace(RULE_CSV, "outcome = y\ntreatment = treat\nbogus = 1\n");
    assert_eq!(code(&polopt(&["--config", s(&conf), "welfare"])), 2);
    let (_d, conf) = workspace(RULE_CSV, RULE_CONF);
    assert_eq!(
        code(&polopt(&[
            "--config",
            s(&conf),
            "search",
            "--vars",
            "height"
        ])),
        2
    );
    let (_d, conf) = workspace(
        "y,treat,tau\n1,2,0\n",
        "outcome = y\ntreatment = treat\ntau = tau\n",
    );
    assert_eq!(code(&polopt(&["--config", s(&conf), "welfare"])), 2);
}

#[test]
fn infeasible_search_exits_4_and_still_writes() {
    let (dir, conf) = workspace(RULE_CSV, RULE_CONF);
    let out = polopt(&[
        "--config",
        s(&conf),
        "--min-share",
        "1.0",
        "search",
        "--vars",
        "age",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&dir.path().join("out/search_age.json"));
    assert!(doc["best"].is_null());
    assert_eq!(doc["curve"].as_array().unwrap().len(), 10);
    assert!(dir.path().join("out/curve_age.csv").exists());
}

#[test]
fn constant_boundary_variable_exits_3() {
    let csv = "y,treat,a,b,tau\n1,1,5,1,1\n2,0,5,2,-1\n3,1,5,3,2\n";
    let (_d, conf) = workspace(
        csv,
        "outcome = y\ntreatment = treat\ncovariates = a, b\ntau = tau\n",
    );
    let out = polopt(&[
        "--config",
        s(&conf),
        "boundary",
        "--vars",
        "a,b",
        "--k",
        "1",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn estimation_failure_exits_3() {
    let csv = "y,treat,x\n1,1,0\n2,0,1\n3,0,2\n";
    let (_d, conf) = workspace(
        csv,
        "outcome = y\ntreatment = treat\ncovariates = x\nmodel = x\n",
    );
    assert_eq!(code(&polopt(&["--config", s(&conf), "estimate"])), 3);
}

#[test]
fn search_outputs_and_summary() {
    let (dir, conf) = workspace(RULE_CSV, RULE_CONF);
    let out = polopt(&["--config", s(&conf), "search", "--vars", "age,edu"]);
    assert_eq!(code(&out), 0);
    let doc = json(&dir.path().join("out/search_age_edu.json"));
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["selection_vars"], serde_json::json!(["age", "edu"]));
    assert_eq!(doc["objective"], "average_welfare");
    let curve = doc["curve"].as_array().unwrap();
    assert_eq!(curve.len(), 10 * 8);
    assert_eq!(curve[0]["c"], serde_json::json!([25, 8]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("angle_solution="), "{stdout}");
    let csv = fs::read_to_string(dir.path().join("out/curve_age_edu.csv")).unwrap();
    assert!(
        csv.starts_with("c_age,c_edu,total_welfare,avg_welfare,n_treated,share_treated,feasible\n")
    );
    assert_eq!(csv.lines().count(), 81);
}

#[test]
fn flags_override_config() {
    let (dir, conf) = workspace(RULE_CSV, &format!("{RULE_CONF}objective = avg\n"));
    let out = polopt(&[
        "--config",
        s(&conf),
        "--objective",
        "total",
        "search",
        "--vars",
        "age",
    ]);
    assert_eq!(code(&out), 0);
    let doc = json(&dir.path().join("out/search_age.json"));
    assert_eq!(doc["objective"], "total_welfare");
    // total welfare under the screened rule peaks at the smallest threshold
    assert_eq!(doc["best"]["c"], 25);
}

#[test]
fn unscreened_rule_flag() {
    let (dir, conf) = workspace(RULE_CSV, RULE_CONF);
    let out = polopt(&[
        "--config",
        s(&conf),
        "--no-star-screen",
        "--objective",
        "total",
        "search",
        "--vars",
        "age",
    ]);
    assert_eq!(code(&out), 0);
    let doc = json(&dir.path().join("out/search_age.json"));
    assert_eq!(doc["star_screen"], false);
    // everyone at the lowest threshold: the plain sum of the effects
    assert_eq!(doc["curve"][0]["report"]["total_welfare"], 13.25);
}

#[test]
fn menu_rows_match_independent_welfare_runs() {
    let (dir, conf) = workspace(RULE_CSV, RULE_CONF);
    let out = polopt(&["--config", s(&conf), "menu"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let menu = json(&dir.path().join("out/menu_age_edu.json"));
    assert_eq!(menu["fixed"]["threshold"], 35);
    let rows = menu["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);

    let mut lines = RULE_CSV.lines();
    let header = lines.next().unwrap();
    let units: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    for row in rows {
        let c = row["c"].as_f64().unwrap();
        let mut csv = format!("{header}\n");
        for u in &units {
            let treat = u[4] > 0.0 && u[2] >= 35.0 && u[3] >= c;
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                u[0],
                u8::from(treat),
                u[2],
                u[3],
                u[4]
            ));
        }
        let (wdir, wconf) = workspace(&csv, RULE_CONF);
        assert_eq!(code(&polopt(&["--config", s(&wconf), "welfare"])), 0);
        let w = json(&wdir.path().join("out/welfare.json"));
        assert_eq!(w["actual"], row["report"], "edu >= {c}");
    }
}

#[test]
fn single_point_varying_grid_gives_one_row() {
    let csv = "y,treat,age,edu,tau\n1,1,30,12,1\n2,0,40,12,2\n3,1,50,12,-1\n";
    let (dir, conf) = workspace(csv, RULE_CONF);
    assert_eq!(
        code(&polopt(&[
            "--config",
            s(&conf),
            "menu",
            "--fixed",
            "age=35",
            "--varying",
            "edu"
        ])),
        0
    );
    let menu = json(&dir.path().join("out/menu_age_edu.json"));
    assert_eq!(menu["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn nsw_estimate_outputs() {
    let out_dir = tempfile::tempdir().unwrap();
    let out = polopt(&[
        "--config",
        s(&common::nsw_config()),
        "--out",
        s(out_dir.path()),
        "estimate",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cate = json(&out_dir.path().join("cate.json"));
    assert_eq!(cate["n"], 445);
    assert_eq!(cate["n_treated"], 185);
    assert_eq!(cate["ate_dim"].as_f64().unwrap(), 1.794342385);
    assert_eq!(cate["tau"].as_array().unwrap().len(), 445);
    assert_eq!(cate["arms"][0]["arm"], "treated");
    let hist = json(&out_dir.path().join("hist.json"));
    let total: u64 = hist["counts_all"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, 445);
}

#[test]
fn nsw_intercept_only_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("io.conf");
    fs::write(
        &conf,
        format!(
            "data = {}\noutcome = re78\ntreatment = treat\ncovariates = age\nmodel =\n",
            common::nsw_path().display()
        ),
    )
    .unwrap();
    assert_eq!(code(&polopt(&["--config", s(&conf), "estimate"])), 0);
    let cate = json(&dir.path().join("out/cate.json"));
    let (ra, dim) = (
        cate["ate_ra"].as_f64().unwrap(),
        cate["ate_dim"].as_f64().unwrap(),
    );
    assert!((ra - dim).abs() <= 1e-10, "{ra} vs {dim}");
}

#[test]
fn nsw_welfare_regret_non_negative() {
    let out_dir = tempfile::tempdir().unwrap();
    let out = polopt(&[
        "--config",
        s(&common::nsw_config()),
        "--out",
        s(out_dir.path()),
        "welfare",
    ]);
    assert_eq!(code(&out), 0);
    let w = json(&out_dir.path().join("welfare.json"));
    let regret = w["actual"]["regret"].as_f64().unwrap();
    assert!(regret >= 0.0);
    // golden values from the first verified run, cross-checked independently
    assert_eq!(w["actual"]["total_welfare"].as_f64().unwrap(), 326.3410864);
    assert_eq!(w["actual"]["w_star"].as_f64().unwrap(), 763.5580333);
    assert_eq!(w["optimal"]["n_treated"], 343);
}

#[test]
fn nsw_boundary_structure() {
    let out_dir = tempfile::tempdir().unwrap();
    let out = polopt(&[
        "--config",
        s(&common::nsw_config()),
        "--out",
        s(out_dir.path()),
        "boundary",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let b = json(&out_dir.path().join("boundary.json"));
    assert_eq!(b["vars"], serde_json::json!(["age", "re75"]));
    assert_eq!(b["grid"]["k"], 21);
    let xt = b["grid"]["x_ticks"].as_array().unwrap();
    let zt = b["grid"]["z_ticks"].as_array().unwrap();
    assert_eq!((xt.len(), zt.len()), (100, 100));
    let (x0, x1) = (xt[0].as_f64().unwrap(), xt[99].as_f64().unwrap());
    let (z0, z1) = (zt[0].as_f64().unwrap(), zt[99].as_f64().unwrap());
    let segs = b["polyline"]["segments"].as_array().unwrap();
    assert!(!segs.is_empty());
    for p in segs.iter().flat_map(|s| s.as_array().unwrap()) {
        let (x, z) = (p[0].as_f64().unwrap(), p[1].as_f64().unwrap());
        assert!(x >= x0 && x <= x1 && z >= z0 && z <= z1);
    }
    assert_eq!(b["scatter"]["t_star"].as_array().unwrap().len(), 445);
}

#[test]
fn data_dir_environment_variable() {
    let data_dir = tempfile::tempdir().unwrap();
    fs::write(data_dir.path().join("rules.csv"), RULE_CSV).unwrap();
    let conf_dir = tempfile::tempdir().unwrap();
    let conf = conf_dir.path().join("run.conf");
    fs::write(&conf, format!("data = rules.csv\n{RULE_CONF}")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_polopt"))
        .args(["--config", s(&conf), "welfare"])
        .env("POLOPT_DATA_DIR", data_dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&polopt(&["--config", s(&conf), "welfare"])), 2);
}

#[test]
fn manifest_detects_input_change() {
    let (dir, conf) = workspace(RULE_CSV, RULE_CONF);
    assert_eq!(code(&polopt(&["--config", s(&conf), "welfare"])), 0);
    let manifest = dir.path().join("out/manifest_welfare.json");
    let m = json(&manifest);
    assert_eq!(m["command"], "welfare");
    assert_eq!(m["input"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(
        m["steps"][0]["outputs"],
        serde_json::json!(["welfare.json"])
    );

    let verify = |conf: &Path| polopt(&["--config", s(conf), "verify", "--manifest", s(&manifest)]);
    assert_eq!(code(&verify(&conf)), 0);
    fs::write(
        dir.path().join("data.csv"),
        RULE_CSV.replace("2.5,1,47", "2.6,1,47"),
    )
    .unwrap();
    let out = verify(&conf);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum mismatch"));
}

#[test]
fn all_command_writes_every_artifact() {
    let (dir, conf) = workspace(
        RULE_CSV,
        &format!("{RULE_CONF}boundary_k = 3\nboundary_resolution = 10\n"),
    );
    let out = polopt(&["--config", s(&conf), "all"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "welfare.json",
        "search_age.json",
        "curve_age.csv",
        "search_age_edu.json",
        "curve_age_edu.csv",
        "menu_age_edu.json",
        "menu_age_edu.csv",
        "boundary.json",
        "manifest.json",
    ] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    // effects come from the tau column, so nothing is estimated
    assert!(!dir.path().join("out/cate.json").exists());
    let m = json(&dir.path().join("out/manifest.json"));
    assert_eq!(m["steps"].as_array().unwrap().len(), 5);
}

use std::process::{Command, Output};

fn odeftc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odeftc")).args(args).env_remove("ODEFTC_OUT_DIR").output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn graph_info_path3() {
    let out = odeftc(&["graph-info", "--graph", "path:3"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("lambda_G     1.000000"), "{}", stdout(&out));
    let out = odeftc(&["graph-info", "--scenario", "paper-lti"]);
    assert!(stdout(&out).contains("lambda_G     0.267949"));
    assert_eq!(odeftc(&["graph-info", "--graph", "star:3"]).status.code(), Some(1));
}

#[test]
fn verify_succeeds() {
    let out = odeftc(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(!stdout(&out).contains("FAIL"));
}

#[test]
fn consensus_settles_before_bound() {
    let out = odeftc(&["consensus", "--scenario", "paper-lti", "--stride", "10000"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("before T_max"));
}

#[test]
fn bounds_text_and_time_varying_note() {
    let out = odeftc(&["bounds", "--scenario", "paper-ltv", "--lambda-g", "0.2679"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("139.97"), "{text}");
    assert!(text.contains("n/a (time-varying scenario)"));
    let out = odeftc(&["bounds", "--scenario", "/no/such/file.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_rejects_zero_realizations() {
    let dir = tempfile::tempdir().unwrap();
    let out = odeftc(&["simulate", "--scenario", "paper-ltv", "--realizations", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("realizations"));
}

#[test]
fn simulate_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = odeftc(&[
        "simulate", "--scenario", "paper-lti", "--realizations", "3", "--t-end", "0.05", "--stride", "100", "--kappa", "300",
        "--trace", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mse = std::fs::read_to_string(out_dir.join("mse.csv")).unwrap();
    let mut lines = mse.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,mse_central,mse_node_1,mse_node_2,mse_node_3,mse_node_4,mse_node_5,mse_node_6,mse_node_7"
    );
    // steps 0, 100, ..., 500
    assert_eq!(lines.count(), 6);
    let gap = std::fs::read_to_string(out_dir.join("cov_gap.csv")).unwrap();
    assert!(gap.starts_with("t,node,frob_gap\n"));
    assert_eq!(gap.lines().count(), 1 + 6 * 7);
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,x_1,x_2,x_3,x_4,central_1"));
    assert!(out_dir.join("mse.gp").exists());

    let manifest: toml::Table = std::fs::read_to_string(out_dir.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["subcommand"].as_str(), Some("simulate"));
    assert_eq!(manifest["config"]["kappa"].as_float(), Some(300.0));
    assert_eq!(manifest["config"]["realizations"].as_integer(), Some(3));
    let source = manifest["scenario_source"].as_str().unwrap();
    assert!(odeftc::Scenario::from_toml_str(source).is_ok());
}

#[test]
fn manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = odeftc(&[
        "simulate", "--scenario", "paper-ltv", "--realizations", "2", "--t-end", "0.02", "--seed", "5", "--out",
        first.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let manifest: toml::Table = std::fs::read_to_string(first.join("manifest.toml")).unwrap().parse().unwrap();
    let scenario_file = dir.path().join("scenario.toml");
    std::fs::write(&scenario_file, manifest["scenario_source"].as_str().unwrap()).unwrap();
    let second = dir.path().join("second");
    let command = manifest["reproduce"]
        .as_str()
        .unwrap()
        .replace("SCENARIO.toml", scenario_file.to_str().unwrap())
        .replace("DIR", second.to_str().unwrap());
    let args: Vec<&str> = command.split_whitespace().skip(1).collect();
    assert!(odeftc(&args).status.success());
    for file in ["mse.csv", "cov_gap.csv"] {
        assert_eq!(std::fs::read(first.join(file)).unwrap(), std::fs::read(second.join(file)).unwrap());
    }
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_odeftc"))
        .args(["simulate", "--scenario", "paper-ltv", "--realizations", "1", "--t-end", "0.01"])
        .env("ODEFTC_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("mse.csv").exists());
}

#[test]
fn invalid_scenario_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = odeftc::scenario::Scenario::builtin_source("paper-lti").unwrap().replace("gamma = 0.7", "gamma = 1.7");
    std::fs::write(&path, text).unwrap();
    let out = odeftc(&["bounds", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn scenarios_lists_and_prints_builtins() {
    let out = odeftc(&["scenarios"]);
    assert_eq!(stdout(&out), "paper-ltv\npaper-lti\n");
    let out = odeftc(&["scenarios", "paper-lti"]);
    assert!(stdout(&out).contains("[plant]"));
    assert_eq!(odeftc(&["scenarios", "nope"]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_two() {
    // a step far beyond the coupling's stability limit drives the covariances indefinite
    let dir = tempfile::tempdir().unwrap();
    let out = odeftc(&[
        "simulate", "--scenario", "paper-ltv", "--realizations", "1", "--step", "0.5", "--t-end", "50", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

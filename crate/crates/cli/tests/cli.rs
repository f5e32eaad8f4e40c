use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvd-nmpc"))
        .args(args)
        .env_remove("LVD_NMPC_OUT")
        .output()
        .unwrap()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios/gridsim")
        .join(name)
        .display()
        .to_string()
}

fn contents(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().into(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let o = bin(&[
            "simulate",
            "--scenario",
            &scenario("straight.toml"),
            "--method",
            "direct",
            "--trials",
            "2",
            "--seed",
            "4",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = contents(&dirs[0]);
    assert!(a.iter().any(|(p, _)| p == Path::new("trial_001.csv")));
    assert_eq!(a, contents(&dirs[1]));

    let report = tmp.path().join("report.json");
    let o = bin(&["evaluate", "--logs", tmp.path().to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["reports"][0]["method"], "direct");
    assert_eq!(json["reports"][0]["trials"], 4);

    let svg = tmp.path().join("t.svg");
    let log = dirs[0].join("trial_000.csv");
    let o = bin(&["plot", "--log", log.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn evaluate_on_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r.csv");
    let o = bin(&["evaluate", "--logs", tmp.path().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no runs found"));
}

#[test]
fn offline_eval_two_records() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    fs::write(&data, "t,x_est,y_est,x_gt,y_gt,v\n0.0,1.0,0.0,0.0,0.0,2.0\n0.1,0.0,1.0,0.0,0.0,1.0\n").unwrap();
    let out = tmp.path().join("r.json");
    let o = bin(&["offline-eval", "--dataset", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json["report"]["e_xy"], 1.5);
}

#[test]
fn offline_eval_rejects_unordered_time() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    fs::write(&data, "t,x_est,y_est,x_gt,y_gt,v\n0.1,1.0,0.0,0.0,0.0,2.0\n0.1,0.0,1.0,0.0,0.0,1.0\n").unwrap();
    let o = bin(&["offline-eval", "--dataset", data.to_str().unwrap(), "--out", "unused.json"]);
    assert!(!o.status.success());
}

#[test]
fn lvd_without_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&[
        "simulate",
        "--scenario",
        &scenario("straight.toml"),
        "--method",
        "lvd-nmpc",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn unknown_flag_and_missing_file_fail() {
    assert!(!bin(&["simulate", "--bogus"]).status.success());
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&[
        "simulate",
        "--scenario",
        "/nonexistent.toml",
        "--method",
        "direct",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonexistent.toml"));
}

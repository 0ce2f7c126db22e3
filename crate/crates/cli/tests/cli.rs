use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn sim(args: &[&str], workers: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edge-failover-sim"))
        .args(args)
        .env("EDGE_FAILOVER_WORKERS", workers.to_string())
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_into(scenario: &Path, dir: &Path, workers: usize) -> Output {
    sim(&["run", scenario.to_str().unwrap(), "--out", dir.to_str().unwrap()], workers)
}

fn write_scenario(dir: &TempDir, body: &str) -> PathBuf {
    let path = dir.path().join("scenario.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn golden_csv_matches() {
    let tmp = TempDir::new().unwrap();
    let out = run_into(&data("golden.toml"), tmp.path(), 2);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for policy in ["fodt", "cloud_assistant"] {
        let got = fs::read_to_string(tmp.path().join(format!("{policy}.csv"))).unwrap();
        let want = fs::read_to_string(data(&format!("golden_{policy}.csv"))).unwrap();
        assert_eq!(got, want, "{policy}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["complete"], true);
    assert_eq!(summary["runs"], 8);
    assert_eq!(summary["groups"].as_array().unwrap().len(), 4);
}

#[test]
fn reruns_are_identical_across_worker_counts() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert_eq!(code(&run_into(&data("golden.toml"), a.path(), 1)), 0);
    assert_eq!(code(&run_into(&data("golden.toml"), b.path(), 3)), 0);
    for file in ["fodt.csv", "cloud_assistant.csv"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap());
    }
}

#[test]
fn seed_and_policy_overrides() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("out");
    let out = sim(
        &["run", data("golden.toml").to_str().unwrap(), "--seed", "100", "--policy", "fodt", "--out", dir.to_str().unwrap()],
        1,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(!dir.join("cloud_assistant.csv").exists());
    let csv = fs::read_to_string(dir.join("fodt.csv")).unwrap();
    let seeds: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(seeds, ["100", "101", "100", "101"]);
}

#[test]
fn config_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    let missing = sim(&["run", "no/such/scenario.toml"], 1);
    assert_eq!(code(&missing), 1);

    let broken = write_scenario(&tmp, "name = \"x\"\nreplications = \n[axes]\nrho = [0.1]\n");
    let out = sim(&["run", broken.to_str().unwrap()], 1);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let empty = write_scenario(&tmp, "name = \"x\"\n[axes]\nrho = []\n");
    let out = sim(&["run", empty.to_str().unwrap()], 1);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("axes.rho"), "{}", stderr(&out));

    let invalid = write_scenario(&tmp, "name = \"x\"\n[axes]\nrho = [0.1]\n[config]\nhorizon = 0\n");
    assert_eq!(code(&sim(&["run", invalid.to_str().unwrap()], 1)), 1);

    assert_eq!(code(&sim(&["frobnicate"], 1)), 1);
    assert_eq!(code(&sim(&["sweep", "--rho", "0.8:0.1:0.1"], 1)), 1);
    assert_eq!(code(&sim(&["sweep", "--policy", "nope"], 1)), 1);
    assert_eq!(code(&sim(&["check-bounds", tmp.path().to_str().unwrap()], 1)), 1);
    assert_eq!(code(&sim(&["check-bounds", tmp.path().to_str().unwrap()], 0)), 1);
    assert_eq!(code(&sim(&["--help"], 1)), 0);
}

#[test]
fn unwritable_output_exits_2() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let out = run_into(&data("golden.toml"), &blocker.join("sub"), 1);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn check_bounds_reports_pass_and_violation() {
    let tmp = TempDir::new().unwrap();
    let calm = write_scenario(
        &tmp,
        "name = \"calm\"\nthreshold_ms = 1000.0\npolicies = [\"fodt\"]\n[axes]\nrho = [0.0]\nmu = [0.3]\n[config]\naps = 30\nhorizon = 80\n",
    );
    let calm_dir = tmp.path().join("calm");
    assert_eq!(code(&run_into(&calm, &calm_dir, 1)), 0);
    let out = sim(&["check-bounds", calm_dir.to_str().unwrap()], 1);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(calm_dir.join("bounds.json")).unwrap()).unwrap();
    assert_eq!(report["tally"]["runs"], 1);
    assert_eq!(report["runs"][0]["latency"], "pass");
    assert_eq!(report["runs"][0]["tolerance"], "pass");

    // Ten servers down and a 1 ms threshold: more failures than tolerated
    // and the threshold is crossed.
    let heavy = write_scenario(
        &tmp,
        "name = \"heavy\"\npolicies = [\"fodt\"]\n[axes]\nrho = [0.0]\nmu = [0.3]\n[config]\naps = 60\nhorizon = 80\nfailures = { kind = \"permanent\", count = 10, slot = 0 }\n",
    );
    let heavy_dir = tmp.path().join("heavy");
    assert_eq!(code(&run_into(&heavy, &heavy_dir, 1)), 0);
    let out = sim(&["check-bounds", heavy_dir.to_str().unwrap(), "--threshold-ms", "1"], 1);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(heavy_dir.join("bounds.json")).unwrap()).unwrap();
    assert_eq!(report["runs"][0]["tolerance"], "exceeded");
    assert_eq!(report["runs"][0]["failed"], 10);
}

#[test]
fn sweep_prints_one_row_per_point() {
    let out = sim(
        &["sweep", "--rho", "0.1:0.8:0.1", "--mu", "0.3", "--aps", "30", "--horizon", "60", "--replications", "1", "--policy", "fodt"],
        2,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "policy,rho,mu,m,seed,mean_delay_ms,convergence_count,convergence_ms,bound_flags");
    assert_eq!(lines.len(), 9);
    assert!(lines[8].starts_with("fodt,0.8,0.3,30,1,"));
}

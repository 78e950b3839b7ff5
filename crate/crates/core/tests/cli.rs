use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use tempfile::TempDir;

const SMOKE: &str = include_str!("../../../configs/smoke.json");

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedcp-sim"))
        .args(args)
        .env_remove("FEDCP_SIM_WORKERS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn smoke_run_writes_outputs_quickly() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let out = tmp.path().join("out");
    let start = Instant::now();
    let o = sim(&["run", "--config", &cfg, "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed().as_secs_f64() < 10.0);
    for f in ["rounds.csv", "clients.jsonl", "summary.json", "partition.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("t,n_selected,loss_bef,loss_aft,acc_mean,acc_std,acc_best,pir_mean\n"));

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds"], 3);
    assert_eq!(summary["config"]["training"]["batch_size"], 10);
    assert_eq!(summary["config"]["training"]["epochs"], 1);
    assert!(summary.get("wall_time").is_none());
}

#[test]
fn rerun_is_byte_identical_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(sim(&["run", "--config", &cfg, "--output", a.to_str().unwrap(), "--workers", "1"]).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_fedcp-sim"))
        .args(["run", "--config", &cfg, "--output", b.to_str().unwrap()])
        .env("FEDCP_SIM_WORKERS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["rounds.csv", "clients.jsonl", "partition.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // The summary echoes the config, which differs only in output_dir.
    let summary = |dir: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
        v["config"].as_object_mut().unwrap().remove("output_dir");
        v
    };
    assert_eq!(summary(&a), summary(&b));
}

#[test]
fn seed_flag_overrides_the_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(sim(&["run", "--config", &cfg, "--output", a.to_str().unwrap()]).status.success());
    assert!(sim(&["run", "--config", &cfg, "--output", b.to_str().unwrap(), "--seed", "9"]).status.success());
    assert_ne!(fs::read(a.join("rounds.csv")).unwrap(), fs::read(b.join("rounds.csv")).unwrap());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 9);
}

#[test]
fn existing_output_dir_needs_force() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let out = tmp.path().join("out");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let o = sim(&["run", "--config", &cfg, "--output", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--force"));
    assert!(!out.join("rounds.csv").exists());
    assert!(sim(&["run", "--config", &cfg, "--output", out.to_str().unwrap(), "--force"]).status.success());
    assert!(out.join("rounds.csv").exists());
}

#[test]
fn config_errors_exit_nonzero_with_location() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "{\n  \"dataset\": oops\n}");
    let o = sim(&["run", "--config", &cfg, "--output", tmp.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let bad_rho = SMOKE.replace("\"lambda\": 1.0", "\"lambda\": 1.0, \"rho\": [0.9, 0.2]");
    let cfg = write_config(tmp.path(), &bad_rho);
    let o = sim(&["run", "--config", &cfg, "--output", tmp.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("rho"), "{}", stderr(&o));
}

#[test]
fn algorithm_sweep_has_one_row_per_point() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let out = tmp.path().join("sweep");
    let o = sim(&[
        "sweep",
        "--config",
        &cfg,
        "--output",
        out.to_str().unwrap(),
        "--algorithms",
        "fedcp,wo_cpn,wo_cpn_gh,fedavg",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("fedcp,") && rows[3].starts_with("fedavg,"));
    assert!(out.join("wo_cpn").join("rounds.csv").exists());
}

#[test]
fn sweep_with_a_failing_point_finishes_and_fails() {
    let tmp = TempDir::new().unwrap();
    let text = SMOKE.replace("\"num_clients\": 4", "\"num_clients\": 8, \"min_samples\": 1");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("sweep");
    // At β = 1e-4 each class lands on a single client, so with 4 classes at
    // most 4 of the 8 clients receive data and every draw is rejected.
    let o = sim(&["sweep", "--config", &cfg, "--output", out.to_str().unwrap(), "--betas", "0.5,0.0001"]);
    assert!(!o.status.success());
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(csv.contains(",failed"));
}

#[test]
fn partition_subcommand_writes_only_the_sidecar() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let out = tmp.path().join("p");
    let o = sim(&["partition", "--config", &cfg, "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["partition.txt"]);
    let text = fs::read_to_string(out.join("partition.txt")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("0 "));
}

#[test]
fn selftest_passes_and_catches_the_injected_fault() {
    let start = Instant::now();
    let o = sim(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(start.elapsed().as_secs_f64() < 60.0);
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));

    let o = sim(&["selftest", "--inject-layer-norm-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("grad.layer_norm"), "{}", stderr(&o));
}

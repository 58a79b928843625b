use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hmsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmsim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = hmsim(&["run", "--mode", "csma", "--duration", "10", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("csma seed 3: critical 100 generated"));
    for f in ["outcomes.csv", "throughput.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(!out.join("trajectory.csv").exists());
    let s = json(&out.join("summary.json"));
    assert_eq!(s["schema_version"], 1);
    assert_eq!(s["seed"], 3);
    assert_eq!(s["mac_mode"], "csma");
    assert_eq!(s["config"]["duration_s"], 10.0);
    let mc = &s["mission_critical"];
    let total = ["success", "missed_deadline", "packet_loss", "in_flight"]
        .iter()
        .map(|k| mc[k].as_u64().unwrap())
        .sum::<u64>();
    assert_eq!(total, mc["generated"].as_u64().unwrap());
    let tput = fs::read_to_string(out.join("throughput.csv")).unwrap();
    assert!(tput.starts_with("window_index,window_start_ns,class,bytes\n"));
    assert_eq!(tput.lines().count(), 1 + 100 * 3);
}

#[test]
fn summary_config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(hmsim(&["run", "--duration", "12", "--seed", "9", "--out", a.to_str().unwrap()]).status.success());
    let echo = a.join("summary.json");
    assert!(hmsim(&["run", "--config", echo.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.success());
    for f in ["outcomes.csv", "throughput.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn invalid_config_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "duration_s = 0\n[dcf]\ncw_min = 12\n[superframe]\nt_ctl_ns = 99000000\n").unwrap();
    let out = dir.path().join("never");
    let o = hmsim(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("duration_s"));
    assert!(err.contains("cw_min"));
    assert!(err.contains("superframe"));
    assert!(!out.exists());
}

#[test]
fn tracking_run_writes_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("track.toml");
    fs::write(&cfg, "duration_s = 32\n[tracking]\nenabled = true\n").unwrap();
    let out = dir.path().join("t");
    let o = hmsim(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("tracking RMSE"));
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t_s,x_m,y_m,heading_rad,last_command_age_s\n"));
    assert!(json(&out.join("summary.json"))["tracking"]["rmse_m"].as_f64().unwrap() < 0.01);
}

#[test]
fn sweep_aggregate_matches_its_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = hmsim(&["sweep", "--seeds", "1..3", "--modes", "csma,hybrid", "--duration", "8", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for m in ["csma", "hybrid"] {
        for s in 1..=3 {
            assert!(out.join(format!("{m}-seed{s}/summary.json")).exists());
        }
    }
    let agg = json(&out.join("aggregate.json"));
    let missed: Vec<f64> = (1..=3)
        .map(|s| json(&out.join(format!("csma-seed{s}/summary.json")))["mission_critical"]["missed_deadline"].as_f64().unwrap())
        .collect();
    let mean = missed.iter().sum::<f64>() / 3.0;
    assert!((agg["csma"]["mean_missed_deadline"].as_f64().unwrap() - mean).abs() < 1e-9);
    assert_eq!(agg["paired"]["seeds"], serde_json::json!([1, 2, 3]));
    // report recomputes the same aggregate from the per-run summaries
    let r = hmsim(&["report", out.to_str().unwrap()]);
    assert!(r.status.success());
    let recomputed: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert_eq!(recomputed, agg);
}

#[test]
fn report_resummarises_run_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    assert!(hmsim(&["run", "--mode", "hybrid", "--duration", "6", "--out", out.to_str().unwrap()]).status.success());
    let r = hmsim(&["report", out.to_str().unwrap()]);
    assert!(r.status.success());
    let rep: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    let s = json(&out.join("summary.json"));
    assert_eq!(rep["success"], s["mission_critical"]["success"]);
    assert_eq!(rep["outcomes"].as_u64().unwrap(), 60 - s["mission_critical"]["in_flight"].as_u64().unwrap());
    assert!(hmsim(&["report", dir.path().join("missing").to_str().unwrap()]).status.code() == Some(2));
}

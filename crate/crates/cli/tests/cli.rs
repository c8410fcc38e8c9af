use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[scenario]
waypoints = [[0, 0], [150, 0], [150, 150], [300, 150]]
speed_profile = [10]
seed = 4
"#;

fn geofix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geofix"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_csv_column(path: &Path, col: usize) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn simulate_replay_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("s.toml");
    std::fs::write(&scen, SMALL).unwrap();
    let sim = dir.path().join("sim");
    let rep = dir.path().join("rep");

    ok(&geofix(&["simulate", "--scenario", p(&scen), "--seed", "9", "--out", p(&sim)]));
    for f in [
        "truth.csv",
        "imu_only.csv",
        "ukf.csv",
        "smoothed.csv",
        "metrics.csv",
        "imu.jsonl",
        "fixes.jsonl",
        "events.jsonl",
        "triggers.jsonl",
        "run.json",
    ] {
        assert!(sim.join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(sim.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("series,ate_rmse,drift_rate,steady_state_rmse,fixes_per_km,trajectory_length_km"));
    assert_eq!(metrics.lines().count(), 4);

    ok(&geofix(&[
        "replay",
        "--imu",
        p(&sim.join("imu.jsonl")),
        "--fixes",
        p(&sim.join("fixes.jsonl")),
        "--run",
        p(&sim.join("run.json")),
        "--config",
        p(&scen),
        "--out",
        p(&rep),
    ]));
    for col in 1..3 {
        let a = read_csv_column(&sim.join("smoothed.csv"), col);
        let b = read_csv_column(&rep.join("smoothed.csv"), col);
        assert_eq!(a.len(), b.len());
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "replay differs by {worst}");
    }
    assert_eq!(
        std::fs::read_to_string(sim.join("events.jsonl")).unwrap(),
        std::fs::read_to_string(rep.join("events.jsonl")).unwrap()
    );

    // the metrics subcommand agrees with the table written by simulate
    let out = ok(&geofix(&[
        "metrics",
        "--est",
        p(&sim.join("smoothed.csv")),
        "--truth",
        p(&sim.join("truth.csv")),
        "--events",
        p(&sim.join("events.jsonl")),
    ]));
    let row = metrics.lines().find(|l| l.starts_with("smoothed,")).unwrap();
    let ate: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!(out.contains(&format!("{ate:.3}")), "{out}");
}

#[test]
fn replay_with_explicit_origin() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("s.toml");
    std::fs::write(&scen, SMALL).unwrap();
    let sim = dir.path().join("sim");
    ok(&geofix(&["simulate", "--scenario", p(&scen), "--out", p(&sim)]));
    let rep = dir.path().join("rep");
    ok(&geofix(&[
        "replay",
        "--imu",
        p(&sim.join("imu.jsonl")),
        "--fixes",
        p(&sim.join("fixes.jsonl")),
        "--origin",
        "0,0,0",
        "--stride",
        "10",
        "--out",
        p(&rep),
    ]));
    assert!(rep.join("smoothed.csv").is_file());
}

#[test]
fn ablate_prints_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("s.toml");
    std::fs::write(&scen, SMALL).unwrap();
    let md = ok(&geofix(&["ablate", "--scenario", p(&scen), "--seeds", "2"]));
    for name in ["full", "no_yaw_gate", "single_crop", "isotropic", "no_fwd_bias", "ukf_only"] {
        assert!(md.contains(&format!("| {name} |")), "{md}");
    }
    let csv_path = dir.path().join("t.csv");
    ok(&geofix(&[
        "ablate",
        "--scenario",
        p(&scen),
        "--seeds",
        "2",
        "--format",
        "csv",
        "--out",
        p(&csv_path),
    ]));
    let csv = std::fs::read_to_string(csv_path).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("config,ate_median"));
}

#[test]
fn errors_exit_nonzero_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[scenario]\nwaypoints = [[0, 0], [100, 0]]\n[trigger]\nyaw_gate = -1\n").unwrap();
    let out = geofix(&["simulate", "--scenario", p(&bad), "--out", p(&out_dir)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("trigger.yaw_gate"));

    std::fs::write(&bad, "[scenario]\nseed = 1\nspeed_limit = 3\n").unwrap();
    let out = geofix(&["simulate", "--scenario", p(&bad), "--out", p(&out_dir)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("speed_limit") && err.contains("line 3"), "{err}");

    let out = geofix(&["metrics", "--est", "/nonexistent.csv", "--truth", "/nonexistent.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent.csv"));

    let out = geofix(&["ablate", "--scenario", p(&bad), "--seeds", "0"]);
    assert!(!out.status.success());

    let out = geofix(&["replay", "--imu", "a", "--fixes", "b", "--out", p(&out_dir)]);
    assert!(!out.status.success());
}

#[test]
fn metrics_rejects_unmatched_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("e.csv");
    let truth = dir.path().join("t.csv");
    std::fs::write(&est, "t,x,y,theta\n0,0,0,0\n0.5,1,0,0\n").unwrap();
    std::fs::write(&truth, "t,x,y,theta\n0,0,0,0\n1,2,0,0\n").unwrap();
    let out = geofix(&["metrics", "--est", p(&est), "--truth", p(&truth)]);
    assert!(!out.status.success());
    let out = ok(&geofix(&["metrics", "--est", p(&est), "--truth", p(&truth), "--max-gap", "0.6"]));
    assert!(out.contains("estimate"));
}

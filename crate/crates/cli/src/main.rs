use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use geofix::config::RunConfig;
use geofix::cvgl::{read_fix_log, write_fix_log};
use geofix::geometry::Pose2;
use geofix::imu::{read_imu_log, write_imu_log};
use geofix::metrics::{
    associated_truth, read_trajectory_csv, trajectory_metrics, write_trajectory_csv, TimedTrajectory,
    TrajectoryMetrics,
};
use geofix::sim::{ablation_study, replay, run_pipeline, AblationRow, FixEvent, RunResult, TriggerEvent};

#[derive(Parser)]
#[command(name = "geofix", version, about = "GNSS-free planar localisation: simulate, replay and evaluate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one drive and write its trajectories, sensor logs and metrics.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides `scenario.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the pipeline on a recorded IMU log and recorded matcher outputs.
    Replay {
        #[arg(long)]
        imu: PathBuf,
        #[arg(long)]
        fixes: PathBuf,
        /// `run.json` written by `simulate`; supplies the origin and frame stride.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Start pose as `x,y,theta`.
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        origin: Option<Pose2<f64>>,
        /// IMU samples per camera frame.
        #[arg(long)]
        stride: Option<usize>,
        /// Pipeline settings; defaults apply without it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the ablation matrix over a range of seeds.
    Ablate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, value_enum, default_value_t = TableFormat::Markdown)]
        format: TableFormat,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare an estimated trajectory CSV against a reference CSV.
    Metrics {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Largest timestamp gap accepted when pairing samples, s.
        #[arg(long, default_value_t = 0.005)]
        max_gap: f64,
        /// `events.jsonl` of the estimate, for the fix-based metrics.
        #[arg(long)]
        events: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Markdown,
    Csv,
}

/// Side information needed to replay a simulated drive.
#[derive(Debug, Serialize, Deserialize)]
struct RunInfo {
    origin: [f64; 3],
    frame_stride: usize,
    imu_rate: f64,
    camera_rate: f64,
    seed: u64,
    loop_closures: usize,
    distance_m: f64,
}

fn parse_pose(s: &str) -> std::result::Result<Pose2<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [x, y, th] => Pose2::try_new(*x, *y, *th).map_err(|e| e.to_string()),
        _ => Err(format!("expected x,y,theta, got {s:?}")),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("in {}", path.display()))
}

fn write_series(dir: &Path, name: &str, times: &[f64], poses: &[Pose2<f64>]) -> Result<()> {
    let traj = TimedTrajectory::new(times.to_vec(), poses.to_vec())?;
    let mut w = create(&dir.join(format!("{name}.csv")))?;
    write_trajectory_csv(&mut w, &traj)?;
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    use std::io::BufRead;
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

const METRICS_HEADER: [&str; 6] = [
    "series",
    "ate_rmse",
    "drift_rate",
    "steady_state_rmse",
    "fixes_per_km",
    "trajectory_length_km",
];

fn write_metrics(path: &Path, rows: &[(&str, TrajectoryMetrics)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(METRICS_HEADER)?;
    for (name, m) in rows {
        let ss = m.steady_state_rmse.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            name.to_string(),
            m.ate_rmse.to_string(),
            m.drift_rate.to_string(),
            ss,
            m.fixes_per_km.to_string(),
            m.trajectory_length_km.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn print_metrics(rows: &[(&str, TrajectoryMetrics)]) {
    println!(
        "{:<10} {:>10} {:>12} {:>12} {:>10} {:>10}",
        "series", "ATE m", "drift m/km", "steady m", "fixes/km", "km"
    );
    for (name, m) in rows {
        let ss = m.steady_state_rmse.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{name:<10} {:>10.3} {:>12.3} {ss:>12} {:>10.2} {:>10.3}",
            m.ate_rmse, m.drift_rate, m.fixes_per_km, m.trajectory_length_km
        );
    }
}

fn write_outputs(dir: &Path, r: &RunResult) -> Result<()> {
    write_series(dir, "imu_only", &r.times, &r.imu_only)?;
    write_series(dir, "ukf", &r.times, &r.ukf)?;
    write_series(dir, "smoothed", &r.times, &r.smoothed)?;
    write_jsonl::<FixEvent>(&dir.join("events.jsonl"), &r.fixes)?;
    write_jsonl::<TriggerEvent>(&dir.join("triggers.jsonl"), &r.triggers)?;
    Ok(())
}

fn simulate(scenario: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = load_config(scenario)?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    let run = run_pipeline(&cfg)?;
    let r = &run.result;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_series(out, "truth", &r.times, &r.truth)?;
    write_outputs(out, r)?;

    let mut w = create(&out.join("imu.jsonl"))?;
    write_imu_log(&mut w, &run.imu_log)?;
    w.flush()?;
    let mut w = create(&out.join("fixes.jsonl"))?;
    write_fix_log(&mut w, &r.fix_records)?;
    w.flush()?;

    let info = RunInfo {
        origin: [run.origin.x(), run.origin.y(), run.origin.theta()],
        frame_stride: run.frame_stride,
        imu_rate: cfg.scenario.imu_rate,
        camera_rate: cfg.scenario.camera_rate,
        seed: cfg.scenario.seed,
        loop_closures: r.loop_closures,
        distance_m: r.distance,
    };
    std::fs::write(out.join("run.json"), serde_json::to_string_pretty(&info)?)?;

    let rows = [
        ("imu_only", r.metrics_of(&r.imu_only)?),
        ("ukf", r.metrics_of(&r.ukf)?),
        ("smoothed", r.metrics()?),
    ];
    write_metrics(&out.join("metrics.csv"), &rows)?;
    print_metrics(&rows);
    println!("loop closures: {}   outputs in {}", r.loop_closures, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn replay_cmd(
    imu: &Path,
    fixes: &Path,
    run: Option<&Path>,
    origin: Option<Pose2<f64>>,
    stride: Option<usize>,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let info: Option<RunInfo> = match run {
        Some(p) => Some(serde_json::from_reader(open(p)?).with_context(|| format!("in {}", p.display()))?),
        None => None,
    };
    let origin = match (origin, &info) {
        (Some(o), _) => o,
        (None, Some(i)) => Pose2::try_new(i.origin[0], i.origin[1], i.origin[2])?,
        (None, None) => bail!("need --origin or --run"),
    };
    let stride = match (stride, &info) {
        (Some(s), _) => s,
        (None, Some(i)) => i.frame_stride,
        (None, None) => cfg.scenario.frame_stride()?,
    };
    let imu_log = read_imu_log(open(imu)?).with_context(|| format!("in {}", imu.display()))?;
    let fix_log = read_fix_log(open(fixes)?).with_context(|| format!("in {}", fixes.display()))?;
    let r = replay(&cfg, origin, &imu_log, &fix_log, stride)?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_outputs(out, &r)?;
    println!(
        "{} frames, {} accepted fixes, {} loop closures, {:.3} km; outputs in {}",
        r.times.len(),
        r.accepted_frames().len(),
        r.loop_closures,
        r.distance / 1000.0,
        out.display()
    );
    Ok(())
}

fn ablation_table(rows: &[AblationRow], format: TableFormat) -> String {
    let mut s = String::new();
    match format {
        TableFormat::Markdown => {
            s.push_str("| config | median ATE (m) | p10 | p90 | mean | fixes/km |\n");
            s.push_str("|---|---|---|---|---|---|\n");
            for r in rows {
                s.push_str(&format!(
                    "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.1} |\n",
                    r.name, r.ate.median, r.ate.p10, r.ate.p90, r.ate.mean, r.fixes_per_km.median
                ));
            }
        }
        TableFormat::Csv => {
            s.push_str("config,ate_median,ate_p10,ate_p90,ate_mean,fixes_per_km_median\n");
            for r in rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.name, r.ate.median, r.ate.p10, r.ate.p90, r.ate.mean, r.fixes_per_km.median
                ));
            }
        }
    }
    s
}

fn ablate(scenario: &Path, seeds: usize, format: TableFormat, out: Option<&Path>) -> Result<()> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let cfg = load_config(scenario)?;
    let rows = ablation_study(&cfg, seeds)?;
    let table = ablation_table(&rows, format);
    match out {
        Some(p) => std::fs::write(p, table).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}

fn metrics_cmd(est: &Path, truth: &Path, max_gap: f64, events: Option<&Path>) -> Result<()> {
    let e = read_trajectory_csv(open(est)?).with_context(|| format!("in {}", est.display()))?;
    let t = read_trajectory_csv(open(truth)?).with_context(|| format!("in {}", truth.display()))?;
    let matched = associated_truth(&e, &t, max_gap)?;
    let accepted: Vec<usize> = match events {
        Some(p) => read_jsonl::<FixEvent>(p)?
            .into_iter()
            .filter(|ev| matches!(ev.outcome, geofix::sim::FixOutcome::Accepted { .. }))
            .map(|ev| ev.frame)
            .collect(),
        None => Vec::new(),
    };
    if let Some(&f) = accepted.iter().find(|&&f| f >= e.len()) {
        bail!("fix event at frame {f} is beyond the {} estimate samples", e.len());
    }
    let length = geofix::metrics::path_length_km(&matched);
    let m = trajectory_metrics(&e.poses, &matched, &accepted, length)?;
    print_metrics(&[("estimate", m)]);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate { scenario, seed, out } => simulate(&scenario, seed, &out),
        Cmd::Replay {
            imu,
            fixes,
            run,
            origin,
            stride,
            config,
            out,
        } => replay_cmd(&imu, &fixes, run.as_deref(), origin, stride, config.as_deref(), &out),
        Cmd::Ablate {
            scenario,
            seeds,
            format,
            out,
        } => ablate(&scenario, seeds, format, out.as_deref()),
        Cmd::Metrics {
            est,
            truth,
            max_gap,
            events,
        } => metrics_cmd(&est, &truth, max_gap, events.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

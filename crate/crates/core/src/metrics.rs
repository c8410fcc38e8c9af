//! Trajectory error metrics and the trajectory CSV format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2;

/// Summary row for one estimated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub ate_rmse: f64,
    /// m/km
    pub drift_rate: f64,
    /// Absent with fewer than three accepted fixes.
    pub steady_state_rmse: Option<f64>,
    pub fixes_per_km: f64,
    pub trajectory_length_km: f64,
}

fn check_lengths(est: &[Pose2<f64>], truth: &[Pose2<f64>]) -> Result<()> {
    if est.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "trajectory",
            expected: truth.len(),
            got: est.len(),
        });
    }
    if est.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    Ok(())
}

/// `est` rigidly moved so its first pose lands on the first truth pose.
pub fn align_first_pose(est: &[Pose2<f64>], truth: &[Pose2<f64>]) -> Result<Vec<Pose2<f64>>> {
    check_lengths(est, truth)?;
    let t = truth[0].compose_pose(&est[0].inverse());
    Ok(est.iter().map(|p| t.compose_pose(p)).collect())
}

/// Per-frame position errors after first-pose alignment.
pub fn position_errors(est: &[Pose2<f64>], truth: &[Pose2<f64>]) -> Result<Vec<f64>> {
    let aligned = align_first_pose(est, truth)?;
    Ok(aligned.iter().zip(truth).map(|(a, b)| a.distance(b)).collect())
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|e| e * e).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn ate_rmse(est: &[Pose2<f64>], truth: &[Pose2<f64>]) -> Result<f64> {
    Ok(rms(&position_errors(est, truth)?))
}

/// RMSE over frames strictly after the third accepted fix.
pub fn steady_state_rmse(est: &[Pose2<f64>], truth: &[Pose2<f64>], accepted_frames: &[usize]) -> Result<Option<f64>> {
    let errs = position_errors(est, truth)?;
    let mut frames = accepted_frames.to_vec();
    frames.sort_unstable();
    let Some(&third) = frames.get(2) else {
        return Ok(None);
    };
    let tail = errs.get(third + 1..).unwrap_or_default();
    if tail.is_empty() {
        return Ok(None);
    }
    Ok(Some(rms(tail)))
}

fn positive_length(length_km: f64) -> Result<()> {
    if length_km > 0.0 && length_km.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("trajectory length must be > 0 km, got {length_km}")))
    }
}

pub fn drift_rate(ate: f64, length_km: f64) -> Result<f64> {
    positive_length(length_km)?;
    Ok(ate / length_km)
}

pub fn fixes_per_km(accepted: usize, length_km: f64) -> Result<f64> {
    positive_length(length_km)?;
    Ok(accepted as f64 / length_km)
}

/// Travelled length of a pose series, km.
pub fn path_length_km(poses: &[Pose2<f64>]) -> f64 {
    poses.windows(2).map(|w| w[0].distance(&w[1])).sum::<f64>() / 1000.0
}

pub fn trajectory_metrics(
    est: &[Pose2<f64>],
    truth: &[Pose2<f64>],
    accepted_frames: &[usize],
    length_km: f64,
) -> Result<TrajectoryMetrics> {
    let ate = ate_rmse(est, truth)?;
    Ok(TrajectoryMetrics {
        ate_rmse: ate,
        drift_rate: drift_rate(ate, length_km)?,
        steady_state_rmse: steady_state_rmse(est, truth, accepted_frames)?,
        fixes_per_km: fixes_per_km(accepted_frames.len(), length_km)?,
        trajectory_length_km: length_km,
    })
}

/// Timestamped pose series as read from or written to CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimedTrajectory {
    pub times: Vec<f64>,
    pub poses: Vec<Pose2<f64>>,
}

impl TimedTrajectory {
    pub fn new(times: Vec<f64>, poses: Vec<Pose2<f64>>) -> Result<Self> {
        if times.len() != poses.len() {
            return Err(Error::LengthMismatch {
                what: "timestamps",
                expected: poses.len(),
                got: times.len(),
            });
        }
        Ok(Self { times, poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

pub const CSV_HEADER: &str = "t,x,y,theta";

/// Values are written in shortest round-trip form, so a re-import is exact.
pub fn write_trajectory_csv<W: Write>(w: W, traj: &TimedTrajectory) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER.split(','))
        .map_err(csv_error)?;
    for (t, p) in traj.times.iter().zip(&traj.poses) {
        wr.write_record([t, &p.x(), &p.y(), &p.theta()].map(|v| v.to_string()))
            .map_err(csv_error)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

pub fn read_trajectory_csv<R: BufRead>(r: R) -> Result<TimedTrajectory> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rd.headers().map_err(csv_error)?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER.split(',').collect::<Vec<_>>() {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{CSV_HEADER}`"),
        });
    }
    let mut out = TimedTrajectory::default();
    for rec in rd.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize, name: &str| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("missing {name}"),
                })?
                .parse()
                .map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad {name}"),
                })
        };
        let t = field(0, "t")?;
        let pose = Pose2::try_new(field(1, "x")?, field(2, "y")?, field(3, "theta")?).map_err(|_| Error::Parse {
            line,
            msg: "non-finite pose".into(),
        })?;
        if !t.is_finite() {
            return Err(Error::Parse {
                line,
                msg: "non-finite t".into(),
            });
        }
        out.times.push(t);
        out.poses.push(pose);
    }
    Ok(out)
}

/// For every estimate sample, the truth sample nearest in time. Both series
/// must be sorted by time; gaps above `max_gap` are an error.
pub fn associate(est_times: &[f64], truth_times: &[f64], max_gap: f64) -> Result<Vec<usize>> {
    if truth_times.is_empty() {
        return Err(Error::invalid("empty truth series"));
    }
    if truth_times.windows(2).any(|w| w[1] < w[0]) || est_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("timestamps must be non-decreasing"));
    }
    let mut j = 0;
    let mut out = Vec::with_capacity(est_times.len());
    for &t in est_times {
        while j + 1 < truth_times.len() && (truth_times[j + 1] - t).abs() <= (truth_times[j] - t).abs() {
            j += 1;
        }
        let gap = (truth_times[j] - t).abs();
        if gap > max_gap {
            return Err(Error::invalid(format!(
                "no truth sample within {max_gap} s of t = {t} (nearest {gap} s away)"
            )));
        }
        out.push(j);
    }
    Ok(out)
}

/// Pair two timed trajectories by nearest timestamp; returns the truth poses
/// matched to every estimate sample.
pub fn associated_truth(est: &TimedTrajectory, truth: &TimedTrajectory, max_gap: f64) -> Result<Vec<Pose2<f64>>> {
    let idx = associate(&est.times, &truth.times, max_gap)?;
    Ok(idx.into_iter().map(|k| truth.poses[k]).collect())
}

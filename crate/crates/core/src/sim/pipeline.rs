//! The frame loop: dead-reckon, trigger, search, gate, filter, then smooth offline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::generate_trajectory;
use super::sensors::synthesize_imu;
use crate::config::{AblationFlags, RunConfig};
use crate::cvgl::{
    fix_to_global, global_to_fix, CropQuery, CvglFix, FixRecord, MeasurementSource, ReplaySource, SimulatedMatcher,
};
use crate::error::{Error, Result};
use crate::geometry::{BodyIncrement, Pose2};
use crate::graph::{
    build_graph, find_loop_closures_at, loop_closure_factor, optimize_with, BuildOptions, FixObservation, OdometryEdge,
    OptimizeReport,
};
use crate::imu::{composite_error, ImuCalibration, ImuRecord, ImuSample, Preintegrator};
use crate::metrics::{ate_rmse, path_length_km, position_errors, trajectory_metrics, TrajectoryMetrics};
use crate::smoothing::{savgol_smooth, SAVGOL_ORDER, SAVGOL_WINDOW};
use crate::trigger::{
    multicrop_search, search_center, trigger_cause, yaw_gate, GateDecision, SearchOptions, TriggerCause, TriggerState,
};
use crate::ukf::{
    add_process_noise, measurement_noise_from_weight, process_noise_from_eps, propagate, update_position, UkfState,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FixOutcome {
    Accepted { weight: f64 },
    Rejected { yaw_residual: f64 },
    /// No crop returned a fix.
    Missed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixEvent {
    pub frame: usize,
    #[serde(flatten)]
    pub outcome: FixOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub frame: usize,
    pub cause: TriggerCause,
    pub eps_imu: f64,
    /// Distance from the filter position to the truth when the trigger fired.
    pub true_error: Option<f64>,
}

/// Everything one run produces. All series are sampled at camera frames and
/// share `times`; `truth` is empty for replayed drives.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub times: Vec<f64>,
    pub truth: Vec<Pose2<f64>>,
    pub imu_only: Vec<Pose2<f64>>,
    pub ukf: Vec<Pose2<f64>>,
    /// Equal to `ukf` when the smoother is ablated.
    pub smoothed: Vec<Pose2<f64>>,
    /// One entry per trigger, in frame order.
    pub fixes: Vec<FixEvent>,
    pub triggers: Vec<TriggerEvent>,
    /// Every matcher return, expressed against the centre crop of its search.
    pub fix_records: Vec<FixRecord>,
    pub loop_closures: usize,
    pub optimizer: Option<OptimizeReport<f64>>,
    /// Travelled distance, m; from the truth when known, else dead-reckoned.
    pub distance: f64,
}

impl RunResult {
    pub fn accepted_frames(&self) -> Vec<usize> {
        self.fixes
            .iter()
            .filter(|e| matches!(e.outcome, FixOutcome::Accepted { .. }))
            .map(|e| e.frame)
            .collect()
    }

    fn require_truth(&self) -> Result<&[Pose2<f64>]> {
        if self.truth.is_empty() {
            Err(Error::invalid("run has no ground truth"))
        } else {
            Ok(&self.truth)
        }
    }

    /// Metrics of the final output (`smoothed`).
    pub fn metrics(&self) -> Result<TrajectoryMetrics> {
        self.metrics_of(&self.smoothed)
    }

    pub fn metrics_of(&self, est: &[Pose2<f64>]) -> Result<TrajectoryMetrics> {
        trajectory_metrics(est, self.require_truth()?, &self.accepted_frames(), self.distance / 1000.0)
    }

    /// Per-frame position error of `est` against the truth.
    pub fn errors_of(&self, est: &[Pose2<f64>]) -> Result<Vec<f64>> {
        position_errors(est, self.require_truth()?)
    }
}

/// Sensor data of one drive.
#[derive(Debug, Clone, Copy)]
pub struct DriveInputs<'a> {
    pub origin: Pose2<f64>,
    pub imu: &'a [ImuSample<f64>],
    /// Time at every sample boundary: `imu.len() + 1` entries.
    pub boundary_times: &'a [f64],
    /// IMU samples per camera frame.
    pub frame_stride: usize,
    /// Truth at every sample boundary, when known.
    pub truth: Option<&'a [Pose2<f64>]>,
}

impl DriveInputs<'_> {
    fn validate(&self) -> Result<()> {
        if self.frame_stride == 0 {
            return Err(Error::invalid("frame stride must be > 0"));
        }
        if self.boundary_times.len() != self.imu.len() + 1 {
            return Err(Error::LengthMismatch {
                what: "sample boundary times",
                expected: self.imu.len() + 1,
                got: self.boundary_times.len(),
            });
        }
        if let Some(t) = self.truth {
            if t.len() != self.imu.len() + 1 {
                return Err(Error::LengthMismatch {
                    what: "truth samples",
                    expected: self.imu.len() + 1,
                    got: t.len(),
                });
            }
        }
        Ok(())
    }
}

/// A source that goes silent during the listed time windows.
#[derive(Debug, Clone)]
pub struct OutageSource<S> {
    inner: S,
    frame_period: f64,
    outages: Vec<[f64; 2]>,
}

impl<S> OutageSource<S> {
    pub fn new(inner: S, frame_period: f64, outages: Vec<[f64; 2]>) -> Self {
        Self {
            inner,
            frame_period,
            outages,
        }
    }

    pub fn into_inner(self) -> S {
        self.inner
    }

    fn silent(&self, frame: usize) -> bool {
        let t = frame as f64 * self.frame_period;
        self.outages.iter().any(|&[a, b]| t >= a && t <= b)
    }
}

impl<S: MeasurementSource<f64>> MeasurementSource<f64> for OutageSource<S> {
    fn query(&mut self, q: &CropQuery<f64>, truth: Option<&Pose2<f64>>) -> Result<Option<CvglFix<f64>>> {
        if self.silent(q.frame_index) {
            return Ok(None);
        }
        self.inner.query(q, truth)
    }
}

/// Run the online filter over a drive, then the offline smoother.
pub fn run_drive<S: MeasurementSource<f64> + ?Sized>(
    cfg: &RunConfig,
    cal: &ImuCalibration<f64>,
    input: &DriveInputs<'_>,
    source: &mut S,
) -> Result<RunResult> {
    input.validate()?;
    let flags = cfg.ablation;
    let tcfg = &cfg.trigger;
    let params = &cfg.sigma;
    let opts = SearchOptions {
        single_crop: flags.single_crop,
        no_forward_bias: flags.no_forward_bias,
    };
    let stride = input.frame_stride;
    let n_frames = input.imu.len() / stride + 1;
    let truth_at = |f: usize| input.truth.map(|t| t[f * stride]);

    let v0 = input.imu.first().map_or(0.0, |s| s.speed);
    let mut pre = Preintegrator::new(input.origin, cal).with_velocity_source(cfg.imu.velocity_source, v0);
    let mut dead = pre.clone();
    let mut ukf = UkfState::at_origin(input.origin);
    // heading comes from the compass throughout, including the first frame
    ukf.anchor_heading(input.origin.theta(), 0.0);
    let mut trig = TriggerState::<f64>::default();

    let mut out = RunResult {
        times: Vec::with_capacity(n_frames),
        truth: Vec::new(),
        imu_only: Vec::with_capacity(n_frames),
        ukf: Vec::with_capacity(n_frames),
        smoothed: Vec::new(),
        fixes: Vec::new(),
        triggers: Vec::new(),
        fix_records: Vec::new(),
        loop_closures: 0,
        optimizer: None,
        distance: 0.0,
    };
    let push_frame = |out: &mut RunResult, f: usize, ukf: &Pose2<f64>, dead: &Pose2<f64>| {
        out.times.push(input.boundary_times[f * stride]);
        if let Some(p) = truth_at(f) {
            out.truth.push(p);
        }
        out.ukf.push(*ukf);
        out.imu_only.push(*dead);
    };
    push_frame(&mut out, 0, &ukf.mean, &dead.position());

    let mut odometry = Vec::with_capacity(n_frames.saturating_sub(1));
    let mut observations = Vec::new();
    for f in 1..n_frames {
        let at = |e: Error| e.at_frame(f);
        let mut inc = BodyIncrement::zero();
        let mut elapsed = 0.0;
        for s in &input.imu[(f - 1) * stride..f * stride] {
            let step = pre.integrate(s).map_err(at)?;
            dead.integrate(s).map_err(at)?;
            inc = inc.then(&step);
            elapsed += s.dt;
        }
        let heading = input.imu[f * stride - 1].heading_abs;
        trig.advance(elapsed);

        let predicted = propagate(&ukf, &inc, params).map_err(at)?;
        let env = composite_error(&pre, cal, &predicted.mean);
        let q = process_noise_from_eps(env.eps_imu);
        ukf = add_process_noise(&predicted, &q);
        ukf.anchor_heading(heading, 0.0);
        odometry.push(OdometryEdge {
            increment: inc,
            sigma_fwd: q.sigma_fwd,
            sigma_lat: q.sigma_lat,
        });

        if let Some(cause) = trigger_cause(tcfg, env.eps_imu, &trig) {
            let truth = truth_at(f);
            out.triggers.push(TriggerEvent {
                frame: f,
                cause,
                eps_imu: env.eps_imu,
                true_error: truth.map(|p| p.distance(&ukf.mean)),
            });
            trig.reset();
            let found = if flags.disable_matcher {
                None
            } else {
                multicrop_search(tcfg, opts, source, &ukf.mean, env.eps_imu, f, truth.as_ref()).map_err(at)?
            };
            let outcome = match found {
                None => FixOutcome::Missed,
                Some(r) => {
                    let global = fix_to_global(&r.query, &r.fix);
                    let centre = CropQuery::new(search_center(tcfg, opts, &ukf.mean, env.eps_imu), ukf.mean.theta(), f)
                        .map_err(at)?;
                    let relative = global_to_fix(&centre, &global, r.fix.weight).map_err(at)?;
                    out.fix_records.push(FixRecord::from_fix(f, &relative));

                    let gate = if flags.no_yaw_gate {
                        GateDecision::Accepted
                    } else {
                        yaw_gate(tcfg, &r.fix)
                    };
                    match gate {
                        GateDecision::Rejected { yaw_residual } => FixOutcome::Rejected { yaw_residual },
                        GateDecision::Accepted => {
                            let noise = measurement_noise_from_weight(r.fix.weight).map_err(at)?;
                            let used = if flags.isotropic_noise { noise.isotropic() } else { noise };
                            ukf = update_position(&ukf, global.xy(), &used, heading, params).map_err(at)?;
                            pre.reset_position_anchor(ukf.mean.xy()).map_err(at)?;
                            observations.push(FixObservation {
                                node: f,
                                pose: global,
                                sigma_fwd_w: noise.sigma_fwd_w,
                                sigma_lat_w: noise.sigma_lat_w,
                            });
                            FixOutcome::Accepted { weight: r.fix.weight }
                        }
                    }
                }
            };
            out.fixes.push(FixEvent { frame: f, outcome });
        }
        push_frame(&mut out, f, &ukf.mean, &dead.position());
    }

    out.distance = if out.truth.is_empty() {
        dead.distance()
    } else {
        path_length_km(&out.truth) * 1000.0
    };

    if flags.ukf_only {
        out.smoothed = out.ukf.clone();
        return Ok(out);
    }
    // Smooth once without loops, vet loop candidates on that geometry, then
    // re-solve with the surviving closures.
    let build = BuildOptions {
        loops: cfg.graph.loops,
        disable_loop_closures: true,
    };
    let mut graph = build_graph(out.ukf.clone(), &odometry, &observations, input.origin, &build)?;
    let (mut poses, mut report) = optimize_with(&graph, &cfg.graph.lm)?;
    if !cfg.graph.disable_loop_closures {
        let at: Vec<Pose2<f64>> = observations.iter().map(|o| poses[o.node]).collect();
        let pairs = find_loop_closures_at(&at, &observations, &odometry, &cfg.graph.loops);
        if !pairs.is_empty() {
            for &(a, b) in &pairs {
                graph.add(loop_closure_factor(&observations[a], &observations[b])?)?;
            }
            graph.initial = poses;
            (poses, report) = optimize_with(&graph, &cfg.graph.lm)?;
            out.loop_closures = pairs.len();
        }
    }
    let xs: Vec<f64> = poses.iter().map(|p| p.x()).collect();
    let ys: Vec<f64> = poses.iter().map(|p| p.y()).collect();
    let xs = savgol_smooth(&xs, SAVGOL_WINDOW, SAVGOL_ORDER)?;
    let ys = savgol_smooth(&ys, SAVGOL_WINDOW, SAVGOL_ORDER)?;
    out.smoothed = poses
        .iter()
        .zip(xs.into_iter().zip(ys))
        .map(|(p, (x, y))| p.with_xy(x, y))
        .collect();
    out.optimizer = Some(report);
    Ok(out)
}

/// A simulated drive together with the sensor log that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    pub result: RunResult,
    pub imu_log: Vec<ImuRecord>,
    pub origin: Pose2<f64>,
    pub frame_stride: usize,
}

/// Matcher seed derived from the run seed, kept apart from the sensor streams.
fn matcher_seed(cfg: &RunConfig) -> u64 {
    cfg.scenario.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ cfg.matcher.rng_seed ^ 0xD1B5_4A32_D192_ED03
}

fn calibration(cfg: &RunConfig) -> Result<ImuCalibration<f64>> {
    cfg.imu.calibration(cfg.scenario.gyro_noise)
}

/// Generate the scenario, synthesise its sensors and run the pipeline.
pub fn run_pipeline(cfg: &RunConfig) -> Result<SimulatedRun> {
    cfg.validate()?;
    let traj = generate_trajectory(&cfg.scenario)?;
    let imu = synthesize_imu(&traj, &cfg.scenario)?;
    let stride = cfg.scenario.frame_stride()?;
    let times: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
    let truth = traj.poses();
    let origin = truth[0];

    let matcher = SimulatedMatcher::new(crate::cvgl::SimMatcherConfig {
        rng_seed: matcher_seed(cfg),
        ..cfg.matcher
    })?;
    let mut source = OutageSource::new(matcher, 1.0 / cfg.scenario.camera_rate, cfg.scenario.outages.clone());
    let input = DriveInputs {
        origin,
        imu: &imu,
        boundary_times: &times,
        frame_stride: stride,
        truth: Some(&truth),
    };
    let result = run_drive(cfg, &calibration(cfg)?, &input, &mut source)?;
    let imu_log = imu
        .iter()
        .zip(&times)
        .map(|(s, &t)| ImuRecord::from_sample(t, s))
        .collect();
    Ok(SimulatedRun {
        result,
        imu_log,
        origin,
        frame_stride: stride,
    })
}

/// Re-run the pipeline from a recorded IMU log and recorded matcher outputs.
pub fn replay(
    cfg: &RunConfig,
    origin: Pose2<f64>,
    imu_log: &[ImuRecord],
    fixes: &[FixRecord],
    frame_stride: usize,
) -> Result<RunResult> {
    cfg.validate()?;
    let imu: Vec<ImuSample<f64>> = imu_log.iter().map(|r| r.sample()).collect();
    let mut times: Vec<f64> = imu_log.iter().map(|r| r.t).collect();
    times.push(imu_log.last().map_or(0.0, |r| r.t + r.dt));
    let input = DriveInputs {
        origin,
        imu: &imu,
        boundary_times: &times,
        frame_stride,
        truth: None,
    };
    let mut source = ReplaySource::new(fixes)?;
    run_drive(cfg, &calibration(cfg)?, &input, &mut source)
}

/// Run `cfg` for seeds `cfg.scenario.seed .. + n_seeds` in parallel and map
/// every result; the output is in seed order.
pub fn monte_carlo_map<R, F>(cfg: &RunConfig, n_seeds: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64, &RunResult) -> Result<R> + Sync,
{
    if n_seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    cfg.validate()?;
    let base = cfg.scenario.seed;
    (0..n_seeds as u64)
        .into_par_iter()
        .map(|k| {
            let seed = base.wrapping_add(k);
            let mut c = cfg.clone();
            c.scenario.seed = seed;
            let run = run_pipeline(&c)?;
            f(seed, &run.result)
        })
        .collect()
}

/// Headline numbers of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    /// ATE of the final output (`smoothed`, or `ukf` with the smoother ablated).
    pub ate: f64,
    pub ate_ukf: f64,
    pub ate_imu: f64,
    pub steady_state_rmse: Option<f64>,
    pub fixes_per_km: f64,
    pub accepted: usize,
    pub loop_closures: usize,
    pub distance_km: f64,
}

impl RunSummary {
    pub fn of(seed: u64, r: &RunResult) -> Result<Self> {
        let m = r.metrics()?;
        Ok(Self {
            seed,
            ate: m.ate_rmse,
            ate_ukf: ate_rmse(&r.ukf, &r.truth)?,
            ate_imu: ate_rmse(&r.imu_only, &r.truth)?,
            steady_state_rmse: m.steady_state_rmse,
            fixes_per_km: m.fixes_per_km,
            accepted: r.accepted_frames().len(),
            loop_closures: r.loop_closures,
            distance_km: m.trajectory_length_km,
        })
    }
}

/// Linear-interpolated order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
    pub mean: f64,
}

/// Linear-interpolated quantile `q ∈ [0, 1]` of `xs`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

impl Percentiles {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            p10: quantile(xs, 0.1),
            median: quantile(xs, 0.5),
            p90: quantile(xs, 0.9),
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub runs: Vec<RunSummary>,
    pub ate: Percentiles,
    pub ate_imu: Percentiles,
    pub fixes_per_km: Percentiles,
}

pub fn monte_carlo(cfg: &RunConfig, n_seeds: usize) -> Result<MonteCarloReport> {
    let runs = monte_carlo_map(cfg, n_seeds, RunSummary::of)?;
    let col = |f: fn(&RunSummary) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    Ok(MonteCarloReport {
        ate: Percentiles::of(&col(|r| r.ate)),
        ate_imu: Percentiles::of(&col(|r| r.ate_imu)),
        fixes_per_km: Percentiles::of(&col(|r| r.fixes_per_km)),
        runs,
    })
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub ate: Percentiles,
    pub fixes_per_km: Percentiles,
}

/// Run every row of [`AblationFlags::matrix`] over the same seeds. The flags
/// in `cfg.ablation` are replaced by each row's.
pub fn ablation_study(cfg: &RunConfig, n_seeds: usize) -> Result<Vec<AblationRow>> {
    AblationFlags::matrix()
        .into_iter()
        .map(|(name, flags)| {
            let c = RunConfig {
                ablation: flags,
                ..cfg.clone()
            };
            let report = monte_carlo(&c, n_seeds)?;
            Ok(AblationRow {
                name: name.to_string(),
                ate: report.ate,
                fixes_per_km: report.fixes_per_km,
            })
        })
        .collect()
}

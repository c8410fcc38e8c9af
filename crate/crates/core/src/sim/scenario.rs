//! Ground-truth routes: waypoint polylines with circular-arc corners,
//! per-segment cruise speeds, acceleration-limited ramps and optional stops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Route vertices (east, north), m.
    pub waypoints: Vec<[f64; 2]>,
    /// Cruise speed per segment, m/s. A single value applies to every segment.
    pub speed_profile: Vec<f64>,
    /// Hz
    pub imu_rate: f64,
    /// Hz
    pub camera_rate: f64,
    /// Gyro angle random walk, rad/√s. Also drives the compass heading walk.
    pub gyro_noise: f64,
    /// Accelerometer bias random walk, m/s²/√s.
    pub accel_bias_walk: f64,
    /// Standard deviation of the turn-on accelerometer bias, m/s².
    pub accel_bias_init: f64,
    /// White accelerometer noise per sample, m/s².
    pub accel_noise: f64,
    /// White noise on the compass heading per sample, rad.
    pub heading_noise: f64,
    /// White noise on the speed channel per sample, m/s.
    pub speed_noise: f64,
    /// Mean of the per-run wheel-speed scale error (−0.03 reads 3 % slow).
    pub speed_scale_error: f64,
    /// Seed-to-seed spread of the wheel-speed scale error.
    pub speed_scale_sigma: f64,
    /// Dwell at every interior waypoint, s.
    pub stop_duration: f64,
    /// Longitudinal acceleration limit for speed ramps, m/s².
    pub accel_limit: f64,
    /// Lateral acceleration limit on corner arcs, m/s². Zero disables.
    pub lateral_accel_limit: f64,
    /// Upper bound on the corner blending radius, m.
    pub corner_radius: f64,
    /// Time windows `[start, end]` in seconds with no matcher returns.
    pub outages: Vec<[f64; 2]>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            waypoints: vec![[0.0, 0.0], [100.0, 0.0]],
            speed_profile: vec![10.0],
            imu_rate: 100.0,
            camera_rate: 10.0,
            gyro_noise: 0.002,
            accel_bias_walk: 0.01,
            accel_bias_init: 0.0,
            accel_noise: 0.02,
            heading_noise: 0.005,
            speed_noise: 0.0,
            speed_scale_error: 0.0,
            speed_scale_sigma: 0.0,
            stop_duration: 0.0,
            accel_limit: 2.0,
            lateral_accel_limit: 3.0,
            corner_radius: 10.0,
            outages: Vec::new(),
            seed: 0,
        }
    }
}

/// Alternating east/north legs: a route through a city grid that keeps
/// heading towards the north-east.
pub fn staircase_route(legs: usize, leg_length: f64) -> Vec<[f64; 2]> {
    let mut wps = vec![[0.0, 0.0]];
    let (mut x, mut y) = (0.0, 0.0);
    for k in 0..legs {
        if k % 2 == 0 {
            x += leg_length;
        } else {
            y += leg_length;
        }
        wps.push([x, y]);
    }
    wps
}

/// Start mid-way along the west side of a block, drive round it and on
/// past the start point.
pub fn block_revisit_route(width: f64, height: f64, overrun: f64) -> Vec<[f64; 2]> {
    vec![
        [0.0, 0.0],
        [width, 0.0],
        [width, height],
        [0.0, height],
        [0.0, -overrun],
    ]
}

/// East on one street, a short jog, then east again on the parallel street.
pub fn parallel_road_route(length: f64, spacing: f64) -> Vec<[f64; 2]> {
    vec![
        [0.0, 0.0],
        [length, 0.0],
        [length, spacing],
        [2.0 * length, spacing],
    ]
}

/// A straight road with `stops` evenly spaced intermediate stop points.
pub fn straight_route(length: f64, stops: usize) -> Vec<[f64; 2]> {
    (0..=stops + 1)
        .map(|k| [length * k as f64 / (stops + 1) as f64, 0.0])
        .collect()
}

impl ScenarioConfig {
    /// About 4 km through a city grid with stops at every junction and an
    /// uncalibrated wheel-speed channel.
    pub fn reference() -> Self {
        Self {
            waypoints: staircase_route(20, 200.0),
            speed_profile: vec![10.0],
            stop_duration: 5.0,
            speed_scale_error: -0.03,
            speed_scale_sigma: 0.01,
            ..Self::default()
        }
    }

    /// Reference route with four 80 s matcher outages, long enough that the
    /// error at reacquisition is comparable to the capture radius.
    pub fn ablation() -> Self {
        Self {
            outages: vec![[60.0, 140.0], [190.0, 270.0], [320.0, 400.0], [450.0, 530.0]],
            ..Self::reference()
        }
    }

    pub fn frame_stride(&self) -> Result<usize> {
        let ratio = self.imu_rate / self.camera_rate;
        let stride = ratio.round();
        if !(stride >= 1.0) || (ratio - stride).abs() > 1e-9 * ratio {
            return Err(Error::Config {
                field: "scenario.camera_rate".into(),
                msg: "imu_rate must be an integer multiple of camera_rate".into(),
            });
        }
        Ok(stride as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, msg: &str| Error::Config {
            field: format!("scenario.{f}"),
            msg: msg.to_string(),
        };
        if self.waypoints.len() < 2 {
            return Err(field("waypoints", "need at least two waypoints"));
        }
        if self.waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(field("waypoints", "must be finite"));
        }
        for (k, w) in self.waypoints.windows(2).enumerate() {
            if (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) < 1e-9 {
                return Err(field("waypoints", &format!("waypoints {k} and {} coincide", k + 1)));
            }
        }
        let segments = self.waypoints.len() - 1;
        if self.speed_profile.len() != 1 && self.speed_profile.len() != segments {
            return Err(field(
                "speed_profile",
                &format!("expected 1 or {segments} entries, got {}", self.speed_profile.len()),
            ));
        }
        if self.speed_profile.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(field("speed_profile", "speeds must be > 0"));
        }
        if !(self.camera_rate > 0.0 && self.camera_rate.is_finite()) {
            return Err(field("camera_rate", "must be > 0"));
        }
        if !(self.imu_rate >= self.camera_rate && self.imu_rate.is_finite()) {
            return Err(field("imu_rate", "must be >= camera_rate"));
        }
        self.frame_stride()?;
        for (name, v) in [
            ("gyro_noise", self.gyro_noise),
            ("accel_bias_walk", self.accel_bias_walk),
            ("accel_bias_init", self.accel_bias_init),
            ("accel_noise", self.accel_noise),
            ("heading_noise", self.heading_noise),
            ("speed_noise", self.speed_noise),
            ("speed_scale_sigma", self.speed_scale_sigma),
            ("stop_duration", self.stop_duration),
            ("lateral_accel_limit", self.lateral_accel_limit),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(field(name, "must be finite and >= 0"));
            }
        }
        if !(self.speed_scale_error.is_finite() && self.speed_scale_error > -0.5 && self.speed_scale_error < 0.5) {
            return Err(field("speed_scale_error", "must be in (-0.5, 0.5)"));
        }
        if !(self.accel_limit > 0.0 && self.accel_limit.is_finite()) {
            return Err(field("accel_limit", "must be > 0"));
        }
        if !(self.corner_radius >= 0.0 && self.corner_radius.is_finite()) {
            return Err(field("corner_radius", "must be >= 0"));
        }
        if self.outages.iter().any(|o| !(o[0] <= o[1] && o[0].is_finite() && o[1].is_finite())) {
            return Err(field("outages", "each window must be [start, end] with start <= end"));
        }
        Ok(())
    }

    fn segment_speed(&self, k: usize) -> f64 {
        if self.speed_profile.len() == 1 {
            self.speed_profile[0]
        } else {
            self.speed_profile[k]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Element {
    Line {
        start: [f64; 2],
        heading: f64,
    },
    /// Signed curvature `1/r`, positive for left turns.
    Arc {
        start: [f64; 2],
        heading: f64,
        curvature: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Piece {
    s0: f64,
    length: f64,
    element: Element,
    speed_cap: f64,
}

/// Arc-length parameterised path through the waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pieces: Vec<Piece>,
    /// Arc length of each interior waypoint's stopping point.
    stop_points: Vec<f64>,
    length: f64,
}

impl Path {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let wps = &cfg.waypoints;
        let m = wps.len() - 1;
        let seg_len: Vec<f64> = wps
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .collect();
        let seg_head: Vec<f64> = wps
            .windows(2)
            .map(|w| (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]))
            .collect();

        // tangent length and turn at each interior vertex
        let mut tangent = vec![0.0; m + 1];
        let mut turn = vec![0.0; m + 1];
        let mut radius = vec![0.0; m + 1];
        for k in 1..m {
            let phi = wrap_angle(seg_head[k] - seg_head[k - 1]);
            turn[k] = phi;
            if phi.abs() < 1e-9 || cfg.corner_radius == 0.0 {
                continue;
            }
            let half_short = 0.5 * seg_len[k - 1].min(seg_len[k]);
            let half_tan = (0.5 * phi.abs()).tan();
            let mut r = cfg.corner_radius.min(half_short);
            let mut t = r * half_tan;
            if t > half_short {
                t = half_short;
                r = t / half_tan;
            }
            tangent[k] = t;
            radius[k] = r;
        }

        let mut pieces = Vec::new();
        let mut stop_points = Vec::new();
        let mut s = 0.0;
        for k in 0..m {
            let (sn, cs) = seg_head[k].sin_cos();
            let a = tangent[k];
            let b = tangent[k + 1];
            let len = seg_len[k] - a - b;
            let start = [wps[k][0] + cs * a, wps[k][1] + sn * a];
            pieces.push(Piece {
                s0: s,
                length: len,
                element: Element::Line {
                    start,
                    heading: seg_head[k],
                },
                speed_cap: cfg.segment_speed(k),
            });
            s += len;
            if k + 1 < m {
                stop_points.push(s);
                if radius[k + 1] > 0.0 {
                    let r = radius[k + 1];
                    let arc_len = r * turn[k + 1].abs();
                    let mut cap = cfg.segment_speed(k).min(cfg.segment_speed(k + 1));
                    if cfg.lateral_accel_limit > 0.0 {
                        cap = cap.min((cfg.lateral_accel_limit * r).sqrt());
                    }
                    pieces.push(Piece {
                        s0: s,
                        length: arc_len,
                        element: Element::Arc {
                            start: [wps[k + 1][0] - cs * b, wps[k + 1][1] - sn * b],
                            heading: seg_head[k],
                            curvature: turn[k + 1].signum() / r,
                        },
                        speed_cap: cap,
                    });
                    s += arc_len;
                }
            }
        }
        Ok(Self {
            pieces,
            stop_points,
            length: s,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    fn piece_at(&self, s: f64) -> &Piece {
        let idx = self.pieces.partition_point(|p| p.s0 <= s).saturating_sub(1);
        &self.pieces[idx]
    }

    pub fn pose_at(&self, s: f64) -> Pose2<f64> {
        let p = self.piece_at(s);
        let u = (s - p.s0).clamp(0.0, p.length);
        match p.element {
            Element::Line { start, heading } => {
                let (sn, cs) = heading.sin_cos();
                Pose2::new(start[0] + cs * u, start[1] + sn * u, heading)
            }
            Element::Arc {
                start,
                heading,
                curvature,
            } => {
                let r = 1.0 / curvature;
                let h = heading + u * curvature;
                // centre at start + r·left normal
                let cx = start[0] - r * heading.sin();
                let cy = start[1] + r * heading.cos();
                Pose2::new(cx + r * h.sin(), cy - r * h.cos(), h)
            }
        }
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        match self.piece_at(s).element {
            Element::Line { .. } => 0.0,
            Element::Arc { curvature, .. } => curvature,
        }
    }

    fn speed_cap_at(&self, s: f64) -> f64 {
        self.piece_at(s).speed_cap
    }
}

/// One ground-truth sample at IMU rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub pose: Pose2<f64>,
    /// Speed held over the step to the next sample, m/s.
    pub speed: f64,
    /// Forward acceleration over the step to the next sample, m/s².
    pub accel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<TruthSample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose2<f64>> {
        self.samples.iter().map(|s| s.pose).collect()
    }

    /// Distance covered, m.
    pub fn distance(&self) -> f64 {
        self.samples.windows(2).map(|w| w[0].speed * self.dt).sum()
    }
}

/// Sample the route at IMU rate. The vehicle starts at cruise speed, brakes
/// and accelerates at `accel_limit`, dwells at stop points and ends when it
/// reaches the last waypoint.
pub fn generate_trajectory(cfg: &ScenarioConfig) -> Result<Trajectory> {
    let path = Path::new(cfg)?;
    let dt = 1.0 / cfg.imu_rate;
    let a = cfg.accel_limit;
    let stops: Vec<f64> = if cfg.stop_duration > 0.0 {
        path.stop_points.clone()
    } else {
        Vec::new()
    };
    let dwell_steps = (cfg.stop_duration / dt).round() as usize;

    // braking targets: (arc length, speed) points ahead of the vehicle
    let mut caps: Vec<(f64, f64)> = path.pieces.iter().map(|p| (p.s0, p.speed_cap)).collect();
    caps.extend(stops.iter().map(|&s| (s, 0.0)));
    caps.sort_by(|x, y| x.0.total_cmp(&y.0));
    let v_max = path.pieces.iter().map(|p| p.speed_cap).fold(0.0, f64::max);
    let horizon = v_max * v_max / (2.0 * a) + v_max * dt;

    let target = |s: f64, first_cap: usize| -> f64 {
        let mut v = path.speed_cap_at(s);
        for &(sc, vc) in &caps[first_cap..] {
            if sc - s > horizon {
                break;
            }
            if sc > s {
                // discrete braking curve: v·(v + a·dt) is reduced by 2·a·step per step
                let ad = a * dt;
                let reach = vc * (vc + ad) + 2.0 * a * (sc - s);
                v = v.min(0.5 * (-ad + (ad * ad + 4.0 * reach).sqrt()));
            }
        }
        v
    };

    let mut s = 0.0;
    let mut cap_idx = 0;
    let mut next_stop = 0;
    let mut v = target(0.0, 0);
    let mut t = 0.0;
    let mut k: u64 = 0;
    let mut out = Vec::new();
    let mut speeds = Vec::new();
    while s < path.length - 1e-9 {
        out.push((t, s));
        while cap_idx < caps.len() && caps[cap_idx].0 <= s {
            cap_idx += 1;
        }
        let mut step = (v * dt).min(path.length - s);
        let mut stopped = false;
        if next_stop < stops.len() && s + step >= stops[next_stop] - 1e-6 {
            step = (stops[next_stop] - s).max(0.0);
            stopped = true;
        }
        speeds.push(step / dt);
        s += step;
        k += 1;
        t = k as f64 * dt;
        if stopped {
            next_stop += 1;
            for _ in 0..dwell_steps {
                out.push((t, s));
                speeds.push(0.0);
                k += 1;
                t = k as f64 * dt;
            }
            v = 0.0;
        }
        v = (v + a * dt).min(target(s, cap_idx)).max(0.0);
        if v == 0.0 && !stopped {
            // creeping onto a stop point that the tolerance did not catch
            v = a * dt;
        }
    }

    let n = out.len();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (t, s) = out[i];
        let speed = speeds[i];
        let next = if i + 1 < n { speeds[i + 1] } else { speed };
        samples.push(TruthSample {
            t,
            pose: path.pose_at(s),
            speed,
            accel: (next - speed) / dt,
        });
    }
    Ok(Trajectory { dt, samples })
}

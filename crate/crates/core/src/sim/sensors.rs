//! Noisy IMU, compass and wheel-speed streams from a ground-truth trajectory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::scenario::{ScenarioConfig, Trajectory};
use crate::error::Result;
use crate::geometry::wrap_angle;
use crate::imu::ImuSample;

/// Independent RNG streams of one run, so switching one noise source off
/// leaves the others unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stream {
    Gyro = 1,
    Heading = 2,
    Accel = 3,
    Speed = 4,
}

pub(crate) fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Sample `k` spans truth samples `k → k+1`; its heading is the compass
/// reading at the end of the step.
pub fn synthesize_imu(traj: &Trajectory, cfg: &ScenarioConfig) -> Result<Vec<ImuSample<f64>>> {
    cfg.validate()?;
    let dt = traj.dt;
    let n = traj.len();
    if n < 2 {
        return Ok(Vec::new());
    }
    let mut gyro = stream_rng(cfg.seed, Stream::Gyro);
    let mut heading = stream_rng(cfg.seed, Stream::Heading);
    let mut accel = stream_rng(cfg.seed, Stream::Accel);
    let mut speed = stream_rng(cfg.seed, Stream::Speed);

    let scale = 1.0 + cfg.speed_scale_error + cfg.speed_scale_sigma * normal(&mut speed);
    let mut bias = cfg.accel_bias_init * normal(&mut accel);
    let mut heading_walk = 0.0;
    let sq = dt.sqrt();

    let mut out = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let a = &traj.samples[k];
        let b = &traj.samples[k + 1];
        let true_rate = wrap_angle(b.pose.theta() - a.pose.theta()) / dt;

        let w = normal(&mut gyro);
        heading_walk += cfg.gyro_noise * sq * w;
        let yaw_rate = true_rate + cfg.gyro_noise / sq * w;
        let heading_abs = wrap_angle(b.pose.theta() + heading_walk + cfg.heading_noise * normal(&mut heading));

        let accel_fwd = a.accel + bias + cfg.accel_noise * normal(&mut accel);
        bias += cfg.accel_bias_walk * sq * normal(&mut accel);

        let speed_meas = (scale * a.speed + cfg.speed_noise * normal(&mut speed)).max(0.0);
        out.push(ImuSample {
            yaw_rate,
            accel_fwd,
            speed: speed_meas,
            heading_abs,
            dt,
        });
    }
    Ok(out)
}

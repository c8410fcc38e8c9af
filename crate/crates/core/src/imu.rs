//! Dead-reckoning preintegrator and the closed-form drift envelope.
//!
//! The envelope combines a gyro-driven cross-track term
//! `3·d·σ_ω·√T`, an accelerometer-driven along-track term `½·σ_a·T²`
//! and a floor of `0.03·d_div`, where `d_div` is the chord between the
//! filter position and the dead-reckoned position.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, BodyIncrement, Pose2};
use crate::scalar::{lit, Real};

/// Inflation applied to the gyro random-walk cross-track term.
pub const CROSS_TRACK_INFLATION: f64 = 3.0;
/// Fraction of the filter/dead-reckoning divergence used as an envelope floor.
pub const DIVERGENCE_FLOOR_COEFF: f64 = 0.03;
/// Default high-pass cutoff for the accelerometer residual.
pub const DEFAULT_ACCEL_HP_CUTOFF_HZ: f64 = 0.5;

/// One inertial step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample<T> {
    /// Yaw rate about vertical, rad/s. Diagnostic only; heading comes from `heading_abs`.
    pub yaw_rate: T,
    /// Body-forward specific force, m/s².
    pub accel_fwd: T,
    /// Forward speed measurement, m/s.
    pub speed: T,
    /// Compass-aided absolute heading (ENU yaw), rad.
    pub heading_abs: T,
    /// Step length, s.
    pub dt: T,
}

impl<T: Real> ImuSample<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [self.yaw_rate, self.accel_fwd, self.speed, self.heading_abs, self.dt];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ImuSample"));
        }
        if self.dt <= T::zero() {
            return Err(Error::invalid("ImuSample.dt must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuCalibration<T> {
    /// Gyroscope angle random walk, rad/√s.
    pub sigma_omega: T,
    /// High-pass cutoff for the forward accelerometer residual, Hz.
    pub accel_hp_cutoff: T,
}

impl<T: Real> ImuCalibration<T> {
    pub fn new(sigma_omega: T, accel_hp_cutoff: T) -> Result<Self> {
        if !(sigma_omega > T::zero() && sigma_omega.is_finite()) {
            return Err(Error::invalid("sigma_omega must be > 0"));
        }
        if !(accel_hp_cutoff > T::zero() && accel_hp_cutoff.is_finite()) {
            return Err(Error::invalid("accel_hp_cutoff must be > 0"));
        }
        Ok(Self {
            sigma_omega,
            accel_hp_cutoff,
        })
    }
}

/// Where forward velocity comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocitySource {
    /// Use the per-sample speed channel.
    #[default]
    Speed,
    /// Integrate `accel_fwd`; for platforms without a speed channel.
    Accel,
}

/// Single-pole discrete high-pass filter.
#[derive(Debug, Clone, Copy, PartialEq)]
struct HighPass<T> {
    cutoff: T,
    prev_in: Option<T>,
    prev_out: T,
}

impl<T: Real> HighPass<T> {
    fn new(cutoff: T) -> Self {
        Self {
            cutoff,
            prev_in: None,
            prev_out: T::zero(),
        }
    }

    fn step(&mut self, x: T, dt: T) -> T {
        let out = match self.prev_in {
            None => T::zero(),
            Some(prev) => {
                let rc = T::one() / (lit::<T>(2.0) * T::PI() * self.cutoff);
                let alpha = rc / (rc + dt);
                alpha * (self.prev_out + x - prev)
            }
        };
        self.prev_in = Some(x);
        self.prev_out = out;
        out
    }
}

/// Running sample statistics (Welford).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct RunningStd<T> {
    n: usize,
    mean: T,
    m2: T,
}

impl<T: Real> RunningStd<T> {
    fn push(&mut self, x: T) {
        self.n += 1;
        let n = T::from_usize(self.n).unwrap_or_else(T::max_value);
        let delta = x - self.mean;
        self.mean += delta / n;
        self.m2 += delta * (x - self.mean);
    }

    /// Unbiased standard deviation; zero with fewer than two samples.
    fn std(&self) -> T {
        if self.n < 2 {
            return T::zero();
        }
        let denom = T::from_usize(self.n - 1).unwrap_or_else(T::max_value);
        (self.m2 / denom).max(T::zero()).sqrt()
    }
}

/// Dead-reckoning accumulator, reset at every accepted fix.
#[derive(Debug, Clone, PartialEq)]
pub struct Preintegrator<T> {
    position: Pose2<T>,
    distance: T,
    elapsed: T,
    velocity: T,
    last_heading: T,
    velocity_source: VelocitySource,
    highpass: HighPass<T>,
    residual: RunningStd<T>,
}

impl<T: Real> Preintegrator<T> {
    pub fn new(origin: Pose2<T>, cal: &ImuCalibration<T>) -> Self {
        Self {
            position: origin,
            distance: T::zero(),
            elapsed: T::zero(),
            velocity: T::zero(),
            last_heading: origin.theta(),
            velocity_source: VelocitySource::Speed,
            highpass: HighPass::new(cal.accel_hp_cutoff),
            residual: RunningStd::default(),
        }
    }

    pub fn with_velocity_source(mut self, source: VelocitySource, initial_velocity: T) -> Self {
        self.velocity_source = source;
        self.velocity = initial_velocity;
        self
    }

    pub fn position(&self) -> Pose2<T> {
        self.position
    }

    /// Distance travelled since the anchor, `Σ v·Δt`.
    pub fn distance(&self) -> T {
        self.distance
    }

    /// Time since the anchor.
    pub fn elapsed(&self) -> T {
        self.elapsed
    }

    pub fn velocity(&self) -> T {
        self.velocity
    }

    /// Number of accelerometer residuals collected since the anchor.
    pub fn residual_count(&self) -> usize {
        self.residual.n
    }

    /// Unbiased standard deviation of the high-passed accel residual since the anchor.
    pub fn residual_std(&self) -> T {
        self.residual.std()
    }

    /// Advance by one sample. Returns the body increment that was applied.
    pub fn integrate(&mut self, s: &ImuSample<T>) -> Result<BodyIncrement<T>> {
        s.validate()?;
        if self.velocity_source == VelocitySource::Speed {
            self.velocity = s.speed;
        }
        let step = self.velocity * s.dt;
        let d_heading = wrap_angle(s.heading_abs - self.last_heading);
        let inc = BodyIncrement::new(step, T::zero(), d_heading);

        self.position = self.position.compose(&inc);
        self.last_heading = s.heading_abs;
        self.distance += step.abs();
        self.elapsed += s.dt;
        let r = self.highpass.step(s.accel_fwd, s.dt);
        self.residual.push(r);

        if self.velocity_source == VelocitySource::Accel {
            self.velocity += s.accel_fwd * s.dt;
        }
        Ok(inc)
    }

    /// Move the position channel to `xy`; heading and velocity are kept,
    /// the error-model counters restart.
    pub fn reset_position_anchor(&mut self, xy: (T, T)) -> Result<()> {
        if !(xy.0.is_finite() && xy.1.is_finite()) {
            return Err(Error::NonFinite("anchor position"));
        }
        self.position = self.position.with_xy(xy.0, xy.1);
        self.distance = T::zero();
        self.elapsed = T::zero();
        self.residual = RunningStd::default();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorEnvelope<T> {
    pub eps_cross: T,
    pub eps_along: T,
    /// Composite trigger value.
    pub eps_imu: T,
    /// Chord between filter position and dead-reckoned position.
    pub d_div: T,
}

/// Gyro-driven cross-track bound `3·d·σ_ω·√T`.
pub fn cross_track_error<T: Real>(cal: &ImuCalibration<T>, distance: T, elapsed: T) -> T {
    lit::<T>(CROSS_TRACK_INFLATION) * distance * cal.sigma_omega * elapsed.max(T::zero()).sqrt()
}

/// Accelerometer-driven along-track bound `½·σ_a·T²`.
pub fn along_track_error<T: Real>(pre: &Preintegrator<T>) -> T {
    let t = pre.elapsed;
    lit::<T>(0.5) * pre.residual_std() * t * t
}

/// `max(ε_cross, ε_along, 0.03·d_div)`.
pub fn composite_of<T: Real>(eps_cross: T, eps_along: T, d_div: T) -> T {
    eps_cross
        .max(eps_along)
        .max(lit::<T>(DIVERGENCE_FLOOR_COEFF) * d_div)
}

pub fn composite_error<T: Real>(
    pre: &Preintegrator<T>,
    cal: &ImuCalibration<T>,
    ukf_position: &Pose2<T>,
) -> ErrorEnvelope<T> {
    let eps_cross = cross_track_error(cal, pre.distance, pre.elapsed);
    let eps_along = along_track_error(pre);
    let d_div = ukf_position.distance(&pre.position);
    ErrorEnvelope {
        eps_cross,
        eps_along,
        eps_imu: composite_of(eps_cross, eps_along, d_div),
        d_div,
    }
}

/// One line of the IMU JSONL log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuRecord {
    pub t: f64,
    pub yaw_rate: f64,
    pub accel_fwd: f64,
    pub speed: f64,
    pub heading: f64,
    pub dt: f64,
}

impl ImuRecord {
    pub fn sample(&self) -> ImuSample<f64> {
        ImuSample {
            yaw_rate: self.yaw_rate,
            accel_fwd: self.accel_fwd,
            speed: self.speed,
            heading_abs: self.heading,
            dt: self.dt,
        }
    }

    pub fn from_sample(t: f64, s: &ImuSample<f64>) -> Self {
        Self {
            t,
            yaw_rate: s.yaw_rate,
            accel_fwd: s.accel_fwd,
            speed: s.speed,
            heading: s.heading_abs,
            dt: s.dt,
        }
    }
}

pub fn read_imu_log<R: BufRead>(reader: R) -> Result<Vec<ImuRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImuRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        rec.sample().validate().map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_imu_log<W: Write>(mut w: W, records: &[ImuRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cal() -> ImuCalibration<f64> {
        ImuCalibration::new(0.001, 0.5).unwrap()
    }

    fn sample(speed: f64, heading: f64, dt: f64) -> ImuSample<f64> {
        ImuSample {
            yaw_rate: 0.0,
            accel_fwd: 0.0,
            speed,
            heading_abs: heading,
            dt,
        }
    }

    #[test]
    fn integrate_examples() {
        let mut pre = Preintegrator::new(Pose2::identity(), &cal());
        pre.integrate(&sample(10.0, 0.0, 0.1)).unwrap();
        assert_abs_diff_eq!(pre.position().x(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pre.position().y(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pre.distance(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pre.elapsed(), 0.1, epsilon = 1e-12);

        let mut pre = Preintegrator::new(Pose2::new(3.0, 4.0, 0.2), &cal());
        pre.integrate(&sample(0.0, 0.2, 0.1)).unwrap();
        assert_eq!(pre.position().xy(), (3.0, 4.0));
        assert_abs_diff_eq!(pre.elapsed(), 0.1, epsilon = 1e-15);

        let mut pre = Preintegrator::new(Pose2::identity(), &cal());
        for _ in 0..100 {
            pre.integrate(&sample(8.2, 0.0, 0.01)).unwrap();
        }
        assert_abs_diff_eq!(pre.distance(), 8.2, epsilon = 1e-12);
    }

    #[test]
    fn integrate_rejects_bad_samples() {
        let mut pre = Preintegrator::new(Pose2::identity(), &cal());
        assert!(pre.integrate(&sample(f64::NAN, 0.0, 0.1)).is_err());
        assert!(pre.integrate(&sample(1.0, 0.0, 0.0)).is_err());
        assert_eq!(pre.elapsed(), 0.0);
    }

    #[test]
    fn heading_follows_absolute_channel_across_wrap() {
        let mut pre = Preintegrator::new(Pose2::new(0.0, 0.0, 3.1), &cal());
        pre.integrate(&sample(1.0, -3.1, 0.01)).unwrap();
        assert_abs_diff_eq!(pre.position().theta(), -3.1, epsilon = 1e-12);
    }

    #[test]
    fn cross_track_examples() {
        assert_eq!(cross_track_error(&cal(), 100.0, 0.0), 0.0);
        assert_abs_diff_eq!(
            cross_track_error(&cal(), 100.0, 10.0),
            3.0 * 100.0 * 0.001 * 10f64.sqrt(),
            epsilon = 1e-12
        );
        let c2 = ImuCalibration::new(0.002, 0.5).unwrap();
        assert_abs_diff_eq!(cross_track_error(&c2, 1000.0, 100.0), 60.0, epsilon = 1e-12);
    }

    #[test]
    fn along_track_examples() {
        let pre = Preintegrator::new(Pose2::identity(), &cal());
        assert_eq!(along_track_error(&pre), 0.0);

        // A constant input high-passes to zero after the first sample.
        let mut pre = Preintegrator::new(Pose2::identity(), &cal());
        for _ in 0..50 {
            let mut s = sample(1.0, 0.0, 0.01);
            s.accel_fwd = 0.7;
            pre.integrate(&s).unwrap();
        }
        assert_abs_diff_eq!(along_track_error(&pre), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn along_track_uses_window_std() {
        // Drive the residual window with an alternating signal and check the
        // formula against the window's own unbiased std.
        let mut pre = Preintegrator::new(Pose2::identity(), &cal());
        for k in 0..400 {
            let mut s = sample(1.0, 0.0, 0.01);
            s.accel_fwd = if k % 2 == 0 { 0.05 } else { -0.05 };
            pre.integrate(&s).unwrap();
        }
        let t = pre.elapsed();
        assert_abs_diff_eq!(
            along_track_error(&pre),
            0.5 * pre.residual_std() * t * t,
            epsilon = 1e-12
        );
        // std 0.05 over T = 4 s gives 0.4 m
        assert_abs_diff_eq!(0.5 * 0.05 * 4.0 * 4.0, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn running_std_is_unbiased() {
        let mut r = RunningStd::<f64>::default();
        for x in [1.0, 2.0, 3.0, 4.0] {
            r.push(x);
        }
        let mean = 2.5;
        let var: f64 = [1.0, 2.0, 3.0, 4.0].iter().map(|x: &f64| (x - mean).powi(2)).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(r.std(), var.sqrt(), epsilon = 1e-14);
        let mut one = RunningStd::<f64>::default();
        one.push(3.0);
        assert_eq!(one.std(), 0.0);
    }

    #[test]
    fn composite_examples() {
        let pre = Preintegrator::new(Pose2::identity(), &cal());
        let env = composite_error(&pre, &cal(), &Pose2::identity());
        assert_eq!(env, ErrorEnvelope::default());
        assert_eq!(composite_of(0.9, 0.4, 10.0), 0.9);
        assert_abs_diff_eq!(composite_of(0.1, 0.05, 20.0), 0.6, epsilon = 1e-15);
    }

    #[test]
    fn reset_anchor_examples() {
        let mut pre = Preintegrator::new(Pose2::new(5.0, 5.0, std::f64::consts::FRAC_PI_4), &cal());
        pre.integrate(&sample(8.2, std::f64::consts::FRAC_PI_4, 0.01)).unwrap();
        let v = pre.velocity();
        let before = pre.position();
        pre.reset_position_anchor((4.0, 6.0)).unwrap();
        assert_eq!(pre.position().xy(), (4.0, 6.0));
        assert_eq!(pre.position().theta(), before.theta());
        assert_eq!(pre.distance(), 0.0);
        assert_eq!(pre.elapsed(), 0.0);
        assert_eq!(pre.velocity(), v);
        assert_eq!(pre.residual_count(), 0);

        let env = composite_error(&pre, &cal(), &pre.position());
        assert_eq!(env.eps_imu, 0.0);
        assert!(pre.reset_position_anchor((f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn accel_velocity_source_integrates() {
        let mut pre = Preintegrator::new(Pose2::identity(), &cal())
            .with_velocity_source(VelocitySource::Accel, 0.0);
        for _ in 0..100 {
            let mut s = sample(0.0, 0.0, 0.01);
            s.accel_fwd = 1.0;
            pre.integrate(&s).unwrap();
        }
        assert_abs_diff_eq!(pre.velocity(), 1.0, epsilon = 1e-12);
        // rectangular rule: Σ_{k<100} k·0.01·0.01
        assert_abs_diff_eq!(pre.position().x(), 0.495, epsilon = 1e-12);
    }

    #[test]
    fn imu_log_round_trip() {
        let recs = vec![
            ImuRecord { t: 0.0, yaw_rate: 0.1, accel_fwd: -0.2, speed: 8.2, heading: 0.5, dt: 0.01 },
            ImuRecord { t: 0.01, yaw_rate: 0.0, accel_fwd: 0.0, speed: 8.3, heading: 0.51, dt: 0.01 },
        ];
        let mut buf = Vec::new();
        write_imu_log(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"t\":0.0,\"yaw_rate\":0.1,\"accel_fwd\":-0.2,\"speed\":8.2,\"heading\":0.5,\"dt\":0.01}"));
        assert_eq!(read_imu_log(&buf[..]).unwrap(), recs);
        assert!(read_imu_log(&b"{\"t\":0}\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn cross_track_monotone(d in 0.0..1e4_f64, t in 0.0..1e3_f64, dd in 0.0..100.0_f64, dt in 0.0..100.0_f64) {
            let c = cal();
            let base = cross_track_error(&c, d, t);
            prop_assert!(cross_track_error(&c, d + dd, t) >= base);
            prop_assert!(cross_track_error(&c, d, t + dt) >= base);
        }

        #[test]
        fn composite_dominates_terms(a in 0.0..100.0_f64, b in 0.0..100.0_f64, d in 0.0..1000.0_f64) {
            let e = composite_of(a, b, d);
            let floor = 0.03 * d;
            prop_assert!(e >= a && e >= b && e >= floor);
            prop_assert!(e == a || e == b || e == floor);
        }
    }
}

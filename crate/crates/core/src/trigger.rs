//! When to query the matcher, where to centre the crops, and the yaw gate.

use serde::{Deserialize, Serialize};

use crate::cvgl::{CropQuery, CvglFix, MeasurementSource};
use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    /// Error trigger fires at `eps_imu >= error_threshold`, m.
    pub error_threshold: f64,
    /// Time trigger fires at `time_since_fix > time_threshold`, s.
    pub time_threshold: f64,
    pub fwd_bias_coeff: f64,
    /// m
    pub fwd_bias_cap: f64,
    pub cross_coeff: f64,
    /// m
    pub cross_cap: f64,
    /// Largest accepted |yaw residual|, rad.
    pub yaw_gate: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            error_threshold: 1.0,
            time_threshold: 2.0,
            fwd_bias_coeff: 0.4,
            fwd_bias_cap: 15.0,
            cross_coeff: 0.5,
            cross_cap: 10.0,
            yaw_gate: 0.35,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("error_threshold", self.error_threshold),
            ("time_threshold", self.time_threshold),
            ("fwd_bias_coeff", self.fwd_bias_coeff),
            ("fwd_bias_cap", self.fwd_bias_cap),
            ("cross_coeff", self.cross_coeff),
            ("cross_cap", self.cross_cap),
            ("yaw_gate", self.yaw_gate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field: format!("trigger.{name}"),
                    msg: "must be finite and > 0".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TriggerState<T> {
    pub time_since_fix: T,
}

impl<T: Real> TriggerState<T> {
    pub fn advance(&mut self, dt: T) {
        self.time_since_fix += dt;
    }

    /// Called on an accepted fix, a yaw rejection, and an all-miss search.
    pub fn reset(&mut self) {
        self.time_since_fix = T::zero();
    }
}

/// Why a search was launched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerCause {
    Error,
    Time,
}

pub fn trigger_cause<T: Real>(cfg: &TriggerConfig, eps_imu: T, st: &TriggerState<T>) -> Option<TriggerCause> {
    if eps_imu >= lit(cfg.error_threshold) {
        Some(TriggerCause::Error)
    } else if st.time_since_fix > lit(cfg.time_threshold) {
        Some(TriggerCause::Time)
    } else {
        None
    }
}

pub fn should_trigger<T: Real>(cfg: &TriggerConfig, eps_imu: T, st: &TriggerState<T>) -> bool {
    trigger_cause(cfg, eps_imu, st).is_some()
}

/// `min(0.4·ε, 15)`: how far ahead of the filter position to centre the search.
pub fn forward_bias<T: Real>(cfg: &TriggerConfig, eps_imu: T) -> T {
    (lit::<T>(cfg.fwd_bias_coeff) * eps_imu).min(lit(cfg.fwd_bias_cap))
}

/// Cross arm length `min(0.5·ε, 10)`.
pub fn cross_arm<T: Real>(cfg: &TriggerConfig, eps_imu: T) -> T {
    (lit::<T>(cfg.cross_coeff) * eps_imu).min(lit(cfg.cross_cap))
}

/// Body-frame (forward, lateral) crop offsets: back, centre, forward, right, left.
pub fn five_point_offsets<T: Real>(cfg: &TriggerConfig, eps_imu: T) -> [(T, T); 5] {
    let d = cross_arm(cfg, eps_imu);
    let z = T::zero();
    [(-d, z), (z, z), (d, z), (z, -d), (z, d)]
}

// Tie-break order over the offsets above: centre, forward, back, left, right.
const TIE_PRIORITY: [usize; 5] = [1, 2, 0, 4, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchOptions {
    /// Query only the bias-corrected centre.
    pub single_crop: bool,
    /// Skip the forward shift of the search centre.
    pub no_forward_bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult<T> {
    pub fix: CvglFix<T>,
    pub query: CropQuery<T>,
}

/// Centre of the five-point cross: the filter position pushed forward by the bias.
pub fn search_center<T: Real>(cfg: &TriggerConfig, opts: SearchOptions, ukf_pose: &Pose2<T>, eps_imu: T) -> (T, T) {
    let shift = if opts.no_forward_bias {
        T::zero()
    } else {
        forward_bias(cfg, eps_imu)
    };
    let (s, c) = ukf_pose.theta().sin_cos();
    (ukf_pose.x() + c * shift, ukf_pose.y() + s * shift)
}

/// Query the crops around the forward-biased filter position and keep the
/// highest-weight return. `None` if every crop missed.
pub fn multicrop_search<T: Real, S: MeasurementSource<T> + ?Sized>(
    cfg: &TriggerConfig,
    opts: SearchOptions,
    source: &mut S,
    ukf_pose: &Pose2<T>,
    eps_imu: T,
    frame_index: usize,
    truth: Option<&Pose2<T>>,
) -> Result<Option<SearchResult<T>>> {
    if !ukf_pose.is_finite() || !eps_imu.is_finite() {
        return Err(Error::NonFinite("multicrop_search input"));
    }
    let heading = ukf_pose.theta();
    let (s, c) = heading.sin_cos();
    let (cx, cy) = search_center(cfg, opts, ukf_pose, eps_imu);

    let offsets = five_point_offsets(cfg, eps_imu);
    let mut results: [Option<SearchResult<T>>; 5] = [None; 5];
    for (slot, &(f, l)) in offsets.iter().enumerate() {
        if opts.single_crop && slot != 1 {
            continue;
        }
        let center = (cx + c * f - s * l, cy + s * f + c * l);
        let query = CropQuery::new(center, heading, frame_index)?;
        results[slot] = source
            .query(&query, truth)?
            .map(|fix| SearchResult { fix, query });
    }

    let mut best: Option<SearchResult<T>> = None;
    for &slot in &TIE_PRIORITY {
        if let Some(r) = results[slot] {
            if best.is_none_or(|b| r.fix.weight > b.fix.weight) {
                best = Some(r);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateDecision<T> {
    Accepted,
    Rejected { yaw_residual: T },
}

/// Reject fixes whose heading disagrees with the compass by more than the gate.
pub fn yaw_gate<T: Real>(cfg: &TriggerConfig, fix: &CvglFix<T>) -> GateDecision<T> {
    let r = fix.yaw_residual();
    if r.abs() <= lit(cfg.yaw_gate) {
        GateDecision::Accepted
    } else {
        GateDecision::Rejected { yaw_residual: r }
    }
}

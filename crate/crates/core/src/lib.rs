//! GNSS-free planar localisation: IMU dead-reckoning with a closed-form drift
//! envelope, trigger-gated cross-view position fixes, UKF fusion with
//! confidence-scaled anisotropic noise, and an SE(2) factor-graph smoother.
//!
//! Numeric modules are generic over [`Real`] (`f32` or `f64`); the aliases
//! below pin the common `f64` instantiations. The simulation harness and file
//! formats work in `f64`.

pub mod config;
pub mod cvgl;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod imu;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod sim;
pub mod smoothing;
pub mod trigger;
pub mod ukf;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Pose2 = geometry::Pose2<f64>;
pub type Pose2F32 = geometry::Pose2<f32>;
pub type BodyIncrement = geometry::BodyIncrement<f64>;
pub type Rot2 = geometry::Rot2<f64>;
pub type ImuSample = imu::ImuSample<f64>;
pub type ImuCalibration = imu::ImuCalibration<f64>;
pub type Preintegrator = imu::Preintegrator<f64>;
pub type ErrorEnvelope = imu::ErrorEnvelope<f64>;
pub type CropQuery = cvgl::CropQuery<f64>;
pub type CvglFix = cvgl::CvglFix<f64>;
pub type UkfState = ukf::UkfState<f64>;
pub type UkfStateF32 = ukf::UkfState<f32>;

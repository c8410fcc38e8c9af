//! Run configuration, read from TOML.
//!
//! ```toml
//! [scenario]
//! waypoints = [[0, 0], [200, 0], [200, 200]]
//! speed_profile = [10]
//! seed = 7
//!
//! [trigger]
//! time_threshold = 2.0
//!
//! [matcher]
//! symmetry_fail_prob = 0.15
//!
//! [ablation]
//! single_crop = true
//! ```
//!
//! Every section and field is optional and falls back to its default.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::cvgl::SimMatcherConfig;
use crate::error::{Error, Result};
use crate::graph::{LmOptions, LoopClosureConfig};
use crate::imu::{ImuCalibration, VelocitySource, DEFAULT_ACCEL_HP_CUTOFF_HZ};
use crate::sim::ScenarioConfig;
use crate::trigger::TriggerConfig;
use crate::ukf::SigmaParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuSettings {
    /// Gyro noise density assumed by the error model, rad/√s. Defaults to
    /// the scenario's `gyro_noise`.
    pub sigma_omega: Option<f64>,
    /// Hz
    pub accel_hp_cutoff: f64,
    pub velocity_source: VelocitySource,
}

impl Default for ImuSettings {
    fn default() -> Self {
        Self {
            sigma_omega: None,
            accel_hp_cutoff: DEFAULT_ACCEL_HP_CUTOFF_HZ,
            velocity_source: VelocitySource::Speed,
        }
    }
}

impl ImuSettings {
    pub fn calibration(&self, scenario_gyro_noise: f64) -> Result<ImuCalibration<f64>> {
        let sigma = self.sigma_omega.unwrap_or(scenario_gyro_noise);
        ImuCalibration::new(sigma, self.accel_hp_cutoff).map_err(|e| Error::Config {
            field: "imu".into(),
            msg: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSettings {
    pub loops: LoopClosureConfig,
    pub lm: LmOptions,
    pub disable_loop_closures: bool,
}

/// Mechanisms that can be switched off for ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub no_yaw_gate: bool,
    pub single_crop: bool,
    pub isotropic_noise: bool,
    pub no_forward_bias: bool,
    /// Report the online filter; skip the smoother.
    pub ukf_only: bool,
    /// The matcher never returns a fix.
    pub disable_matcher: bool,
}

impl AblationFlags {
    /// The ablation matrix: `full` followed by one row per switched-off mechanism.
    pub fn matrix() -> Vec<(&'static str, AblationFlags)> {
        let none = AblationFlags::default();
        vec![
            ("full", none),
            ("no_yaw_gate", AblationFlags { no_yaw_gate: true, ..none }),
            ("single_crop", AblationFlags { single_crop: true, ..none }),
            ("isotropic", AblationFlags { isotropic_noise: true, ..none }),
            ("no_fwd_bias", AblationFlags { no_forward_bias: true, ..none }),
            ("ukf_only", AblationFlags { ukf_only: true, ..none }),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub trigger: TriggerConfig,
    pub matcher: SimMatcherConfig,
    pub sigma: SigmaParams,
    pub imu: ImuSettings,
    pub graph: GraphSettings,
    pub ablation: AblationFlags,
}

impl RunConfig {
    pub fn reference() -> Self {
        Self {
            scenario: ScenarioConfig::reference(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.trigger.validate()?;
        self.matcher.validate()?;
        self.sigma.validate()?;
        self.imu.calibration(self.scenario.gyro_noise)?;
        let lm = &self.graph.lm;
        if lm.max_iterations == 0 || !(lm.relative_tolerance >= 0.0) || !(lm.initial_lambda > 0.0) {
            return Err(Error::Config {
                field: "graph.lm".into(),
                msg: "max_iterations must be > 0, relative_tolerance >= 0, initial_lambda > 0".into(),
            });
        }
        if !(lm.lambda_up > 1.0 && lm.lambda_down > 0.0 && lm.lambda_down < 1.0) {
            return Err(Error::Config {
                field: "graph.lm".into(),
                msg: "need lambda_up > 1 and 0 < lambda_down < 1".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg = RunConfig::from_toml("[scenario]\nwaypoints = [[0, 0], [100, 0]]\n").unwrap();
        assert_eq!(cfg.trigger, TriggerConfig::default());
        assert_eq!(cfg.scenario.waypoints, vec![[0.0, 0.0], [100.0, 0.0]]);
        assert_eq!(cfg.scenario.imu_rate, 100.0);
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::reference();
        cfg.ablation.single_crop = true;
        cfg.imu.sigma_omega = Some(0.003);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let err = RunConfig::from_toml("[trigger]\nbogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        let err = RunConfig::from_toml("[scenario]\nwaypoints = [[0, 0], [100, 0]]\n[trigger]\nyaw_gate = -1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("trigger.yaw_gate"), "{err}");
        let err = RunConfig::from_toml("[scenario]\nwaypoints = [[0, 0], [100, 0]]\ncamera_rate = 200\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("camera_rate"), "{err}");
    }

    #[test]
    fn ablation_rows() {
        let names: Vec<_> = AblationFlags::matrix().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["full", "no_yaw_gate", "single_crop", "isotropic", "no_fwd_bias", "ukf_only"]);
    }
}

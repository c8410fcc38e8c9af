//! Synthetic drives: ground truth, sensor streams and the end-to-end pipeline.

mod scenario;
mod pipeline;
mod sensors;

pub use scenario::{
    block_revisit_route, generate_trajectory, parallel_road_route, staircase_route, straight_route, Path,
    ScenarioConfig, Trajectory, TruthSample,
};
pub use sensors::synthesize_imu;
pub use pipeline::{
    ablation_study, monte_carlo, monte_carlo_map, quantile, replay, run_drive, run_pipeline, AblationRow, DriveInputs,
    FixEvent, FixOutcome, MonteCarloReport, OutageSource, Percentiles, RunResult, RunSummary, SimulatedRun,
    TriggerEvent,
};

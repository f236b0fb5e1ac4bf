//! Simulation harness: scenario files, the closed loop, bandwidth sweeps,
//! profile comparisons, and the built-in task suite.

mod compare;
mod config;
mod extract;
mod metrics;
mod run;
pub mod suite;
mod sweep;

use thiserror::Error;

use crate::world::{ObjectId, RobotId};

pub use compare::{compare_profiles, write_compare_csv, CompareRow, Profile, ProfileFile};
pub use config::{
    nominal_duration, ClassifierKind, DetectorConfig, MotionSpec, ObjectSpec, OffloadConfig,
    PlannerConfig, PlannerKind, RecoveryMotionConfig, RobotSpec, ScenarioConfig, VerifyConfig,
    WorkspaceSpec, FORMAT_VERSION,
};
pub use extract::{
    cloud_caption, edge_points_from_clouds, scene_graph_from_clouds, write_edge_points,
};
pub use metrics::{
    write_events_log, write_frames_csv, write_metrics_csv, FaultRecord, FrameLog, RunMetrics,
};
pub use run::{
    measure_sizes, motion_goal, offload_decision, reverify, run_scenario, MotionRecovery, RunOutput,
};
pub use sweep::{log_space, sweep_bandwidth, write_sweep_csv, SweepRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error("unsupported scenario version {0}")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown robot id {0}")]
    UnknownRobot(RobotId),
    #[error("unknown object id {0}")]
    UnknownObject(ObjectId),
    #[error("unknown caption `{0}`")]
    UnknownCaption(String),
}

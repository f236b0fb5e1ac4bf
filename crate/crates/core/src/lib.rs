//! Goal-oriented communication loop for robotic fault detection and
//! recovery.
//!
//! A robot streams nothing while things go to plan. When the scene graph of
//! the workspace departs from what the current motion should produce, the
//! fault is classified and only the representation the recovery planner
//! needs goes over the wireless link: the scene graph for task-level faults,
//! saliency-selected edge points for motion-level faults. Motion-level
//! recoveries are checked against a lightweight digital twin rebuilt from
//! those edge points before the robot moves.
//!
//! The crate is split along that pipeline:
//!
//! - [`channel`]: Nakagami-m fading, path loss, SNR and transmission time;
//! - [`world`]: a deterministic box-world simulator with fault injection and
//!   synthetic point clouds;
//! - [`scene_graph`]: relation classification, point-cloud encoders and a
//!   reference triplet GCN;
//! - [`fault_detect`]: scene-graph diffing against expected transitions;
//! - [`edge_points`]: attention/geometric saliency, clustering and
//!   penalised B-spline contours;
//! - [`offload`]: local versus edge detection time and the bandwidth
//!   thresholds between them;
//! - [`twin`] and [`planner`]: verification and the propose/refine loop;
//! - [`harness`]: scenarios, closed-loop runs, sweeps and comparisons.

pub mod channel;
pub mod edge_points;
pub mod error;
pub mod fault_detect;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod offload;
pub mod planner;
pub mod scene_graph;
pub mod twin;
pub mod world;

pub use error::{Error, FormatError, Result};

//! Recovery planners behind one contract.
//!
//! Task-level faults are answered with symbolic pick/place actions, motion-level
//! faults with waypoint trajectories that the digital twin verifies. The
//! rule-based planner is the reference; the remote client speaks a small
//! line-oriented protocol to any external service and falls back to the
//! rule-based planner whenever that service misbehaves.

mod remote;
mod rule;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault_detect::FaultEvent;
use crate::geometry::Vec3;
use crate::scene_graph::{Relation, SceneGraph3D, SgError, Triplet};
use crate::twin::{DigitalTwin, Trajectory, VerificationReport};
use crate::world::ObjectId;

pub use remote::{
    motion_request, parse_actions, parse_waypoints, task_request, FallbackReason, RemotePlanner,
    DEFAULT_TIMEOUT, PLANNER_URL_ENV,
};
pub use rule::{detour_offset, RuleBasedPlanner};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("planner called with a {0} fault")]
    WrongFaultKind(crate::fault_detect::FaultKind),
    #[error("goal cannot be reached: {0}")]
    Unrecoverable(String),
    #[error("planner response violates the schema: {0}")]
    Schema(String),
    #[error("planner request timed out")]
    Timeout,
    #[error("planner endpoint refused the connection")]
    ConnectionRefused,
    #[error("planner transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    SceneGraph(#[from] SgError),
}

/// One placement the task must achieve: `(object, relation, support)`,
/// with the slot it occupies on the support.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoalPlacement {
    pub object: String,
    pub relation: Relation,
    pub support: String,
    #[serde(default)]
    pub slot: usize,
}

impl GoalPlacement {
    pub fn triplet(&self) -> Result<Triplet, SgError> {
        Triplet::new(self.object.as_str(), self.relation, self.support.as_str())
    }
}

/// Symbolic high-level action of a task-level recovery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Pick {
        object: String,
    },
    Place {
        object: String,
        support: String,
        slot: usize,
    },
}

impl Action {
    /// Wire form: `pick|object` or `place|object|support|slot`.
    pub fn wire_line(&self) -> String {
        match self {
            Action::Pick { object } => format!("pick|{object}"),
            Action::Place {
                object,
                support,
                slot,
            } => format!("place|{object}|{support}|{slot}"),
        }
    }

    pub fn object(&self) -> &str {
        match self {
            Action::Pick { object } | Action::Place { object, .. } => object,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.wire_line())
    }
}

/// What a planner returns.
#[derive(Debug, Clone, PartialEq)]
pub enum RecoveryPlan {
    /// The goal already holds; nothing to do.
    Noop,
    Actions(Vec<Action>),
    Motion(Trajectory),
}

impl RecoveryPlan {
    /// Bytes of the plan as it would travel on the downlink.
    pub fn wire_text(&self) -> String {
        match self {
            RecoveryPlan::Noop => "noop\n".to_string(),
            RecoveryPlan::Actions(a) => a.iter().map(|x| x.wire_line() + "\n").collect(),
            RecoveryPlan::Motion(t) => t
                .waypoints
                .iter()
                .map(|w| format!("wp {} {} {}\n", w.x, w.y, w.z))
                .collect(),
        }
    }
}

/// Input of a task-level recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskContext {
    pub fault: FaultEvent,
    /// Latest scene graph.
    pub scene: SceneGraph3D,
    /// Placements the recovery has to (re-)establish.
    pub goal: Vec<GoalPlacement>,
    /// Captions of every object the robot can currently see.
    pub known_objects: BTreeSet<String>,
}

/// Per-object digest of the twin that the motion planner reasons about.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleSummary {
    pub object_id: ObjectId,
    pub centroid: Vec3,
    /// Largest horizontal distance from the centroid to a hull vertex.
    pub horizontal_radius: f64,
    pub min_z: f64,
    pub max_z: f64,
}

/// Input of a motion-level recovery. `history` grows by one entry per
/// round; a `None` trajectory marks malformed planner output.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionContext {
    pub fault: FaultEvent,
    pub start: Vec3,
    pub goal: Vec3,
    pub obstacles: Vec<ObstacleSummary>,
    /// Required clearance, meters.
    pub delta: f64,
    pub history: Vec<(Option<Trajectory>, VerificationReport)>,
}

impl MotionContext {
    pub fn from_twin(
        fault: FaultEvent,
        start: Vec3,
        goal: Vec3,
        twin: &DigitalTwin,
        delta: f64,
    ) -> Self {
        let obstacles = twin
            .objects
            .iter()
            .map(|o| {
                let bb = o.hull.aabb();
                ObstacleSummary {
                    object_id: o.object_id,
                    centroid: o.hull.centroid(),
                    horizontal_radius: o.hull.horizontal_radius(),
                    min_z: bb.min.z,
                    max_z: bb.max.z,
                }
            })
            .collect();
        Self {
            fault,
            start,
            goal,
            obstacles,
            delta,
            history: Vec::new(),
        }
    }

    pub fn obstacle(&self, id: ObjectId) -> Option<&ObstacleSummary> {
        self.obstacles.iter().find(|o| o.object_id == id)
    }
}

pub trait TaskPlanner {
    fn replan_task(&mut self, ctx: &TaskContext) -> Result<RecoveryPlan, PlanError>;
}

pub trait MotionPlanner {
    /// First proposal of a round sequence.
    fn propose(&mut self, ctx: &MotionContext) -> Result<Trajectory, PlanError>;
    /// Next proposal after `report` rejected the previous one.
    fn refine(
        &mut self,
        ctx: &MotionContext,
        report: &VerificationReport,
    ) -> Result<Trajectory, PlanError>;
}

/// Planner usable for both fault kinds.
pub trait Planner: TaskPlanner + MotionPlanner {}

impl<T: TaskPlanner + MotionPlanner> Planner for T {}

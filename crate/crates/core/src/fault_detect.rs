//! Fault detection by comparing scene graphs with the symbolic effect each
//! motion is expected to have.
//!
//! Two signatures are recognised:
//! - task level: when a motion completes, one of the relations it should
//!   have produced is missing (or one it should have removed lingers);
//! - motion level: on any frame, a robot is `next to` something that is
//!   neither part of the task nor already known to the planner.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scene_graph::{Relation, SceneGraph3D, Triplet};
use crate::world::{MotionCommand, MotionKind, RobotId, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    TaskLevel,
    MotionLevel,
}

impl FaultKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FaultKind::TaskLevel => "task_level",
            FaultKind::MotionLevel => "motion_level",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Symbolic effect of one motion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectedTransition {
    pub motion_id: u64,
    /// Caption of the robot executing the motion.
    pub robot: String,
    pub removed: BTreeSet<Triplet>,
    pub added: BTreeSet<Triplet>,
    /// Set once the motion has finished; only then is it checked.
    pub completed: bool,
}

impl ExpectedTransition {
    /// Returns `None` if a triplet is both expected to vanish and appear.
    pub fn new(
        motion_id: u64,
        robot: impl Into<String>,
        removed: BTreeSet<Triplet>,
        added: BTreeSet<Triplet>,
    ) -> Option<Self> {
        if removed.intersection(&added).next().is_some() {
            return None;
        }
        Some(Self {
            motion_id,
            robot: robot.into(),
            removed,
            added,
            completed: false,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.removed.is_empty() && self.added.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultEvent {
    pub kind: FaultKind,
    pub frame_index: u64,
    /// Missing expected triplets, lingering ones, or unexpected proximity.
    pub evidence: Vec<Triplet>,
    /// Non-robot captions named by the evidence.
    pub implicated: Vec<String>,
    /// Robot whose motion is affected.
    pub robot: String,
}

impl FaultEvent {
    /// Log form `frame,kind,evidence` with evidence triplets joined by `;`.
    pub fn log_line(&self) -> String {
        let ev: Vec<String> = self.evidence.iter().map(Triplet::wire_line).collect();
        format!("{},{},{}", self.frame_index, self.kind, ev.join(";"))
    }
}

/// Who counts as a robot, which captions belong to the task, and which
/// `(robot, caption)` proximities the planner has already dealt with.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Relevance {
    pub robots: BTreeSet<String>,
    pub task_relevant: BTreeSet<String>,
    pub acknowledged: BTreeSet<(String, String)>,
}

impl Relevance {
    fn excused(&self, robot: &str, other: &str) -> bool {
        self.robots.contains(other)
            || self.task_relevant.contains(other)
            || self
                .acknowledged
                .contains(&(robot.to_string(), other.to_string()))
    }
}

fn implicated_of(evidence: &[Triplet], robots: &BTreeSet<String>) -> Vec<String> {
    let mut set = BTreeSet::new();
    for t in evidence {
        for c in [&t.subject, &t.object] {
            if !robots.contains(c) {
                set.insert(c.clone());
            }
        }
    }
    set.into_iter().collect()
}

/// Checks one frame.
///
/// Every completed expectation in `expected` is checked against `curr`; the
/// first violated one yields a task-level event. Otherwise `curr` is scanned
/// for unexcused robot proximity. Proximity that already existed in `prev`
/// is still reported (the robot may have been idle), but newly emerged
/// triplets are listed first in the evidence.
pub fn detect(
    prev: &SceneGraph3D,
    curr: &SceneGraph3D,
    expected: &[ExpectedTransition],
    relevance: &Relevance,
) -> Option<FaultEvent> {
    for exp in expected.iter().filter(|e| e.completed) {
        let mut evidence: Vec<Triplet> = exp
            .added
            .iter()
            .filter(|t| !curr.contains(t))
            .cloned()
            .collect();
        evidence.extend(exp.removed.iter().filter(|t| curr.contains(t)).cloned());
        if !evidence.is_empty() {
            return Some(FaultEvent {
                kind: FaultKind::TaskLevel,
                frame_index: curr.frame_index,
                implicated: implicated_of(&evidence, &relevance.robots),
                evidence,
                robot: exp.robot.clone(),
            });
        }
    }

    let mut hits: Vec<(&str, &Triplet)> = Vec::new();
    for t in curr.triplets().filter(|t| t.relation == Relation::NextTo) {
        for robot in [&t.subject, &t.object] {
            if relevance.robots.contains(robot) {
                let other = t.other(robot).expect("robot is a party");
                if !relevance.excused(robot, other) {
                    hits.push((robot, t));
                }
            }
        }
    }
    let (robot, _) = *hits.first()?;
    let mut evidence: Vec<Triplet> = hits
        .iter()
        .filter(|(r, _)| *r == robot)
        .map(|(_, t)| (*t).clone())
        .collect();
    // newly emerged proximity first, stable otherwise
    evidence.sort_by_key(|t| prev.contains(t));
    Some(FaultEvent {
        kind: FaultKind::MotionLevel,
        frame_index: curr.frame_index,
        implicated: implicated_of(&evidence, &relevance.robots),
        evidence,
        robot: robot.to_string(),
    })
}

/// What goes on the uplink for a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadChoice {
    None,
    SceneGraph,
    EdgePoints,
}

/// Goal-oriented trigger: nothing is sent unless a fault was detected, and
/// the representation sent depends on the fault kind. Either fault also
/// stops the affected robot.
pub fn transmission_trigger(event: Option<&FaultEvent>) -> PayloadChoice {
    match event.map(|e| e.kind) {
        None => PayloadChoice::None,
        Some(FaultKind::TaskLevel) => PayloadChoice::SceneGraph,
        Some(FaultKind::MotionLevel) => PayloadChoice::EdgePoints,
    }
}

/// Instantiates the expectation template of `cmd` for `robot` from the
/// scene graph observed when the motion starts.
///
/// - Pick: the object's resting relations vanish, `(object, grasped by, robot)` appears.
/// - Move/path while holding something: the grasp must still hold afterwards.
/// - Place: the grasp vanishes, `(object, standing on | inside, support)` appears.
pub fn expected_transition(
    ws: &Workspace,
    robot: RobotId,
    cmd: &MotionCommand,
    at_start: &SceneGraph3D,
) -> ExpectedTransition {
    let r = ws.robot(robot).expect("robot exists");
    let rc = r.caption.clone();
    let mut removed = BTreeSet::new();
    let mut added = BTreeSet::new();
    let grasp = |obj: &str| Triplet::new(obj, Relation::GraspedBy, rc.as_str()).ok();
    match &cmd.kind {
        MotionKind::Pick { object } => {
            if let Some(o) = ws.object(*object) {
                removed.extend(
                    at_start
                        .triplets()
                        .filter(|t| {
                            t.subject == o.caption
                                && matches!(t.relation, Relation::StandingOn | Relation::Inside)
                        })
                        .cloned(),
                );
                added.extend(grasp(&o.caption));
            }
        }
        MotionKind::MoveTo { .. } | MotionKind::FollowPath { .. } => {
            if let Some(o) = r.carried_object.and_then(|id| ws.object(id)) {
                added.extend(grasp(&o.caption));
            }
        }
        MotionKind::Place { object, target } => {
            if let (Some(o), Some(s)) = (ws.object(*object), ws.object(target.onto)) {
                removed.extend(grasp(&o.caption));
                let rel = if s.container {
                    Relation::Inside
                } else {
                    Relation::StandingOn
                };
                added.extend(Triplet::new(o.caption.as_str(), rel, s.caption.as_str()).ok());
            }
        }
    }
    ExpectedTransition::new(cmd.id, rc, removed, added).expect("templates never overlap")
}

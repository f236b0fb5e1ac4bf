//! Reference planners: goal regression over the scene graph for task-level
//! faults and a growing-detour heuristic for motion-level faults.

use super::{
    Action, MotionContext, MotionPlanner, PlanError, RecoveryPlan, TaskContext, TaskPlanner,
};
use crate::fault_detect::FaultKind;
use crate::geometry::Vec3;
use crate::scene_graph::{Relation, Triplet};
use crate::twin::{Trajectory, Verdict, VerificationReport};

/// Growth of the detour offset per failed refinement.
const GROWTH: f64 = 1.5;

/// Detour offset for the `k`-th refinement (k = 0 for the first one):
/// obstacle radius plus clearance, grown geometrically.
pub fn detour_offset(radius: f64, delta: f64, k: usize) -> f64 {
    (radius + delta) * GROWTH.powi(k as i32)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RuleBasedPlanner;

impl RuleBasedPlanner {
    fn straight(ctx: &MotionContext) -> Result<Trajectory, PlanError> {
        Trajectory::new(vec![ctx.start, ctx.goal], ctx.goal, ctx.history.len() + 1)
            .map_err(|e| PlanError::Unrecoverable(e.to_string()))
    }
}

impl TaskPlanner for RuleBasedPlanner {
    fn replan_task(&mut self, ctx: &TaskContext) -> Result<RecoveryPlan, PlanError> {
        if ctx.fault.kind != FaultKind::TaskLevel {
            return Err(PlanError::WrongFaultKind(ctx.fault.kind));
        }
        let mut missing = Vec::new();
        for g in &ctx.goal {
            if !ctx.scene.contains(&g.triplet()?) {
                missing.push(g);
            }
        }
        if missing.is_empty() {
            return Ok(RecoveryPlan::Noop);
        }
        for g in &missing {
            for c in [&g.object, &g.support] {
                if !ctx.known_objects.contains(c) {
                    return Err(PlanError::Unrecoverable(format!(
                        "`{c}` is not in the scene"
                    )));
                }
            }
        }
        missing.sort_by(|a, b| a.slot.cmp(&b.slot).then_with(|| a.object.cmp(&b.object)));
        let mut actions = Vec::with_capacity(2 * missing.len());
        for g in missing {
            let held = Triplet::new(
                g.object.as_str(),
                Relation::GraspedBy,
                ctx.fault.robot.as_str(),
            )
            .map(|t| ctx.scene.contains(&t))
            .unwrap_or(false);
            if !held {
                actions.push(Action::Pick {
                    object: g.object.clone(),
                });
            }
            actions.push(Action::Place {
                object: g.object.clone(),
                support: g.support.clone(),
                slot: g.slot,
            });
        }
        Ok(RecoveryPlan::Actions(actions))
    }
}

impl MotionPlanner for RuleBasedPlanner {
    fn propose(&mut self, ctx: &MotionContext) -> Result<Trajectory, PlanError> {
        Self::straight(ctx)
    }

    /// Rebuilds `start -> W -> goal`, where `W` sits beside the offending
    /// hull's centroid, on the side of the start-goal line away from it, at
    /// the height the straight line has there. The offset grows with every
    /// refinement.
    fn refine(
        &mut self,
        ctx: &MotionContext,
        report: &VerificationReport,
    ) -> Result<Trajectory, PlanError> {
        let obstacle = match (
            report.verdict,
            report.object.and_then(|id| ctx.obstacle(id)),
        ) {
            (Verdict::Collision, Some(o)) => *o,
            _ => return Self::straight(ctx),
        };
        let k = ctx.history.len().saturating_sub(1);
        let d = detour_offset(obstacle.horizontal_radius, ctx.delta, k);

        let dir = Vec3::new(ctx.goal.x - ctx.start.x, ctx.goal.y - ctx.start.y, 0.0);
        let len = dir.norm();
        let left = if len > 1e-12 {
            Vec3::new(-dir.y, dir.x, 0.0) / len
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let c = obstacle.centroid;
        let rel = Vec3::new(c.x - ctx.start.x, c.y - ctx.start.y, 0.0);
        let side = if rel.dot(&left) > 0.0 { -1.0 } else { 1.0 };
        let s = if len > 1e-12 {
            (rel.dot(&dir) / (len * len)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let z = ctx.start.z + s * (ctx.goal.z - ctx.start.z);
        let w = Vec3::new(c.x, c.y, z) + left * (side * d);
        Trajectory::new(
            vec![ctx.start, w, ctx.goal],
            ctx.goal,
            ctx.history.len() + 1,
        )
        .map_err(|e| PlanError::Unrecoverable(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault_detect::FaultEvent;
    use crate::planner::{GoalPlacement, ObstacleSummary};
    use crate::scene_graph::SceneGraph3D;

    fn event(kind: FaultKind) -> FaultEvent {
        FaultEvent {
            kind,
            frame_index: 3,
            evidence: vec![Triplet::new("parcel", Relation::GraspedBy, "robot").unwrap()],
            implicated: vec!["parcel".into()],
            robot: "robot".into(),
        }
    }

    fn task_ctx(scene: Vec<Triplet>) -> TaskContext {
        TaskContext {
            fault: event(FaultKind::TaskLevel),
            scene: SceneGraph3D::from_triplets(3, scene).unwrap(),
            goal: vec![
                GoalPlacement {
                    object: "parcel".into(),
                    relation: Relation::StandingOn,
                    support: "pallet".into(),
                    slot: 1,
                },
                GoalPlacement {
                    object: "box".into(),
                    relation: Relation::StandingOn,
                    support: "pallet".into(),
                    slot: 0,
                },
            ],
            known_objects: ["parcel", "box", "pallet", "table"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    #[test]
    fn satisfied_goal_is_noop() {
        let ctx = task_ctx(vec![
            Triplet::new("parcel", Relation::StandingOn, "pallet").unwrap(),
            Triplet::new("box", Relation::StandingOn, "pallet").unwrap(),
        ]);
        assert_eq!(
            RuleBasedPlanner.replan_task(&ctx).unwrap(),
            RecoveryPlan::Noop
        );
    }

    #[test]
    fn actions_follow_slot_order() {
        let ctx = task_ctx(vec![
            Triplet::new("parcel", Relation::StandingOn, "table").unwrap()
        ]);
        let RecoveryPlan::Actions(a) = RuleBasedPlanner.replan_task(&ctx).unwrap() else {
            panic!("expected actions");
        };
        let lines: Vec<String> = a.iter().map(Action::wire_line).collect();
        assert_eq!(
            lines,
            [
                "pick|box",
                "place|box|pallet|0",
                "pick|parcel",
                "place|parcel|pallet|1"
            ]
        );
    }

    #[test]
    fn held_object_is_not_picked_again() {
        let mut ctx = task_ctx(vec![
            Triplet::new("parcel", Relation::GraspedBy, "robot").unwrap(),
            Triplet::new("box", Relation::StandingOn, "pallet").unwrap(),
        ]);
        ctx.goal.truncate(1);
        let plan = RuleBasedPlanner.replan_task(&ctx).unwrap();
        assert_eq!(plan.wire_text(), "place|parcel|pallet|1\n");
    }

    #[test]
    fn missing_object_is_unrecoverable() {
        let mut ctx = task_ctx(vec![]);
        ctx.known_objects.remove("parcel");
        assert!(matches!(
            RuleBasedPlanner.replan_task(&ctx),
            Err(PlanError::Unrecoverable(_))
        ));
        let mut m = task_ctx(vec![]);
        m.fault.kind = FaultKind::MotionLevel;
        assert!(matches!(
            RuleBasedPlanner.replan_task(&m),
            Err(PlanError::WrongFaultKind(_))
        ));
    }

    fn motion_ctx() -> MotionContext {
        MotionContext {
            fault: event(FaultKind::MotionLevel),
            start: Vec3::new(-0.5, 0.0, 1.0),
            goal: Vec3::new(0.5, 0.0, 1.0),
            obstacles: vec![ObstacleSummary {
                object_id: 9,
                centroid: Vec3::new(0.0, 0.05, 0.9),
                horizontal_radius: 0.1,
                min_z: 0.7,
                max_z: 1.1,
            }],
            delta: 0.03,
            history: Vec::new(),
        }
    }

    #[test]
    fn detour_goes_away_from_the_obstacle_and_grows() {
        let mut ctx = motion_ctx();
        let straight = RuleBasedPlanner.propose(&ctx).unwrap();
        assert_eq!(straight.waypoints.len(), 2);
        let report = VerificationReport {
            verdict: Verdict::Collision,
            object: Some(9),
            segment: Some(0),
            clearance: Some(0.0),
            goal_distance: None,
        };
        ctx.history.push((Some(straight), report.clone()));
        let first = RuleBasedPlanner.refine(&ctx, &report).unwrap();
        assert_eq!(first.waypoints.len(), 3);
        // obstacle sits on the +y side, so the detour bends to -y
        assert!((first.waypoints[1].y - (0.05 - 0.13)).abs() < 1e-12);
        assert_eq!(first.waypoints[1].z, 1.0);
        ctx.history.push((Some(first.clone()), report.clone()));
        let second = RuleBasedPlanner.refine(&ctx, &report).unwrap();
        assert!(second.waypoints[1].y < first.waypoints[1].y);
        assert!(detour_offset(0.1, 0.03, 1) > detour_offset(0.1, 0.03, 0));
    }
}

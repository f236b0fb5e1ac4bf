mod common;

use std::time::Duration;

use goc_core::fault_detect::{FaultEvent, FaultKind};
use goc_core::geometry::Vec3;
use goc_core::planner::{
    detour_offset, parse_actions, Action, FallbackReason, GoalPlacement, MotionContext,
    MotionPlanner, ObstacleSummary, RecoveryPlan, RemotePlanner, RuleBasedPlanner, TaskContext,
    TaskPlanner,
};
use goc_core::scene_graph::{Relation, SceneGraph3D, Triplet};
use goc_core::twin::{Verdict, VerificationReport};

fn fault(kind: FaultKind) -> FaultEvent {
    FaultEvent {
        kind,
        frame_index: 12,
        evidence: vec![Triplet::new("parcel", Relation::StandingOn, "table").unwrap()],
        implicated: vec!["parcel".into()],
        robot: "arm".into(),
    }
}

fn dropped_parcel() -> TaskContext {
    TaskContext {
        fault: fault(FaultKind::TaskLevel),
        scene: SceneGraph3D::from_triplets(
            12,
            [Triplet::new("parcel", Relation::StandingOn, "table").unwrap()],
        )
        .unwrap(),
        goal: vec![GoalPlacement {
            object: "parcel".into(),
            relation: Relation::StandingOn,
            support: "pallet".into(),
            slot: 2,
        }],
        known_objects: ["parcel", "pallet", "table"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }
}

fn motion_ctx() -> MotionContext {
    MotionContext {
        fault: fault(FaultKind::MotionLevel),
        start: Vec3::new(-0.5, 0.0, 1.0),
        goal: Vec3::new(0.5, 0.0, 1.0),
        obstacles: vec![ObstacleSummary {
            object_id: 9,
            centroid: Vec3::new(0.0, 0.02, 1.0),
            horizontal_radius: 0.1,
            min_z: 0.8,
            max_z: 1.2,
        }],
        delta: 0.03,
        history: Vec::new(),
    }
}

fn collision_with_9() -> VerificationReport {
    VerificationReport {
        verdict: Verdict::Collision,
        object: Some(9),
        segment: Some(0),
        clearance: Some(0.0),
        goal_distance: None,
    }
}

#[test]
fn dropped_parcel_goes_back_on_the_pallet() {
    let plan = RuleBasedPlanner.replan_task(&dropped_parcel()).unwrap();
    assert_eq!(
        plan,
        RecoveryPlan::Actions(vec![
            Action::Pick {
                object: "parcel".into()
            },
            Action::Place {
                object: "parcel".into(),
                support: "pallet".into(),
                slot: 2
            },
        ])
    );
}

#[test]
fn missing_support_is_unrecoverable() {
    let mut ctx = dropped_parcel();
    ctx.known_objects.remove("pallet");
    assert!(RuleBasedPlanner.replan_task(&ctx).is_err());
}

#[test]
fn detour_grows_geometrically() {
    let mut ctx = motion_ctx();
    let straight = RuleBasedPlanner.propose(&ctx).unwrap();
    ctx.history.push((Some(straight), collision_with_9()));
    let mut offsets = Vec::new();
    for _ in 0..4 {
        let t = RuleBasedPlanner.refine(&ctx, &collision_with_9()).unwrap();
        assert_eq!(t.waypoints.len(), 3);
        // the obstacle sits left of the line, so the detour goes right
        assert!(t.waypoints[1].y < 0.0);
        offsets.push((t.waypoints[1] - Vec3::new(0.0, 0.02, 1.0)).norm());
        ctx.history.push((Some(t), collision_with_9()));
    }
    for w in offsets.windows(2) {
        assert!((w[1] / w[0] - 1.5).abs() < 1e-12);
    }
    assert!((offsets[0] - detour_offset(0.1, 0.03, 0)).abs() < 1e-12);
}

#[test]
fn first_proposal_is_the_straight_line() {
    let t = RuleBasedPlanner.propose(&motion_ctx()).unwrap();
    assert_eq!(
        t.waypoints,
        vec![Vec3::new(-0.5, 0.0, 1.0), Vec3::new(0.5, 0.0, 1.0)]
    );
}

#[test]
fn planners_are_pure_functions_of_context() {
    let ctx = motion_ctx();
    let a = RuleBasedPlanner.refine(&ctx, &collision_with_9()).unwrap();
    let b = RuleBasedPlanner.refine(&ctx, &collision_with_9()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unset_endpoint_falls_back_immediately() {
    let mut p = RemotePlanner::new(None, Duration::from_secs(2));
    let plan = p.replan_task(&dropped_parcel()).unwrap();
    assert_eq!(
        plan,
        RuleBasedPlanner.replan_task(&dropped_parcel()).unwrap()
    );
    assert_eq!(p.fallbacks, vec![FallbackReason::Unconfigured]);
}

#[test]
fn loopback_plan_is_returned_verbatim() {
    let body = "pick|parcel\nplace|parcel|pallet|0\n";
    let server = common::FixedResponder::start(body);
    let mut p = RemotePlanner::new(Some(server.url()), Duration::from_secs(2));
    let plan = p.replan_task(&dropped_parcel()).unwrap();
    assert_eq!(plan, parse_actions(body).unwrap());
    assert!(p.fallbacks.is_empty());
    assert!(p.last_latency.is_some());
    assert_eq!(server.requests(), 1);
}

#[test]
fn loopback_waypoints_are_returned_verbatim() {
    let server = common::FixedResponder::start("wp -0.5 0 1\nwp 0 0.4 1\nwp 0.5 0 1\n");
    let mut p = RemotePlanner::new(Some(server.url()), Duration::from_secs(2));
    let t = p.propose(&motion_ctx()).unwrap();
    assert_eq!(t.waypoints[1], Vec3::new(0.0, 0.4, 1.0));
    assert!(p.fallbacks.is_empty());
}

#[test]
fn malformed_reply_is_a_schema_violation() {
    let server = common::FixedResponder::start("move the parcel somewhere nice\n");
    let mut p = RemotePlanner::new(Some(server.url()), Duration::from_secs(2));
    let plan = p.replan_task(&dropped_parcel()).unwrap();
    assert_eq!(
        plan,
        RuleBasedPlanner.replan_task(&dropped_parcel()).unwrap()
    );
    assert!(matches!(
        p.fallbacks.as_slice(),
        [FallbackReason::SchemaViolation(_)]
    ));

    // waypoints that do not start where the robot is are rejected too
    let server = common::FixedResponder::start("wp 3 3 3\nwp 0.5 0 1\n");
    let mut p = RemotePlanner::new(Some(server.url()), Duration::from_secs(2));
    let t = p.propose(&motion_ctx()).unwrap();
    assert_eq!(t, RuleBasedPlanner.propose(&motion_ctx()).unwrap());
    assert!(matches!(
        p.fallbacks.as_slice(),
        [FallbackReason::SchemaViolation(_)]
    ));
}

#[test]
fn slow_endpoint_times_out() {
    let server = common::FixedResponder::start_delayed("noop\n", Duration::from_millis(800));
    let mut p = RemotePlanner::new(Some(server.url()), Duration::from_millis(150));
    let plan = p.replan_task(&dropped_parcel()).unwrap();
    assert!(matches!(plan, RecoveryPlan::Actions(_)));
    assert_eq!(p.fallbacks, vec![FallbackReason::Timeout]);
}

#[test]
fn closed_port_is_refused() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut p = RemotePlanner::new(
        Some(format!("http://127.0.0.1:{port}/")),
        Duration::from_secs(2),
    );
    p.propose(&motion_ctx()).unwrap();
    assert_eq!(p.fallbacks, vec![FallbackReason::ConnectionRefused]);
}

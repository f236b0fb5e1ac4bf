//! One closed-loop run: step the world, build a scene graph per frame,
//! detect, and on a fault stop the robot, account detection and
//! communication time, plan, verify, and queue the recovery.
//!
//! Time is logical. The world is frozen while a fault is being handled, so
//! a fault's FDR time is the sum of its compute, transmission, inference and
//! nominal execution times rather than a count of simulation steps.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{nominal_duration, ClassifierKind, PlannerKind, ScenarioConfig};
use super::metrics::{FaultRecord, FrameLog, RunMetrics};
use super::ConfigError;
use crate::channel::Link;
use crate::edge_points::{
    edge_payload_bits, extract_edge_points, full_payload_bits, AttentionWeights, EdgePointSet,
};
use crate::fault_detect::{
    detect, expected_transition, ExpectedTransition, FaultEvent, FaultKind, Relevance,
};
use crate::geometry::{Aabb, Vec3};
use crate::offload::{decide, thresholds, DataSizes, OffloadDecision, OffloadMode, Strategy};
use crate::planner::{
    Action, GoalPlacement, MotionContext, Planner, RecoveryPlan, RemotePlanner, RuleBasedPlanner,
    TaskContext,
};
use crate::scene_graph::{
    build_scene_graph, gcn_scene_graph, sg_payload_bits, EncoderConfig, GcnWeights,
    RelationVocabulary, SceneGraph3D, EDGE_STAT_COUNT, NODE_STAT_COUNT,
};
use crate::twin::{reconstruct, recover_motion, DigitalTwin, RecoveryOutcome, Trajectory};
use crate::world::{
    MotionCommand, MotionKind, MotionTag, ObjectId, PlaceTarget, PointCloud, RobotId, Workspace,
};

/// Stream ids for the per-run random generators.
const STREAM_CLOUD: u64 = 1;
const STREAM_CHANNEL: u64 = 2;

/// Everything a motion-level recovery produced, kept for re-verification.
#[derive(Debug, Clone)]
pub struct MotionRecovery {
    pub fault_index: usize,
    pub twin: Option<DigitalTwin>,
    pub outcome: RecoveryOutcome,
    pub start: Vec3,
    pub goal: Vec3,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub events: Vec<FaultEvent>,
    pub frames: Vec<FrameLog>,
    pub motion_recoveries: Vec<MotionRecovery>,
    /// Scene graph of the last frame.
    pub final_scene: SceneGraph3D,
    pub final_workspace: Workspace,
}

/// Scene graph producer selected by the detector config.
enum Classifier {
    Geometric,
    Gcn {
        weights: Box<GcnWeights>,
        vocab: RelationVocabulary,
        encoder: EncoderConfig,
    },
}

impl Classifier {
    fn from_config(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        match cfg.detector.classifier {
            ClassifierKind::Geometric => Ok(Classifier::Geometric),
            ClassifierKind::Gcn => {
                let path = cfg.detector.gcn_weights.as_deref().expect("validated");
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError::Io(format!("{path}: {e}")))?;
                let weights = GcnWeights::from_text(&text)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if weights.node_dim < NODE_STAT_COUNT || weights.edge_dim < EDGE_STAT_COUNT {
                    return Err(ConfigError::Invalid(format!(
                        "gcn weights need node_dim >= {NODE_STAT_COUNT} and edge_dim >= {EDGE_STAT_COUNT}"
                    )));
                }
                let encoder = EncoderConfig {
                    node_dim: weights.node_dim,
                    edge_dim: weights.edge_dim,
                    seed: cfg.seed,
                    ..EncoderConfig::default()
                };
                Ok(Classifier::Gcn {
                    weights: Box::new(weights),
                    vocab: RelationVocabulary::default(),
                    encoder,
                })
            }
        }
    }

    /// Object-object relations come from the GCN when selected; robots have
    /// no point clouds, so their relations always come from the rules.
    fn scene(
        &self,
        ws: &Workspace,
        frame: u64,
        cfg: &ScenarioConfig,
        clouds: impl FnOnce() -> Vec<PointCloud>,
    ) -> SceneGraph3D {
        let th = &cfg.detector.relations;
        let geometric = build_scene_graph(ws, frame, th);
        let Classifier::Gcn {
            weights,
            vocab,
            encoder,
        } = self
        else {
            return geometric;
        };
        let robots: BTreeSet<&str> = ws.robots.iter().map(|r| r.caption.as_str()).collect();
        let captions: Vec<(ObjectId, String)> = ws
            .objects
            .iter()
            .map(|o| (o.id, o.caption.clone()))
            .collect();
        let mut g = match gcn_scene_graph(
            &clouds(),
            &captions,
            weights,
            vocab,
            encoder,
            th.d_max,
            frame,
        ) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("gcn scene graph failed on frame {frame} ({e}); using rules");
                return geometric;
            }
        };
        for t in geometric
            .triplets()
            .filter(|t| robots.contains(t.subject.as_str()) || robots.contains(t.object.as_str()))
        {
            // a pair the network already labelled keeps that label
            let _ = g.insert(t.clone());
        }
        g
    }
}

fn rng_for(seed: u64, stream: u64, word: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(word) << 20);
    rng
}

/// Gripper goal of a motion, whether or not it has started.
pub fn motion_goal(ws: &Workspace, cmd: &MotionCommand) -> Option<Vec3> {
    if let Some(t) = cmd.resolved_target() {
        return Some(t);
    }
    match &cmd.kind {
        MotionKind::MoveTo { target, .. } => Some(*target),
        MotionKind::FollowPath { waypoints, .. } => waypoints.last().copied(),
        MotionKind::Pick { object } => ws.object(*object).map(|o| o.grasp_point()),
        MotionKind::Place { object, target } => ws.place_grasp_point(*object, target),
    }
}

/// Offline payload estimate from the initial frame: the scene graph, the
/// edge points of every object, and the full clouds.
pub fn measure_sizes(cfg: &ScenarioConfig) -> Result<DataSizes, ConfigError> {
    let ws = cfg.build_workspace()?;
    let sg = build_scene_graph(&ws, 0, &cfg.detector.relations);
    let clouds = ws.synth_point_cloud(&cfg.cloud, &mut rng_for(cfg.seed, STREAM_CLOUD, 0));
    let weights = AttentionWeights::seeded(cfg.edge.seed);
    let sets: Vec<EdgePointSet> = clouds
        .iter()
        .filter_map(|c| extract_edge_points(c, &cfg.edge, &weights).ok())
        .collect();
    DataSizes::new(
        sg_payload_bits(&sg),
        edge_payload_bits(&sets),
        full_payload_bits(&clouds),
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()))
}

/// Offloading decision the run will use.
pub fn offload_decision(
    cfg: &ScenarioConfig,
    sizes: &DataSizes,
) -> Result<OffloadDecision, ConfigError> {
    let th = thresholds(&cfg.timing, sizes, &cfg.channel)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(match cfg.offload.mode {
        OffloadMode::Auto => decide(cfg.channel.bandwidth_hz, th),
        OffloadMode::ForceLocal => OffloadDecision::forced(Strategy::Local, th),
        OffloadMode::ForceEdge => OffloadDecision::forced(Strategy::Edge, th),
    })
}

fn make_planner(cfg: &ScenarioConfig) -> Box<dyn PlannerWithLatency> {
    match cfg.planner.kind {
        PlannerKind::Rule => Box::new(RuleBasedPlanner),
        PlannerKind::Remote => Box::new(RemotePlanner::from_env_or(
            cfg.planner.url.clone(),
            Duration::from_secs_f64(cfg.planner.timeout_s),
        )),
    }
}

/// Planner plus the wall time of its last call, if it measures one.
trait PlannerWithLatency: Planner {
    fn take_latency(&mut self) -> Option<Duration> {
        None
    }
}

impl PlannerWithLatency for RuleBasedPlanner {}

impl PlannerWithLatency for RemotePlanner {
    fn take_latency(&mut self) -> Option<Duration> {
        self.last_latency.take()
    }
}

/// What still has to happen for a recovery to count as successful.
#[derive(Debug, Clone)]
enum Pending {
    Task {
        goal: Vec<GoalPlacement>,
    },
    Motion {
        robot: RobotId,
        motion: u64,
        done: Option<bool>,
    },
    Failed,
    Done,
}

struct Loop<'a> {
    cfg: &'a ScenarioConfig,
    ws: Workspace,
    classifier: Classifier,
    planner: Box<dyn PlannerWithLatency>,
    link: Link<ChaCha8Rng>,
    decision: OffloadDecision,
    weights: AttentionWeights,
    relevance: Relevance,
    /// `(robot, interrupted motion)` -> acknowledged `(robot, caption)` pairs.
    acks: BTreeMap<(RobotId, u64), Vec<(String, String)>>,
    halted: BTreeSet<RobotId>,
    records: Vec<FaultRecord>,
    pending: Vec<Pending>,
    events: Vec<FaultEvent>,
    motion_recoveries: Vec<MotionRecovery>,
}

impl Loop<'_> {
    fn clouds(&self, frame: u64) -> Vec<PointCloud> {
        self.ws.synth_point_cloud(
            &self.cfg.cloud,
            &mut rng_for(self.cfg.seed, STREAM_CLOUD, frame),
        )
    }

    fn inference_time(&mut self, rounds: usize, per_round: f64) -> f64 {
        let measured = self.planner.take_latency();
        match measured {
            Some(d) if self.cfg.planner.measure_remote => d.as_secs_f64() * rounds as f64,
            _ => per_round * rounds as f64,
        }
    }

    fn acknowledge(&mut self, robot: RobotId, motion: u64, pairs: Vec<(String, String)>) {
        for p in &pairs {
            self.relevance.acknowledged.insert(p.clone());
        }
        self.acks.entry((robot, motion)).or_default().extend(pairs);
    }

    fn release_acks(&mut self, robot: RobotId, motion: u64) {
        if let Some(pairs) = self.acks.remove(&(robot, motion)) {
            for p in pairs {
                if !self.acks.values().any(|v| v.contains(&p)) {
                    self.relevance.acknowledged.remove(&p);
                }
            }
        }
    }

    fn halt(&mut self, robot: RobotId) {
        self.halted.insert(robot);
        if let Some(r) = self.ws.robot_mut(robot) {
            r.motion_queue.clear();
            self.relevance.robots.remove(&r.caption);
        }
    }

    /// Handles one detected fault; returns the robot it concerned.
    fn handle(&mut self, event: FaultEvent, curr: &SceneGraph3D) -> Option<RobotId> {
        let cfg = self.cfg;
        let rid = self.ws.robot_by_caption(&event.robot)?.id;
        let frame = event.frame_index;
        let index = self.records.len();

        // what the three strategies would put on the uplink
        let clouds = self.clouds(frame);
        let psi_full = full_payload_bits(&clouds);
        let psi_sg = sg_payload_bits(curr);
        let robot = self.ws.robot(rid).expect("robot exists").clone();
        let implicated: BTreeSet<&str> = event.implicated.iter().map(String::as_str).collect();
        let selected: Vec<&PointCloud> = clouds
            .iter()
            .filter(|c| {
                let o = self
                    .ws
                    .object(c.object_id)
                    .expect("cloud of a known object");
                // carried objects move with their robot; they are not obstacles
                o.carried_by.is_none()
                    && (implicated.contains(o.caption.as_str())
                        || (self.relevance.task_relevant.contains(&o.caption)
                            && (o.pose.position - robot.gripper).norm()
                                <= cfg.detector.relations.d_max))
            })
            .collect();
        let edge_sets: Vec<EdgePointSet> = selected
            .iter()
            .filter_map(|c| extract_edge_points(c, &cfg.edge, &self.weights).ok())
            .collect();
        let psi_edge = edge_payload_bits(&edge_sets);

        let strategy = self.decision.strategy(event.kind);
        let t = &cfg.timing;
        let (t_sg, t_dt, uplink) = match (strategy, event.kind) {
            (Strategy::Local, FaultKind::TaskLevel) => (t.t_sg_local, 0.0, psi_sg),
            (Strategy::Local, FaultKind::MotionLevel) => (t.t_sg_local, t.t_dt_local, psi_edge),
            (Strategy::Edge, _) => (t.t_sg_edge, t.t_dt_edge, psi_full),
        };

        let (plan_text, t_inf, t_exe, rounds, pending) = match event.kind {
            FaultKind::TaskLevel => self.recover_task(&event, curr, rid),
            FaultKind::MotionLevel => self.recover_motion(&event, rid, &edge_sets, index),
        };
        let downlink = (plan_text.len() * 8) as f64;
        let t_com = self.link.transmit(uplink) + self.link.transmit(downlink);
        let t_fdr = t_sg + t_dt + t_com + t_inf + t_exe;
        self.records.push(FaultRecord {
            index,
            frame,
            kind: event.kind,
            robot: event.robot.clone(),
            strategy,
            evidence: event
                .evidence
                .iter()
                .map(|t| t.wire_line())
                .collect::<Vec<_>>()
                .join(";"),
            t_sg,
            t_dt,
            t_com,
            t_inf,
            t_exe,
            t_fdr,
            rounds,
            recovered: false,
            uplink_bits: uplink,
            downlink_bits: downlink,
            psi_sg,
            psi_edge,
            psi_full,
        });
        self.pending.push(pending);
        self.events.push(event);
        Some(rid)
    }

    fn recover_task(
        &mut self,
        event: &FaultEvent,
        curr: &SceneGraph3D,
        rid: RobotId,
    ) -> (String, f64, f64, usize, Pending) {
        let cfg = self.cfg;
        let implicated: BTreeSet<&str> = event.implicated.iter().map(String::as_str).collect();
        let goal: Vec<GoalPlacement> = cfg
            .goals
            .iter()
            .filter(|g| implicated.contains(g.object.as_str()))
            .cloned()
            .collect();
        let ctx = TaskContext {
            fault: event.clone(),
            scene: curr.clone(),
            goal: goal.clone(),
            known_objects: self.ws.objects.iter().map(|o| o.caption.clone()).collect(),
        };
        let plan = self.planner.replan_task(&ctx);
        let t_inf = self.inference_time(1, cfg.planner.t_inf_task);
        match plan {
            Ok(RecoveryPlan::Actions(actions)) => match self.expand_actions(rid, &actions) {
                Some(motions) => {
                    let t_exe: f64 = motions.iter().map(|m| m.nominal_duration).sum();
                    let objects: BTreeSet<ObjectId> =
                        motions.iter().filter_map(|m| m.tag.object).collect();
                    let robot = self.ws.robot_mut(rid).expect("robot exists");
                    robot
                        .motion_queue
                        .retain(|m| m.tag.object.is_none_or(|o| !objects.contains(&o)));
                    robot.prepend_motions(motions);
                    (
                        RecoveryPlan::Actions(actions).wire_text(),
                        t_inf,
                        t_exe,
                        1,
                        Pending::Task { goal },
                    )
                }
                None => {
                    log::warn!(
                        "task plan names objects that are not in the workspace; halting robot"
                    );
                    self.halt(rid);
                    (
                        RecoveryPlan::Actions(actions).wire_text(),
                        t_inf,
                        0.0,
                        1,
                        Pending::Failed,
                    )
                }
            },
            Ok(RecoveryPlan::Noop) => (
                RecoveryPlan::Noop.wire_text(),
                t_inf,
                0.0,
                1,
                Pending::Task { goal },
            ),
            Ok(RecoveryPlan::Motion(_)) | Err(_) => {
                if let Err(e) = &plan {
                    log::warn!("task-level recovery failed: {e}");
                }
                self.halt(rid);
                (String::new(), t_inf, 0.0, 1, Pending::Failed)
            }
        }
    }

    /// Pick: approach above, grasp, lift. Place: approach above the slot,
    /// release, retreat.
    fn expand_actions(&self, rid: RobotId, actions: &[Action]) -> Option<Vec<MotionCommand>> {
        let rc = self.cfg.recovery;
        let lift = Vec3::new(0.0, 0.0, rc.approach_height);
        let mut cursor = self.ws.robot(rid)?.gripper;
        let mut out = Vec::new();
        let recovery = Some(self.records.len());
        let mut push =
            |kind: MotionKind, to: Vec3, object: ObjectId, cursor: &mut Vec3| -> Option<()> {
                let d = nominal_duration(cursor, &to, rc.speed);
                let cmd = MotionCommand::new(kind, d).ok()?.tagged(MotionTag {
                    object: Some(object),
                    recovery,
                });
                out.push(cmd);
                *cursor = to;
                Some(())
            };
        let mv = |to: Vec3| MotionKind::MoveTo {
            target: to,
            speed: rc.speed,
        };
        for a in actions {
            match a {
                Action::Pick { object } => {
                    let o = self.ws.object_by_caption(object)?;
                    let grasp = o.grasp_point();
                    push(mv(grasp + lift), grasp + lift, o.id, &mut cursor)?;
                    push(MotionKind::Pick { object: o.id }, grasp, o.id, &mut cursor)?;
                    push(mv(grasp + lift), grasp + lift, o.id, &mut cursor)?;
                }
                Action::Place {
                    object,
                    support,
                    slot,
                } => {
                    let o = self.ws.object_by_caption(object)?;
                    let s = self.ws.object_by_caption(support)?;
                    let target = PlaceTarget {
                        onto: s.id,
                        offset: self.cfg.slot_offset(support, *slot),
                    };
                    let at = self.ws.place_grasp_point(o.id, &target)?;
                    push(mv(at + lift), at + lift, o.id, &mut cursor)?;
                    push(
                        MotionKind::Place {
                            object: o.id,
                            target,
                        },
                        at,
                        o.id,
                        &mut cursor,
                    )?;
                    push(mv(at + lift), at + lift, o.id, &mut cursor)?;
                }
            }
        }
        Some(out)
    }

    fn recover_motion(
        &mut self,
        event: &FaultEvent,
        rid: RobotId,
        edge_sets: &[EdgePointSet],
        index: usize,
    ) -> (String, f64, f64, usize, Pending) {
        let cfg = self.cfg;
        let robot = self.ws.robot(rid).expect("robot exists").clone();
        let pairs: Vec<(String, String)> = event
            .implicated
            .iter()
            .map(|c| (robot.caption.clone(), c.clone()))
            .collect();
        let Some(cmd) = robot.current_motion().cloned() else {
            // nothing to protect: the robot is idle next to the newcomer
            self.acknowledge(rid, u64::MAX, pairs);
            return (String::new(), 0.0, 0.0, 0, Pending::Done);
        };
        let goal = motion_goal(&self.ws, &cmd).unwrap_or(robot.gripper);
        let mut excluded: BTreeSet<ObjectId> = BTreeSet::new();
        match &cmd.kind {
            MotionKind::Pick { object } => {
                excluded.insert(*object);
            }
            MotionKind::Place { object, target } => {
                excluded.insert(*object);
                excluded.insert(target.onto);
            }
            _ => {}
        }
        let twin_sets: Vec<EdgePointSet> = edge_sets
            .iter()
            .filter(|s| !excluded.contains(&s.object_id))
            .cloned()
            .collect();
        let bounds: Aabb = self.ws.bounds;
        let twin = if twin_sets.is_empty() {
            None
        } else {
            match reconstruct(&twin_sets, &cfg.edge, bounds) {
                Ok(mut t) => {
                    // whatever the gripper already touches at either end is
                    // the thing the motion works on, not an obstacle
                    let delta = cfg.verify.delta;
                    t.objects.retain(|o| {
                        o.hull.distance(&robot.gripper) >= delta && o.hull.distance(&goal) >= delta
                    });
                    Some(t)
                }
                Err(e) => {
                    log::warn!("twin reconstruction failed: {e}");
                    None
                }
            }
        };
        let empty = DigitalTwin {
            objects: Vec::new(),
            bounds,
        };
        let twin_ref = twin.as_ref().unwrap_or(&empty);
        let mut ctx = MotionContext::from_twin(
            event.clone(),
            robot.gripper,
            goal,
            twin_ref,
            cfg.verify.delta,
        );
        let outcome = match recover_motion(
            self.planner.as_mut(),
            twin_ref,
            &mut ctx,
            &cfg.verify.params(),
        ) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("motion recovery aborted: {e}");
                RecoveryOutcome {
                    trajectory: None,
                    rounds: cfg.verify.max_rounds,
                    history: Vec::new(),
                }
            }
        };
        let rounds = outcome.rounds;
        let t_inf = self.inference_time(rounds, cfg.planner.t_inf_motion)
            + cfg.verify.t_verify * rounds as f64;
        let result = match &outcome.trajectory {
            Some(traj) => {
                let path: Vec<Vec3> = traj.waypoints[1..].to_vec();
                let t_exe = nominal_duration(&robot.gripper, &robot.gripper, 1.0)
                    .max(traj.length() / cfg.recovery.speed);
                let follow = MotionCommand::new(
                    MotionKind::FollowPath {
                        waypoints: path,
                        speed: cfg.recovery.speed,
                    },
                    t_exe,
                )
                .expect("verified trajectory is finite")
                .tagged(MotionTag {
                    object: cmd.tag.object,
                    recovery: Some(index),
                });
                self.ws
                    .robot_mut(rid)
                    .expect("robot exists")
                    .prepend_motions(vec![follow]);
                self.acknowledge(rid, cmd.id, pairs);
                (
                    RecoveryPlan::Motion(traj.clone()).wire_text(),
                    t_inf,
                    t_exe,
                    rounds,
                    Pending::Motion {
                        robot: rid,
                        motion: cmd.id,
                        done: None,
                    },
                )
            }
            None => {
                log::warn!(
                    "no verified trajectory after {rounds} rounds; halting {}",
                    robot.caption
                );
                self.halt(rid);
                (String::new(), t_inf, 0.0, rounds, Pending::Failed)
            }
        };
        self.motion_recoveries.push(MotionRecovery {
            fault_index: index,
            twin,
            outcome,
            start: robot.gripper,
            goal,
        });
        result
    }
}

/// Runs a scenario to completion (all queues empty) or `max_steps`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    let sizes = match cfg.sizes {
        Some(s) => s,
        None => measure_sizes(cfg)?,
    };
    let decision = offload_decision(cfg, &sizes)?;
    let ws = cfg.build_workspace()?;
    let relevance = Relevance {
        robots: ws.robots.iter().map(|r| r.caption.clone()).collect(),
        task_relevant: cfg.task_relevant_set(),
        acknowledged: BTreeSet::new(),
    };
    let link = if cfg.offload.monte_carlo {
        Link::monte_carlo(cfg.channel, rng_for(cfg.seed, STREAM_CHANNEL, 0))
    } else {
        Link::deterministic(cfg.channel)
    };
    let mut lp = Loop {
        cfg,
        ws,
        classifier: Classifier::from_config(cfg)?,
        planner: make_planner(cfg),
        link,
        decision,
        weights: AttentionWeights::seeded(cfg.edge.seed),
        relevance,
        acks: BTreeMap::new(),
        halted: BTreeSet::new(),
        records: Vec::new(),
        pending: Vec::new(),
        events: Vec::new(),
        motion_recoveries: Vec::new(),
    };
    // raw clouds stream every frame whenever scene graphs are built at the edge
    let streaming = decision.task == Strategy::Edge;

    let mut prev = {
        let lp = &lp;
        lp.classifier.scene(&lp.ws, 0, cfg, || lp.clouds(0))
    };
    let mut active: BTreeMap<(RobotId, u64), ExpectedTransition> = BTreeMap::new();
    let mut frames = Vec::new();

    for frame in 1..=cfg.max_steps {
        // expectations come from the state just before a motion starts
        let mut upcoming: BTreeMap<(RobotId, u64), ExpectedTransition> = BTreeMap::new();
        for r in &lp.ws.robots {
            if let Some(cmd) = r.current_motion().filter(|c| !c.started()) {
                upcoming.insert(
                    (r.id, cmd.id),
                    expected_transition(&lp.ws, r.id, cmd, &prev),
                );
            }
        }
        let report = lp.ws.step(cfg.dt);
        for (rid, mid) in &report.started {
            let exp = match upcoming.remove(&(*rid, *mid)) {
                Some(e) => e,
                None => {
                    let cmd = lp
                        .ws
                        .robot(*rid)
                        .and_then(|r| r.motion_queue.iter().find(|c| c.id == *mid))
                        .or_else(|| {
                            report
                                .completed
                                .iter()
                                .map(|c| &c.motion)
                                .find(|m| m.id == *mid)
                        })
                        .expect("started motion is queued or just completed")
                        .clone();
                    expected_transition(&lp.ws, *rid, &cmd, &prev)
                }
            };
            active.insert((*rid, *mid), exp);
        }
        for c in &report.completed {
            if let Some(e) = active.get_mut(&(c.robot, c.motion.id)) {
                e.completed = true;
            }
            lp.release_acks(c.robot, c.motion.id);
            for p in lp.pending.iter_mut() {
                if let Pending::Motion {
                    robot,
                    motion,
                    done,
                } = p
                {
                    if *robot == c.robot && *motion == c.motion.id {
                        *done = Some(c.success);
                    }
                }
            }
        }
        let curr = {
            let lp = &lp;
            lp.classifier.scene(&lp.ws, frame, cfg, || lp.clouds(frame))
        };
        let mut due: Vec<ExpectedTransition> = Vec::new();
        active.retain(|_, e| {
            if e.completed {
                due.push(e.clone());
                false
            } else {
                true
            }
        });
        due.retain(|e| lp.relevance.robots.contains(&e.robot));

        let mut handled = 0;
        let mut uplink_bits = if streaming {
            full_payload_bits(&lp.clouds(frame))
        } else {
            0.0
        };
        while handled < 16 {
            let Some(event) = detect(&prev, &curr, &due, &lp.relevance) else {
                break;
            };
            let robot = event.robot.clone();
            let kind = event.kind;
            let before = lp.records.len();
            let handled_robot = lp.handle(event, &curr);
            if lp.records.len() > before {
                let r = &lp.records[before];
                if !streaming {
                    uplink_bits += r.uplink_bits;
                }
            }
            if kind == FaultKind::TaskLevel {
                due.retain(|e| e.robot != robot);
            }
            if handled_robot.is_none() {
                break;
            }
            handled += 1;
        }
        frames.push(FrameLog {
            frame,
            uplink_bits,
            fault: handled > 0,
        });
        // motions of halted robots never complete; drop their expectations
        active.retain(|(r, _), _| !lp.halted.contains(r));
        prev = curr;
        if lp.ws.is_idle() {
            break;
        }
    }

    let final_scene = prev;
    let goals_hold = cfg.goals.iter().all(|g| {
        g.triplet()
            .map(|t| final_scene.contains(&t))
            .unwrap_or(false)
    });
    for (rec, p) in lp.records.iter_mut().zip(&lp.pending) {
        rec.recovered = match p {
            Pending::Task { goal } => goal.iter().all(|g| {
                g.triplet()
                    .map(|t| final_scene.contains(&t))
                    .unwrap_or(false)
            }),
            Pending::Motion { done, .. } => *done == Some(true),
            Pending::Done => true,
            Pending::Failed => false,
        };
    }
    let metrics = RunMetrics {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        faults: lp.records,
        success: goals_hold && lp.halted.is_empty() && lp.ws.is_idle(),
        total_steps: lp.ws.steps,
        region: decision.region(),
        thresholds: decision.thresholds,
        sizes,
        uplink_bits_fault_free_frames: frames
            .iter()
            .filter(|f| !f.fault)
            .map(|f| f.uplink_bits)
            .sum(),
        uplink_bits_total: frames.iter().map(|f| f.uplink_bits).sum(),
    };
    Ok(RunOutput {
        metrics,
        events: lp.events,
        frames,
        motion_recoveries: lp.motion_recoveries,
        final_scene,
        final_workspace: lp.ws,
    })
}

/// Recomputes `trajectory`'s verdict against `twin`: used by tests and the
/// CLI to double-check recoveries.
pub fn reverify(rec: &MotionRecovery, cfg: &ScenarioConfig) -> Option<bool> {
    let traj: &Trajectory = rec.outcome.trajectory.as_ref()?;
    let empty = DigitalTwin {
        objects: Vec::new(),
        bounds: cfg.bounds(),
    };
    let twin = rec.twin.as_ref().unwrap_or(&empty);
    crate::twin::verify(twin, traj, cfg.verify.delta, cfg.verify.eps_goal)
        .ok()
        .map(|r| r.verdict == crate::twin::Verdict::Pass)
}

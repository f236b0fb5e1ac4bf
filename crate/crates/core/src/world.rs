//! Deterministic discrete-time workspace: boxes on tables, point-like
//! grippers executing a queue of high-level motions, one-shot fault
//! injections and synthetic surface point clouds.
//!
//! There is no rigid-body dynamics. Released or dropped objects settle on
//! the highest supporting surface below their centroid, which is enough to
//! reproduce the symbolic signatures the fault detector looks for.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{all_finite, rotate_yaw, Aabb, Vec3};

pub type ObjectId = u32;
pub type RobotId = u32;

/// Thickness of the floor of an open container.
pub const CONTAINER_FLOOR: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("unknown object id {0}")]
    UnknownObject(ObjectId),
    #[error("unknown robot id {0}")]
    UnknownRobot(RobotId),
    #[error("duplicate id {0}")]
    DuplicateId(u32),
    #[error("object {0} has non-positive half extents")]
    BadExtents(ObjectId),
    #[error("invalid motion: {0}")]
    BadMotion(String),
    #[error("invalid point cloud: {0}")]
    BadCloud(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

impl Pose {
    pub fn at(position: Vec3) -> Self {
        Self { position, yaw: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub id: ObjectId,
    pub caption: String,
    /// Pose of the box centroid.
    pub pose: Pose,
    pub half_extents: Vec3,
    pub carried_by: Option<RobotId>,
    /// Open-top container: things resting in it sit on its inner floor.
    pub container: bool,
}

impl ObjectState {
    pub fn new(
        id: ObjectId,
        caption: impl Into<String>,
        position: Vec3,
        half_extents: Vec3,
    ) -> Self {
        Self {
            id,
            caption: caption.into(),
            pose: Pose::at(position),
            half_extents,
            carried_by: None,
            container: false,
        }
    }

    pub fn container(mut self) -> Self {
        self.container = true;
        self
    }

    pub fn with_yaw(mut self, yaw: f64) -> Self {
        self.pose.yaw = yaw;
        self
    }

    /// Axis-aligned bounds of the (possibly yawed) box.
    pub fn aabb(&self) -> Aabb {
        let h = self.half_extents;
        let (s, c) = self.pose.yaw.sin_cos();
        let ex = (c * h.x).abs() + (s * h.y).abs();
        let ey = (s * h.x).abs() + (c * h.y).abs();
        Aabb::from_center_half(self.pose.position, Vec3::new(ex, ey, h.z))
    }

    pub fn bottom_z(&self) -> f64 {
        self.pose.position.z - self.half_extents.z
    }

    pub fn top_z(&self) -> f64 {
        self.pose.position.z + self.half_extents.z
    }

    /// Height at which something placed on (or in) this object comes to rest.
    pub fn support_height(&self) -> f64 {
        if self.container {
            self.bottom_z() + CONTAINER_FLOOR
        } else {
            self.top_z()
        }
    }

    /// Where a gripper holds this object: the centre of its top face.
    pub fn grasp_point(&self) -> Vec3 {
        self.pose.position + Vec3::new(0.0, 0.0, self.half_extents.z)
    }

    pub fn surface_area(&self) -> f64 {
        let h = self.half_extents;
        8.0 * (h.x * h.y + h.y * h.z + h.x * h.z)
    }
}

/// Where a `Place` puts its object: resting on (or in) `onto`, shifted by
/// `offset` in the horizontal plane from the support's centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaceTarget {
    pub onto: ObjectId,
    #[serde(default)]
    pub offset: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub enum MotionKind {
    MoveTo {
        target: Vec3,
        speed: f64,
    },
    Pick {
        object: ObjectId,
    },
    Place {
        object: ObjectId,
        target: PlaceTarget,
    },
    /// Waypoint sequence produced by motion-level recovery.
    FollowPath {
        waypoints: Vec<Vec3>,
        speed: f64,
    },
}

/// Bookkeeping attached to a motion by whoever queued it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MotionTag {
    /// Object this motion works on as part of the task.
    pub object: Option<ObjectId>,
    /// Index of the fault whose recovery produced this motion.
    pub recovery: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionCommand {
    pub kind: MotionKind,
    /// Seconds the motion takes when nothing goes wrong.
    pub nominal_duration: f64,
    pub tag: MotionTag,
    /// Motion-local identifier (unique per robot queue).
    pub id: u64,
    resolved: Option<Vec3>,
    path_index: usize,
}

impl MotionCommand {
    pub fn new(kind: MotionKind, nominal_duration: f64) -> Result<Self, WorldError> {
        if !(nominal_duration > 0.0) {
            return Err(WorldError::BadMotion(format!(
                "nominal duration must be positive, got {nominal_duration}"
            )));
        }
        match &kind {
            MotionKind::MoveTo { target, speed } => {
                if !(*speed > 0.0) || !all_finite(target) {
                    return Err(WorldError::BadMotion(
                        "move_to needs a finite target and positive speed".into(),
                    ));
                }
            }
            MotionKind::FollowPath { waypoints, speed } => {
                if !(*speed > 0.0) || waypoints.is_empty() || !waypoints.iter().all(all_finite) {
                    return Err(WorldError::BadMotion(
                        "follow_path needs finite waypoints and positive speed".into(),
                    ));
                }
            }
            MotionKind::Pick { .. } | MotionKind::Place { .. } => {}
        }
        Ok(Self {
            kind,
            nominal_duration,
            tag: MotionTag::default(),
            id: 0,
            resolved: None,
            path_index: 0,
        })
    }

    pub fn tagged(mut self, tag: MotionTag) -> Self {
        self.tag = tag;
        self
    }

    /// Whether the motion has started executing.
    pub fn started(&self) -> bool {
        self.resolved.is_some()
    }

    /// Gripper goal fixed when the motion started.
    pub fn resolved_target(&self) -> Option<Vec3> {
        self.resolved
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub id: RobotId,
    pub caption: String,
    pub gripper: Vec3,
    pub gripper_closed: bool,
    pub carried_object: Option<ObjectId>,
    pub motion_queue: VecDeque<MotionCommand>,
    /// Default speed for pick and place approaches, m/s.
    pub speed: f64,
    next_motion_id: u64,
}

impl RobotState {
    pub fn new(id: RobotId, caption: impl Into<String>, gripper: Vec3, speed: f64) -> Self {
        Self {
            id,
            caption: caption.into(),
            gripper,
            gripper_closed: false,
            carried_object: None,
            motion_queue: VecDeque::new(),
            speed,
            next_motion_id: 1,
        }
    }

    pub fn push_motion(&mut self, mut cmd: MotionCommand) -> u64 {
        cmd.id = self.next_motion_id;
        self.next_motion_id += 1;
        let id = cmd.id;
        self.motion_queue.push_back(cmd);
        id
    }

    /// Inserts motions at the head of the queue, keeping their order.
    pub fn prepend_motions(&mut self, cmds: Vec<MotionCommand>) {
        for mut cmd in cmds.into_iter().rev() {
            cmd.id = self.next_motion_id;
            self.next_motion_id += 1;
            self.motion_queue.push_front(cmd);
        }
    }

    pub fn current_motion(&self) -> Option<&MotionCommand> {
        self.motion_queue.front()
    }
}

/// Spec of an object inserted by an obstruction fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub id: ObjectId,
    pub caption: String,
    /// Horizontal position; the obstacle settles onto whatever is below.
    pub position: [f64; 2],
    pub half_extents: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultInjection {
    /// Release the object from the gripper after `step` world steps.
    Drop { object: ObjectId, step: u64 },
    /// Offset the achieved pose of the next placement of `object`.
    PlacementNoise { object: ObjectId, offset: [f64; 3] },
    /// Insert a new object into the scene after `step` world steps.
    Obstruct { obstacle: ObstacleSpec, step: u64 },
}

impl FaultInjection {
    pub fn is_task_level(&self) -> bool {
        !matches!(self, FaultInjection::Obstruct { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiredFault {
    pub index: usize,
    pub step: u64,
    pub fault: FaultInjection,
    /// False when the trigger found nothing to act on (e.g. a drop while
    /// the object was not carried).
    pub effective: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionCompletion {
    pub robot: RobotId,
    pub motion: MotionCommand,
    pub success: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub completed: Vec<MotionCompletion>,
    pub started: Vec<(RobotId, u64)>,
    pub fired: Vec<FiredFault>,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingFault {
    index: usize,
    fault: FaultInjection,
    fired: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub object_id: ObjectId,
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(object_id: ObjectId, points: Vec<Vec3>) -> Result<Self, WorldError> {
        if points.is_empty() {
            return Err(WorldError::BadCloud(format!(
                "object {object_id} has no points"
            )));
        }
        if !points.iter().all(all_finite) {
            return Err(WorldError::BadCloud(format!(
                "object {object_id} has non-finite points"
            )));
        }
        Ok(Self { object_id, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.points.iter().sum();
        sum / self.points.len().max(1) as f64
    }
}

/// Sampling knobs for [`Workspace::synth_point_cloud`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudParams {
    /// Points per square meter of surface.
    pub density: f64,
    pub noise_sigma: f64,
    /// Probability that a face is missing from an object's cloud.
    pub face_drop: f64,
}

impl Default for CloudParams {
    fn default() -> Self {
        Self {
            density: 1500.0,
            noise_sigma: 0.0,
            face_drop: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    /// Sorted by id.
    pub objects: Vec<ObjectState>,
    /// Sorted by id.
    pub robots: Vec<RobotState>,
    pub bounds: Aabb,
    pub grasp_radius: f64,
    /// Completed world steps; frame `i` is the state after `i` steps.
    pub steps: u64,
    pub time: f64,
    faults: Vec<PendingFault>,
}

impl Workspace {
    pub fn new(
        mut objects: Vec<ObjectState>,
        mut robots: Vec<RobotState>,
        bounds: Aabb,
        grasp_radius: f64,
    ) -> Result<Self, WorldError> {
        objects.sort_by_key(|o| o.id);
        robots.sort_by_key(|r| r.id);
        let mut ids: Vec<u32> = objects
            .iter()
            .map(|o| o.id)
            .chain(robots.iter().map(|r| r.id))
            .collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(WorldError::DuplicateId(w[0]));
        }
        if let Some(o) = objects.iter().find(|o| !(o.half_extents.min() > 0.0)) {
            return Err(WorldError::BadExtents(o.id));
        }
        Ok(Self {
            objects,
            robots,
            bounds,
            grasp_radius,
            steps: 0,
            time: 0.0,
            faults: Vec::new(),
        })
    }

    pub fn object(&self, id: ObjectId) -> Option<&ObjectState> {
        self.objects
            .binary_search_by_key(&id, |o| o.id)
            .ok()
            .map(|i| &self.objects[i])
    }

    fn object_index(&self, id: ObjectId) -> Option<usize> {
        self.objects.binary_search_by_key(&id, |o| o.id).ok()
    }

    pub fn object_by_caption(&self, caption: &str) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.caption == caption)
    }

    pub fn robot(&self, id: RobotId) -> Option<&RobotState> {
        self.robots.iter().find(|r| r.id == id)
    }

    pub fn robot_mut(&mut self, id: RobotId) -> Option<&mut RobotState> {
        self.robots.iter_mut().find(|r| r.id == id)
    }

    pub fn robot_by_caption(&self, caption: &str) -> Option<&RobotState> {
        self.robots.iter().find(|r| r.caption == caption)
    }

    pub fn is_idle(&self) -> bool {
        self.robots.iter().all(|r| r.motion_queue.is_empty())
    }

    pub fn pending_faults(&self) -> usize {
        self.faults.iter().filter(|f| !f.fired).count()
    }

    /// Registers a fault to fire when its trigger is reached.
    pub fn inject_fault(&mut self, fault: FaultInjection) -> Result<usize, WorldError> {
        match &fault {
            FaultInjection::Drop { object, .. } | FaultInjection::PlacementNoise { object, .. } => {
                if self.object(*object).is_none() {
                    return Err(WorldError::UnknownObject(*object));
                }
            }
            FaultInjection::Obstruct { obstacle, .. } => {
                if self.object(obstacle.id).is_some() || self.robot(obstacle.id).is_some() {
                    return Err(WorldError::DuplicateId(obstacle.id));
                }
                if !obstacle.half_extents.iter().all(|&h| h > 0.0) {
                    return Err(WorldError::BadExtents(obstacle.id));
                }
            }
        }
        let index = self.faults.len();
        self.faults.push(PendingFault {
            index,
            fault,
            fired: false,
        });
        Ok(index)
    }

    /// Where the gripper must be to release `object` onto `target`.
    pub fn place_grasp_point(&self, object: ObjectId, target: &PlaceTarget) -> Option<Vec3> {
        let obj = self.object(object)?;
        let support = self.object(target.onto)?;
        let base = support.pose.position;
        Some(Vec3::new(
            base.x + target.offset[0],
            base.y + target.offset[1],
            support.support_height() + 2.0 * obj.half_extents.z,
        ))
    }

    /// Advances every robot by `dt` seconds and fires due faults.
    pub fn step(&mut self, dt: f64) -> StepReport {
        assert!(dt > 0.0, "dt must be positive");
        let mut report = StepReport::default();
        for ri in 0..self.robots.len() {
            self.advance_robot(ri, dt, &mut report);
        }
        self.steps += 1;
        self.time += dt;
        self.fire_due_faults(&mut report);
        report
    }

    fn advance_robot(&mut self, ri: usize, dt: f64, report: &mut StepReport) {
        let mut budget = dt * self.robot_speed_for_current(ri);
        // only a motion that fails to start lets the next one begin in the same step
        loop {
            let Some(cmd) = self.robots[ri].motion_queue.front() else {
                return;
            };
            if !cmd.started() {
                let target = self.resolve_target(ri);
                let robot_id = self.robots[ri].id;
                let cmd = self.robots[ri]
                    .motion_queue
                    .front_mut()
                    .expect("front exists");
                match target {
                    Some(t) if self.bounds.contains_box(&Aabb { min: t, max: t }, 1e-9) => {
                        cmd.resolved = Some(t);
                        report.started.push((robot_id, cmd.id));
                    }
                    _ => {
                        let motion = self.robots[ri]
                            .motion_queue
                            .pop_front()
                            .expect("front exists");
                        report.completed.push(MotionCompletion {
                            robot: robot_id,
                            motion,
                            success: false,
                        });
                        budget = dt * self.robot_speed_for_current(ri);
                        continue;
                    }
                }
            }
            let arrived = self.travel(ri, &mut budget);
            if !arrived {
                self.sync_carried(ri);
                return;
            }
            // the carried object must be at the arrival pose before a place releases it
            self.sync_carried(ri);
            let success = self.finish_motion(ri);
            let robot_id = self.robots[ri].id;
            let motion = self.robots[ri]
                .motion_queue
                .pop_front()
                .expect("front exists");
            self.sync_carried(ri);
            report.completed.push(MotionCompletion {
                robot: robot_id,
                motion,
                success,
            });
            // leftover travel budget is forfeited; the next motion starts on the next step
            return;
        }
    }

    fn robot_speed_for_current(&self, ri: usize) -> f64 {
        let robot = &self.robots[ri];
        match robot.motion_queue.front().map(|c| &c.kind) {
            Some(MotionKind::MoveTo { speed, .. }) | Some(MotionKind::FollowPath { speed, .. }) => {
                *speed
            }
            _ => robot.speed,
        }
    }

    fn resolve_target(&self, ri: usize) -> Option<Vec3> {
        let robot = &self.robots[ri];
        let cmd = robot.motion_queue.front()?;
        match &cmd.kind {
            MotionKind::MoveTo { target, .. } => Some(*target),
            MotionKind::FollowPath { waypoints, .. } => waypoints.last().copied(),
            MotionKind::Pick { object } => self.object(*object).map(ObjectState::grasp_point),
            MotionKind::Place { object, target } => self.place_grasp_point(*object, target),
        }
    }

    /// Moves the gripper along the current motion. Returns true on arrival.
    fn travel(&mut self, ri: usize, budget: &mut f64) -> bool {
        let robot = &mut self.robots[ri];
        let cmd = robot.motion_queue.front_mut().expect("current motion");
        loop {
            let target = match &cmd.kind {
                MotionKind::FollowPath { waypoints, .. } => waypoints[cmd.path_index],
                _ => cmd.resolved.expect("resolved target"),
            };
            let delta = target - robot.gripper;
            let dist = delta.norm();
            if dist <= *budget {
                robot.gripper = target;
                *budget -= dist;
                if let MotionKind::FollowPath { waypoints, .. } = &cmd.kind {
                    if cmd.path_index + 1 < waypoints.len() {
                        cmd.path_index += 1;
                        continue;
                    }
                }
                return true;
            }
            robot.gripper += delta * (*budget / dist);
            *budget = 0.0;
            return false;
        }
    }

    fn finish_motion(&mut self, ri: usize) -> bool {
        let kind = self.robots[ri]
            .motion_queue
            .front()
            .expect("current")
            .kind
            .clone();
        match kind {
            MotionKind::MoveTo { .. } | MotionKind::FollowPath { .. } => true,
            MotionKind::Pick { object } => {
                let gripper = self.robots[ri].gripper;
                let robot_id = self.robots[ri].id;
                let radius = self.grasp_radius;
                if self.robots[ri].carried_object.is_some() {
                    return false;
                }
                let Some(oi) = self.object_index(object) else {
                    return false;
                };
                let obj = &mut self.objects[oi];
                if obj.carried_by.is_some() || (obj.grasp_point() - gripper).norm() > radius {
                    return false;
                }
                obj.carried_by = Some(robot_id);
                let robot = &mut self.robots[ri];
                robot.carried_object = Some(object);
                robot.gripper_closed = true;
                true
            }
            MotionKind::Place { object, .. } => {
                if self.robots[ri].carried_object != Some(object) {
                    return false;
                }
                let mut offset = Vec3::zeros();
                for pf in self.faults.iter_mut().filter(|f| !f.fired) {
                    if let FaultInjection::PlacementNoise {
                        object: o,
                        offset: off,
                    } = &pf.fault
                    {
                        if *o == object {
                            offset = Vec3::new(off[0], off[1], off[2]);
                            pf.fired = true;
                        }
                    }
                }
                self.release(ri);
                let oi = self.object_index(object).expect("carried object exists");
                self.objects[oi].pose.position += offset;
                self.settle(oi);
                true
            }
        }
    }

    fn release(&mut self, ri: usize) {
        let robot = &mut self.robots[ri];
        if let Some(obj) = robot.carried_object.take() {
            robot.gripper_closed = false;
            if let Some(oi) = self.object_index(obj) {
                self.objects[oi].carried_by = None;
            }
        }
    }

    /// Keeps a carried object hanging below the gripper.
    fn sync_carried(&mut self, ri: usize) {
        let robot = &self.robots[ri];
        if let Some(obj) = robot.carried_object {
            let gripper = robot.gripper;
            if let Some(oi) = self.object_index(obj) {
                let o = &mut self.objects[oi];
                o.pose.position = gripper - Vec3::new(0.0, 0.0, o.half_extents.z);
            }
        }
    }

    /// Height at which an object whose centroid is at `at` would come to rest,
    /// ignoring `skip`.
    pub fn rest_height(&self, at: &Vec3, bottom: f64, skip: ObjectId) -> f64 {
        self.objects
            .iter()
            .filter(|o| o.id != skip && o.carried_by.is_none())
            .filter(|o| o.aabb().contains_xy(at))
            .map(ObjectState::support_height)
            .filter(|&h| h <= bottom + 1e-9)
            .fold(0.0, f64::max)
    }

    /// Drops object `oi` onto the highest supporting surface below its centroid.
    fn settle(&mut self, oi: usize) {
        let obj = &self.objects[oi];
        let rest = self.rest_height(&obj.pose.position, obj.bottom_z(), obj.id);
        let hz = obj.half_extents.z;
        self.objects[oi].pose.position.z = rest + hz;
    }

    fn fire_due_faults(&mut self, report: &mut StepReport) {
        let now = self.steps;
        for i in 0..self.faults.len() {
            if self.faults[i].fired {
                continue;
            }
            let fault = self.faults[i].fault.clone();
            let effective = match &fault {
                FaultInjection::Drop { object, step } if *step == now => {
                    self.faults[i].fired = true;
                    match self.object(*object).and_then(|o| o.carried_by) {
                        Some(rid) => {
                            let ri = self
                                .robots
                                .iter()
                                .position(|r| r.id == rid)
                                .expect("carrier exists");
                            self.release(ri);
                            let oi = self.object_index(*object).expect("object exists");
                            self.settle(oi);
                            true
                        }
                        None => false,
                    }
                }
                FaultInjection::Obstruct { obstacle, step } if *step == now => {
                    self.faults[i].fired = true;
                    let h = obstacle.half_extents;
                    let mut obj = ObjectState::new(
                        obstacle.id,
                        obstacle.caption.clone(),
                        Vec3::new(
                            obstacle.position[0],
                            obstacle.position[1],
                            self.bounds.max.z,
                        ),
                        Vec3::new(h[0], h[1], h[2]),
                    );
                    obj.pose.position.z =
                        self.rest_height(&obj.pose.position, f64::INFINITY, obj.id) + h[2];
                    let pos = self.objects.partition_point(|o| o.id < obj.id);
                    self.objects.insert(pos, obj);
                    true
                }
                _ => continue,
            };
            report.fired.push(FiredFault {
                index: self.faults[i].index,
                step: now,
                fault,
                effective,
            });
        }
    }

    /// Samples points uniformly over every face of every object, with
    /// isotropic Gaussian noise. Clouds come back sorted by object id.
    pub fn synth_point_cloud<R: Rng + ?Sized>(
        &self,
        params: &CloudParams,
        rng: &mut R,
    ) -> Vec<PointCloud> {
        self.objects
            .iter()
            .map(|o| sample_box_surface(o, params, rng))
            .collect()
    }
}

/// Faces of a box in its local frame: (normal axis, sign).
const FACES: [(usize, f64); 6] = [
    (0, 1.0),
    (0, -1.0),
    (1, 1.0),
    (1, -1.0),
    (2, 1.0),
    (2, -1.0),
];

fn face_area(h: &Vec3, axis: usize) -> f64 {
    let (a, b) = match axis {
        0 => (h.y, h.z),
        1 => (h.x, h.z),
        _ => (h.x, h.y),
    };
    4.0 * a * b
}

fn sample_box_surface<R: Rng + ?Sized>(
    obj: &ObjectState,
    params: &CloudParams,
    rng: &mut R,
) -> PointCloud {
    let h = obj.half_extents;
    let mut kept: Vec<usize> = (0..6)
        .filter(|_| params.face_drop <= 0.0 || !rng.random_bool(params.face_drop.min(1.0)))
        .collect();
    if kept.is_empty() {
        kept.push(rng.random_range(0..6));
    }
    let areas: Vec<f64> = kept.iter().map(|&f| face_area(&h, FACES[f].0)).collect();
    let total: f64 = areas.iter().sum();
    let expected = params.density * total;
    let n = if expected > 0.0 {
        Poisson::new(expected)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    }
    .max(1);
    let pick = WeightedIndex::new(&areas).expect("positive face areas");
    let noise = (params.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, params.noise_sigma).expect("finite sigma"));
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let (axis, sign) = FACES[kept[pick.sample(rng)]];
        let mut local = Vec3::zeros();
        for k in 0..3 {
            local[k] = if k == axis {
                sign * h[k]
            } else {
                rng.random_range(-h[k]..=h[k])
            };
        }
        let mut p = rotate_yaw(&local, obj.pose.yaw) + obj.pose.position;
        if let Some(dist) = &noise {
            for k in 0..3 {
                p[k] += dist.sample(rng);
            }
        }
        points.push(p);
    }
    PointCloud {
        object_id: obj.id,
        points,
    }
}

/// Text export, one point per line: `x y z object_id`.
pub fn write_clouds(clouds: &[PointCloud]) -> String {
    let mut out = String::new();
    for c in clouds {
        for p in &c.points {
            let _ = writeln!(out, "{} {} {} {}", p.x, p.y, p.z, c.object_id);
        }
    }
    out
}

/// Parses the text export back into per-object clouds sorted by id.
pub fn read_clouds(text: &str) -> Result<Vec<PointCloud>, WorldError> {
    let mut by_id: std::collections::BTreeMap<ObjectId, Vec<Vec3>> = Default::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad =
            || WorldError::BadCloud(format!("line {}: expected `x y z object_id`", lineno + 1));
        if fields.len() != 4 {
            return Err(bad());
        }
        let mut xyz = [0.0; 3];
        for k in 0..3 {
            xyz[k] = fields[k].parse().map_err(|_| bad())?;
        }
        let id: ObjectId = fields[3].parse().map_err(|_| bad())?;
        by_id
            .entry(id)
            .or_default()
            .push(Vec3::new(xyz[0], xyz[1], xyz[2]));
    }
    by_id
        .into_iter()
        .map(|(id, pts)| PointCloud::new(id, pts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bounds() -> Aabb {
        Aabb::from_center_half(Vec3::new(0.0, 0.0, 1.0), Vec3::new(3.0, 3.0, 1.0))
    }

    fn table_and_box() -> Workspace {
        let table = ObjectState::new(
            1,
            "table",
            Vec3::new(0.0, 0.0, 0.2),
            Vec3::new(0.5, 0.5, 0.2),
        );
        let parcel = ObjectState::new(
            2,
            "parcel",
            Vec3::new(0.0, 0.0, 0.45),
            Vec3::new(0.05, 0.05, 0.05),
        );
        let robot = RobotState::new(10, "robot", Vec3::new(0.0, 0.0, 0.8), 0.5);
        Workspace::new(vec![table, parcel], vec![robot], bounds(), 0.05).unwrap()
    }

    #[test]
    fn idle_step_only_advances_time() {
        let mut w = table_and_box();
        let before = w.clone();
        w.step(0.1);
        assert_eq!(w.objects, before.objects);
        assert_eq!(w.robots, before.robots);
        assert_eq!(w.steps, 1);
        assert!((w.time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn move_to_advances_speed_times_dt() {
        let mut w = table_and_box();
        let start = w.robots[0].gripper;
        let target = start + Vec3::new(1.0, 0.0, 0.0);
        let cmd = MotionCommand::new(MotionKind::MoveTo { target, speed: 0.5 }, 2.0).unwrap();
        w.robots[0].push_motion(cmd);
        w.step(0.1);
        assert!((w.robots[0].gripper - (start + Vec3::new(0.05, 0.0, 0.0))).norm() < 1e-12);
    }

    #[test]
    fn out_of_bounds_motion_fails_without_panicking() {
        let mut w = table_and_box();
        let cmd = MotionCommand::new(
            MotionKind::MoveTo {
                target: Vec3::new(10.0, 0.0, 0.5),
                speed: 0.5,
            },
            1.0,
        )
        .unwrap();
        w.robots[0].push_motion(cmd);
        let r = w.step(0.1);
        assert_eq!(r.completed.len(), 1);
        assert!(!r.completed[0].success);
        assert!(w.robots[0].motion_queue.is_empty());
    }

    fn run_until_idle(w: &mut Workspace, dt: f64) -> Vec<MotionCompletion> {
        let mut done = Vec::new();
        for _ in 0..10_000 {
            if w.is_idle() {
                break;
            }
            done.extend(w.step(dt).completed);
        }
        done
    }

    #[test]
    fn pick_then_carry_keeps_object_under_gripper() {
        let mut w = table_and_box();
        w.robots[0].push_motion(MotionCommand::new(MotionKind::Pick { object: 2 }, 1.0).unwrap());
        let target = Vec3::new(0.3, 0.3, 0.8);
        w.robots[0].push_motion(
            MotionCommand::new(MotionKind::MoveTo { target, speed: 0.5 }, 1.0).unwrap(),
        );
        let done = run_until_idle(&mut w, 0.05);
        assert!(done.iter().all(|c| c.success));
        let parcel = w.object(2).unwrap();
        assert_eq!(parcel.carried_by, Some(10));
        assert!(w.robots[0].gripper_closed);
        assert!((parcel.grasp_point() - w.robots[0].gripper).norm() < 1e-12);
    }

    #[test]
    fn drop_settles_on_surface_below() {
        // Hand-computed rest height: the table top is at z = 0.4, so the
        // dropped parcel (half height 0.05) ends with its centroid at 0.45.
        let mut w = table_and_box();
        w.robots[0].push_motion(MotionCommand::new(MotionKind::Pick { object: 2 }, 1.0).unwrap());
        let target = Vec3::new(0.3, 0.0, 1.0);
        w.robots[0].push_motion(
            MotionCommand::new(MotionKind::MoveTo { target, speed: 0.5 }, 1.0).unwrap(),
        );
        // pick needs 0.3 m of descent at 0.5 m/s and dt 0.05: 12 steps
        w.inject_fault(FaultInjection::Drop {
            object: 2,
            step: 20,
        })
        .unwrap();
        let mut fired = Vec::new();
        while w.steps < 20 {
            fired.extend(w.step(0.05).fired);
        }
        assert_eq!(fired.len(), 1);
        assert!(fired[0].effective);
        let parcel = w.object(2).unwrap();
        assert_eq!(parcel.carried_by, None);
        assert_eq!(w.robots[0].carried_object, None);
        assert!(!w.robots[0].gripper_closed);
        assert!((parcel.pose.position.z - 0.45).abs() < 1e-12);
        // the drop happened while moving over the table, not at the start spot
        assert!(parcel.pose.position.x > 0.0);
    }

    #[test]
    fn drop_off_the_table_lands_on_the_floor() {
        let mut w = table_and_box();
        w.robots[0].push_motion(MotionCommand::new(MotionKind::Pick { object: 2 }, 1.0).unwrap());
        let target = Vec3::new(1.5, 0.0, 0.8);
        w.robots[0].push_motion(
            MotionCommand::new(MotionKind::MoveTo { target, speed: 0.5 }, 1.0).unwrap(),
        );
        let done = run_until_idle(&mut w, 0.05);
        assert_eq!(done.len(), 2);
        w.inject_fault(FaultInjection::Drop {
            object: 2,
            step: w.steps + 1,
        })
        .unwrap();
        w.step(0.05);
        assert!((w.object(2).unwrap().pose.position.z - 0.05).abs() < 1e-12);
    }

    #[test]
    fn place_reaches_goal_pose_exactly() {
        let mut w = table_and_box();
        w.objects.push(ObjectState::new(
            3,
            "pallet",
            Vec3::new(1.0, 0.0, 0.1),
            Vec3::new(0.3, 0.3, 0.1),
        ));
        w.robots[0].push_motion(MotionCommand::new(MotionKind::Pick { object: 2 }, 1.0).unwrap());
        let target = PlaceTarget {
            onto: 3,
            offset: [0.1, -0.1],
        };
        w.robots[0]
            .push_motion(MotionCommand::new(MotionKind::Place { object: 2, target }, 1.0).unwrap());
        let done = run_until_idle(&mut w, 0.05);
        assert!(done.iter().all(|c| c.success));
        let p = w.object(2).unwrap().pose.position;
        assert!(
            (p - Vec3::new(1.1, -0.1, 0.25)).norm() < 1e-6,
            "{p:?} {done:?}"
        );
    }

    #[test]
    fn zero_placement_noise_matches_nominal() {
        let run = |noise: Option<[f64; 3]>| {
            let mut w = table_and_box();
            w.objects.push(ObjectState::new(
                3,
                "pallet",
                Vec3::new(1.0, 0.0, 0.1),
                Vec3::new(0.3, 0.3, 0.1),
            ));
            if let Some(offset) = noise {
                w.inject_fault(FaultInjection::PlacementNoise { object: 2, offset })
                    .unwrap();
            }
            w.robots[0]
                .push_motion(MotionCommand::new(MotionKind::Pick { object: 2 }, 1.0).unwrap());
            let target = PlaceTarget {
                onto: 3,
                offset: [0.0, 0.0],
            };
            w.robots[0].push_motion(
                MotionCommand::new(MotionKind::Place { object: 2, target }, 1.0).unwrap(),
            );
            run_until_idle(&mut w, 0.05);
            w.object(2).unwrap().pose
        };
        assert_eq!(run(None), run(Some([0.0, 0.0, 0.0])));
        let shifted = run(Some([0.5, 0.0, 0.0]));
        // off the pallet edge: falls to the floor
        assert!((shifted.position.x - 1.5).abs() < 1e-9);
        assert!((shifted.position.z - 0.05).abs() < 1e-9);
    }

    #[test]
    fn obstruction_inserts_and_settles() {
        let mut w = table_and_box();
        let obstacle = ObstacleSpec {
            id: 50,
            caption: "human".into(),
            position: [0.2, 0.2],
            half_extents: [0.1, 0.1, 0.5],
        };
        w.inject_fault(FaultInjection::Obstruct { obstacle, step: 1 })
            .unwrap();
        w.step(0.05);
        let h = w.object(50).unwrap();
        assert!((h.bottom_z() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let mut w = table_and_box();
        assert_eq!(
            w.inject_fault(FaultInjection::Drop {
                object: 99,
                step: 1
            }),
            Err(WorldError::UnknownObject(99))
        );
    }

    #[test]
    fn container_support_is_inner_floor() {
        let bin = ObjectState::new(1, "bin", Vec3::new(0.0, 0.0, 0.1), Vec3::new(0.2, 0.2, 0.1))
            .container();
        assert!((bin.support_height() - CONTAINER_FLOOR).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_points_lie_on_surface() {
        let w = table_and_box();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clouds = w.synth_point_cloud(&CloudParams::default(), &mut rng);
        assert_eq!(clouds.len(), 2);
        assert_eq!(clouds[0].object_id, 1);
        assert_eq!(clouds[1].object_id, 2);
        for (c, o) in clouds.iter().zip(&w.objects) {
            let h = o.half_extents;
            for p in &c.points {
                let d = p - o.pose.position;
                let inside = (0..3).all(|k| d[k].abs() <= h[k] + 1e-12);
                let on_face = (0..3).any(|k| (d[k].abs() - h[k]).abs() < 1e-12);
                assert!(inside && on_face, "{p:?} is off the surface");
            }
        }
    }

    #[test]
    fn point_count_matches_density() {
        let cube = ObjectState::new(
            1,
            "cube",
            Vec3::new(0.0, 0.0, 0.5),
            Vec3::new(0.5, 0.5, 0.5),
        );
        let w = Workspace::new(vec![cube], vec![], bounds(), 0.05).unwrap();
        let params = CloudParams {
            density: 500.0,
            ..CloudParams::default()
        };
        let expected = 500.0 * 6.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = w.synth_point_cloud(&params, &mut rng)[0].len() as f64;
            assert!((n - expected).abs() <= 3.0 * expected.sqrt(), "{n}");
        }
    }

    #[test]
    fn cloud_text_roundtrip() {
        let w = table_and_box();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clouds = w.synth_point_cloud(&CloudParams::default(), &mut rng);
        let back = read_clouds(&write_clouds(&clouds)).unwrap();
        assert_eq!(clouds, back);
        assert!(read_clouds("1 2 three 4").is_err());
    }

    #[test]
    fn identical_seeds_identical_clouds() {
        let w = table_and_box();
        let params = CloudParams {
            noise_sigma: 0.002,
            face_drop: 0.2,
            ..CloudParams::default()
        };
        let a = w.synth_point_cloud(&params, &mut ChaCha8Rng::seed_from_u64(9));
        let b = w.synth_point_cloud(&params, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}

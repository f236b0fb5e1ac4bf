//! Scenario files: versioned TOML describing the workspace, the nominal
//! motion program, the task goal, faults, and every tunable of the loop.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::channel::ChannelParams;
use crate::edge_points::EdgeParams;
use crate::geometry::{Aabb, Vec3};
use crate::offload::{DataSizes, OffloadMode, TimingProfile};
use crate::planner::GoalPlacement;
use crate::scene_graph::{Relation, RelationThresholds};
use crate::twin::VerifyParams;
use crate::world::{
    CloudParams, FaultInjection, MotionCommand, MotionKind, MotionTag, ObjectId, ObjectState,
    PlaceTarget, RobotId, RobotState, Workspace,
};

pub const FORMAT_VERSION: u32 = 1;

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    #[serde(default = "default_grasp_radius")]
    pub grasp_radius: f64,
}

fn default_grasp_radius() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: ObjectId,
    pub caption: String,
    pub position: [f64; 3],
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub container: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: RobotId,
    pub caption: String,
    pub gripper: [f64; 3],
    #[serde(default = "default_speed")]
    pub speed: f64,
}

fn default_speed() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSpec {
    MoveTo {
        robot: RobotId,
        target: [f64; 3],
        #[serde(default)]
        speed: Option<f64>,
        /// Object the move serves, for recovery bookkeeping.
        #[serde(default)]
        object: Option<ObjectId>,
    },
    Pick {
        robot: RobotId,
        object: ObjectId,
    },
    Place {
        robot: RobotId,
        object: ObjectId,
        onto: ObjectId,
        #[serde(default)]
        offset: [f64; 2],
    },
}

impl MotionSpec {
    pub fn robot(&self) -> RobotId {
        match self {
            MotionSpec::MoveTo { robot, .. }
            | MotionSpec::Pick { robot, .. }
            | MotionSpec::Place { robot, .. } => *robot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    #[default]
    Rule,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub kind: PlannerKind,
    pub url: Option<String>,
    pub timeout_s: f64,
    /// Inference time charged per task-level planning call, seconds.
    pub t_inf_task: f64,
    /// Inference time charged per motion-level round, seconds.
    pub t_inf_motion: f64,
    /// Charge measured wall time of remote calls instead of the constants.
    pub measure_remote: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            kind: PlannerKind::Rule,
            url: None,
            timeout_s: 2.0,
            t_inf_task: 0.005,
            t_inf_motion: 0.005,
            measure_remote: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Geometric,
    Gcn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub classifier: ClassifierKind,
    /// Text weight file for the GCN classifier.
    pub gcn_weights: Option<String>,
    pub relations: RelationThresholds,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierKind::Geometric,
            gcn_weights: None,
            relations: RelationThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub delta: f64,
    pub eps_goal: f64,
    pub max_rounds: usize,
    /// Seconds charged for twin reconstruction and verification.
    pub t_verify: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let v = VerifyParams::default();
        Self {
            delta: v.delta,
            eps_goal: v.eps_goal,
            max_rounds: v.max_rounds,
            t_verify: 0.0,
        }
    }
}

impl VerifyConfig {
    pub fn params(&self) -> VerifyParams {
        VerifyParams {
            delta: self.delta,
            eps_goal: self.eps_goal,
            max_rounds: self.max_rounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OffloadConfig {
    pub mode: OffloadMode,
    /// Sample a fading gain per transmission instead of using the mean SNR.
    pub monte_carlo: bool,
}

impl Default for OffloadConfig {
    fn default() -> Self {
        Self {
            mode: OffloadMode::Auto,
            monte_carlo: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryMotionConfig {
    /// Height above the object top (or place point) for approach moves.
    pub approach_height: f64,
    pub speed: f64,
}

impl Default for RecoveryMotionConfig {
    fn default() -> Self {
        Self {
            approach_height: 0.25,
            speed: 0.5,
        }
    }
}

fn default_dt() -> f64 {
    0.05
}

fn default_max_steps() -> u64 {
    20_000
}

fn default_timing() -> TimingProfile {
    TimingProfile::crossover_demo()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    pub workspace: WorkspaceSpec,
    pub objects: Vec<ObjectSpec>,
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub motions: Vec<MotionSpec>,
    #[serde(default)]
    pub goals: Vec<GoalPlacement>,
    /// Goal slot offsets per support caption: `slots["pallet"][i]`.
    #[serde(default)]
    pub slots: std::collections::BTreeMap<String, Vec<[f64; 2]>>,
    /// Captions that belong to the task. Defaults to every initial object.
    #[serde(default)]
    pub task_relevant: Option<Vec<String>>,
    #[serde(default)]
    pub faults: Vec<FaultInjection>,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default = "default_timing")]
    pub timing: TimingProfile,
    /// Offline payload sizes; measured from the first frame when absent.
    #[serde(default)]
    pub sizes: Option<DataSizes>,
    #[serde(default)]
    pub offload: OffloadConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub edge: EdgeParams,
    #[serde(default)]
    pub cloud: CloudParams,
    #[serde(default)]
    pub recovery: RecoveryMotionConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    fn object_spec(&self, id: ObjectId) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Checks every cross-reference and numeric range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != FORMAT_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        if !(self.dt > 0.0) || self.max_steps == 0 {
            return Err(ConfigError::Invalid(
                "dt and max_steps must be positive".into(),
            ));
        }
        self.channel
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.timing
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(s) = &self.sizes {
            s.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let v = &self.verify;
        if !(v.delta > 0.0 && v.eps_goal > 0.0) || v.max_rounds == 0 {
            return Err(ConfigError::Invalid(
                "verify needs delta > 0, eps_goal > 0, max_rounds >= 1".into(),
            ));
        }
        if self.edge.k == 0 {
            return Err(ConfigError::Invalid("edge.k must be positive".into()));
        }
        let p = &self.planner;
        if !(p.t_inf_task >= 0.0 && p.t_inf_motion >= 0.0 && p.timeout_s > 0.0) {
            return Err(ConfigError::Invalid(
                "planner times must be non-negative".into(),
            ));
        }
        if self.detector.classifier == ClassifierKind::Gcn && self.detector.gcn_weights.is_none() {
            return Err(ConfigError::Invalid(
                "gcn classifier needs detector.gcn_weights".into(),
            ));
        }
        let mut captions = BTreeSet::new();
        for c in self
            .objects
            .iter()
            .map(|o| &o.caption)
            .chain(self.robots.iter().map(|r| &r.caption))
        {
            if !captions.insert(c.as_str()) {
                return Err(ConfigError::Invalid(format!("caption `{c}` used twice")));
            }
        }
        // the workspace constructor checks ids, extents and bounds
        self.build_workspace()?;
        for m in &self.motions {
            if !self.robots.iter().any(|r| r.id == m.robot()) {
                return Err(ConfigError::UnknownRobot(m.robot()));
            }
            match m {
                MotionSpec::Pick { object, .. } => self.require_object(*object)?,
                MotionSpec::Place { object, onto, .. } => {
                    self.require_object(*object)?;
                    self.require_object(*onto)?;
                }
                MotionSpec::MoveTo { object, speed, .. } => {
                    if let Some(o) = object {
                        self.require_object(*o)?;
                    }
                    if speed.is_some_and(|s| !(s > 0.0)) {
                        return Err(ConfigError::Invalid("move speed must be positive".into()));
                    }
                }
            }
        }
        for g in &self.goals {
            for c in [&g.object, &g.support] {
                if !self.objects.iter().any(|o| &o.caption == c) {
                    return Err(ConfigError::UnknownCaption(c.clone()));
                }
            }
            if !matches!(g.relation, Relation::StandingOn | Relation::Inside) {
                return Err(ConfigError::Invalid(format!(
                    "goal relation `{}` cannot be planned",
                    g.relation.as_str()
                )));
            }
            g.triplet()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(tr) = &self.task_relevant {
            for c in tr {
                if !captions.contains(c.as_str()) {
                    return Err(ConfigError::UnknownCaption(c.clone()));
                }
            }
        }
        for f in &self.faults {
            match f {
                FaultInjection::Drop { object, .. }
                | FaultInjection::PlacementNoise { object, .. } => self.require_object(*object)?,
                FaultInjection::Obstruct { obstacle, .. } => {
                    if self.object_spec(obstacle.id).is_some()
                        || self.robots.iter().any(|r| r.id == obstacle.id)
                    {
                        return Err(ConfigError::Invalid(format!(
                            "obstacle id {} already in use",
                            obstacle.id
                        )));
                    }
                    if captions.contains(obstacle.caption.as_str()) {
                        return Err(ConfigError::Invalid(format!(
                            "obstacle caption `{}` already in use",
                            obstacle.caption
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn require_object(&self, id: ObjectId) -> Result<(), ConfigError> {
        self.object_spec(id)
            .map(|_| ())
            .ok_or(ConfigError::UnknownObject(id))
    }

    pub fn bounds(&self) -> Aabb {
        Aabb {
            min: v3(self.workspace.bounds_min),
            max: v3(self.workspace.bounds_max),
        }
    }

    /// Initial workspace with the motion program queued and faults armed.
    pub fn build_workspace(&self) -> Result<Workspace, ConfigError> {
        let objects = self
            .objects
            .iter()
            .map(|o| {
                let mut s =
                    ObjectState::new(o.id, o.caption.clone(), v3(o.position), v3(o.half_extents))
                        .with_yaw(o.yaw);
                if o.container {
                    s = s.container();
                }
                s
            })
            .collect();
        let robots = self
            .robots
            .iter()
            .map(|r| RobotState::new(r.id, r.caption.clone(), v3(r.gripper), r.speed))
            .collect();
        let mut ws = Workspace::new(objects, robots, self.bounds(), self.workspace.grasp_radius)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.queue_motions(&mut ws)?;
        for f in &self.faults {
            ws.inject_fault(f.clone())
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(ws)
    }

    /// Turns the motion specs into commands. Durations are nominal:
    /// straight-line distance over speed, chained from the previous motion's
    /// end point of the same robot.
    fn queue_motions(&self, ws: &mut Workspace) -> Result<(), ConfigError> {
        let mut cursor: std::collections::BTreeMap<RobotId, Vec3> =
            ws.robots.iter().map(|r| (r.id, r.gripper)).collect();
        for m in &self.motions {
            let rid = m.robot();
            let robot = ws.robot(rid).ok_or(ConfigError::UnknownRobot(rid))?;
            let from = cursor[&rid];
            let (kind, to, speed, object) = match m {
                MotionSpec::MoveTo {
                    target,
                    speed,
                    object,
                    ..
                } => {
                    let s = speed.unwrap_or(robot.speed);
                    (
                        MotionKind::MoveTo {
                            target: v3(*target),
                            speed: s,
                        },
                        v3(*target),
                        s,
                        *object,
                    )
                }
                MotionSpec::Pick { object, .. } => {
                    let o = ws
                        .object(*object)
                        .ok_or(ConfigError::UnknownObject(*object))?;
                    (
                        MotionKind::Pick { object: *object },
                        o.grasp_point(),
                        robot.speed,
                        Some(*object),
                    )
                }
                MotionSpec::Place {
                    object,
                    onto,
                    offset,
                    ..
                } => {
                    let target = PlaceTarget {
                        onto: *onto,
                        offset: *offset,
                    };
                    let to = ws
                        .place_grasp_point(*object, &target)
                        .ok_or(ConfigError::UnknownObject(*onto))?;
                    (
                        MotionKind::Place {
                            object: *object,
                            target,
                        },
                        to,
                        robot.speed,
                        Some(*object),
                    )
                }
            };
            let duration = nominal_duration(&from, &to, speed);
            let cmd = MotionCommand::new(kind, duration)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?
                .tagged(MotionTag {
                    object,
                    recovery: None,
                });
            ws.robot_mut(rid).expect("checked").push_motion(cmd);
            cursor.insert(rid, to);
        }
        Ok(())
    }

    /// Captions the detector treats as part of the task.
    pub fn task_relevant_set(&self) -> BTreeSet<String> {
        match &self.task_relevant {
            Some(v) => v.iter().cloned().collect(),
            None => self.objects.iter().map(|o| o.caption.clone()).collect(),
        }
    }

    /// Horizontal offset of goal slot `slot` on `support`.
    pub fn slot_offset(&self, support: &str, slot: usize) -> [f64; 2] {
        self.slots
            .get(support)
            .and_then(|v| v.get(slot))
            .copied()
            .unwrap_or([0.0, 0.0])
    }
}

/// Straight-line travel time with a floor so that zero-length motions
/// still have a positive duration.
pub fn nominal_duration(from: &Vec3, to: &Vec3, speed: f64) -> f64 {
    ((to - from).norm() / speed).max(1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1
name = "minimal"
seed = 3

[workspace]
bounds_min = [-1.0, -1.0, 0.0]
bounds_max = [1.0, 1.0, 2.0]

[[objects]]
id = 1
caption = "table"
position = [0.0, 0.0, 0.35]
half_extents = [0.5, 0.5, 0.35]

[[objects]]
id = 2
caption = "parcel"
position = [0.2, 0.0, 0.75]
half_extents = [0.05, 0.05, 0.05]

[[robots]]
id = 10
caption = "robot"
gripper = [0.0, -0.4, 1.0]

[[motions]]
kind = "pick"
robot = 10
object = 2

[[goals]]
object = "parcel"
relation = "standing on"
support = "table"
"#;

    #[test]
    fn minimal_file_loads_with_defaults() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.dt, 0.05);
        assert_eq!(c.planner.kind, PlannerKind::Rule);
        assert_eq!(c.channel, ChannelParams::default());
        let ws = c.build_workspace().unwrap();
        let q = &ws.robot(10).unwrap().motion_queue;
        assert_eq!(q.len(), 1);
        // from (0,-0.4,1.0) to the parcel top (0.2,0,0.8) at 0.5 m/s
        let d = (0.2f64.powi(2) + 0.4f64.powi(2) + 0.2f64.powi(2)).sqrt() / 0.5;
        assert!((q[0].nominal_duration - d).abs() < 1e-12);
        assert_eq!(c.task_relevant_set().len(), 2);
    }

    #[test]
    fn roundtrip_through_toml() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(ScenarioConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn bad_references_are_load_errors() {
        let bad = MINIMAL.replace("object = 2", "object = 7");
        assert!(matches!(
            ScenarioConfig::from_toml(&bad),
            Err(ConfigError::UnknownObject(7))
        ));
        let bad = MINIMAL.replace("version = 1", "version = 9");
        assert!(matches!(
            ScenarioConfig::from_toml(&bad),
            Err(ConfigError::Version(9))
        ));
        let bad = MINIMAL.replace("support = \"table\"", "support = \"shelf\"");
        assert!(matches!(
            ScenarioConfig::from_toml(&bad),
            Err(ConfigError::UnknownCaption(_))
        ));
        let bad = MINIMAL.replace("seed = 3\n", "");
        assert!(matches!(
            ScenarioConfig::from_toml(&bad),
            Err(ConfigError::Parse(_))
        ));
    }
}

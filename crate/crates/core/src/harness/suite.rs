//! Built-in task suite: workpiece sorting, grocery packing and parcel
//! palletising, each with one of three fault types.
//!
//! Everything happens on one table (top at z = 0.7). Items start on a row
//! near the front edge; supports (containers or a pallet) stand on a row
//! at the back. Between the two rows is a free band that nothing occupies
//! initially; faults put things there. Fault timing is found by dry-running
//! the fault-free program, so a given `(task, fault, seed)` always produces
//! the same scenario.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{
    MotionSpec, ObjectSpec, RobotSpec, ScenarioConfig, WorkspaceSpec, FORMAT_VERSION,
};
use super::{measure_sizes, ConfigError};
use crate::geometry::Vec3;
use crate::offload::DataSizes;
use crate::planner::GoalPlacement;
use crate::scene_graph::Relation;
use crate::world::{FaultInjection, MotionKind, ObjectId, ObstacleSpec, PlaceTarget, RobotId};

pub const TABLE_ID: ObjectId = 1;
pub const OBSTACLE_ID: ObjectId = 99;
pub const OBSTACLE_CAPTION: &str = "human";
pub const OBSTACLE_HALF: [f64; 3] = [0.08, 0.08, 0.2];
const TABLE_TOP: f64 = 0.7;
const CARRY_Z: f64 = 1.0;
const ITEM_ROW_Y: f64 = -0.55;
const SUPPORT_ROW_Y: f64 = 0.35;
/// Free band where dropped items land.
const DROP_BAND: (f64, f64) = (-0.25, 0.0);
/// Where mis-placed items land.
const NOISE_BAND: (f64, f64) = (-0.16, -0.08);
/// Clearance between an obstacle and the endpoints of the move it blocks,
/// beyond the proximity radius.
const OBSTRUCT_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    WorkpieceSorting,
    GroceryPacking,
    ParcelPalletising,
}

impl Task {
    pub const ALL: [Task; 3] = [
        Task::WorkpieceSorting,
        Task::GroceryPacking,
        Task::ParcelPalletising,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Task::WorkpieceSorting => "workpiece_sorting",
            Task::GroceryPacking => "grocery_packing",
            Task::ParcelPalletising => "parcel_palletising",
        }
    }

    fn salt(&self) -> u64 {
        match self {
            Task::WorkpieceSorting => 0x5157,
            Task::GroceryPacking => 0x6770,
            Task::ParcelPalletising => 0x7061,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SuiteFault {
    /// The carried item slips out of the gripper mid-carry.
    Drop,
    /// The item lands outside its support when placed.
    PlacementNoise,
    /// A person steps into the path of a carry move.
    Obstruct,
}

impl SuiteFault {
    pub const ALL: [SuiteFault; 3] = [
        SuiteFault::Drop,
        SuiteFault::PlacementNoise,
        SuiteFault::Obstruct,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SuiteFault::Drop => "drop",
            SuiteFault::PlacementNoise => "placement_noise",
            SuiteFault::Obstruct => "obstruct",
        }
    }
}

impl fmt::Display for SuiteFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SuiteFault {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SuiteFault::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown fault `{s}`")))
    }
}

struct Item {
    caption: &'static str,
    half: [f64; 3],
}

struct Layout {
    items: Vec<Item>,
    /// `(caption, x, half extents, container)` of each support.
    supports: Vec<(&'static str, f64, [f64; 3], bool)>,
    /// Item x positions before shuffling.
    item_xs: Vec<f64>,
    robots: Vec<(&'static str, f64)>,
    /// Goal support index and slot for item `i`.
    goal: fn(usize) -> (usize, usize),
    relation: Relation,
    slots: Vec<[f64; 2]>,
}

fn layout(task: Task) -> Layout {
    match task {
        Task::WorkpieceSorting => Layout {
            items: ["red workpiece", "green workpiece", "blue workpiece"]
                .into_iter()
                .map(|caption| Item {
                    caption,
                    half: [0.025; 3],
                })
                .collect(),
            supports: vec![
                ("red container", -0.4, [0.12, 0.12, 0.06], true),
                ("green container", 0.0, [0.12, 0.12, 0.06], true),
                ("blue container", 0.4, [0.12, 0.12, 0.06], true),
            ],
            item_xs: vec![-0.4, 0.0, 0.4],
            robots: vec![("robot", 0.9)],
            goal: |i| (i, 0),
            relation: Relation::Inside,
            slots: vec![[0.0, 0.0]],
        },
        Task::GroceryPacking => Layout {
            items: vec![
                Item {
                    caption: "apple",
                    half: [0.04, 0.04, 0.04],
                },
                Item {
                    caption: "milk carton",
                    half: [0.035, 0.035, 0.06],
                },
                Item {
                    caption: "cereal box",
                    half: [0.05, 0.025, 0.06],
                },
                Item {
                    caption: "bread",
                    half: [0.06, 0.04, 0.035],
                },
            ],
            supports: vec![("bin", 0.0, [0.2, 0.15, 0.1], true)],
            item_xs: vec![-0.6, -0.2, 0.2, 0.6],
            robots: vec![("left robot", -0.9), ("right robot", 0.9)],
            goal: |i| (0, i),
            relation: Relation::Inside,
            slots: vec![[-0.1, -0.07], [0.1, -0.07], [-0.1, 0.07], [0.1, 0.07]],
        },
        Task::ParcelPalletising => Layout {
            items: ["parcel a", "parcel b", "parcel c", "parcel d"]
                .into_iter()
                .map(|caption| Item {
                    caption,
                    half: [0.08, 0.06, 0.05],
                })
                .collect(),
            supports: vec![("pallet", 0.0, [0.3, 0.2, 0.04], false)],
            item_xs: vec![-0.6, -0.2, 0.2, 0.6],
            robots: vec![("left robot", -0.9), ("right robot", 0.9)],
            goal: |i| (0, i),
            relation: Relation::StandingOn,
            slots: vec![[-0.15, -0.1], [0.15, -0.1], [-0.15, 0.1], [0.15, 0.1]],
        },
    }
}

fn task_rng(task: Task, seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (task.salt() << 32));
    rng.set_stream(stream);
    rng
}

/// The fault-free scenario: every item carried to its goal slot.
pub fn nominal(task: Task, seed: u64) -> ScenarioConfig {
    let l = layout(task);
    let mut rng = task_rng(task, seed, 0);
    let mut xs = l.item_xs.clone();
    xs.shuffle(&mut rng);

    let mut objects = vec![ObjectSpec {
        id: TABLE_ID,
        caption: "table".into(),
        position: [0.0, 0.0, TABLE_TOP / 2.0],
        half_extents: [1.0, 0.7, TABLE_TOP / 2.0],
        yaw: 0.0,
        container: false,
    }];
    let support_ids: Vec<ObjectId> = (0..l.supports.len()).map(|i| 10 + i as ObjectId).collect();
    for (&id, &(caption, x, half, container)) in support_ids.iter().zip(&l.supports) {
        objects.push(ObjectSpec {
            id,
            caption: caption.into(),
            position: [x, SUPPORT_ROW_Y, TABLE_TOP + half[2]],
            half_extents: half,
            yaw: 0.0,
            container,
        });
    }
    let item_ids: Vec<ObjectId> = (0..l.items.len()).map(|i| 20 + i as ObjectId).collect();
    let mut item_pos = Vec::new();
    for ((&id, item), &x) in item_ids.iter().zip(&l.items).zip(&xs) {
        let p = [
            x + rng.random_range(-0.03..0.03),
            ITEM_ROW_Y + rng.random_range(-0.02..0.02),
            TABLE_TOP + item.half[2],
        ];
        item_pos.push(p);
        objects.push(ObjectSpec {
            id,
            caption: item.caption.into(),
            position: p,
            half_extents: item.half,
            yaw: 0.0,
            container: false,
        });
    }
    let robot_ids: Vec<RobotId> = (0..l.robots.len()).map(|i| 100 + i as RobotId).collect();
    let robots: Vec<RobotSpec> = robot_ids
        .iter()
        .zip(&l.robots)
        .map(|(&id, &(caption, x))| RobotSpec {
            id,
            caption: caption.into(),
            gripper: [x, 0.0, CARRY_Z],
            speed: 0.5,
        })
        .collect();

    // single robot does everything; with two, the left one takes the items
    // that start on the left half
    let mut order: Vec<usize> = (0..l.items.len()).collect();
    order.sort_by(|&a, &b| item_pos[a][0].total_cmp(&item_pos[b][0]));
    let mut motions = Vec::new();
    let mut goals = Vec::new();
    let slot_key = l.supports[0].0.to_string();
    let mut slots = BTreeMap::new();
    for &i in &order {
        let (si, slot) = (l.goal)(i);
        let (support_caption, sx, shalf, container) = l.supports[si];
        let robot = if robots.len() == 1 || item_pos[i][0] < 0.0 {
            robot_ids[0]
        } else {
            robot_ids[1]
        };
        let id = item_ids[i];
        let p = item_pos[i];
        let offset = l.slots[slot];
        let floor = if container {
            TABLE_TOP + 0.02
        } else {
            TABLE_TOP + 2.0 * shalf[2]
        };
        let place_z = floor + 2.0 * l.items[i].half[2];
        let above_item = [p[0], p[1], CARRY_Z];
        let above_place = [
            sx + offset[0],
            SUPPORT_ROW_Y + offset[1],
            CARRY_Z.max(place_z + 0.1),
        ];
        let mv = |target: [f64; 3]| MotionSpec::MoveTo {
            robot,
            target,
            speed: None,
            object: Some(id),
        };
        motions.push(mv(above_item));
        motions.push(MotionSpec::Pick { robot, object: id });
        motions.push(mv(above_item));
        motions.push(mv(above_place));
        motions.push(MotionSpec::Place {
            robot,
            object: id,
            onto: support_ids[si],
            offset,
        });
        motions.push(mv(above_place));
        goals.push(GoalPlacement {
            object: l.items[i].caption.into(),
            relation: l.relation,
            support: support_caption.into(),
            slot,
        });
    }
    if l.slots.len() > 1 {
        slots.insert(slot_key, l.slots.clone());
    }
    goals.sort();

    ScenarioConfig {
        version: FORMAT_VERSION,
        name: task.name().into(),
        seed,
        dt: 0.05,
        max_steps: 20_000,
        workspace: WorkspaceSpec {
            bounds_min: [-1.5, -1.5, 0.0],
            bounds_max: [1.5, 1.5, 2.0],
            grasp_radius: 0.05,
        },
        objects,
        robots,
        motions,
        goals,
        slots,
        task_relevant: None,
        faults: Vec::new(),
        channel: Default::default(),
        timing: crate::offload::TimingProfile::crossover_demo(),
        sizes: None,
        offload: Default::default(),
        planner: Default::default(),
        detector: Default::default(),
        verify: Default::default(),
        edge: Default::default(),
        cloud: Default::default(),
        recovery: Default::default(),
    }
}

/// Offline payload estimate of a task, measured once on its seed-0 layout
/// and shared by every seed.
pub fn task_sizes(task: Task) -> DataSizes {
    static CACHE: OnceLock<Mutex<BTreeMap<Task, DataSizes>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(s) = cache.lock().expect("sizes cache").get(&task) {
        return *s;
    }
    let s = measure_sizes(&nominal(task, 0)).expect("suite layouts are valid");
    cache.lock().expect("sizes cache").insert(task, s);
    s
}

/// Items of a task's scenario, in id order.
fn item_ids(cfg: &ScenarioConfig) -> Vec<ObjectId> {
    cfg.objects
        .iter()
        .map(|o| o.id)
        .filter(|&id| id >= 20 && id < OBSTACLE_ID)
        .collect()
}

/// Steps at which `object` is carried over the drop band by a move.
fn drop_candidates(cfg: &ScenarioConfig, object: ObjectId) -> Result<Vec<u64>, ConfigError> {
    let mut ws = cfg.build_workspace()?;
    let mut out = Vec::new();
    while !ws.is_idle() && ws.steps < cfg.max_steps {
        ws.step(cfg.dt);
        let carrier = ws.robots.iter().find(|r| r.carried_object == Some(object));
        let Some(r) = carrier else { continue };
        let moving = matches!(
            r.current_motion().map(|c| &c.kind),
            Some(MotionKind::MoveTo { .. })
        );
        let y = ws.object(object).expect("item exists").pose.position.y;
        if moving && y >= DROP_BAND.0 && y <= DROP_BAND.1 {
            out.push(ws.steps);
        }
    }
    Ok(out)
}

/// Start step, start point and end point of the move that carries `object`
/// from the item row to its support.
fn carry_move(
    cfg: &ScenarioConfig,
    object: ObjectId,
) -> Result<Option<(u64, Vec3, Vec3)>, ConfigError> {
    let mut ws = cfg.build_workspace()?;
    while !ws.is_idle() && ws.steps < cfg.max_steps {
        let before: Vec<Vec3> = ws.robots.iter().map(|r| r.gripper).collect();
        let report = ws.step(cfg.dt);
        for (rid, mid) in report.started {
            let ri = ws
                .robots
                .iter()
                .position(|r| r.id == rid)
                .expect("robot exists");
            let r = &ws.robots[ri];
            let Some(cmd) = r.motion_queue.iter().find(|c| c.id == mid) else {
                continue;
            };
            if r.carried_object == Some(object) && matches!(cmd.kind, MotionKind::MoveTo { .. }) {
                let end = cmd.resolved_target().expect("started");
                if (end - before[ri]).xy().norm() > 0.1 {
                    return Ok(Some((ws.steps, before[ri], end)));
                }
            }
        }
    }
    Ok(None)
}

fn footprint_clear(cfg: &ScenarioConfig, x: f64, y: f64, margin: f64) -> bool {
    cfg.objects.iter().filter(|o| o.id != TABLE_ID).all(|o| {
        (o.position[0] - x).abs() > o.half_extents[0] + OBSTACLE_HALF[0] + margin
            || (o.position[1] - y).abs() > o.half_extents[1] + OBSTACLE_HALF[1] + margin
    })
}

/// The task with one fault of the given type injected.
pub fn scenario(
    task: Task,
    fault: Option<SuiteFault>,
    seed: u64,
) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = nominal(task, seed);
    cfg.sizes = Some(task_sizes(task));
    let Some(fault) = fault else {
        return Ok(cfg);
    };
    cfg.name = format!("{}/{}", task.name(), fault.name());
    let mut rng = task_rng(task, seed, 1 + fault as u64);
    let mut items = item_ids(&cfg);
    items.shuffle(&mut rng);
    let d_near = cfg.detector.relations.d_near;

    let injected = match fault {
        SuiteFault::Drop => {
            let mut found = None;
            for &obj in &items {
                let c = drop_candidates(&cfg, obj)?;
                if let Some(&step) = c.choose(&mut rng) {
                    found = Some(FaultInjection::Drop { object: obj, step });
                    break;
                }
            }
            found
        }
        SuiteFault::PlacementNoise => {
            let obj = items[0];
            let (onto, offset) = cfg
                .motions
                .iter()
                .find_map(|m| match m {
                    MotionSpec::Place {
                        object,
                        onto,
                        offset,
                        ..
                    } if *object == obj => Some((*onto, *offset)),
                    _ => None,
                })
                .expect("every item is placed");
            let support = cfg
                .objects
                .iter()
                .find(|o| o.id == onto)
                .expect("support exists");
            let target = PlaceTarget { onto, offset };
            let land_y = rng.random_range(NOISE_BAND.0..NOISE_BAND.1);
            let dx = rng.random_range(-0.03..0.03);
            let dy = land_y - (support.position[1] + target.offset[1]);
            Some(FaultInjection::PlacementNoise {
                object: obj,
                offset: [dx, dy, 0.0],
            })
        }
        SuiteFault::Obstruct => {
            let mut found = None;
            for &obj in &items {
                let Some((step, a, b)) = carry_move(&cfg, obj)? else {
                    continue;
                };
                let candidates: Vec<(f64, f64)> = (0..=100)
                    .map(|i| {
                        let s = i as f64 / 100.0;
                        let p = a + (b - a) * s;
                        (p.x, p.y)
                    })
                    .filter(|&(x, y)| {
                        let far = |q: Vec3| {
                            ((q.x - x).powi(2) + (q.y - y).powi(2)).sqrt()
                                >= d_near + OBSTRUCT_MARGIN
                        };
                        y >= DROP_BAND.0
                            && y <= DROP_BAND.1
                            && far(a)
                            && far(b)
                            && footprint_clear(&cfg, x, y, 0.02)
                    })
                    .collect();
                if let Some(&(x, y)) = candidates.choose(&mut rng) {
                    found = Some(FaultInjection::Obstruct {
                        obstacle: ObstacleSpec {
                            id: OBSTACLE_ID,
                            caption: OBSTACLE_CAPTION.into(),
                            position: [x, y],
                            half_extents: OBSTACLE_HALF,
                        },
                        step,
                    });
                    break;
                }
            }
            found
        }
    };
    let f = injected.ok_or_else(|| {
        ConfigError::Invalid(format!(
            "no place for a {fault} fault in {task} seed {seed}"
        ))
    })?;
    cfg.faults.push(f);
    cfg.validate()?;
    Ok(cfg)
}

/// Resolves `task` or `task/fault`.
pub fn by_name(name: &str, seed: u64) -> Result<ScenarioConfig, ConfigError> {
    match name.split_once('/') {
        Some((t, f)) => scenario(t.parse()?, Some(f.parse()?), seed),
        None => scenario(name.parse()?, None, seed),
    }
}

/// Every `task/fault` name, task-major.
pub fn all_names() -> Vec<String> {
    Task::ALL
        .iter()
        .flat_map(|t| SuiteFault::ALL.iter().map(move |f| format!("{t}/{f}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        for f in SuiteFault::ALL {
            assert_eq!(f.name().parse::<SuiteFault>().unwrap(), f);
        }
        assert!("juggling".parse::<Task>().is_err());
        assert_eq!(all_names().len(), 9);
    }

    #[test]
    fn nominal_scenarios_validate_and_are_seeded() {
        for t in Task::ALL {
            let a = nominal(t, 4);
            a.validate().unwrap();
            assert_eq!(a, nominal(t, 4));
            assert_ne!(a.objects, nominal(t, 5).objects);
            assert_eq!(a.goals.len(), item_ids(&a).len());
        }
    }

    #[test]
    fn nominal_program_reaches_every_goal() {
        for t in Task::ALL {
            let cfg = nominal(t, 1);
            let mut ws = cfg.build_workspace().unwrap();
            while !ws.is_idle() {
                ws.step(cfg.dt);
                assert!(ws.steps < cfg.max_steps);
            }
            let sg = crate::scene_graph::build_scene_graph(&ws, 0, &cfg.detector.relations);
            for g in &cfg.goals {
                assert!(sg.contains(&g.triplet().unwrap()), "{t}: {:?} missing", g);
            }
        }
    }

    #[test]
    fn every_fault_can_be_placed() {
        for t in Task::ALL {
            for f in SuiteFault::ALL {
                let cfg = scenario(t, Some(f), 2).unwrap();
                assert_eq!(cfg.faults.len(), 1);
            }
        }
    }
}

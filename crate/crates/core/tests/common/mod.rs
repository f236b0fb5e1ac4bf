//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use goc_core::fault_detect::FaultKind;
use goc_core::geometry::horizontal_distance;
use goc_core::harness::suite::{SuiteFault, Task};
use goc_core::harness::{RunOutput, ScenarioConfig};
use goc_core::world::{FaultInjection, MotionKind};

pub const SEEDS: u64 = 25;

/// Every `(task, fault, seed)` of the suite.
pub fn suite_cases() -> Vec<(Task, SuiteFault, u64)> {
    let mut v = Vec::new();
    for t in Task::ALL {
        for f in SuiteFault::ALL {
            for s in 0..SEEDS {
                v.push((t, f, s));
            }
        }
    }
    v
}

/// Frame at which the injected fault first becomes observable, and its
/// kind, from the simulator alone: no scene graphs, no detector.
///
/// - drop: the carry move during which the item fell completes;
/// - placement noise: the place that mis-lands completes;
/// - obstruction: some gripper first comes within the proximity radius of
///   the obstacle (horizontally, and within the pairing range in 3D).
pub fn signature_frame(cfg: &ScenarioConfig) -> (u64, FaultKind) {
    let fault = cfg.faults.first().expect("one fault").clone();
    let th = cfg.detector.relations;
    let mut ws = cfg.build_workspace().unwrap();
    let mut watch: Option<(u32, u64)> = None;
    while ws.steps < cfg.max_steps {
        let carrier = match &fault {
            FaultInjection::Drop { object, .. } => ws
                .robots
                .iter()
                .find(|r| r.carried_object == Some(*object))
                .map(|r| r.id),
            _ => None,
        };
        let report = ws.step(cfg.dt);
        let frame = ws.steps;
        match &fault {
            FaultInjection::Drop { .. } => {
                if report.fired.iter().any(|f| f.effective) {
                    // the drop happens mid-move; that move is still at the queue head
                    let rid = carrier.expect("item was carried");
                    let mid = ws
                        .robot(rid)
                        .unwrap()
                        .current_motion()
                        .expect("carry in progress")
                        .id;
                    watch = Some((rid, mid));
                }
                if let Some((rid, mid)) = watch {
                    if report
                        .completed
                        .iter()
                        .any(|c| c.robot == rid && c.motion.id == mid)
                    {
                        return (frame, FaultKind::TaskLevel);
                    }
                }
            }
            FaultInjection::PlacementNoise { object, .. } => {
                if report
                    .completed
                    .iter()
                    .any(|c| matches!(c.motion.kind, MotionKind::Place { object: o, .. } if o == *object))
                {
                    return (frame, FaultKind::TaskLevel);
                }
            }
            FaultInjection::Obstruct { obstacle, .. } => {
                if let Some(o) = ws.object(obstacle.id) {
                    let c = o.pose.position;
                    if ws.robots.iter().any(|r| {
                        horizontal_distance(&r.gripper, &c) < th.d_near
                            && (r.gripper - c).norm() <= th.d_max
                    }) {
                        return (frame, FaultKind::MotionLevel);
                    }
                }
            }
        }
    }
    panic!("fault never became observable in {}", cfg.name);
}

/// Every goal triplet appears in the final scene graph, and, checked on the
/// raw world state, each goal object rests released with its centre over the
/// support's footprint and its base between the support's bottom and top.
pub fn goals_hold(cfg: &ScenarioConfig, out: &RunOutput) -> bool {
    cfg.goals.iter().all(|g| {
        let in_graph = g
            .triplet()
            .map(|t| out.final_scene.contains(&t))
            .unwrap_or(false);
        let ws = &out.final_workspace;
        let (Some(o), Some(s)) = (
            ws.object_by_caption(&g.object),
            ws.object_by_caption(&g.support),
        ) else {
            return false;
        };
        let (ob, sb) = (o.aabb(), s.aabb());
        let c = o.pose.position;
        let over = c.x >= sb.min.x && c.x <= sb.max.x && c.y >= sb.min.y && c.y <= sb.max.y;
        let base = ob.min.z >= sb.min.z - 1e-6 && ob.min.z <= sb.max.z + 1e-6;
        in_graph && o.carried_by.is_none() && over && base
    })
}

/// Loopback HTTP endpoint answering every request with the same body.
pub struct FixedResponder {
    port: u16,
    hits: Arc<AtomicUsize>,
}

impl FixedResponder {
    pub fn start(body: &'static str) -> Self {
        Self::start_delayed(body, std::time::Duration::ZERO)
    }

    /// Like [`FixedResponder::start`], but every answer waits `delay` first.
    pub fn start_delayed(body: &'static str, delay: std::time::Duration) -> Self {
        let server = tiny_http::Server::http("127.0.0.1:0").expect("bind loopback");
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for mut req in server.incoming_requests() {
                let mut sink = String::new();
                let _ = req.as_reader().read_to_string(&mut sink);
                counter.fetch_add(1, Ordering::SeqCst);
                std::thread::sleep(delay);
                let _ = req.respond(tiny_http::Response::from_string(body));
            }
        });
        Self { port, hits }
    }

    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}/plan", self.port)
    }

    pub fn requests(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

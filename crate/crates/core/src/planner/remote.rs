//! HTTP client for an external planner service.
//!
//! Request bodies are UTF-8 text. The first line is `task` or `motion`.
//!
//! Task requests continue with `robot`, `evidence`, `goal <slot>` and `known`
//! lines, a blank line, then the current scene-graph triplets one per line.
//! The response is either `noop` or action lines `pick|object` /
//! `place|object|support|slot`.
//!
//! Motion requests continue with `start x y z`, `goal x y z`, `delta d`, one
//! `obstacle id cx cy cz radius zmin zmax` line per twin object and one
//! `report verdict;object;segment;clearance;goal_dist` line per earlier
//! round. The response is two or more `wp x y z` lines starting at the
//! requested start.
//!
//! Any failure (no endpoint, timeout, refused connection, transport error,
//! malformed response) is logged with its own reason and answered by the
//! rule-based planner instead.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use super::{
    Action, MotionContext, MotionPlanner, PlanError, RecoveryPlan, RuleBasedPlanner, TaskContext,
    TaskPlanner,
};
use crate::geometry::{all_finite, Vec3};
use crate::twin::{Trajectory, VerificationReport};

pub const PLANNER_URL_ENV: &str = "GOC_PLANNER_URL";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

/// Why the rule-based planner answered instead of the service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FallbackReason {
    Unconfigured,
    Timeout,
    ConnectionRefused,
    SchemaViolation(String),
    Transport(String),
}

impl FallbackReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FallbackReason::Unconfigured => "unconfigured",
            FallbackReason::Timeout => "timeout",
            FallbackReason::ConnectionRefused => "connection_refused",
            FallbackReason::SchemaViolation(_) => "schema_violation",
            FallbackReason::Transport(_) => "transport",
        }
    }
}

impl From<PlanError> for FallbackReason {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Timeout => FallbackReason::Timeout,
            PlanError::ConnectionRefused => FallbackReason::ConnectionRefused,
            PlanError::Schema(m) => FallbackReason::SchemaViolation(m),
            other => FallbackReason::Transport(other.to_string()),
        }
    }
}

pub fn task_request(ctx: &TaskContext) -> String {
    let mut s = String::from("task\n");
    let _ = writeln!(s, "robot {}", ctx.fault.robot);
    for t in &ctx.fault.evidence {
        let _ = writeln!(s, "evidence {}", t.wire_line());
    }
    for g in &ctx.goal {
        if let Ok(t) = g.triplet() {
            let _ = writeln!(s, "goal {} {}", g.slot, t.wire_line());
        }
    }
    for k in &ctx.known_objects {
        let _ = writeln!(s, "known {k}");
    }
    s.push('\n');
    for t in ctx.scene.triplets() {
        s.push_str(&t.wire_line());
        s.push('\n');
    }
    s
}

pub fn motion_request(ctx: &MotionContext) -> String {
    let mut s = String::from("motion\n");
    let v = |p: &Vec3| format!("{} {} {}", p.x, p.y, p.z);
    let _ = writeln!(s, "start {}", v(&ctx.start));
    let _ = writeln!(s, "goal {}", v(&ctx.goal));
    let _ = writeln!(s, "delta {}", ctx.delta);
    for o in &ctx.obstacles {
        let _ = writeln!(
            s,
            "obstacle {} {} {} {} {}",
            o.object_id,
            v(&o.centroid),
            o.horizontal_radius,
            o.min_z,
            o.max_z
        );
    }
    for (_, r) in &ctx.history {
        let _ = writeln!(s, "report {}", r.to_text());
    }
    s
}

fn schema(msg: impl Into<String>) -> PlanError {
    PlanError::Schema(msg.into())
}

/// Parses a task response. Blank lines are ignored.
pub fn parse_actions(body: &str) -> Result<RecoveryPlan, PlanError> {
    let lines: Vec<&str> = body
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines == ["noop"] {
        return Ok(RecoveryPlan::Noop);
    }
    if lines.is_empty() {
        return Err(schema("empty task response"));
    }
    let mut actions = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let f: Vec<&str> = line.split('|').collect();
        let a = match f.as_slice() {
            ["pick", o] if !o.is_empty() => Action::Pick {
                object: o.to_string(),
            },
            ["place", o, s, slot] if !o.is_empty() && !s.is_empty() => Action::Place {
                object: o.to_string(),
                support: s.to_string(),
                slot: slot
                    .parse()
                    .map_err(|_| schema(format!("line {}: bad slot `{slot}`", i + 1)))?,
            },
            _ => return Err(schema(format!("line {}: unknown action `{line}`", i + 1))),
        };
        actions.push(a);
    }
    Ok(RecoveryPlan::Actions(actions))
}

/// Parses a motion response into a trajectory toward `goal` starting at `start`.
pub fn parse_waypoints(
    body: &str,
    start: &Vec3,
    goal: &Vec3,
    round: usize,
) -> Result<Trajectory, PlanError> {
    let mut wps = Vec::new();
    for (i, line) in body
        .lines()
        .map(str::trim)
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
    {
        let f: Vec<&str> = line.split_whitespace().collect();
        let ["wp", x, y, z] = f.as_slice() else {
            return Err(schema(format!("line {}: expected `wp x y z`", i + 1)));
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| schema(format!("line {}: bad number `{s}`", i + 1)))
        };
        let p = Vec3::new(num(x)?, num(y)?, num(z)?);
        if !all_finite(&p) {
            return Err(schema(format!("line {}: non-finite waypoint", i + 1)));
        }
        wps.push(p);
    }
    if wps.len() < 2 {
        return Err(schema("fewer than two waypoints"));
    }
    if (wps[0] - start).norm() > 1e-6 {
        return Err(schema("trajectory does not begin at the requested start"));
    }
    Trajectory::new(wps, *goal, round).map_err(|e| schema(e.to_string()))
}

/// Client for an external planner with rule-based fallback.
#[derive(Debug, Clone)]
pub struct RemotePlanner {
    pub endpoint: Option<String>,
    pub timeout: Duration,
    fallback: RuleBasedPlanner,
    /// Every fallback taken, in order.
    pub fallbacks: Vec<FallbackReason>,
    /// Wall time of the most recent successful request.
    pub last_latency: Option<Duration>,
}

impl RemotePlanner {
    pub fn new(endpoint: Option<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.filter(|e| !e.trim().is_empty()),
            timeout,
            fallback: RuleBasedPlanner,
            fallbacks: Vec::new(),
            last_latency: None,
        }
    }

    /// Endpoint from the environment if set there, else from `configured`.
    pub fn from_env_or(configured: Option<String>, timeout: Duration) -> Self {
        let env = std::env::var(PLANNER_URL_ENV)
            .ok()
            .filter(|e| !e.trim().is_empty());
        Self::new(env.or(configured), timeout)
    }

    fn post(&mut self, body: &str) -> Result<String, PlanError> {
        let Some(url) = self.endpoint.clone() else {
            return Err(PlanError::Transport("no endpoint configured".into()));
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let started = Instant::now();
        let result = agent
            .post(url.as_str())
            .header("content-type", "text/plain; charset=utf-8")
            .send(body);
        let mut resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(PlanError::Timeout),
            Err(ureq::Error::ConnectionFailed) => return Err(PlanError::ConnectionRefused),
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::ConnectionRefused => {
                return Err(PlanError::ConnectionRefused)
            }
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                return Err(PlanError::Timeout)
            }
            Err(e) => return Err(PlanError::Transport(e.to_string())),
        };
        if !resp.status().is_success() {
            return Err(PlanError::Transport(format!(
                "HTTP status {}",
                resp.status()
            )));
        }
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => PlanError::Timeout,
            other => PlanError::Transport(other.to_string()),
        })?;
        self.last_latency = Some(started.elapsed());
        Ok(text)
    }

    fn note_fallback(&mut self, reason: FallbackReason) {
        match &reason {
            FallbackReason::Unconfigured => {
                log::info!("planner endpoint unset; using rule-based planner")
            }
            FallbackReason::Timeout => log::warn!(
                "planner request timed out after {:?}; falling back",
                self.timeout
            ),
            FallbackReason::ConnectionRefused => {
                log::warn!("planner endpoint refused the connection; falling back")
            }
            FallbackReason::SchemaViolation(m) => {
                log::warn!("planner response violates the schema ({m}); falling back")
            }
            FallbackReason::Transport(m) => {
                log::warn!("planner transport error ({m}); falling back")
            }
        }
        self.fallbacks.push(reason);
    }

    fn call<T>(
        &mut self,
        body: String,
        parse: impl FnOnce(&str) -> Result<T, PlanError>,
    ) -> Result<T, FallbackReason> {
        if self.endpoint.is_none() {
            return Err(FallbackReason::Unconfigured);
        }
        let text = self.post(&body).map_err(FallbackReason::from)?;
        parse(&text).map_err(FallbackReason::from)
    }
}

impl TaskPlanner for RemotePlanner {
    fn replan_task(&mut self, ctx: &TaskContext) -> Result<RecoveryPlan, PlanError> {
        if ctx.fault.kind != crate::fault_detect::FaultKind::TaskLevel {
            return Err(PlanError::WrongFaultKind(ctx.fault.kind));
        }
        match self.call(task_request(ctx), parse_actions) {
            Ok(plan) => Ok(plan),
            Err(reason) => {
                self.note_fallback(reason);
                self.fallback.replan_task(ctx)
            }
        }
    }
}

impl MotionPlanner for RemotePlanner {
    fn propose(&mut self, ctx: &MotionContext) -> Result<Trajectory, PlanError> {
        let round = ctx.history.len() + 1;
        match self.call(motion_request(ctx), |b| {
            parse_waypoints(b, &ctx.start, &ctx.goal, round)
        }) {
            Ok(t) => Ok(t),
            Err(reason) => {
                self.note_fallback(reason);
                self.fallback.propose(ctx)
            }
        }
    }

    fn refine(
        &mut self,
        ctx: &MotionContext,
        report: &VerificationReport,
    ) -> Result<Trajectory, PlanError> {
        // the report is already the last history line of the request
        let round = ctx.history.len() + 1;
        match self.call(motion_request(ctx), |b| {
            parse_waypoints(b, &ctx.start, &ctx.goal, round)
        }) {
            Ok(t) => Ok(t),
            Err(reason) => {
                self.note_fallback(reason);
                self.fallback.refine(ctx, report)
            }
        }
    }
}

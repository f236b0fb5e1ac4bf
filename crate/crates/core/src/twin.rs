//! Lightweight digital twin: per-object convex hulls rebuilt from edge
//! points only, trajectory verification against those hulls, and the
//! propose/verify/refine recovery loop.

use std::fmt::Write as _;

use thiserror::Error;

use crate::edge_points::{fit_contours, ContourCurve, EdgeParams, EdgePointSet};
use crate::geometry::{all_finite, Aabb, Vec3};
use crate::planner::{MotionContext, MotionPlanner};
use crate::world::ObjectId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwinError {
    #[error("no edge points to rebuild the twin from")]
    Empty,
    #[error("object {0} appears more than once")]
    DuplicateObject(ObjectId),
    #[error("object {0} has no edge points")]
    NoPoints(ObjectId),
    #[error("trajectory needs at least two finite waypoints")]
    BadTrajectory,
    #[error("verification parameters must be positive")]
    BadParam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Face {
    v: [usize; 3],
    normal: Vec3,
    offset: f64,
}

/// Closed convex polyhedron with outward-facing triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHull {
    points: Vec<Vec3>,
    faces: Vec<Face>,
    centroid: Vec3,
    radius: f64,
}

fn make_face(points: &[Vec3], v: [usize; 3], inside: &Vec3) -> Face {
    let (a, b, c) = (points[v[0]], points[v[1]], points[v[2]]);
    let mut normal = (b - a).cross(&(c - a));
    let len = normal.norm();
    if len > 0.0 {
        normal /= len;
    }
    let mut f = Face {
        v,
        normal,
        offset: normal.dot(&a),
    };
    if f.normal.dot(inside) - f.offset > 0.0 {
        f.v.swap(1, 2);
        f.normal = -f.normal;
        f.offset = -f.offset;
    }
    f
}

fn farthest<I: Iterator<Item = usize>>(
    idx: I,
    score: impl Fn(usize) -> f64,
) -> Option<(usize, f64)> {
    idx.map(|i| (i, score(i)))
        .fold(None, |best, (i, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((i, s)),
        })
}

/// Extra points that give a degenerate (flat, linear or single-point) set
/// a thin volume of half-thickness `margin`.
fn thicken(points: &[Vec3], margin: f64) -> Vec<Vec3> {
    let c: Vec3 = points.iter().sum::<Vec3>() / points.len() as f64;
    let spread = points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
    // principal directions from the covariance
    let mut cov = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let tol = (spread * spread * 1e-12).max(1e-30);
    let mut out = points.to_vec();
    for k in 0..3 {
        if eig.eigenvalues[k] <= tol * points.len() as f64 {
            let dir: Vec3 = eig.eigenvectors.column(k).into_owned();
            let snapshot = out.clone();
            for p in snapshot {
                out.push(p + dir * margin);
                out.push(p - dir * margin);
            }
        }
    }
    out
}

impl ConvexHull {
    /// Incremental hull. Sets with fewer than four affinely independent
    /// points are first thickened by `margin`.
    pub fn build(input: &[Vec3], margin: f64) -> Result<Self, TwinError> {
        if input.is_empty() || !input.iter().all(all_finite) {
            return Err(TwinError::Empty);
        }
        match Self::build_exact(input) {
            Some(h) => Ok(h),
            None => Self::build_exact(&thicken(input, margin.max(1e-9))).ok_or(TwinError::Empty),
        }
    }

    fn build_exact(points: &[Vec3]) -> Option<Self> {
        let n = points.len();
        if n < 4 {
            return None;
        }
        let scale = points.iter().map(|p| p.amax()).fold(1.0, f64::max);
        let eps = 1e-10 * scale;
        let i0 = (0..n).min_by(|&a, &b| points[a].x.total_cmp(&points[b].x))?;
        let (i1, d1) = farthest(0..n, |i| (points[i] - points[i0]).norm())?;
        if d1 <= eps {
            return None;
        }
        let dir = (points[i1] - points[i0]) / d1;
        let (i2, d2) = farthest(0..n, |i| {
            let v = points[i] - points[i0];
            (v - dir * v.dot(&dir)).norm()
        })?;
        if d2 <= eps {
            return None;
        }
        let nrm = (points[i1] - points[i0])
            .cross(&(points[i2] - points[i0]))
            .normalize();
        let (i3, d3) = farthest(0..n, |i| (points[i] - points[i0]).dot(&nrm).abs())?;
        if d3 <= eps * 10.0 {
            return None;
        }
        let inside = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
        let mut faces = vec![
            make_face(points, [i0, i1, i2], &inside),
            make_face(points, [i0, i1, i3], &inside),
            make_face(points, [i0, i2, i3], &inside),
            make_face(points, [i1, i2, i3], &inside),
        ];
        for p in 0..n {
            if [i0, i1, i2, i3].contains(&p) {
                continue;
            }
            let visible: Vec<bool> = faces
                .iter()
                .map(|f| f.normal.dot(&points[p]) - f.offset > eps)
                .collect();
            if !visible.iter().any(|&v| v) {
                continue;
            }
            let mut directed: Vec<(usize, usize)> = Vec::new();
            for (f, _) in faces.iter().zip(&visible).filter(|(_, v)| **v) {
                for k in 0..3 {
                    directed.push((f.v[k], f.v[(k + 1) % 3]));
                }
            }
            let horizon: Vec<(usize, usize)> = directed
                .iter()
                .copied()
                .filter(|&(a, b)| !directed.contains(&(b, a)))
                .collect();
            let mut kept: Vec<Face> = faces
                .iter()
                .zip(&visible)
                .filter(|(_, v)| !**v)
                .map(|(f, _)| *f)
                .collect();
            for (a, b) in horizon {
                kept.push(make_face(points, [a, b, p], &inside));
            }
            faces = kept;
        }
        let mut used: Vec<usize> = faces.iter().flat_map(|f| f.v).collect();
        used.sort_unstable();
        used.dedup();
        let centroid = used.iter().map(|&i| points[i]).sum::<Vec3>() / used.len() as f64;
        let radius = used
            .iter()
            .map(|&i| (points[i] - centroid).norm())
            .fold(0.0, f64::max);
        Some(Self {
            points: points.to_vec(),
            faces,
            centroid,
            radius,
        })
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Hull vertices.
    pub fn vertices(&self) -> Vec<Vec3> {
        let mut used: Vec<usize> = self.faces.iter().flat_map(|f| f.v).collect();
        used.sort_unstable();
        used.dedup();
        used.into_iter().map(|i| self.points[i]).collect()
    }

    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    /// Largest distance from the centroid to a vertex.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Largest horizontal distance from the centroid to a vertex.
    pub fn horizontal_radius(&self) -> f64 {
        self.vertices()
            .iter()
            .map(|v| ((v.x - self.centroid.x).powi(2) + (v.y - self.centroid.y).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.vertices().iter()).expect("hull has vertices")
    }

    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let (a, b, c) = (
                    self.points[f.v[0]],
                    self.points[f.v[1]],
                    self.points[f.v[2]],
                );
                (a - self.centroid).dot(&(b - self.centroid).cross(&(c - self.centroid))) / 6.0
            })
            .sum::<f64>()
            .abs()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.faces
            .iter()
            .all(|f| f.normal.dot(p) - f.offset <= 1e-12)
    }

    /// Euclidean distance from `p` to the solid hull (0 inside).
    pub fn distance(&self, p: &Vec3) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        self.faces
            .iter()
            .map(|f| {
                let q = closest_on_triangle(
                    p,
                    &self.points[f.v[0]],
                    &self.points[f.v[1]],
                    &self.points[f.v[2]],
                );
                (p - q).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Minimum distance from the segment `a`-`b` to the hull and the segment
    /// parameter where it is attained. Distance to a convex set is convex
    /// along a line, so golden-section search is exact up to tolerance.
    pub fn segment_distance(&self, a: &Vec3, b: &Vec3) -> (f64, f64) {
        let f = |s: f64| self.distance(&(a + (b - a) * s));
        golden_min(f, 0.0, 1.0)
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if hi - lo < 1e-12 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let candidates = [(f(0.0), 0.0), (f(1.0), 1.0), (f1, x1), (f2, x2)];
    candidates.into_iter().fold(
        (f64::INFINITY, 0.0),
        |best, c| if c.0 < best.0 { c } else { best },
    )
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinObject {
    pub object_id: ObjectId,
    pub hull: ConvexHull,
    pub contours: Vec<ContourCurve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DigitalTwin {
    pub objects: Vec<TwinObject>,
    pub bounds: Aabb,
}

/// Half-thickness given to flat or linear edge-point sets.
pub const DEGENERATE_MARGIN: f64 = 0.005;

/// Rebuilds hulls and contours from transmitted edge points only.
pub fn reconstruct(
    sets: &[EdgePointSet],
    params: &EdgeParams,
    bounds: Aabb,
) -> Result<DigitalTwin, TwinError> {
    if sets.is_empty() {
        return Err(TwinError::Empty);
    }
    let mut objects: Vec<TwinObject> = Vec::with_capacity(sets.len());
    for s in sets {
        if objects.iter().any(|o| o.object_id == s.object_id) {
            return Err(TwinError::DuplicateObject(s.object_id));
        }
        if s.points.is_empty() {
            return Err(TwinError::NoPoints(s.object_id));
        }
        objects.push(TwinObject {
            object_id: s.object_id,
            hull: ConvexHull::build(&s.points, DEGENERATE_MARGIN)?,
            contours: fit_contours(s, params),
        });
    }
    objects.sort_by_key(|o| o.object_id);
    Ok(DigitalTwin { objects, bounds })
}

impl DigitalTwin {
    pub fn object(&self, id: ObjectId) -> Option<&TwinObject> {
        self.objects.iter().find(|o| o.object_id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Vec3>,
    pub goal: Vec3,
    /// Planner round that produced it (1-based).
    pub round: usize,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Vec3>, goal: Vec3, round: usize) -> Result<Self, TwinError> {
        let t = Self {
            waypoints,
            goal,
            round,
        };
        if t.is_well_formed() {
            Ok(t)
        } else {
            Err(TwinError::BadTrajectory)
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.waypoints.len() >= 2 && self.waypoints.iter().all(all_finite) && all_finite(&self.goal)
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Collision,
    GoalMiss,
    /// The planner's output could not be checked at all.
    Malformed,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Collision => "collision",
            Verdict::GoalMiss => "goal_miss",
            Verdict::Malformed => "malformed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub verdict: Verdict,
    pub object: Option<ObjectId>,
    pub segment: Option<usize>,
    pub clearance: Option<f64>,
    pub goal_distance: Option<f64>,
}

impl VerificationReport {
    pub fn pass() -> Self {
        Self {
            verdict: Verdict::Pass,
            object: None,
            segment: None,
            clearance: None,
            goal_distance: None,
        }
    }

    pub fn malformed() -> Self {
        Self {
            verdict: Verdict::Malformed,
            ..Self::pass()
        }
    }

    /// `verdict;object;segment;clearance;goal_dist`, empty where not set.
    pub fn to_text(&self) -> String {
        let mut s = String::from(self.verdict.as_str());
        let opt = |s: &mut String, v: Option<String>| {
            s.push(';');
            if let Some(v) = v {
                s.push_str(&v);
            }
        };
        opt(&mut s, self.object.map(|o| o.to_string()));
        opt(&mut s, self.segment.map(|o| o.to_string()));
        opt(&mut s, self.clearance.map(|o| o.to_string()));
        opt(&mut s, self.goal_distance.map(|o| o.to_string()));
        s
    }
}

/// Checks `traj` against every hull: the first segment that comes within
/// `delta` of a hull is reported (with the hull it enters first), otherwise
/// the end point must lie within `eps_goal` of the goal.
pub fn verify(
    twin: &DigitalTwin,
    traj: &Trajectory,
    delta: f64,
    eps_goal: f64,
) -> Result<VerificationReport, TwinError> {
    if !(delta > 0.0 && eps_goal > 0.0) {
        return Err(TwinError::BadParam);
    }
    if !traj.is_well_formed() {
        return Ok(VerificationReport::malformed());
    }
    for (i, w) in traj.waypoints.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        // (entry parameter, object, minimum clearance)
        let mut first: Option<(f64, ObjectId, f64)> = None;
        for o in &twin.objects {
            let h = &o.hull;
            // exact lower bound from the bounding sphere
            let s = crate::geometry::segment_param(&a, &b, &h.centroid);
            let sphere_gap = (a + (b - a) * s - h.centroid).norm() - h.radius;
            if sphere_gap >= delta {
                continue;
            }
            let (d, s_min) = h.segment_distance(&a, &b);
            if d >= delta {
                continue;
            }
            let entry = entry_param(|s| h.distance(&(a + (b - a) * s)), s_min, delta);
            let better = match first {
                None => true,
                Some((e, id, _)) => entry < e || (entry == e && o.object_id < id),
            };
            if better {
                first = Some((entry, o.object_id, d));
            }
        }
        if let Some((_, id, d)) = first {
            return Ok(VerificationReport {
                verdict: Verdict::Collision,
                object: Some(id),
                segment: Some(i),
                clearance: Some(d),
                goal_distance: None,
            });
        }
    }
    let end = traj.waypoints.last().expect("well formed");
    let gd = (end - traj.goal).norm();
    if gd > eps_goal {
        return Ok(VerificationReport {
            verdict: Verdict::GoalMiss,
            goal_distance: Some(gd),
            ..VerificationReport::pass()
        });
    }
    Ok(VerificationReport::pass())
}

/// Smallest `s` in [0, s_min] with `f(s) < delta`, for `f` convex with
/// `f(s_min) < delta`.
fn entry_param(f: impl Fn(f64) -> f64, s_min: f64, delta: f64) -> f64 {
    if f(0.0) < delta {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, s_min);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOutcome {
    /// First trajectory that passed, if any.
    pub trajectory: Option<Trajectory>,
    /// Planner rounds used, including failed ones.
    pub rounds: usize,
    pub history: Vec<(Option<Trajectory>, VerificationReport)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyParams {
    pub delta: f64,
    pub eps_goal: f64,
    pub max_rounds: usize,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            delta: 0.03,
            eps_goal: 0.02,
            max_rounds: 5,
        }
    }
}

/// Propose, verify, refine until a trajectory passes or the round budget is
/// spent. Malformed planner output costs a round and is recorded as such.
pub fn recover_motion(
    planner: &mut dyn MotionPlanner,
    twin: &DigitalTwin,
    ctx: &mut MotionContext,
    params: &VerifyParams,
) -> Result<RecoveryOutcome, TwinError> {
    let max_rounds = params.max_rounds.max(1);
    let mut history = Vec::new();
    for round in 1..=max_rounds {
        let proposal = if round == 1 {
            planner.propose(ctx)
        } else {
            let last = ctx
                .history
                .last()
                .map(|(_, r)| r.clone())
                .unwrap_or_else(VerificationReport::malformed);
            planner.refine(ctx, &last)
        };
        let (traj, report) = match proposal {
            Ok(mut t) if t.is_well_formed() => {
                t.round = round;
                let r = verify(twin, &t, params.delta, params.eps_goal)?;
                (Some(t), r)
            }
            _ => (None, VerificationReport::malformed()),
        };
        ctx.history.push((traj.clone(), report.clone()));
        history.push((traj.clone(), report.clone()));
        if report.verdict == Verdict::Pass {
            return Ok(RecoveryOutcome {
                trajectory: traj,
                rounds: round,
                history,
            });
        }
    }
    Ok(RecoveryOutcome {
        trajectory: None,
        rounds: max_rounds,
        history,
    })
}

/// Human-readable summary of a twin for logs.
pub fn describe(twin: &DigitalTwin) -> String {
    let mut s = String::new();
    for o in &twin.objects {
        let c = o.hull.centroid();
        let _ = writeln!(
            s,
            "object {} hull faces {} volume {:.6} centroid ({:.3}, {:.3}, {:.3}) contours {}",
            o.object_id,
            o.hull.face_count(),
            o.hull.volume(),
            c.x,
            c.y,
            c.z,
            o.contours.len()
        );
    }
    s
}

//! Rule-based relation classifier over ground-truth boxes and gripper points.

use serde::{Deserialize, Serialize};

use super::{Relation, SceneGraph3D, Triplet};
use crate::geometry::{horizontal_distance, Vec3};
use crate::world::{ObjectId, ObjectState, RobotState, Workspace};

/// Distances in meters; `tau` is a footprint overlap ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelationThresholds {
    /// Pairs whose centroids are farther apart are never related.
    pub d_max: f64,
    /// Vertical contact tolerance for `standing on`.
    pub eps_z: f64,
    /// Minimum share of the upper footprint resting on the lower one.
    pub tau: f64,
    /// Horizontal centroid distance below which two entities are `next to`.
    pub d_near: f64,
}

impl Default for RelationThresholds {
    fn default() -> Self {
        Self {
            d_max: 1.5,
            eps_z: 0.01,
            tau: 0.25,
            d_near: 0.3,
        }
    }
}

/// Something that can take part in a relation. A robot is represented by
/// its gripper point.
#[derive(Debug, Clone, Copy)]
pub enum Entity<'a> {
    Object(&'a ObjectState),
    Robot(&'a RobotState),
}

impl Entity<'_> {
    pub fn caption(&self) -> &str {
        match self {
            Entity::Object(o) => &o.caption,
            Entity::Robot(r) => &r.caption,
        }
    }

    pub fn centroid(&self) -> Vec3 {
        match self {
            Entity::Object(o) => o.pose.position,
            Entity::Robot(r) => r.gripper,
        }
    }
}

/// Unordered pairs of objects whose centroids lie within `d_max`, as
/// `(smaller id, larger id)` in id order.
pub fn candidate_edges(objects: &[ObjectState], d_max: f64) -> Vec<(ObjectId, ObjectId)> {
    let mut out = Vec::new();
    for (i, a) in objects.iter().enumerate() {
        for b in &objects[i + 1..] {
            if (a.pose.position - b.pose.position).norm() <= d_max {
                let pair = if a.id < b.id {
                    (a.id, b.id)
                } else {
                    (b.id, a.id)
                };
                out.push(pair);
            }
        }
    }
    out.sort_unstable();
    out
}

fn resting_on(upper: &ObjectState, lower: &ObjectState, th: &RelationThresholds) -> bool {
    if upper.carried_by.is_some() || lower.carried_by.is_some() {
        return false;
    }
    let bottom = upper.bottom_z();
    let touches = (bottom - lower.top_z()).abs() <= th.eps_z
        || (lower.container && (bottom - lower.support_height()).abs() <= th.eps_z);
    if !touches {
        return false;
    }
    let ua = upper.aabb();
    let area = ua.footprint_area();
    area > 0.0 && ua.footprint_overlap(&lower.aabb()) / area >= th.tau
}

fn contained_in(inner: &ObjectState, outer: &ObjectState, th: &RelationThresholds) -> bool {
    inner.carried_by.is_none()
        && outer.carried_by.is_none()
        && outer.aabb().contains_box(&inner.aabb(), th.eps_z)
}

/// Relation between two entities as a canonical triplet, or `None` when
/// they are unrelated.
///
/// Rules, first match wins: a robot holding the object gives
/// `(object, grasped by, robot)`; containment gives `(inner, inside, outer)`;
/// resting contact gives `(upper, standing on, lower)`; close horizontal
/// centroids give `next to`. Carried objects never rest on or sit in
/// anything.
pub fn classify_pair(a: Entity<'_>, b: Entity<'_>, th: &RelationThresholds) -> Option<Triplet> {
    let make = |s: &str, r: Relation, o: &str| Triplet::new(s, r, o).ok();
    match (a, b) {
        (Entity::Robot(_), Entity::Robot(_)) => None,
        (Entity::Robot(r), Entity::Object(o)) | (Entity::Object(o), Entity::Robot(r)) => {
            if o.carried_by == Some(r.id) {
                make(&o.caption, Relation::GraspedBy, &r.caption)
            } else if horizontal_distance(&r.gripper, &o.pose.position) < th.d_near {
                make(&o.caption, Relation::NextTo, &r.caption)
            } else {
                None
            }
        }
        (Entity::Object(x), Entity::Object(y)) => {
            if contained_in(x, y, th) {
                make(&x.caption, Relation::Inside, &y.caption)
            } else if contained_in(y, x, th) {
                make(&y.caption, Relation::Inside, &x.caption)
            } else if resting_on(x, y, th) {
                make(&x.caption, Relation::StandingOn, &y.caption)
            } else if resting_on(y, x, th) {
                make(&y.caption, Relation::StandingOn, &x.caption)
            } else if horizontal_distance(&x.pose.position, &y.pose.position) < th.d_near {
                make(&x.caption, Relation::NextTo, &y.caption)
            } else {
                None
            }
        }
    }
}

/// Label-only view of [`classify_pair`].
pub fn geometric_relation(a: Entity<'_>, b: Entity<'_>, th: &RelationThresholds) -> Relation {
    classify_pair(a, b, th).map_or(Relation::None, |t| t.relation)
}

/// Scene graph of the whole workspace from ground-truth geometry.
pub fn build_scene_graph(
    ws: &Workspace,
    frame_index: u64,
    th: &RelationThresholds,
) -> SceneGraph3D {
    let entities: Vec<Entity<'_>> = ws
        .objects
        .iter()
        .map(Entity::Object)
        .chain(ws.robots.iter().map(Entity::Robot))
        .collect();
    let mut g = SceneGraph3D::new(frame_index);
    for (i, a) in entities.iter().enumerate() {
        for b in &entities[i + 1..] {
            if (a.centroid() - b.centroid()).norm() > th.d_max {
                continue;
            }
            if let Some(t) = classify_pair(*a, *b, th) {
                // each unordered pair is classified once, so inserts never clash
                g.insert(t).expect("one relation per pair");
            }
        }
    }
    g
}

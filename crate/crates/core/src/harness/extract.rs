//! Offline extraction from recorded point clouds.

use crate::edge_points::{
    extract_edge_points, AttentionWeights, EdgeError, EdgeParams, EdgePointSet,
};
use crate::geometry::Aabb;
use crate::scene_graph::{build_scene_graph, RelationThresholds, SceneGraph3D};
use crate::world::{ObjectState, PointCloud, Workspace};

/// Caption given to an object known only by its cloud.
pub fn cloud_caption(id: u32) -> String {
    format!("object {id}")
}

/// Scene graph of recorded clouds: each cloud becomes the box spanned by
/// its points, and the geometric rules relate the boxes.
pub fn scene_graph_from_clouds(
    clouds: &[PointCloud],
    th: &RelationThresholds,
    frame_index: u64,
) -> Option<SceneGraph3D> {
    let mut objects = Vec::with_capacity(clouds.len());
    let mut all: Option<Aabb> = None;
    for c in clouds {
        let bb = Aabb::from_points(&c.points)?;
        all = Some(match all {
            Some(a) => Aabb {
                min: a.min.inf(&bb.min),
                max: a.max.sup(&bb.max),
            },
            None => bb,
        });
        // flat scans still need a positive extent
        let half = bb.half_extents().map(|h| h.max(1e-4));
        objects.push(ObjectState::new(
            c.object_id,
            cloud_caption(c.object_id),
            bb.center(),
            half,
        ));
    }
    let bounds = all?;
    let pad = crate::geometry::Vec3::repeat(1.0);
    let ws = Workspace::new(
        objects,
        Vec::new(),
        Aabb {
            min: bounds.min - pad,
            max: bounds.max + pad,
        },
        0.05,
    )
    .ok()?;
    Some(build_scene_graph(&ws, frame_index, th))
}

/// Edge points of every cloud, in cloud order.
pub fn edge_points_from_clouds(
    clouds: &[PointCloud],
    params: &EdgeParams,
) -> Result<Vec<EdgePointSet>, EdgeError> {
    let weights = AttentionWeights::seeded(params.seed);
    clouds
        .iter()
        .map(|c| extract_edge_points(c, params, &weights))
        .collect()
}

/// `object_id x y z score` per line.
pub fn write_edge_points(sets: &[EdgePointSet]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for s in sets {
        for (p, score) in s.points.iter().zip(&s.scores) {
            let _ = writeln!(out, "{} {} {} {} {}", s.object_id, p.x, p.y, p.z, score);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::scene_graph::{Relation, Triplet};

    fn box_cloud(id: u32, c: [f64; 3], h: [f64; 3]) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..=4 {
            for j in 0..=4 {
                for k in 0..=4 {
                    let f = |n: i32, a: f64, e: f64| a - e + 2.0 * e * n as f64 / 4.0;
                    pts.push(Vec3::new(
                        f(i, c[0], h[0]),
                        f(j, c[1], h[1]),
                        f(k, c[2], h[2]),
                    ));
                }
            }
        }
        PointCloud::new(id, pts).unwrap()
    }

    #[test]
    fn stacked_clouds_stand_on_each_other() {
        let clouds = [
            box_cloud(1, [0.0, 0.0, 0.2], [0.5, 0.5, 0.2]),
            box_cloud(2, [0.0, 0.0, 0.45], [0.05, 0.05, 0.05]),
        ];
        let sg = scene_graph_from_clouds(&clouds, &RelationThresholds::default(), 0).unwrap();
        assert!(sg.contains(&Triplet::new("object 2", Relation::StandingOn, "object 1").unwrap()));
    }

    #[test]
    fn edge_lines_have_five_fields() {
        let clouds = [box_cloud(3, [0.0, 0.0, 0.0], [0.1, 0.1, 0.1])];
        let params = EdgeParams {
            k: 10,
            ..EdgeParams::default()
        };
        let sets = edge_points_from_clouds(&clouds, &params).unwrap();
        let text = write_edge_points(&sets);
        assert_eq!(text.lines().count(), 10);
        assert!(text.lines().all(|l| l.split(' ').count() == 5));
    }
}

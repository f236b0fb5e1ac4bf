//! Coordinate-plane projection, density clustering of the projected edge
//! points, and nearest-neighbour chaining of each cluster into an ordered
//! fragment.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EdgePointSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    Xz,
    Yz,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Xz, Plane::Yz];

    pub fn as_str(&self) -> &'static str {
        match self {
            Plane::Xy => "xy",
            Plane::Xz => "xz",
            Plane::Yz => "yz",
        }
    }

    pub fn axes(&self) -> (usize, usize) {
        match self {
            Plane::Xy => (0, 1),
            Plane::Xz => (0, 2),
            Plane::Yz => (1, 2),
        }
    }
}

pub type Point2 = [f64; 2];

/// Ordered projected points of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub plane: Plane,
    /// Index of the fragment within its plane.
    pub id: usize,
    pub points: Vec<Point2>,
}

fn dist(a: &Point2, b: &Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Uniform grid with cell size `eps` for radius queries.
struct Grid {
    eps: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(points: &[Point2], eps: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Self { eps, cells }
    }

    fn key(p: &Point2, eps: f64) -> (i64, i64) {
        ((p[0] / eps).floor() as i64, (p[1] / eps).floor() as i64)
    }

    /// Indices within `eps` of `points[i]` (including `i`), ascending.
    fn neighbours(&self, points: &[Point2], i: usize) -> Vec<usize> {
        let (cx, cy) = Self::key(&points[i], self.eps);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(c) = self.cells.get(&(cx + dx, cy + dy)) {
                    out.extend(
                        c.iter()
                            .copied()
                            .filter(|&j| dist(&points[i], &points[j]) <= self.eps),
                    );
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// DBSCAN labels: `Some(cluster)` or `None` for noise. Clusters are
/// numbered in order of their lowest-index core point.
pub fn dbscan(points: &[Point2], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let grid = Grid::new(points, eps);
    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut visited = vec![false; points.len()];
    let mut next = 0;
    for i in 0..points.len() {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = grid.neighbours(points, i);
        if nb.len() < min_pts {
            continue;
        }
        let cluster = next;
        next += 1;
        labels[i] = Some(cluster);
        let mut queue = nb;
        let mut head = 0;
        while head < queue.len() {
            let j = queue[head];
            head += 1;
            if labels[j].is_none() {
                labels[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb_j = grid.neighbours(points, j);
            if nb_j.len() >= min_pts {
                queue.extend(nb_j);
            }
        }
    }
    labels
}

fn farthest_from(points: &[Point2], from: &Point2) -> usize {
    let mut best = 0;
    let mut best_d = -1.0;
    for (i, p) in points.iter().enumerate() {
        let d = dist(p, from);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Orders points into a chain: start at one end of the cluster (the point
/// farthest from the point farthest from the first point) and repeatedly
/// step to the nearest unvisited point.
pub fn chain_order(points: &[Point2]) -> Vec<Point2> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let a = farthest_from(points, &points[0]);
    let start = farthest_from(points, &points[a]);
    let mut used = vec![false; points.len()];
    let mut order = Vec::with_capacity(points.len());
    let mut cur = start;
    for _ in 0..points.len() {
        used[cur] = true;
        order.push(points[cur]);
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (j, p) in points.iter().enumerate() {
            if !used[j] {
                let d = dist(&points[cur], p);
                if d < best_d {
                    best_d = d;
                    best = Some(j);
                }
            }
        }
        match best {
            Some(j) => cur = j,
            None => break,
        }
    }
    order
}

/// Projects the edge points onto the three coordinate planes and returns
/// the ordered fragments of every plane (noise discarded).
pub fn project_and_cluster(edges: &EdgePointSet, eps: f64, min_pts: usize) -> Vec<Fragment> {
    let mut out = Vec::new();
    for plane in Plane::ALL {
        let (u, v) = plane.axes();
        let pts: Vec<Point2> = edges.points.iter().map(|p| [p[u], p[v]]).collect();
        let labels = dbscan(&pts, eps, min_pts.max(1));
        let clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
        for c in 0..clusters {
            let members: Vec<Point2> = pts
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == Some(c))
                .map(|(p, _)| *p)
                .collect();
            out.push(Fragment {
                plane,
                id: c,
                points: chain_order(&members),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn set(points: Vec<Vec3>) -> EdgePointSet {
        let n = points.len();
        EdgePointSet {
            object_id: 0,
            points,
            scores: vec![1.0; n],
            indices: (0..n).collect(),
        }
    }

    #[test]
    fn one_blob_one_fragment_per_plane() {
        let pts = (0..20)
            .map(|i| {
                Vec3::new(
                    0.001 * i as f64,
                    0.002 * (i % 3) as f64,
                    0.001 * (i % 5) as f64,
                )
            })
            .collect();
        let frags = project_and_cluster(&set(pts), 0.05, 4);
        assert_eq!(frags.len(), 3);
        assert!(frags.iter().all(|f| f.points.len() == 20));
    }

    #[test]
    fn separated_blobs_split() {
        let mut pts: Vec<Vec3> = (0..10)
            .map(|i| Vec3::new(0.002 * i as f64, 0.0, 0.0))
            .collect();
        pts.extend((0..10).map(|i| Vec3::new(0.5 + 0.002 * i as f64, 0.0, 0.0)));
        let frags = project_and_cluster(&set(pts), 0.05, 4);
        assert_eq!(frags.iter().filter(|f| f.plane == Plane::Xy).count(), 2);
        // yz projection collapses both blobs onto one spot
        assert_eq!(frags.iter().filter(|f| f.plane == Plane::Yz).count(), 1);
    }

    #[test]
    fn isolated_points_are_noise() {
        let labels = dbscan(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 0.1, 2);
        assert!(labels.iter().all(Option::is_none));
    }
}

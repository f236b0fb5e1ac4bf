//! Edge-point extraction: score every point of an object cloud, keep the
//! `k` most salient ones as the object's outline, and summarise the outline
//! as per-plane B-spline contours.
//!
//! Two scorers share the same top-k and payload path: self-attention over a
//! shared point MLP, and a geometric surface-variation score that needs no
//! weights and is exactly reproducible.

mod attention;
mod bspline;
mod cluster;

use nalgebra::Matrix3;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attention::{
    attention_matrix, encode_points, point_saliency, AttentionWeights, FEATURE_DIM, PROJ_DIM,
};
pub use bspline::{
    basis_row, chord_params, clamped_knots, fit_bspline, residuals, straight_segment, ContourCurve,
};
pub use cluster::{chain_order, dbscan, project_and_cluster, Fragment, Plane, Point2};

use crate::geometry::{Aabb, Vec3};
use crate::world::{ObjectId, PointCloud};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdgeError {
    #[error("empty point cloud for object {0}")]
    EmptyCloud(u32),
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("fragment has {got} points, need at least {need}")]
    TooFewPoints { need: usize, got: usize },
    #[error("degenerate fragment: spline system is rank deficient")]
    RankDeficient,
    #[error("malformed edge-point payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Format(#[from] crate::error::FormatError),
}

/// Selected edge points of one object, most salient first.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePointSet {
    pub object_id: ObjectId,
    pub points: Vec<Vec3>,
    /// Saliency of each selected point, non-increasing.
    pub scores: Vec<f64>,
    /// Index of each selected point in the source cloud.
    pub indices: Vec<usize>,
}

impl EdgePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyMethod {
    Attention,
    #[default]
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeParams {
    /// Points kept per object.
    pub k: usize,
    pub method: SaliencyMethod,
    /// Clouds larger than this are uniformly subsampled before attention,
    /// which is quadratic in the point count.
    pub attention_max_points: usize,
    /// Neighbourhood radius of the geometric scorer, meters.
    pub neighbour_radius: f64,
    /// Clustering radius, meters.
    pub eps: f64,
    pub min_pts: usize,
    /// Curvature penalty weight.
    pub lambda: f64,
    pub degree: usize,
    pub n_ctrl: usize,
    pub seed: u64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            k: 512,
            method: SaliencyMethod::Geometric,
            attention_max_points: 1024,
            neighbour_radius: 0.05,
            eps: 0.05,
            min_pts: 4,
            lambda: 1e-3,
            degree: 3,
            n_ctrl: 8,
            seed: 0,
        }
    }
}

/// Indices of the `k` largest scores, ties broken by smaller index, `k`
/// clamped to the cloud size.
pub fn top_k_indices(s: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    idx.truncate(k.min(s.len()));
    idx
}

pub fn top_k_edge_points(cloud: &PointCloud, s: &[f64], k: usize) -> EdgePointSet {
    assert_eq!(s.len(), cloud.points.len(), "one score per point");
    let indices = top_k_indices(s, k);
    EdgePointSet {
        object_id: cloud.object_id,
        points: indices.iter().map(|&i| cloud.points[i]).collect(),
        scores: indices.iter().map(|&i| s[i]).collect(),
        indices,
    }
}

/// Points bucketed into cubic cells no smaller than the query radius,
/// stored contiguously per cell.
struct CellGrid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    start: Vec<usize>,
    items: Vec<usize>,
}

impl CellGrid {
    const MAX_CELLS: f64 = 4.0e6;

    fn new(points: &[Vec3], radius: f64) -> Self {
        let bb = Aabb::from_points(points).expect("non-empty cloud");
        let ext = bb.max - bb.min;
        // coarsen the cells if the box is huge compared to the radius
        let mut cell = radius;
        let count = |c: f64| ext.iter().map(|e| (e / c).floor() + 1.0).product::<f64>();
        while count(cell) > Self::MAX_CELLS {
            cell *= 2.0;
        }
        let dims = [0, 1, 2].map(|k| (ext[k] / cell).floor() as usize + 1);
        let mut grid = Self {
            origin: bb.min,
            cell,
            dims,
            start: vec![0; dims[0] * dims[1] * dims[2] + 1],
            items: vec![0; points.len()],
        };
        let cells: Vec<usize> = points.iter().map(|p| grid.flat(grid.coords(p))).collect();
        for &c in &cells {
            grid.start[c + 1] += 1;
        }
        for i in 1..grid.start.len() {
            grid.start[i] += grid.start[i - 1];
        }
        let mut fill = grid.start.clone();
        for (i, &c) in cells.iter().enumerate() {
            grid.items[fill[c]] = i;
            fill[c] += 1;
        }
        grid
    }

    fn coords(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|k| {
            (((p[k] - self.origin[k]) / self.cell).floor().max(0.0) as usize).min(self.dims[k] - 1)
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    /// Calls `f` with every point index in the 27 cells around `p`.
    fn for_each_near(&self, p: &Vec3, mut f: impl FnMut(usize)) {
        let c = self.coords(p);
        let span = |k: usize| c[k].saturating_sub(1)..=(c[k] + 1).min(self.dims[k] - 1);
        for x in span(0) {
            for y in span(1) {
                for z in span(2) {
                    let cell = self.flat([x, y, z]);
                    for &i in &self.items[self.start[cell]..self.start[cell + 1]] {
                        f(i);
                    }
                }
            }
        }
    }
}

/// Eigenvalues of a symmetric 3x3 matrix in ascending order, by the
/// trigonometric closed form.
pub fn sym3_eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let q = a.trace() / 3.0;
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    if p2 <= f64::MIN_POSITIVE {
        return [q; 3];
    }
    if p1 == 0.0 {
        let mut d = [a[(0, 0)], a[(1, 1)], a[(2, 2)]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let p = (p2 / 6.0).sqrt();
    let b = (a - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [lo, 3.0 * q - hi - lo, hi]
}

/// Surface variation `λ_min / (λ1 + λ2 + λ3)` of each point's radius
/// neighbourhood. Near zero on flat faces, large on creases and corners.
pub fn geometric_saliency(cloud: &PointCloud, radius: f64) -> Vec<f64> {
    let grid = CellGrid::new(&cloud.points, radius);
    let r2 = radius * radius;
    cloud
        .points
        .iter()
        .map(|p| {
            // first and second moments of the neighbourhood, relative to p
            let mut n = 0usize;
            let mut s1 = Vec3::zeros();
            let mut s2 = Matrix3::zeros();
            grid.for_each_near(p, |j| {
                let d = cloud.points[j] - p;
                if d.norm_squared() <= r2 {
                    n += 1;
                    s1 += d;
                    s2 += d * d.transpose();
                }
            });
            if n < 3 {
                // isolated points are outline points as far as we can tell
                return 1.0 / 3.0;
            }
            let c = s1 / n as f64;
            let cov = s2 - c * s1.transpose();
            let ev = sym3_eigenvalues(&cov);
            let total = ev[0] + ev[1] + ev[2];
            if total > 0.0 {
                ev[0].max(0.0) / total
            } else {
                0.0
            }
        })
        .collect()
}

/// Saliency-ranked edge points of one object cloud.
pub fn extract_edge_points(
    cloud: &PointCloud,
    params: &EdgeParams,
    weights: &AttentionWeights,
) -> Result<EdgePointSet, EdgeError> {
    if cloud.points.is_empty() {
        return Err(EdgeError::EmptyCloud(cloud.object_id));
    }
    match params.method {
        SaliencyMethod::Geometric => {
            let s = geometric_saliency(cloud, params.neighbour_radius);
            Ok(top_k_edge_points(cloud, &s, params.k))
        }
        SaliencyMethod::Attention => {
            let n = cloud.points.len();
            let keep: Vec<usize> = if n > params.attention_max_points {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(u64::from(cloud.object_id));
                let mut v = index::sample(&mut rng, n, params.attention_max_points).into_vec();
                v.sort_unstable();
                v
            } else {
                (0..n).collect()
            };
            let sub = PointCloud {
                object_id: cloud.object_id,
                points: keep.iter().map(|&i| cloud.points[i]).collect(),
            };
            let a = attention_matrix(&encode_points(&sub, weights)?, weights);
            let s = point_saliency(&a);
            let mut set = top_k_edge_points(&sub, &s, params.k);
            set.indices = set.indices.iter().map(|&i| keep[i]).collect();
            Ok(set)
        }
    }
}

/// Contours of every fragment on every plane. Fragments too small or too
/// degenerate for the spline fall back to a straight segment.
pub fn fit_contours(set: &EdgePointSet, params: &EdgeParams) -> Vec<ContourCurve> {
    project_and_cluster(set, params.eps, params.min_pts)
        .into_iter()
        .map(|f| {
            fit_bspline(
                &f.points,
                params.lambda,
                params.degree,
                params.n_ctrl,
                f.plane,
                f.id,
            )
            .unwrap_or_else(|_| straight_segment(&f.points, f.plane, f.id))
        })
        .collect()
}

/// Bytes per transmitted point: three little-endian `f32`.
pub const BYTES_PER_POINT: usize = 12;

/// Uplink size of the selected points in bits (headers excluded).
pub fn edge_payload_bits(sets: &[EdgePointSet]) -> f64 {
    sets.iter()
        .map(|s| (s.len() * BYTES_PER_POINT * 8) as f64)
        .sum()
}

/// Size of shipping the complete clouds in the same encoding.
pub fn full_payload_bits<'a>(clouds: impl IntoIterator<Item = &'a PointCloud>) -> f64 {
    clouds
        .into_iter()
        .map(|c| (c.len() * BYTES_PER_POINT * 8) as f64)
        .sum()
}

/// Wire form: per object `u32` id, `u32` count, then `count` xyz triples of
/// `f32`, everything little-endian.
pub fn encode_payload(sets: &[EdgePointSet]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in sets {
        out.extend_from_slice(&s.object_id.to_le_bytes());
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        for p in &s.points {
            for c in p.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Parses [`encode_payload`] output into `(object id, points)` records.
pub fn decode_payload(bytes: &[u8]) -> Result<Vec<(ObjectId, Vec<Vec3>)>, EdgeError> {
    let mut out = Vec::new();
    let mut pos = 0;
    let take4 = |pos: &mut usize| -> Result<[u8; 4], EdgeError> {
        let b = bytes
            .get(*pos..*pos + 4)
            .ok_or_else(|| EdgeError::Payload(format!("truncated at byte {}", *pos)))?;
        *pos += 4;
        Ok([b[0], b[1], b[2], b[3]])
    };
    while pos < bytes.len() {
        let id = u32::from_le_bytes(take4(&mut pos)?);
        let count = u32::from_le_bytes(take4(&mut pos)?) as usize;
        let mut pts = Vec::with_capacity(count);
        for _ in 0..count {
            let mut xyz = [0.0; 3];
            for c in &mut xyz {
                *c = f64::from(f32::from_le_bytes(take4(&mut pos)?));
            }
            pts.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
        }
        out.push((id, pts));
    }
    Ok(out)
}

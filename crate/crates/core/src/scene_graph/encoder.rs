//! Deterministic geometric point-cloud encoders standing in for a learned
//! point backbone. Features are computed on centroid-subtracted points and
//! are never rescaled, so absolute object size stays visible to the network.

use nalgebra::{DVector, Matrix3, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SgError;
use crate::geometry::{Aabb, Vec3};
use crate::world::PointCloud;

/// Number of meaningful leading entries in a node feature.
pub const NODE_STAT_COUNT: usize = 11;
/// Number of meaningful leading entries in an edge feature.
pub const EDGE_STAT_COUNT: usize = 23;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
    /// Points kept per object before encoding.
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            node_dim: 256,
            edge_dim: 512,
            sample_count: 256,
            seed: 0,
        }
    }
}

/// Uniform subset without replacement, in original order. The choice
/// depends only on the point count, the seed and the object id, never on
/// coordinates.
fn downsample<'a>(cloud: &'a PointCloud, count: usize, seed: u64) -> Vec<&'a Vec3> {
    let n = cloud.points.len();
    if n <= count {
        return cloud.points.iter().collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(cloud.object_id));
    let mut idx = index::sample(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| &cloud.points[i]).collect()
}

struct Stats {
    centroid: Vec3,
    bbox: Aabb,
    eigenvalues: [f64; 3],
    /// Angle of each principal axis to the vertical, in [0, pi/2].
    axis_angles: [f64; 3],
}

fn stats(points: &[&Vec3]) -> Stats {
    let n = points.len() as f64;
    let centroid: Vec3 = points.iter().copied().sum::<Vec3>() / n;
    let bbox = Aabb::from_points(points.iter().copied()).expect("non-empty");
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = *p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigenvalues = [0.0; 3];
    let mut axis_angles = [0.0; 3];
    for (k, &i) in order.iter().enumerate() {
        eigenvalues[k] = eig.eigenvalues[i].max(0.0);
        axis_angles[k] = eig.eigenvectors[(2, i)].abs().min(1.0).acos();
    }
    Stats {
        centroid,
        bbox,
        eigenvalues,
        axis_angles,
    }
}

fn pad(values: &[f64], dim: usize) -> DVector<f64> {
    let mut v = DVector::zeros(dim.max(values.len()));
    v.rows_mut(0, values.len()).copy_from_slice(values);
    v
}

/// Node feature: bounding-box extents, covariance eigenvalues (descending),
/// principal-axis angles to vertical, centroid height above the lowest
/// point, and the fraction of the sample budget actually filled; zero
/// padded to `node_dim`.
pub fn encode_node_feature(
    cloud: &PointCloud,
    cfg: &EncoderConfig,
) -> Result<DVector<f64>, SgError> {
    if cloud.points.is_empty() {
        return Err(SgError::EmptyCloud(cloud.object_id));
    }
    let pts = downsample(cloud, cfg.sample_count, cfg.seed);
    let s = stats(&pts);
    let ext = s.bbox.max - s.bbox.min;
    let values = [
        ext.x,
        ext.y,
        ext.z,
        s.eigenvalues[0],
        s.eigenvalues[1],
        s.eigenvalues[2],
        s.axis_angles[0],
        s.axis_angles[1],
        s.axis_angles[2],
        s.centroid.z - s.bbox.min.z,
        pts.len() as f64 / cfg.sample_count as f64,
    ];
    Ok(pad(&values, cfg.node_dim))
}

/// Signed separation along one axis; negative when the intervals overlap.
fn gap(a: &Aabb, b: &Aabb, axis: usize) -> f64 {
    (a.min[axis] - b.max[axis]).max(b.min[axis] - a.max[axis])
}

/// Edge feature of the union cloud, where each point carries an indicator
/// of its source (0 for `m`, 1 for `n`).
///
/// Layout of the leading entries:
/// `[m extents(3), m eigenvalues(3), n extents(3), n eigenvalues(3),
///   centroid displacement n - m (3), per-axis gaps (3), footprint overlap
///   ratio, joint extents (3), share of points with indicator 1]`.
///
/// Swapping the two clouds maps the feature through [`edge_feature_swap`].
pub fn encode_edge_feature(
    m: &PointCloud,
    n: &PointCloud,
    cfg: &EncoderConfig,
) -> Result<DVector<f64>, SgError> {
    for c in [m, n] {
        if c.points.is_empty() {
            return Err(SgError::EmptyCloud(c.object_id));
        }
    }
    let half = (cfg.sample_count / 2).max(1);
    let pm = downsample(m, half, cfg.seed);
    let pn = downsample(n, half, cfg.seed);
    let (sm, sn) = (stats(&pm), stats(&pn));
    let em = sm.bbox.max - sm.bbox.min;
    let en = sn.bbox.max - sn.bbox.min;
    let disp = sn.centroid - sm.centroid;
    let joint = Aabb {
        min: sm.bbox.min.inf(&sn.bbox.min),
        max: sm.bbox.max.sup(&sn.bbox.max),
    };
    let je = joint.max - joint.min;
    let min_area = sm.bbox.footprint_area().min(sn.bbox.footprint_area());
    let overlap = if min_area > 0.0 {
        sm.bbox.footprint_overlap(&sn.bbox) / min_area
    } else {
        0.0
    };
    let frac = pn.len() as f64 / (pm.len() + pn.len()) as f64;
    let values = [
        em.x,
        em.y,
        em.z,
        sm.eigenvalues[0],
        sm.eigenvalues[1],
        sm.eigenvalues[2],
        en.x,
        en.y,
        en.z,
        sn.eigenvalues[0],
        sn.eigenvalues[1],
        sn.eigenvalues[2],
        disp.x,
        disp.y,
        disp.z,
        gap(&sm.bbox, &sn.bbox, 0),
        gap(&sm.bbox, &sn.bbox, 1),
        gap(&sm.bbox, &sn.bbox, 2),
        overlap,
        je.x,
        je.y,
        je.z,
        frac,
    ];
    Ok(pad(&values, cfg.edge_dim))
}

/// The feature obtained by swapping the roles of the two clouds: per-source
/// blocks trade places, the displacement flips sign and the indicator share
/// is complemented; symmetric entries are unchanged.
pub fn edge_feature_swap(f: &DVector<f64>) -> DVector<f64> {
    let mut out = f.clone();
    for i in 0..6 {
        out[i] = f[i + 6];
        out[i + 6] = f[i];
    }
    for i in 12..15 {
        out[i] = -f[i];
    }
    out[22] = 1.0 - f[22];
    out
}

//! Penalised least-squares B-spline fitting of ordered 2D fragments.
//!
//! Parameters are normalised cumulative chord lengths, knots are clamped and
//! uniform on [0, 1], and the curvature penalty is the squared second
//! difference of the control points (P-spline form), so the control points
//! solve `(BᵀB + λDᵀD) c = Bᵀy` for each coordinate.

use nalgebra::{DMatrix, DVector};

use super::cluster::{Plane, Point2};
use super::EdgeError;

#[derive(Debug, Clone, PartialEq)]
pub struct ContourCurve {
    pub plane: Plane,
    pub control_points: Vec<Point2>,
    pub degree: usize,
    pub knots: Vec<f64>,
    pub fragment_id: usize,
}

impl ContourCurve {
    /// Point on the curve at parameter `t` in [0, 1].
    pub fn evaluate(&self, t: f64) -> Point2 {
        let basis = basis_row(&self.knots, self.degree, self.control_points.len(), t);
        let mut p = [0.0; 2];
        for (b, c) in basis.iter().zip(&self.control_points) {
            p[0] += b * c[0];
            p[1] += b * c[1];
        }
        p
    }

    /// Largest absolute second difference of the control points.
    pub fn max_second_difference(&self) -> f64 {
        self.control_points
            .windows(3)
            .map(|w| {
                let dx = w[0][0] - 2.0 * w[1][0] + w[2][0];
                let dy = w[0][1] - 2.0 * w[1][1] + w[2][1];
                dx.abs().max(dy.abs())
            })
            .fold(0.0, f64::max)
    }

    /// Text export: `plane; x y, x y, ...; k k k ...`.
    pub fn to_text(&self) -> String {
        let cps: Vec<String> = self
            .control_points
            .iter()
            .map(|c| format!("{} {}", c[0], c[1]))
            .collect();
        let knots: Vec<String> = self.knots.iter().map(|k| k.to_string()).collect();
        format!(
            "{}; {}; {}",
            self.plane.as_str(),
            cps.join(", "),
            knots.join(" ")
        )
    }
}

/// Clamped uniform knot vector on [0, 1] with `n_ctrl + degree + 1` entries.
pub fn clamped_knots(n_ctrl: usize, degree: usize) -> Vec<f64> {
    let interior = n_ctrl - degree - 1;
    let mut k = vec![0.0; degree + 1];
    for i in 1..=interior {
        k.push(i as f64 / (interior + 1) as f64);
    }
    k.extend(std::iter::repeat_n(1.0, degree + 1));
    k
}

/// All `n_ctrl` basis functions at `t` (Cox-de Boor). The right end point
/// belongs to the last span so the curve interpolates its last control point.
pub fn basis_row(knots: &[f64], degree: usize, n_ctrl: usize, t: f64) -> Vec<f64> {
    let t = t.clamp(knots[degree], knots[n_ctrl]);
    // span index: last i with knots[i] <= t < knots[i+1], capped at n_ctrl-1
    let mut span = degree;
    while span + 1 < n_ctrl && knots[span + 1] <= t {
        span += 1;
    }
    let mut n = vec![0.0; degree + 1];
    n[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let tmp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    let mut row = vec![0.0; n_ctrl];
    for (k, v) in n.into_iter().enumerate() {
        row[span - degree + k] = v;
    }
    row
}

/// Normalised cumulative chord length; `None` if all points coincide.
pub fn chord_params(points: &[Point2]) -> Option<Vec<f64>> {
    let mut t = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    t.push(0.0);
    for w in points.windows(2) {
        acc += ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        t.push(acc);
    }
    if !(acc > 0.0) {
        return None;
    }
    Some(t.into_iter().map(|x| x / acc).collect())
}

/// Fits a clamped B-spline with `n_ctrl` control points to the ordered
/// fragment, penalising second differences of the control points by `lambda`.
pub fn fit_bspline(
    points: &[Point2],
    lambda: f64,
    degree: usize,
    n_ctrl: usize,
    plane: Plane,
    fragment_id: usize,
) -> Result<ContourCurve, EdgeError> {
    if n_ctrl < degree + 1 {
        return Err(EdgeError::BadParam(format!(
            "need at least {} control points",
            degree + 1
        )));
    }
    if points.len() < n_ctrl {
        return Err(EdgeError::TooFewPoints {
            need: n_ctrl,
            got: points.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(EdgeError::BadParam("lambda must be non-negative".into()));
    }
    let t = chord_params(points).ok_or(EdgeError::RankDeficient)?;
    let knots = clamped_knots(n_ctrl, degree);
    let m = points.len();
    let b = DMatrix::from_fn(m, n_ctrl, |_, _| 0.0);
    let mut b = b;
    for (i, &ti) in t.iter().enumerate() {
        for (j, v) in basis_row(&knots, degree, n_ctrl, ti)
            .into_iter()
            .enumerate()
        {
            b[(i, j)] = v;
        }
    }
    let mut a = b.transpose() * &b;
    if n_ctrl >= 3 && lambda > 0.0 {
        let mut d = DMatrix::zeros(n_ctrl - 2, n_ctrl);
        for r in 0..n_ctrl - 2 {
            d[(r, r)] = 1.0;
            d[(r, r + 1)] = -2.0;
            d[(r, r + 2)] = 1.0;
        }
        a += lambda * d.transpose() * d;
    }
    let chol = a.clone().cholesky().ok_or(EdgeError::RankDeficient)?;
    // reject numerically singular systems that Cholesky still pushes through
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if !(lo > hi * 1e-7) {
        return Err(EdgeError::RankDeficient);
    }
    let mut control_points = vec![[0.0; 2]; n_ctrl];
    for axis in 0..2 {
        let y = DVector::from_iterator(m, points.iter().map(|p| p[axis]));
        let c = chol.solve(&(b.transpose() * y));
        for j in 0..n_ctrl {
            control_points[j][axis] = c[j];
        }
    }
    Ok(ContourCurve {
        plane,
        control_points,
        degree,
        knots,
        fragment_id,
    })
}

/// Degree-1 segment between the two mutually farthest fragment points, used
/// when the spline system is degenerate.
pub fn straight_segment(points: &[Point2], plane: Plane, fragment_id: usize) -> ContourCurve {
    let d = |a: &Point2, b: &Point2| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let far = |from: &Point2| {
        points
            .iter()
            .copied()
            .fold((*from, -1.0), |(best, bd), p| {
                if d(&p, from) > bd {
                    (p, d(&p, from))
                } else {
                    (best, bd)
                }
            })
            .0
    };
    let first = points.first().copied().unwrap_or([0.0, 0.0]);
    let a = far(&first);
    let b = far(&a);
    ContourCurve {
        plane,
        control_points: vec![a, b],
        degree: 1,
        knots: vec![0.0, 0.0, 1.0, 1.0],
        fragment_id,
    }
}

/// Distances between each fragment point and the curve at its chord parameter.
pub fn residuals(curve: &ContourCurve, points: &[Point2]) -> Vec<f64> {
    let Some(t) = chord_params(points) else {
        return vec![0.0; points.len()];
    };
    points
        .iter()
        .zip(t)
        .map(|(p, ti)| {
            let c = curve.evaluate(ti);
            ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt()
        })
        .collect()
}

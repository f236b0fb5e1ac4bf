//! Self-attention saliency: points that receive the most attention from the
//! rest of the cloud are taken as contour points.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::EdgeError;
use crate::error::FormatError;
use crate::nn::{read_matrix, softmax, write_matrix, Mlp, Tokens};
use crate::world::PointCloud;

pub const FEATURE_DIM: usize = 128;
pub const PROJ_DIM: usize = 64;

/// Shared point MLP plus query/key projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// `3 -> 128`.
    pub point_mlp: Mlp,
    /// `64 x 128`.
    pub w_q: DMatrix<f64>,
    pub b_q: DVector<f64>,
    /// `64 x 128`.
    pub w_k: DMatrix<f64>,
    pub b_k: DVector<f64>,
}

impl AttentionWeights {
    pub fn new(
        point_mlp: Mlp,
        w_q: DMatrix<f64>,
        b_q: DVector<f64>,
        w_k: DMatrix<f64>,
        b_k: DVector<f64>,
    ) -> Result<Self, EdgeError> {
        let w = Self {
            point_mlp,
            w_q,
            b_q,
            w_k,
            b_k,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), EdgeError> {
        let ok = self.point_mlp.is_consistent()
            && self.point_mlp.input_dim() == 3
            && self.point_mlp.output_dim() == FEATURE_DIM
            && self.w_q.shape() == (PROJ_DIM, FEATURE_DIM)
            && self.w_k.shape() == (PROJ_DIM, FEATURE_DIM)
            && self.b_q.len() == PROJ_DIM
            && self.b_k.len() == PROJ_DIM;
        if ok {
            Ok(())
        } else {
            Err(EdgeError::BadParam(
                "attention weights must be 3->128 MLP and 64x128 projections".into(),
            ))
        }
    }

    /// Deterministic initialisation: Glorot point MLP with one hidden layer,
    /// Gaussian projections scaled so each row has roughly unit norm.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point_mlp = Mlp::random(&[3, 64, FEATURE_DIM], &mut rng);
        let scale = 1.0 / (FEATURE_DIM as f64).sqrt();
        let mut gauss = |r: usize, c: usize| {
            DMatrix::from_fn(r, c, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
        };
        let w_q = gauss(PROJ_DIM, FEATURE_DIM);
        let w_k = gauss(PROJ_DIM, FEATURE_DIM);
        Self {
            point_mlp,
            w_q,
            b_q: DVector::zeros(PROJ_DIM),
            w_k,
            b_k: DVector::zeros(PROJ_DIM),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("attention 1\n");
        self.point_mlp.write_text(&mut out);
        for m in [&self.w_q, &self.w_k] {
            write_matrix(&mut out, m);
        }
        for b in [&self.b_q, &self.b_k] {
            write_matrix(
                &mut out,
                &DMatrix::from_column_slice(b.len(), 1, b.as_slice()),
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EdgeError> {
        let mut tok = Tokens::new(text);
        tok.expect("attention")?;
        let v = tok.next_token()?;
        if v != "1" {
            return Err(FormatError::Version(v.into()).into());
        }
        let point_mlp = Mlp::read_text(&mut tok)?;
        let w_q = read_matrix(&mut tok)?;
        let w_k = read_matrix(&mut tok)?;
        let b_q = read_matrix(&mut tok)?;
        let b_k = read_matrix(&mut tok)?;
        Self::new(
            point_mlp,
            w_q,
            DVector::from_column_slice(b_q.as_slice()),
            w_k,
            DVector::from_column_slice(b_k.as_slice()),
        )
    }
}

/// Per-point features, one row per point.
pub fn encode_points(cloud: &PointCloud, w: &AttentionWeights) -> Result<DMatrix<f64>, EdgeError> {
    if cloud.points.is_empty() {
        return Err(EdgeError::EmptyCloud(cloud.object_id));
    }
    let n = cloud.points.len();
    let mut f = DMatrix::zeros(n, FEATURE_DIM);
    for (i, p) in cloud.points.iter().enumerate() {
        let row = w
            .point_mlp
            .forward(&DVector::from_column_slice(p.as_slice()));
        f.set_row(i, &row.transpose());
    }
    Ok(f)
}

/// Row-stochastic matrix `alpha[t][k] = softmax_k <q_t, k_k>`.
pub fn attention_matrix(features: &DMatrix<f64>, w: &AttentionWeights) -> DMatrix<f64> {
    let n = features.nrows();
    let mut q = features * w.w_q.transpose();
    let mut k = features * w.w_k.transpose();
    for mut row in q.row_iter_mut() {
        row += w.b_q.transpose();
    }
    for mut row in k.row_iter_mut() {
        row += w.b_k.transpose();
    }
    let logits = &q * k.transpose();
    let mut alpha = DMatrix::zeros(n, n);
    for t in 0..n {
        let row: Vec<f64> = logits.row(t).iter().copied().collect();
        let p = softmax(&row);
        for (c, v) in p.into_iter().enumerate() {
            alpha[(t, c)] = v;
        }
    }
    alpha
}

/// Total attention each point receives: the column sums.
pub fn point_saliency(attention: &DMatrix<f64>) -> Vec<f64> {
    attention.column_iter().map(|c| c.sum()).collect()
}

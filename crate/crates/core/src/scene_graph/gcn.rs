//! Triplet graph convolution and relation classifier.
//!
//! Each layer runs every `(subject, object, edge)` feature triple through a
//! shared MLP, hands the per-role outputs back to the nodes, averages them
//! per node and adds the aggregated message residually. The edge feature is
//! replaced by the edge slice of the triple output. After the last layer a
//! classifier MLP and a softmax turn each edge feature into a distribution
//! over the relation vocabulary.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::Rng;

use super::{
    encode_edge_feature, encode_node_feature, EncoderConfig, RelationVocabulary, SceneGraph3D,
    SgError, Triplet,
};
use crate::error::FormatError;
use crate::nn::{softmax, Mlp, Tokens};
use crate::world::{ObjectId, PointCloud};

/// Which roles a layer advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    /// Subject, object and edge all take their slice of the triple output.
    #[default]
    Symmetric,
    /// Literal reading of the layer equations: only the object role is
    /// advanced; subject-role outputs are discarded and edge features carry
    /// over unchanged.
    AsWritten,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    /// `2 * node_dim + edge_dim` in and out.
    pub triplet: Mlp,
    /// `node_dim` in and out.
    pub aggregate: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnWeights {
    pub layers: Vec<GcnLayer>,
    /// `edge_dim` in, vocabulary size out.
    pub classifier: Mlp,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub update: UpdateRule,
}

fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

impl GcnWeights {
    pub fn zeros(
        node_dim: usize,
        edge_dim: usize,
        layers: usize,
        classes: usize,
        hidden: &[usize],
    ) -> Self {
        let width = 2 * node_dim + edge_dim;
        Self {
            layers: (0..layers)
                .map(|_| GcnLayer {
                    triplet: Mlp::zeros(&with_hidden(width, hidden, width)),
                    aggregate: Mlp::zeros(&with_hidden(node_dim, hidden, node_dim)),
                })
                .collect(),
            classifier: Mlp::zeros(&with_hidden(edge_dim, hidden, classes)),
            node_dim,
            edge_dim,
            update: UpdateRule::Symmetric,
        }
    }

    pub fn random<R: Rng + ?Sized>(
        node_dim: usize,
        edge_dim: usize,
        layers: usize,
        classes: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let width = 2 * node_dim + edge_dim;
        Self {
            layers: (0..layers)
                .map(|_| GcnLayer {
                    triplet: Mlp::random(&with_hidden(width, hidden, width), rng),
                    aggregate: Mlp::random(&with_hidden(node_dim, hidden, node_dim), rng),
                })
                .collect(),
            classifier: Mlp::random(&with_hidden(edge_dim, hidden, classes), rng),
            node_dim,
            edge_dim,
            update: UpdateRule::Symmetric,
        }
    }

    pub fn validate(&self) -> Result<(), SgError> {
        let width = 2 * self.node_dim + self.edge_dim;
        if self.layers.is_empty() {
            return Err(SgError::Shape("at least one layer is required".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let ok = l.triplet.is_consistent()
                && l.aggregate.is_consistent()
                && l.triplet.input_dim() == width
                && l.triplet.output_dim() == width
                && l.aggregate.input_dim() == self.node_dim
                && l.aggregate.output_dim() == self.node_dim;
            if !ok {
                return Err(SgError::Shape(format!(
                    "layer {i} does not match node {} / edge {}",
                    self.node_dim, self.edge_dim
                )));
            }
        }
        if !self.classifier.is_consistent() || self.classifier.input_dim() != self.edge_dim {
            return Err(SgError::Shape(
                "classifier input must equal edge_dim".into(),
            ));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.triplet.params_mut().chain(l.aggregate.params_mut()))
            .chain(self.classifier.params_mut())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let rule = match self.update {
            UpdateRule::Symmetric => "symmetric",
            UpdateRule::AsWritten => "as_written",
        };
        let _ = writeln!(out, "gcn 1");
        let _ = writeln!(
            out,
            "{} {} {} {}",
            self.node_dim,
            self.edge_dim,
            self.layers.len(),
            rule
        );
        for l in &self.layers {
            l.triplet.write_text(&mut out);
            l.aggregate.write_text(&mut out);
        }
        self.classifier.write_text(&mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SgError> {
        let mut tok = Tokens::new(text);
        tok.expect("gcn")?;
        let version = tok.next_token()?;
        if version != "1" {
            return Err(FormatError::Version(version.to_string()).into());
        }
        let node_dim: usize = tok.parse()?;
        let edge_dim: usize = tok.parse()?;
        let n: usize = tok.parse()?;
        let update = match tok.next_token()? {
            "symmetric" => UpdateRule::Symmetric,
            "as_written" => UpdateRule::AsWritten,
            other => {
                return Err(FormatError::Unexpected {
                    expected: "symmetric|as_written".into(),
                    found: other.into(),
                }
                .into())
            }
        };
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let triplet = Mlp::read_text(&mut tok)?;
            let aggregate = Mlp::read_text(&mut tok)?;
            layers.push(GcnLayer { triplet, aggregate });
        }
        let classifier = Mlp::read_text(&mut tok)?;
        let w = Self {
            layers,
            classifier,
            node_dim,
            edge_dim,
            update,
        };
        w.validate()?;
        Ok(w)
    }
}

/// Features of one directed edge `m -> n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletFeature {
    pub m: usize,
    pub n: usize,
    pub feature: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphFeatures {
    pub nodes: Vec<DVector<f64>>,
    pub edges: Vec<TripletFeature>,
}

/// One message-passing layer.
pub fn gcn_layer(g: &GraphFeatures, w: &GcnWeights, layer: usize) -> GraphFeatures {
    let l = &w.layers[layer];
    let dn = w.node_dim;
    let mut sums: Vec<DVector<f64>> = vec![DVector::zeros(dn); g.nodes.len()];
    let mut counts = vec![0usize; g.nodes.len()];
    let mut edges = Vec::with_capacity(g.edges.len());
    for e in &g.edges {
        let mut x = DVector::zeros(2 * dn + w.edge_dim);
        x.rows_mut(0, dn).copy_from(&g.nodes[e.m]);
        x.rows_mut(dn, dn).copy_from(&g.nodes[e.n]);
        x.rows_mut(2 * dn, w.edge_dim).copy_from(&e.feature);
        let y = l.triplet.forward(&x);
        match w.update {
            UpdateRule::Symmetric => {
                sums[e.m] += y.rows(0, dn);
                counts[e.m] += 1;
                sums[e.n] += y.rows(dn, dn);
                counts[e.n] += 1;
                edges.push(TripletFeature {
                    m: e.m,
                    n: e.n,
                    feature: y.rows(2 * dn, w.edge_dim).into_owned(),
                });
            }
            UpdateRule::AsWritten => {
                sums[e.n] += y.rows(dn, dn);
                counts[e.n] += 1;
                edges.push(e.clone());
            }
        }
    }
    let nodes = g
        .nodes
        .iter()
        .zip(sums.iter().zip(&counts))
        .map(|(f, (s, &c))| {
            if c == 0 {
                f.clone()
            } else {
                f + l.aggregate.forward(&(s / c as f64))
            }
        })
        .collect();
    GraphFeatures { nodes, edges }
}

pub fn gcn_forward(g: &GraphFeatures, w: &GcnWeights) -> GraphFeatures {
    (0..w.layers.len()).fold(g.clone(), |acc, l| gcn_layer(&acc, w, l))
}

/// Softmax over the classifier logits of a final-layer edge feature.
pub fn classify_relation(edge_feature: &DVector<f64>, w: &GcnWeights) -> Vec<f64> {
    softmax(w.classifier.forward(edge_feature).as_slice())
}

/// Summed negative log-likelihood of the true labels. A true label with
/// zero predicted probability yields `f64::INFINITY`.
pub fn sg_loss(predictions: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "one label per pair");
    predictions
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            if p[y] > 0.0 {
                -p[y].ln()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Loss of the full forward pass on one graph.
pub fn graph_loss(w: &GcnWeights, g: &GraphFeatures, labels: &[usize]) -> f64 {
    let out = gcn_forward(g, w);
    let preds: Vec<Vec<f64>> = out
        .edges
        .iter()
        .map(|e| classify_relation(&e.feature, w))
        .collect();
    sg_loss(&preds, labels)
}

/// Scene graph predicted by the network from segmented clouds.
///
/// `captions` maps object ids to captions. Edges connect clouds whose
/// centroids are within `d_max`, oriented from the smaller id to the larger,
/// and the predicted label reads in that direction.
pub fn gcn_scene_graph(
    clouds: &[PointCloud],
    captions: &[(ObjectId, String)],
    w: &GcnWeights,
    vocab: &RelationVocabulary,
    cfg: &EncoderConfig,
    d_max: f64,
    frame_index: u64,
) -> Result<SceneGraph3D, SgError> {
    w.validate()?;
    if cfg.node_dim != w.node_dim || cfg.edge_dim != w.edge_dim || w.classes() != vocab.len() {
        return Err(SgError::Shape(
            "encoder, weights and vocabulary disagree".into(),
        ));
    }
    let mut sorted: Vec<&PointCloud> = clouds.iter().collect();
    sorted.sort_by_key(|c| c.object_id);
    let nodes = sorted
        .iter()
        .map(|c| encode_node_feature(c, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut edges = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            if (sorted[i].centroid() - sorted[j].centroid()).norm() <= d_max {
                edges.push(TripletFeature {
                    m: i,
                    n: j,
                    feature: encode_edge_feature(sorted[i], sorted[j], cfg)?,
                });
            }
        }
    }
    let out = gcn_forward(&GraphFeatures { nodes, edges }, w);
    let caption = |id: ObjectId| {
        captions
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, c)| c.clone())
            .unwrap_or_else(|| format!("obj{id}"))
    };
    let mut g = SceneGraph3D::new(frame_index);
    for e in &out.edges {
        let p = classify_relation(&e.feature, w);
        let best = (0..p.len()).fold(0, |b, k| if p[k] > p[b] { k } else { b });
        let rel = vocab.labels()[best];
        if rel == super::Relation::None {
            continue;
        }
        let t = Triplet::new(
            caption(sorted[e.m].object_id),
            rel,
            caption(sorted[e.n].object_id),
        )?;
        g.insert(t)?;
    }
    Ok(g)
}

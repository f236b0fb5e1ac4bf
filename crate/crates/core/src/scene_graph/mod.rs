//! 3D scene graphs: relation triplets between captioned entities, their
//! canonical wire form, and the two ways of predicting them (a geometric
//! rule classifier and a triplet graph network over point-cloud features).

mod encoder;
mod gcn;
mod relation;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{
    edge_feature_swap, encode_edge_feature, encode_node_feature, EncoderConfig, EDGE_STAT_COUNT,
    NODE_STAT_COUNT,
};
pub use gcn::{
    classify_relation, gcn_forward, gcn_layer, gcn_scene_graph, graph_loss, sg_loss, GcnLayer,
    GcnWeights, GraphFeatures, TripletFeature, UpdateRule,
};
pub use relation::{
    build_scene_graph, candidate_edges, classify_pair, geometric_relation, Entity,
    RelationThresholds,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SgError {
    #[error("self relation on `{0}`")]
    SelfRelation(String),
    #[error("invalid caption `{0}`: captions must be non-empty and contain no `|` or newline")]
    BadCaption(String),
    #[error("pair ({0}, {1}) already has a relation")]
    DuplicatePair(String, String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty point cloud for object {0}; segmentation produced nothing")]
    EmptyCloud(u32),
    #[error("relation vocabulary must contain `none` and have unique labels")]
    BadVocabulary,
    #[error("inconsistent network shapes: {0}")]
    Shape(String),
    #[error(transparent)]
    Format(#[from] crate::error::FormatError),
}

/// Spatial relation labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "standing on")]
    StandingOn,
    #[serde(rename = "grasped by")]
    GraspedBy,
    #[serde(rename = "next to")]
    NextTo,
    #[serde(rename = "inside")]
    Inside,
    #[serde(rename = "none")]
    None,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::StandingOn,
        Relation::GraspedBy,
        Relation::NextTo,
        Relation::Inside,
        Relation::None,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Relation::StandingOn => "standing on",
            Relation::GraspedBy => "grasped by",
            Relation::NextTo => "next to",
            Relation::Inside => "inside",
            Relation::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }

    /// Symmetric labels are stored with the captions in lexicographic order.
    pub fn is_symmetric(&self) -> bool {
        matches!(self, Relation::NextTo | Relation::None)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered, closed set of relation labels a classifier predicts over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationVocabulary {
    labels: Vec<Relation>,
}

impl RelationVocabulary {
    pub fn new(labels: Vec<Relation>) -> Result<Self, SgError> {
        let unique: BTreeSet<_> = labels.iter().collect();
        if unique.len() != labels.len() || !labels.contains(&Relation::None) {
            return Err(SgError::BadVocabulary);
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[Relation] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, r: Relation) -> Option<usize> {
        self.labels.iter().position(|&l| l == r)
    }
}

impl Default for RelationVocabulary {
    fn default() -> Self {
        Self {
            labels: Relation::ALL.to_vec(),
        }
    }
}

fn check_caption(c: &str) -> Result<(), SgError> {
    if c.is_empty() || c.contains('|') || c.contains('\n') || c.contains('\r') {
        Err(SgError::BadCaption(c.to_string()))
    } else {
        Ok(())
    }
}

/// `(subject, relation, object)`.
///
/// Asymmetric relations read left to right: `(parcel, standing on, table)`,
/// `(parcel, grasped by, robot)`, `(bolt, inside, bin)`. Symmetric ones keep
/// the lexicographically smaller caption first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
}

impl Triplet {
    pub fn new(
        subject: impl Into<String>,
        relation: Relation,
        object: impl Into<String>,
    ) -> Result<Self, SgError> {
        let (mut subject, mut object) = (subject.into(), object.into());
        check_caption(&subject)?;
        check_caption(&object)?;
        if subject == object {
            return Err(SgError::SelfRelation(subject));
        }
        if relation.is_symmetric() && object < subject {
            std::mem::swap(&mut subject, &mut object);
        }
        Ok(Self {
            subject,
            relation,
            object,
        })
    }

    /// The unordered caption pair, smaller first.
    pub fn pair(&self) -> (&str, &str) {
        if self.subject <= self.object {
            (&self.subject, &self.object)
        } else {
            (&self.object, &self.subject)
        }
    }

    pub fn involves(&self, caption: &str) -> bool {
        self.subject == caption || self.object == caption
    }

    /// The other party of the triplet, if `caption` is one of them.
    pub fn other(&self, caption: &str) -> Option<&str> {
        if self.subject == caption {
            Some(&self.object)
        } else if self.object == caption {
            Some(&self.subject)
        } else {
            None
        }
    }

    pub fn wire_line(&self) -> String {
        format!("{}|{}|{}", self.subject, self.relation, self.object)
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.relation, self.object)
    }
}

/// A frame's scene graph: at most one triplet per unordered caption pair.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SceneGraph3D {
    pub frame_index: u64,
    triplets: BTreeSet<Triplet>,
}

impl SceneGraph3D {
    pub fn new(frame_index: u64) -> Self {
        Self {
            frame_index,
            triplets: BTreeSet::new(),
        }
    }

    pub fn from_triplets(
        frame_index: u64,
        triplets: impl IntoIterator<Item = Triplet>,
    ) -> Result<Self, SgError> {
        let mut g = Self::new(frame_index);
        for t in triplets {
            g.insert(t)?;
        }
        Ok(g)
    }

    pub fn insert(&mut self, t: Triplet) -> Result<(), SgError> {
        if self.triplets.contains(&t) {
            return Ok(());
        }
        if let Some(existing) = self.relation_between(&t.subject, &t.object) {
            let (a, b) = existing.pair();
            return Err(SgError::DuplicatePair(a.to_string(), b.to_string()));
        }
        self.triplets.insert(t);
        Ok(())
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.triplets.contains(t)
    }

    pub fn relation_between(&self, a: &str, b: &str) -> Option<&Triplet> {
        self.triplets
            .iter()
            .find(|t| (t.subject == a && t.object == b) || (t.subject == b && t.object == a))
    }

    pub fn triplets(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter()
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Triplets present in `self` but not in `other`.
    pub fn difference<'a>(&'a self, other: &'a SceneGraph3D) -> impl Iterator<Item = &'a Triplet> {
        self.triplets.difference(&other.triplets)
    }
}

/// Canonical uplink form: one `subject|relation|object` line per triplet,
/// newline-terminated, lines in byte order.
pub fn serialize_sg(sg: &SceneGraph3D) -> Vec<u8> {
    let mut lines: Vec<String> = sg.triplets.iter().map(Triplet::wire_line).collect();
    lines.sort();
    let mut out = Vec::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        out.extend_from_slice(l.as_bytes());
        out.push(b'\n');
    }
    out
}

pub fn deserialize_sg(bytes: &[u8], frame_index: u64) -> Result<SceneGraph3D, SgError> {
    let text = std::str::from_utf8(bytes).map_err(|e| SgError::Parse {
        line: 1 + bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count(),
        message: "invalid UTF-8".into(),
    })?;
    let mut g = SceneGraph3D::new(frame_index);
    for (i, line) in text.lines().enumerate() {
        let parse_err = |message: String| SgError::Parse {
            line: i + 1,
            message,
        };
        let parts: Vec<&str> = line.split('|').collect();
        if parts.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 `|`-separated fields, found {}",
                parts.len()
            )));
        }
        let rel = Relation::parse(parts[1])
            .ok_or_else(|| parse_err(format!("unknown relation `{}`", parts[1])))?;
        let t = Triplet::new(parts[0], rel, parts[2]).map_err(|e| parse_err(e.to_string()))?;
        g.insert(t).map_err(|e| parse_err(e.to_string()))?;
    }
    Ok(g)
}

/// Payload size in bits of the serialized graph.
pub fn sg_payload_bits(sg: &SceneGraph3D) -> f64 {
    serialize_sg(sg).len() as f64 * 8.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(a: &str, r: Relation, b: &str) -> Triplet {
        Triplet::new(a, r, b).unwrap()
    }

    #[test]
    fn symmetric_triplets_are_canonical() {
        assert_eq!(
            t("robot", Relation::NextTo, "human"),
            t("human", Relation::NextTo, "robot")
        );
        let g = t("parcel", Relation::GraspedBy, "robot");
        assert_eq!(g.subject, "parcel");
        assert_eq!(t("robot", Relation::StandingOn, "a").subject, "robot");
    }

    #[test]
    fn invalid_triplets_rejected() {
        assert!(Triplet::new("a", Relation::NextTo, "a").is_err());
        assert!(Triplet::new("a|b", Relation::NextTo, "c").is_err());
        assert!(Triplet::new("", Relation::NextTo, "c").is_err());
    }

    #[test]
    fn one_relation_per_pair() {
        let mut g = SceneGraph3D::new(0);
        g.insert(t("box", Relation::StandingOn, "table")).unwrap();
        assert!(g.insert(t("table", Relation::NextTo, "box")).is_err());
        g.insert(t("box", Relation::StandingOn, "table")).unwrap();
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn empty_graph_has_empty_payload() {
        assert!(serialize_sg(&SceneGraph3D::new(3)).is_empty());
        assert_eq!(sg_payload_bits(&SceneGraph3D::new(3)), 0.0);
    }

    #[test]
    fn wire_roundtrip_and_order() {
        let g = SceneGraph3D::from_triplets(
            4,
            [
                t("parcel", Relation::GraspedBy, "robot"),
                t("box", Relation::StandingOn, "table"),
                t("human", Relation::NextTo, "robot"),
            ],
        )
        .unwrap();
        let bytes = serialize_sg(&g);
        assert_eq!(
            std::str::from_utf8(&bytes).unwrap(),
            "box|standing on|table\nhuman|next to|robot\nparcel|grasped by|robot\n"
        );
        assert_eq!(deserialize_sg(&bytes, 4).unwrap(), g);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = deserialize_sg(b"a|next to|b\nbroken line\n", 0).unwrap_err();
        assert_eq!(
            err,
            SgError::Parse {
                line: 2,
                message: "expected 3 `|`-separated fields, found 1".into()
            }
        );
        let err = deserialize_sg(b"a|flying over|b\n", 0).unwrap_err();
        assert!(matches!(err, SgError::Parse { line: 1, .. }));
    }

    #[test]
    fn ten_triplets_of_twenty_bytes() {
        // two 5-byte captions + "next to" + two separators + newline = 20 bytes
        let mut g = SceneGraph3D::new(0);
        for i in 0..10 {
            g.insert(t(
                &format!("a{i:04}"),
                Relation::NextTo,
                &format!("b{i:04}"),
            ))
            .unwrap();
        }
        let bytes = serialize_sg(&g);
        assert_eq!(bytes.len(), 10 * 20);
    }

    #[test]
    fn vocabulary_rules() {
        assert!(RelationVocabulary::new(vec![Relation::NextTo]).is_err());
        assert!(RelationVocabulary::new(vec![Relation::None, Relation::None]).is_err());
        let v = RelationVocabulary::default();
        assert_eq!(v.len(), 5);
        assert_eq!(v.index_of(Relation::None), Some(4));
    }
}

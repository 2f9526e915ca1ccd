//! Heterogeneous scene graphs and their hybrid-graph derivation.
//!
//! A scene graph has two node kinds: *category nodes* (detected objects) and
//! *relation nodes* (subject → predicate → object triplets promoted to
//! nodes). The hybrid graph adds two derived homogeneous metapaths so that
//! category nodes and relation nodes can exchange messages directly:
//!
//! - `o→r` / `r→o`: a category node and a relation node are adjacent when
//!   the category node is the subject or object of the relation,
//! - `o→o`: two category nodes are adjacent when one relation connects them,
//! - `r→r`: two relation nodes are adjacent when the object of one is the
//!   subject of the other.
//!
//! Derived adjacencies are access-symmetric and carry self-entries on `o→o`
//! and `r→r` so every node attends to itself even when isolated.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node identifier. Category nodes and relation nodes use independent id
/// spaces; uniqueness is only required within a kind.
pub type NodeId = u32;

/// Privacy class of a category node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Privacy {
    Positive,
    Negative,
    #[default]
    Unknown,
}

impl Privacy {
    pub fn is_unknown(&self) -> bool {
        matches!(self, Privacy::Unknown)
    }

    /// Known label as a bool (positive = true), or None when unknown.
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Privacy::Positive => Some(true),
            Privacy::Negative => Some(false),
            Privacy::Unknown => None,
        }
    }

    pub fn from_bool(b: bool) -> Privacy {
        if b {
            Privacy::Positive
        } else {
            Privacy::Negative
        }
    }
}

/// On-disk encoding: `1` positive, `0` negative, absent/null unknown.
mod privacy_serde {
    use super::Privacy;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Privacy, s: S) -> Result<S::Ok, S::Error> {
        match p {
            Privacy::Positive => s.serialize_u8(1),
            Privacy::Negative => s.serialize_u8(0),
            Privacy::Unknown => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Privacy, D::Error> {
        let v: Option<u8> = Option::deserialize(d)?;
        match v {
            None => Ok(Privacy::Unknown),
            Some(0) => Ok(Privacy::Negative),
            Some(1) => Ok(Privacy::Positive),
            Some(other) => Err(serde::de::Error::custom(format!(
                "privacy must be 0, 1 or null, got {other}"
            ))),
        }
    }
}

/// Whether a node came from the source data or was created by augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Source,
    Synthetic,
}

impl Origin {
    pub fn is_source(&self) -> bool {
        matches!(self, Origin::Source)
    }
}

/// A detected object: category tag, feature vector, optional box and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryNode {
    pub id: NodeId,
    pub category: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(
        default,
        with = "privacy_serde",
        skip_serializing_if = "Privacy::is_unknown"
    )]
    pub privacy: Privacy,
    #[serde(default, skip_serializing_if = "Origin::is_source")]
    pub origin: Origin,
}

/// A relation instance promoted to a node: `subject → predicate → object`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationNode {
    pub id: NodeId,
    pub predicate: String,
    pub features: Vec<f64>,
    #[serde(rename = "subject")]
    pub subject_id: NodeId,
    #[serde(rename = "object")]
    pub object_id: NodeId,
}

/// Declared feature dimensions for the two node kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub category: usize,
    pub relation: usize,
}

/// Heterogeneous scene graph: category nodes plus relation nodes.
///
/// Immutable for readers once built; all derivations copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroSceneGraph {
    pub dims: Dims,
    #[serde(rename = "nodes")]
    pub categories: Vec<CategoryNode>,
    pub relations: Vec<RelationNode>,
}

/// One structural violation found by [`HeteroSceneGraph::validate`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("relation {relation_id} references missing category node {missing}")]
    DanglingEndpoint {
        relation_id: NodeId,
        missing: NodeId,
    },
    #[error("duplicate category node id {0}")]
    DuplicateCategoryId(NodeId),
    #[error("duplicate relation node id {0}")]
    DuplicateRelationId(NodeId),
    #[error("{kind} node {id} has {got} features, expected {expected}")]
    DimensionMismatch {
        kind: NodeKind,
        id: NodeId,
        expected: usize,
        got: usize,
    },
    #[error("{kind} node {id} has non-finite feature at index {index}")]
    NonFiniteFeature {
        kind: NodeKind,
        id: NodeId,
        index: usize,
    },
    #[error("category node {id} has a degenerate bbox (w and h must be > 0)")]
    InvalidBbox { id: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Category,
    Relation,
}

impl std::fmt::Display for NodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeKind::Category => write!(f, "category"),
            NodeKind::Relation => write!(f, "relation"),
        }
    }
}

/// Outcome of validation: either OK or the complete violation list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_ok() {
            return write!(f, "OK");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Errors raised by graph construction and access.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed graph document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("graph violates schema invariants:\n{0}")]
    Schema(ValidationReport),
    #[error("invalid graph:\n{0}")]
    InvalidGraph(ValidationReport),
    #[error("unknown {kind} node {id}")]
    UnknownNode { kind: NodeKind, id: NodeId },
    #[error("node kind {kind} does not match the source kind of path {path}")]
    PathKindMismatch { kind: NodeKind, path: MetaPath },
}

/// The four metapaths of the hybrid graph. `X→Y` means an `X`-kind node
/// aggregating from its `Y`-kind neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetaPath {
    /// Category node ← its incident relations.
    CatFromRel,
    /// Relation node ← its subject and object.
    RelFromCat,
    /// Category node ← one-relation-away category nodes, plus itself.
    CatFromCat,
    /// Relation node ← relations composable through a shared endpoint, plus itself.
    RelFromRel,
}

impl MetaPath {
    pub const ALL: [MetaPath; 4] = [
        MetaPath::CatFromRel,
        MetaPath::RelFromCat,
        MetaPath::CatFromCat,
        MetaPath::RelFromRel,
    ];

    /// Kind of the node the neighborhood belongs to.
    pub fn source_kind(&self) -> NodeKind {
        match self {
            MetaPath::CatFromRel | MetaPath::CatFromCat => NodeKind::Category,
            MetaPath::RelFromCat | MetaPath::RelFromRel => NodeKind::Relation,
        }
    }

    /// Kind of the aggregated neighbors.
    pub fn neighbor_kind(&self) -> NodeKind {
        match self {
            MetaPath::CatFromRel => NodeKind::Relation,
            MetaPath::RelFromCat => NodeKind::Category,
            MetaPath::CatFromCat => NodeKind::Category,
            MetaPath::RelFromRel => NodeKind::Relation,
        }
    }
}

impl std::fmt::Display for MetaPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetaPath::CatFromRel => write!(f, "o→r"),
            MetaPath::RelFromCat => write!(f, "r→o"),
            MetaPath::CatFromCat => write!(f, "o→o"),
            MetaPath::RelFromRel => write!(f, "r→r"),
        }
    }
}

/// Reference to a node of either kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Category(NodeId),
    Relation(NodeId),
}

impl NodeRef {
    pub fn kind(&self) -> NodeKind {
        match self {
            NodeRef::Category(_) => NodeKind::Category,
            NodeRef::Relation(_) => NodeKind::Relation,
        }
    }

    pub fn id(&self) -> NodeId {
        match self {
            NodeRef::Category(id) | NodeRef::Relation(id) => *id,
        }
    }
}

/// A scene graph plus its four metapath adjacencies.
///
/// Neighbor lists are sorted ascending by id and deduplicated; `o→o` and
/// `r→r` carry a self-entry for every node. The base graph is untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridGraph {
    pub base: HeteroSceneGraph,
    /// Category ids sorted ascending; positions index the per-path tables.
    cat_ids: Vec<NodeId>,
    /// Relation ids sorted ascending.
    rel_ids: Vec<NodeId>,
    /// Index into `base.categories` for each sorted category id.
    cat_pos: Vec<usize>,
    /// Index into `base.relations` for each sorted relation id.
    rel_pos: Vec<usize>,
    adj_or: Vec<Vec<NodeId>>,
    adj_ro: Vec<Vec<NodeId>>,
    adj_oo: Vec<Vec<NodeId>>,
    adj_rr: Vec<Vec<NodeId>>,
}

impl HeteroSceneGraph {
    /// Empty graph with the given feature dimensions.
    pub fn empty(d_o: usize, d_r: usize) -> Self {
        HeteroSceneGraph {
            dims: Dims {
                category: d_o,
                relation: d_r,
            },
            categories: Vec::new(),
            relations: Vec::new(),
        }
    }

    /// Check every structural invariant; violations are data, not faults.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut cat_ids = BTreeSet::new();
        for c in &self.categories {
            if !cat_ids.insert(c.id) {
                violations.push(Violation::DuplicateCategoryId(c.id));
            }
            check_features(
                NodeKind::Category,
                c.id,
                &c.features,
                self.dims.category,
                &mut violations,
            );
            if let Some([_, _, w, h]) = c.bbox {
                if !(w > 0.0 && h > 0.0) {
                    violations.push(Violation::InvalidBbox { id: c.id });
                }
            }
        }
        let mut rel_ids = BTreeSet::new();
        for r in &self.relations {
            if !rel_ids.insert(r.id) {
                violations.push(Violation::DuplicateRelationId(r.id));
            }
            check_features(
                NodeKind::Relation,
                r.id,
                &r.features,
                self.dims.relation,
                &mut violations,
            );
            for endpoint in [r.subject_id, r.object_id] {
                if !cat_ids.contains(&endpoint) {
                    violations.push(Violation::DanglingEndpoint {
                        relation_id: r.id,
                        missing: endpoint,
                    });
                }
            }
        }
        ValidationReport { violations }
    }

    /// Parse a graph from its JSON document. Unknown fields are ignored;
    /// missing optional fields default to absent/unknown. Returns
    /// [`GraphError::Schema`] when the document parses but violates the
    /// structural invariants.
    pub fn parse(text: &str) -> Result<HeteroSceneGraph, GraphError> {
        let g: HeteroSceneGraph = serde_json::from_str(text)?;
        let report = g.validate();
        if !report.is_ok() {
            return Err(GraphError::Schema(report));
        }
        Ok(g)
    }

    /// Serialize to the interchange JSON document. Key order is fixed by the
    /// struct layout and floats round-trip bit-exactly.
    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization cannot fail")
    }

    /// Derive the four metapath adjacencies. The base graph is copied in
    /// unmodified; derivation is deterministic.
    pub fn derive_hybrid(&self) -> Result<HybridGraph, GraphError> {
        let report = self.validate();
        if !report.is_ok() {
            return Err(GraphError::InvalidGraph(report));
        }

        let mut cat_order: Vec<usize> = (0..self.categories.len()).collect();
        cat_order.sort_by_key(|&i| self.categories[i].id);
        let cat_ids: Vec<NodeId> = cat_order.iter().map(|&i| self.categories[i].id).collect();

        let mut rel_order: Vec<usize> = (0..self.relations.len()).collect();
        rel_order.sort_by_key(|&i| self.relations[i].id);
        let rel_ids: Vec<NodeId> = rel_order.iter().map(|&i| self.relations[i].id).collect();

        let cat_slot = |id: NodeId| cat_ids.binary_search(&id).expect("validated endpoint");

        let n_cat = cat_ids.len();
        let mut or_sets: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); n_cat];
        let mut oo_sets: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); n_cat];
        // Relations incident to each category node, split by the node's role.
        let mut outgoing: Vec<Vec<NodeId>> = vec![Vec::new(); n_cat]; // node is subject
        let mut incoming: Vec<Vec<NodeId>> = vec![Vec::new(); n_cat]; // node is object

        for (k, id) in cat_ids.iter().enumerate() {
            oo_sets[k].insert(*id); // self-entry
        }

        let mut adj_ro = Vec::with_capacity(rel_ids.len());
        for &ri in &rel_order {
            let r = &self.relations[ri];
            let s = cat_slot(r.subject_id);
            let o = cat_slot(r.object_id);
            or_sets[s].insert(r.id);
            or_sets[o].insert(r.id);
            oo_sets[s].insert(r.object_id);
            oo_sets[o].insert(r.subject_id);
            outgoing[s].push(r.id);
            incoming[o].push(r.id);
            let mut endpoints = vec![r.subject_id, r.object_id];
            endpoints.sort_unstable();
            endpoints.dedup();
            adj_ro.push(endpoints);
        }

        // r→r: relations composable through a shared category node
        // (object of one is subject of the other), made access-symmetric.
        let mut rr_sets: BTreeMap<NodeId, BTreeSet<NodeId>> = rel_ids
            .iter()
            .map(|&id| (id, BTreeSet::from([id])))
            .collect();
        for k in 0..n_cat {
            for &r_in in &incoming[k] {
                for &r_out in &outgoing[k] {
                    if r_in != r_out {
                        rr_sets.get_mut(&r_in).unwrap().insert(r_out);
                        rr_sets.get_mut(&r_out).unwrap().insert(r_in);
                    }
                }
            }
        }

        Ok(HybridGraph {
            base: self.clone(),
            cat_pos: cat_order,
            rel_pos: rel_order,
            adj_or: or_sets
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
            adj_oo: oo_sets
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
            adj_ro,
            adj_rr: rel_ids
                .iter()
                .map(|id| rr_sets[id].iter().copied().collect())
                .collect(),
            cat_ids,
            rel_ids,
        })
    }

    /// Largest category id in use, if any.
    pub fn max_category_id(&self) -> Option<NodeId> {
        self.categories.iter().map(|c| c.id).max()
    }

    /// Largest relation id in use, if any.
    pub fn max_relation_id(&self) -> Option<NodeId> {
        self.relations.iter().map(|r| r.id).max()
    }
}

fn check_features(
    kind: NodeKind,
    id: NodeId,
    features: &[f64],
    expected: usize,
    violations: &mut Vec<Violation>,
) {
    if features.len() != expected {
        violations.push(Violation::DimensionMismatch {
            kind,
            id,
            expected,
            got: features.len(),
        });
    }
    for (index, v) in features.iter().enumerate() {
        if !v.is_finite() {
            violations.push(Violation::NonFiniteFeature { kind, id, index });
        }
    }
}

impl HybridGraph {
    /// Category ids in ascending order; positions match [`Self::neighbor_slices`].
    pub fn category_ids(&self) -> &[NodeId] {
        &self.cat_ids
    }

    pub fn relation_ids(&self) -> &[NodeId] {
        &self.rel_ids
    }

    /// The category node at sorted position `slot`.
    pub fn category_at(&self, slot: usize) -> &CategoryNode {
        &self.base.categories[self.cat_pos[slot]]
    }

    pub fn relation_at(&self, slot: usize) -> &RelationNode {
        &self.base.relations[self.rel_pos[slot]]
    }

    pub fn category_slot(&self, id: NodeId) -> Option<usize> {
        self.cat_ids.binary_search(&id).ok()
    }

    pub fn relation_slot(&self, id: NodeId) -> Option<usize> {
        self.rel_ids.binary_search(&id).ok()
    }

    /// Metapath neighborhood of `node`, ascending by id. For `o→o` and `r→r`
    /// the node itself is included.
    pub fn neighbors(&self, node: NodeRef, path: MetaPath) -> Result<&[NodeId], GraphError> {
        if node.kind() != path.source_kind() {
            return Err(GraphError::PathKindMismatch {
                kind: node.kind(),
                path,
            });
        }
        let slot = match node {
            NodeRef::Category(id) => self.category_slot(id),
            NodeRef::Relation(id) => self.relation_slot(id),
        }
        .ok_or(GraphError::UnknownNode {
            kind: node.kind(),
            id: node.id(),
        })?;
        Ok(self.neighbor_slices(path)[slot].as_slice())
    }

    /// All neighbor lists for a path, indexed by sorted source-node position.
    pub fn neighbor_slices(&self, path: MetaPath) -> &[Vec<NodeId>] {
        match path {
            MetaPath::CatFromRel => &self.adj_or,
            MetaPath::RelFromCat => &self.adj_ro,
            MetaPath::CatFromCat => &self.adj_oo,
            MetaPath::RelFromRel => &self.adj_rr,
        }
    }
}

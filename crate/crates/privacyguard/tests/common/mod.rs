//! Shared helpers for integration tests: seeded random graphs and the
//! brute-force metapath composition oracles the hybrid derivation is
//! checked against.

use privacyguard::graph::{
    CategoryNode, Dims, HeteroSceneGraph, NodeId, Origin, Privacy, RelationNode,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

/// Random valid scene graph with up to `max_triplets` relations.
pub fn random_graph(seed: u64, max_nodes: usize, max_triplets: usize) -> HeteroSceneGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_nodes);
    let m = rng.random_range(0..=max_triplets);
    let d_o = rng.random_range(1..4);
    let d_r = rng.random_range(1..4);
    let categories: Vec<CategoryNode> = (0..n)
        .map(|i| CategoryNode {
            // Sparse, unordered ids exercise the sorting paths.
            id: (i as NodeId) * rng.random_range(1..4) + rng.random_range(0..2),
            category: format!("c{}", rng.random_range(0..4)),
            features: (0..d_o).map(|_| rng.random_range(-2.0..2.0)).collect(),
            bbox: None,
            privacy: Privacy::Unknown,
            origin: Origin::Source,
        })
        .collect();
    // De-duplicate ids while keeping them unordered.
    let mut seen = BTreeSet::new();
    let mut categories: Vec<CategoryNode> = categories
        .into_iter()
        .filter(|c| seen.insert(c.id))
        .collect();
    categories.shuffle(&mut rng);
    let ids: Vec<NodeId> = categories.iter().map(|c| c.id).collect();

    let relations: Vec<RelationNode> = (0..m)
        .map(|i| RelationNode {
            id: i as NodeId,
            predicate: format!("p{}", rng.random_range(0..3)),
            features: (0..d_r).map(|_| rng.random_range(-2.0..2.0)).collect(),
            subject_id: ids[rng.random_range(0..ids.len())],
            object_id: ids[rng.random_range(0..ids.len())],
        })
        .collect();

    HeteroSceneGraph {
        dims: Dims {
            category: d_o,
            relation: d_r,
        },
        categories,
        relations,
    }
}

/// All o→o adjacencies by direct enumeration of one-relation compositions,
/// symmetrized, self-entries included.
pub fn brute_force_oo(g: &HeteroSceneGraph) -> BTreeSet<(NodeId, NodeId)> {
    let mut pairs = BTreeSet::new();
    for c in &g.categories {
        pairs.insert((c.id, c.id));
    }
    for r in &g.relations {
        pairs.insert((r.subject_id, r.object_id));
        pairs.insert((r.object_id, r.subject_id));
    }
    pairs
}

/// All r→r adjacencies by enumerating head-to-tail compositions r_i→o→r_j
/// (object of r_i equals subject of r_j), symmetrized, self-entries
/// included.
pub fn brute_force_rr(g: &HeteroSceneGraph) -> BTreeSet<(NodeId, NodeId)> {
    let mut pairs = BTreeSet::new();
    for r in &g.relations {
        pairs.insert((r.id, r.id));
    }
    for a in &g.relations {
        for b in &g.relations {
            if a.id != b.id && a.object_id == b.subject_id {
                pairs.insert((a.id, b.id));
                pairs.insert((b.id, a.id));
            }
        }
    }
    pairs
}

/// o→r incidence pairs by direct scan.
pub fn brute_force_or(g: &HeteroSceneGraph) -> BTreeSet<(NodeId, NodeId)> {
    let mut pairs = BTreeSet::new();
    for r in &g.relations {
        pairs.insert((r.subject_id, r.id));
        pairs.insert((r.object_id, r.id));
    }
    pairs
}

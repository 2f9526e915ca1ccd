//! Synthetic labeled scene graphs whose privacy labels depend only on
//! relational context, never on a node's own features.
//!
//! Every node of a category draws its features from the same distribution
//! (a fixed per-tag embedding plus Gaussian noise), so a features-only
//! classifier can do no better than the class prior. Labels come from a
//! planted [`ContextRule`]: a target-category node is positive exactly when
//! a positive (predicate, neighbor-category) pattern is present and no
//! negative pattern overrides it.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetEntry, LabeledDataset, Split};
use crate::graph::{CategoryNode, Dims, HeteroSceneGraph, NodeId, Origin, Privacy, RelationNode};
use crate::numeric::{derive_seed, fnv1a};

/// Context pattern deciding privacy labels. A pattern pair `(predicate,
/// neighbor_category)` matches a node when some incident relation carries
/// that predicate and its far endpoint has that category. Negative patterns
/// take precedence over positive ones; target nodes matching neither are
/// negative, as are all non-target nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRule {
    pub target_category: String,
    pub positive_pattern: BTreeSet<(String, String)>,
    pub negative_pattern: BTreeSet<(String, String)>,
}

impl ContextRule {
    /// The speaker-vs-passerby analog used as the default planted task.
    pub fn walking_on_street() -> ContextRule {
        ContextRule {
            target_category: "person".into(),
            positive_pattern: BTreeSet::from([("walking-on".into(), "street".into())]),
            negative_pattern: BTreeSet::from([("standing-on".into(), "lectern".into())]),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self
            .positive_pattern
            .intersection(&self.negative_pattern)
            .next()
            .is_some()
        {
            return Err(SynthError::Config(
                "positive and negative patterns must be disjoint".into(),
            ));
        }
        if self.positive_pattern.is_empty() {
            return Err(SynthError::Config(
                "positive pattern must be non-empty".into(),
            ));
        }
        Ok(())
    }

    fn pattern_predicates(&self) -> BTreeSet<&str> {
        self.positive_pattern
            .iter()
            .chain(self.negative_pattern.iter())
            .map(|(p, _)| p.as_str())
            .collect()
    }

    fn neighbor_categories(&self) -> BTreeSet<&str> {
        self.positive_pattern
            .iter()
            .chain(self.negative_pattern.iter())
            .map(|(_, c)| c.as_str())
            .collect()
    }
}

/// Generator configuration. Node and relation counts are inclusive ranges
/// for the pre-planting skeleton; context planting may add a few relations
/// on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_graphs: usize,
    pub nodes_per_graph: (usize, usize),
    pub relations_per_graph: (usize, usize),
    /// Probability that a target-category node receives a positive context.
    pub positive_prior: f64,
    /// Standard deviation of the per-node feature noise.
    pub feature_noise: f64,
    pub seed: u64,
    pub d_category: usize,
    pub d_relation: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_graphs: 500,
            nodes_per_graph: (8, 20),
            relations_per_graph: (6, 25),
            positive_prior: 0.3,
            feature_noise: 0.25,
            seed: 0,
            d_category: 16,
            d_relation: 16,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (nl, nh) = self.nodes_per_graph;
        let (rl, rh) = self.relations_per_graph;
        if nl > nh || nl == 0 {
            return Err(SynthError::Config("nodes_per_graph range is empty".into()));
        }
        if rl > rh {
            return Err(SynthError::Config(
                "relations_per_graph range is empty".into(),
            ));
        }
        if !(self.positive_prior > 0.0 && self.positive_prior < 1.0) {
            return Err(SynthError::Config(
                "positive_prior must lie in (0, 1)".into(),
            ));
        }
        if self.feature_noise < 0.0 {
            return Err(SynthError::Config(
                "feature_noise must be non-negative".into(),
            ));
        }
        if self.d_category == 0 || self.d_relation == 0 {
            return Err(SynthError::Config(
                "feature dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Config(String),
}

/// Fraction of skeleton nodes assigned the target category.
const TARGET_FRACTION: f64 = 0.35;
/// Probability that an unplanted target node receives a negative context.
const NEGATIVE_PLANT_PROB: f64 = 0.5;

const FILLER_CATEGORIES: [&str; 6] = ["tree", "car", "building", "dog", "bench", "sign"];
const FILLER_PREDICATES: [&str; 6] = ["near", "holding", "behind", "beside", "above", "wearing"];

/// Labels for every category node of `g` under `rule`, in storage order.
pub fn oracle_label(g: &HeteroSceneGraph, rule: &ContextRule) -> Vec<(NodeId, bool)> {
    g.categories
        .iter()
        .map(|c| {
            if c.category != rule.target_category {
                return (c.id, false);
            }
            let mut positive = false;
            let mut negative = false;
            for r in &g.relations {
                let far = if r.subject_id == c.id {
                    r.object_id
                } else if r.object_id == c.id {
                    r.subject_id
                } else {
                    continue;
                };
                let far_cat = match g.categories.iter().find(|n| n.id == far) {
                    Some(n) => n.category.as_str(),
                    None => continue,
                };
                let pair = (r.predicate.clone(), far_cat.to_string());
                if rule.negative_pattern.contains(&pair) {
                    negative = true;
                }
                if rule.positive_pattern.contains(&pair) {
                    positive = true;
                }
            }
            (c.id, positive && !negative)
        })
        .collect()
}

/// Overwrite the privacy labels of `g` with the oracle's output.
pub fn relabel(g: &mut HeteroSceneGraph, rule: &ContextRule) {
    let labels = oracle_label(g, rule);
    for (node, (id, label)) in g.categories.iter_mut().zip(labels) {
        debug_assert_eq!(node.id, id);
        node.privacy = Privacy::from_bool(label);
    }
}

/// Fraction of synthetic (augmentation-created) nodes whose stored label
/// disagrees with the structural oracle, the price of perturbing
/// connections during oversampling. `None` when no synthetic nodes exist.
pub fn flipped_clone_fraction(
    ds: &crate::dataset::LabeledDataset,
    rule: &ContextRule,
) -> Option<f64> {
    let mut clones = 0usize;
    let mut flipped = 0usize;
    for e in &ds.entries {
        let oracle: std::collections::BTreeMap<NodeId, bool> =
            oracle_label(&e.graph, rule).into_iter().collect();
        for c in &e.graph.categories {
            if c.origin != Origin::Synthetic {
                continue;
            }
            clones += 1;
            if c.privacy.as_bool() != Some(oracle[&c.id]) {
                flipped += 1;
            }
        }
    }
    (clones > 0).then(|| flipped as f64 / clones as f64)
}

/// Generate a labeled dataset with an 80/20 train/val split. Deterministic
/// for a given `(cfg, rule)`; graphs are built independently from per-index
/// seeds so generation parallelizes without changing the output.
pub fn generate_dataset(cfg: &GenConfig, rule: &ContextRule) -> Result<LabeledDataset, SynthError> {
    cfg.validate()?;
    rule.validate()?;

    let graphs: Vec<HeteroSceneGraph> = (0..cfg.n_graphs)
        .into_par_iter()
        .map(|idx| generate_graph(cfg, rule, derive_seed(cfg.seed, idx as u64)))
        .collect();

    // Shuffled 80/20 assignment, deterministic per seed.
    let mut order: Vec<usize> = (0..cfg.n_graphs).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    order.shuffle(&mut split_rng);
    let train_count = cfg.n_graphs * 8 / 10;
    let mut splits = vec![Split::Val; cfg.n_graphs];
    for &i in order.iter().take(train_count) {
        splits[i] = Split::Train;
    }

    Ok(LabeledDataset {
        entries: graphs
            .into_iter()
            .enumerate()
            .map(|(i, graph)| DatasetEntry {
                name: format!("graph_{i:05}.json"),
                split: splits[i],
                graph,
            })
            .collect(),
    })
}

/// Fixed per-tag embedding, derived from the master seed and the tag alone.
fn tag_embedding(master_seed: u64, kind: &str, tag: &str, dim: usize) -> Vec<f64> {
    let mut key = Vec::with_capacity(kind.len() + tag.len() + 1);
    key.extend_from_slice(kind.as_bytes());
    key.push(b'/');
    key.extend_from_slice(tag.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ fnv1a(&key));
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn noisy(base: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    base.iter()
        .map(|&b| b + noise * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn generate_graph(cfg: &GenConfig, rule: &ContextRule, seed: u64) -> HeteroSceneGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_nodes = rng.random_range(cfg.nodes_per_graph.0..=cfg.nodes_per_graph.1);
    let n_skeleton_rel = rng.random_range(cfg.relations_per_graph.0..=cfg.relations_per_graph.1);

    let neighbor_cats: Vec<&str> = rule.neighbor_categories().into_iter().collect();
    let pattern_preds = rule.pattern_predicates();
    let filler_preds: Vec<&str> = FILLER_PREDICATES
        .iter()
        .copied()
        .filter(|p| !pattern_preds.contains(p))
        .collect();
    let other_cats: Vec<&str> = neighbor_cats
        .iter()
        .copied()
        .chain(FILLER_CATEGORIES.iter().copied())
        .filter(|c| *c != rule.target_category)
        .collect();

    // Category assignment: guarantee one node per pattern neighbor category
    // and at least one target node, then fill the rest.
    let mut cats: Vec<String> = Vec::with_capacity(n_nodes);
    for c in &neighbor_cats {
        if cats.len() < n_nodes {
            cats.push((*c).to_string());
        }
    }
    if cats.len() < n_nodes {
        cats.push(rule.target_category.clone());
    }
    while cats.len() < n_nodes {
        if rng.random_bool(TARGET_FRACTION) {
            cats.push(rule.target_category.clone());
        } else {
            cats.push(other_cats[rng.random_range(0..other_cats.len())].to_string());
        }
    }
    cats.shuffle(&mut rng);

    let categories: Vec<CategoryNode> = cats
        .iter()
        .enumerate()
        .map(|(i, cat)| {
            let base = tag_embedding(cfg.seed, "category", cat, cfg.d_category);
            let x = rng.random_range(0.0..800.0);
            let y = rng.random_range(0.0..800.0);
            let w = rng.random_range(10.0..200.0);
            let h = rng.random_range(10.0..200.0);
            CategoryNode {
                id: i as NodeId,
                category: cat.clone(),
                features: noisy(&base, cfg.feature_noise, &mut rng),
                bbox: Some([x, y, w, h]),
                privacy: Privacy::Unknown,
                origin: Origin::Source,
            }
        })
        .collect();

    let mut relations: Vec<RelationNode> = Vec::new();
    let add_relation = |pred: &str,
                        a: NodeId,
                        b: NodeId,
                        relations: &mut Vec<RelationNode>,
                        rng: &mut ChaCha8Rng| {
        let base = tag_embedding(cfg.seed, "predicate", pred, cfg.d_relation);
        relations.push(RelationNode {
            id: relations.len() as NodeId,
            predicate: pred.to_string(),
            features: noisy(&base, cfg.feature_noise, rng),
            subject_id: a,
            object_id: b,
        });
    };

    // Spanning skeleton first so message passing has routes everywhere.
    for i in 1..n_nodes {
        let other = rng.random_range(0..i) as NodeId;
        let pred = filler_preds[rng.random_range(0..filler_preds.len())];
        if rng.random_bool(0.5) {
            add_relation(pred, i as NodeId, other, &mut relations, &mut rng);
        } else {
            add_relation(pred, other, i as NodeId, &mut relations, &mut rng);
        }
    }
    while relations.len() < n_skeleton_rel.max(n_nodes.saturating_sub(1)) {
        let a = rng.random_range(0..n_nodes);
        let mut b = rng.random_range(0..n_nodes);
        if b == a {
            b = (b + 1) % n_nodes;
        }
        let pred = filler_preds[rng.random_range(0..filler_preds.len())];
        add_relation(pred, a as NodeId, b as NodeId, &mut relations, &mut rng);
    }

    // Plant at most one context pattern per target node.
    let positive_pairs: Vec<&(String, String)> = rule.positive_pattern.iter().collect();
    let negative_pairs: Vec<&(String, String)> = rule.negative_pattern.iter().collect();
    for i in 0..n_nodes {
        if categories[i].category != rule.target_category {
            continue;
        }
        let pair = if rng.random_bool(cfg.positive_prior) {
            Some(positive_pairs[rng.random_range(0..positive_pairs.len())])
        } else if !negative_pairs.is_empty() && rng.random_bool(NEGATIVE_PLANT_PROB) {
            Some(negative_pairs[rng.random_range(0..negative_pairs.len())])
        } else {
            None
        };
        if let Some((pred, neighbor_cat)) = pair {
            let candidates: Vec<NodeId> = categories
                .iter()
                .filter(|c| c.category == *neighbor_cat && c.id != i as NodeId)
                .map(|c| c.id)
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let target = candidates[rng.random_range(0..candidates.len())];
            add_relation(pred, i as NodeId, target, &mut relations, &mut rng);
        }
    }

    let mut g = HeteroSceneGraph {
        dims: Dims {
            category: cfg.d_category,
            relation: cfg.d_relation,
        },
        categories,
        relations,
    };
    relabel(&mut g, rule);
    g
}

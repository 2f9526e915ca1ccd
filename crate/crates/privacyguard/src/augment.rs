//! Class balancing for skewed privacy distributions.
//!
//! [`cpos_augment`] implements contextual perturbation oversampling: it
//! clones privacy-positive nodes together with most of their connections,
//! occasionally rewiring or adding a connection, so the clone sits in a
//! slightly perturbed version of the source context. [`smote_augment`] is
//! the classic feature-interpolation baseline for ablation. Both only ever
//! touch training-split graphs and stop at the smallest clone count that
//! reaches the target ratio.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabeledDataset, Split};
use crate::graph::{CategoryNode, NodeId, Origin, Privacy, RelationNode};
use crate::numeric::derive_seed;

/// Contextual perturbation oversampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CposConfig {
    /// Desired positives / (positives + negatives) over the training split.
    pub target_ratio: f64,
    /// Probability of retaining each of the source's connections.
    pub keep_prob: f64,
    /// Probability of attaching one spurious connection per clone.
    pub extra_edge_prob: f64,
    /// Probability of re-targeting a retained connection.
    pub rewire_prob: f64,
    pub seed: u64,
}

impl Default for CposConfig {
    fn default() -> Self {
        CposConfig {
            target_ratio: 0.5,
            keep_prob: 0.9,
            extra_edge_prob: 0.2,
            rewire_prob: 0.1,
            seed: 0,
        }
    }
}

impl CposConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(self.target_ratio > 0.0 && self.target_ratio <= 0.5) {
            return Err(AugmentError::InvalidConfig(
                "target_ratio must lie in (0, 0.5]".into(),
            ));
        }
        for (name, p) in [
            ("keep_prob", self.keep_prob),
            ("extra_edge_prob", self.extra_edge_prob),
            ("rewire_prob", self.rewire_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AugmentError::InvalidConfig(format!(
                    "{name} must lie in [0, 1]"
                )));
            }
        }
        if self.keep_prob == 0.0 {
            return Err(AugmentError::InvalidConfig(
                "keep_prob must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("dataset has no positive-labeled nodes to oversample")]
    NoMinorityNodes,
    #[error("target ratio {target} is unreachable: {reason}")]
    UnreachableRatio { target: f64, reason: String },
    #[error("SMOTE requires at least k+1 = {needed} positive nodes, found {found}")]
    TooFewNeighbors { needed: usize, found: usize },
    #[error("split has no labeled category nodes")]
    EmptySplit,
}

/// Per-run augmentation report, also emitted as JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub method: String,
    pub clones_added: usize,
    pub ratio_before: f64,
    pub ratio_after: f64,
    /// `(graph file name, clones added to it)` for every modified graph.
    pub per_graph: Vec<(String, usize)>,
    /// Fraction of clones whose label contradicts the structural oracle;
    /// filled by callers that know the generating context rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_flip_fraction: Option<f64>,
}

/// positives / (positives + negatives) among labeled category nodes of `split`.
pub fn class_ratio(ds: &LabeledDataset, split: Split) -> Result<f64, AugmentError> {
    let (pos, neg) = count_labels(ds, split);
    if pos + neg == 0 {
        return Err(AugmentError::EmptySplit);
    }
    Ok(pos as f64 / (pos + neg) as f64)
}

fn count_labels(ds: &LabeledDataset, split: Split) -> (usize, usize) {
    let mut pos = 0;
    let mut neg = 0;
    for e in ds.iter_split(split) {
        for c in &e.graph.categories {
            match c.privacy {
                Privacy::Positive => pos += 1,
                Privacy::Negative => neg += 1,
                Privacy::Unknown => {}
            }
        }
    }
    (pos, neg)
}

/// Smallest clone count `c` with `(pos + c) / (pos + c + neg) >= target`.
fn clones_needed(pos: usize, neg: usize, target: f64) -> usize {
    let mut c = (((target * (pos + neg) as f64) - pos as f64) / (1.0 - target)).ceil();
    if c < 0.0 {
        c = 0.0;
    }
    let mut c = c as usize;
    // Guard against ceil landing one short under float rounding.
    while ((pos + c) as f64) / ((pos + c + neg) as f64) < target {
        c += 1;
    }
    c
}

/// Positions of positive-labeled nodes in the training split, ordered by
/// (entry index, node id). This is the round-robin cloning order.
fn positive_sources(ds: &LabeledDataset) -> Vec<(usize, NodeId)> {
    let mut out = Vec::new();
    for (gi, e) in ds.entries.iter().enumerate() {
        if e.split != Split::Train {
            continue;
        }
        let mut ids: Vec<NodeId> = e
            .graph
            .categories
            .iter()
            .filter(|c| c.privacy == Privacy::Positive)
            .map(|c| c.id)
            .collect();
        ids.sort_unstable();
        out.extend(ids.into_iter().map(|id| (gi, id)));
    }
    out
}

/// Oversample the training split with contextual perturbation clones until
/// its class ratio reaches `cfg.target_ratio`. Validation graphs and source
/// nodes are never modified; the result is deterministic for `(ds, cfg)`.
pub fn cpos_augment(
    ds: &LabeledDataset,
    cfg: &CposConfig,
) -> Result<(LabeledDataset, AugmentSummary), AugmentError> {
    cfg.validate()?;
    let dataset_positives = ds
        .entries
        .iter()
        .flat_map(|e| &e.graph.categories)
        .filter(|c| c.privacy == Privacy::Positive)
        .count();
    if dataset_positives == 0 {
        return Err(AugmentError::NoMinorityNodes);
    }

    let (pos, neg) = count_labels(ds, Split::Train);
    if pos + neg == 0 {
        return Err(AugmentError::UnreachableRatio {
            target: cfg.target_ratio,
            reason: "training split has no labeled nodes".into(),
        });
    }
    let ratio_before = pos as f64 / (pos + neg) as f64;
    let needed = clones_needed(pos, neg, cfg.target_ratio);

    let sources = positive_sources(ds);
    if needed > 0 && sources.is_empty() {
        return Err(AugmentError::UnreachableRatio {
            target: cfg.target_ratio,
            reason: "no positive nodes in the training split".into(),
        });
    }

    let mut out = ds.clone();
    let mut per_graph: Vec<(String, usize)> = Vec::new();
    for k in 0..needed {
        let (gi, source_id) = sources[k % sources.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, k as u64));
        let graph = &mut out.entries[gi].graph;

        let source = graph
            .categories
            .iter()
            .find(|c| c.id == source_id)
            .expect("source id from this graph")
            .clone();
        let clone_id = graph.max_category_id().map_or(0, |m| m + 1);
        graph.categories.push(CategoryNode {
            id: clone_id,
            origin: Origin::Synthetic,
            privacy: Privacy::Positive,
            ..source.clone()
        });

        // Single-layer walk over the source's incident relations, ascending id.
        let mut incident: Vec<RelationNode> = graph
            .relations
            .iter()
            .filter(|r| r.subject_id == source_id || r.object_id == source_id)
            .cloned()
            .collect();
        incident.sort_by_key(|r| r.id);
        let cat_ids: Vec<NodeId> = graph.categories.iter().map(|c| c.id).collect();
        let mut next_rel_id = graph.max_relation_id().map_or(0, |m| m + 1);

        for r in incident {
            if !rng.random_bool(cfg.keep_prob) {
                continue;
            }
            let mut subject = if r.subject_id == source_id {
                clone_id
            } else {
                r.subject_id
            };
            let mut object = if r.object_id == source_id {
                clone_id
            } else {
                r.object_id
            };
            if (subject != clone_id || object != clone_id) && rng.random_bool(cfg.rewire_prob) {
                let new_far = cat_ids[rng.random_range(0..cat_ids.len())];
                if subject == clone_id {
                    object = new_far;
                } else {
                    subject = new_far;
                }
            }
            graph.relations.push(RelationNode {
                id: next_rel_id,
                predicate: r.predicate.clone(),
                features: r.features.clone(),
                subject_id: subject,
                object_id: object,
            });
            next_rel_id += 1;
        }

        if !graph.relations.is_empty() && rng.random_bool(cfg.extra_edge_prob) {
            let mut predicates: Vec<String> = graph
                .relations
                .iter()
                .map(|r| r.predicate.clone())
                .collect();
            predicates.sort();
            predicates.dedup();
            let predicate = predicates[rng.random_range(0..predicates.len())].clone();
            let feature_source = rng.random_range(0..graph.relations.len());
            let features = graph.relations[feature_source].features.clone();
            let far = cat_ids[rng.random_range(0..cat_ids.len())];
            let (subject, object) = if rng.random_bool(0.5) {
                (clone_id, far)
            } else {
                (far, clone_id)
            };
            graph.relations.push(RelationNode {
                id: next_rel_id,
                predicate,
                features,
                subject_id: subject,
                object_id: object,
            });
        }

        bump_count(&mut per_graph, &out.entries[gi].name);
    }

    let ratio_after = class_ratio(&out, Split::Train)?;
    Ok((
        out,
        AugmentSummary {
            method: "cpos".into(),
            clones_added: needed,
            ratio_before,
            ratio_after,
            per_graph,
            label_flip_fraction: None,
        },
    ))
}

/// SMOTE baseline: synthetic features interpolate between a positive seed
/// node and one of its `k` nearest positive neighbors (Euclidean distance,
/// dataset-wide); connections are copied verbatim from the seed.
pub fn smote_augment(
    ds: &LabeledDataset,
    k: usize,
    target_ratio: f64,
    seed: u64,
) -> Result<(LabeledDataset, AugmentSummary), AugmentError> {
    if !(target_ratio > 0.0 && target_ratio <= 0.5) {
        return Err(AugmentError::InvalidConfig(
            "target_ratio must lie in (0, 0.5]".into(),
        ));
    }
    if k == 0 {
        return Err(AugmentError::InvalidConfig("k must be positive".into()));
    }

    // All positive nodes in the dataset form the neighbor pool.
    let mut pool: Vec<(usize, NodeId, Vec<f64>)> = Vec::new();
    for (gi, e) in ds.entries.iter().enumerate() {
        for c in &e.graph.categories {
            if c.privacy == Privacy::Positive {
                pool.push((gi, c.id, c.features.clone()));
            }
        }
    }
    if pool.is_empty() {
        return Err(AugmentError::NoMinorityNodes);
    }
    if pool.len() < k + 1 {
        return Err(AugmentError::TooFewNeighbors {
            needed: k + 1,
            found: pool.len(),
        });
    }

    let (pos, neg) = count_labels(ds, Split::Train);
    if pos + neg == 0 {
        return Err(AugmentError::UnreachableRatio {
            target: target_ratio,
            reason: "training split has no labeled nodes".into(),
        });
    }
    let ratio_before = pos as f64 / (pos + neg) as f64;
    let needed = clones_needed(pos, neg, target_ratio);
    let sources = positive_sources(ds);
    if needed > 0 && sources.is_empty() {
        return Err(AugmentError::UnreachableRatio {
            target: target_ratio,
            reason: "no positive nodes in the training split".into(),
        });
    }

    let mut out = ds.clone();
    let mut per_graph: Vec<(String, usize)> = Vec::new();
    for c in 0..needed {
        let (gi, seed_id) = sources[c % sources.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));

        let seed_features = pool
            .iter()
            .find(|(g, id, _)| *g == gi && *id == seed_id)
            .map(|(_, _, f)| f.clone())
            .expect("seed node is in the pool");
        // k nearest positive neighbors of the seed, excluding itself;
        // ties break on (graph index, node id).
        let mut by_dist: Vec<(f64, usize)> = pool
            .iter()
            .enumerate()
            .filter(|(_, (g, id, _))| !(*g == gi && *id == seed_id))
            .map(|(i, (_, _, f))| (euclidean(&seed_features, f), i))
            .collect();
        by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let pick = by_dist[rng.random_range(0..k.min(by_dist.len()))].1;
        let neighbor_features = &pool[pick].2;

        let u: f64 = rng.random_range(0.0..=1.0);
        let features: Vec<f64> = seed_features
            .iter()
            .zip(neighbor_features)
            .map(|(a, b)| a + u * (b - a))
            .collect();

        let graph = &mut out.entries[gi].graph;
        let template = graph
            .categories
            .iter()
            .find(|c| c.id == seed_id)
            .unwrap()
            .clone();
        let clone_id = graph.max_category_id().map_or(0, |m| m + 1);
        graph.categories.push(CategoryNode {
            id: clone_id,
            features,
            origin: Origin::Synthetic,
            privacy: Privacy::Positive,
            ..template
        });

        let mut incident: Vec<RelationNode> = graph
            .relations
            .iter()
            .filter(|r| r.subject_id == seed_id || r.object_id == seed_id)
            .cloned()
            .collect();
        incident.sort_by_key(|r| r.id);
        let mut next_rel_id = graph.max_relation_id().map_or(0, |m| m + 1);
        for r in incident {
            graph.relations.push(RelationNode {
                id: next_rel_id,
                predicate: r.predicate.clone(),
                features: r.features.clone(),
                subject_id: if r.subject_id == seed_id {
                    clone_id
                } else {
                    r.subject_id
                },
                object_id: if r.object_id == seed_id {
                    clone_id
                } else {
                    r.object_id
                },
            });
            next_rel_id += 1;
        }
        bump_count(&mut per_graph, &out.entries[gi].name);
    }

    let ratio_after = class_ratio(&out, Split::Train)?;
    Ok((
        out,
        AugmentSummary {
            method: "smote".into(),
            clones_added: needed,
            ratio_before,
            ratio_after,
            per_graph,
            label_flip_fraction: None,
        },
    ))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn bump_count(per_graph: &mut Vec<(String, usize)>, name: &str) {
    if let Some(entry) = per_graph.iter_mut().find(|(n, _)| n == name) {
        entry.1 += 1;
    } else {
        per_graph.push((name.to_string(), 1));
    }
}

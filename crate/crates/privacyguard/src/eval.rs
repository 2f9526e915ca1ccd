//! Metrics, model evaluation and the edge-drop robustness probe.
//!
//! All metrics are micro-averaged: confusion counts pool over every labeled
//! node in the split before precision/recall/F1 are formed, so evaluation
//! is invariant to graph file ordering. Zero-denominator cases are defined
//! as 0. A prediction is positive when its probability is ≥ the threshold.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{LabeledDataset, Split};
use crate::graph::HeteroSceneGraph;
use crate::models::{AnyModel, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("threshold must lie strictly inside (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("no labeled nodes to score")]
    NoLabeledNodes,
    #[error("split {0:?} has no graphs")]
    EmptySplit(Split),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Pooled confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_count: u64,
    pub tn: u64,
}

/// Count the confusion cells for probability/label pairs; unknown labels
/// are excluded and the counts sum to the number of labeled nodes.
pub fn confusion_counts(
    probs: &[f64],
    labels: &[Option<bool>],
    threshold: f64,
) -> Result<Counts, EvalError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::InvalidThreshold(threshold));
    }
    debug_assert_eq!(probs.len(), labels.len());
    let mut counts = Counts {
        tp: 0,
        fp: 0,
        fn_count: 0,
        tn: 0,
    };
    let mut labeled = 0u64;
    for (&p, label) in probs.iter().zip(labels) {
        let Some(y) = label else { continue };
        labeled += 1;
        let predicted = p >= threshold;
        match (predicted, *y) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_count += 1,
            (false, false) => counts.tn += 1,
        }
    }
    if labeled == 0 {
        return Err(EvalError::NoLabeledNodes);
    }
    debug_assert_eq!(counts.tp + counts.fp + counts.fn_count + counts.tn, labeled);
    Ok(counts)
}

/// Precision, recall and F1 from confusion counts, with the 0/0 = 0
/// convention for every ratio.
pub fn prf1(tp: u64, fp: u64, fn_count: u64) -> (f64, f64, f64) {
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_count > 0 {
        tp as f64 / (tp + fn_count) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// F1 from already-formed precision and recall, same convention.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Micro-averaged evaluation result for one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_count: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub config_fingerprint: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialization")
    }

    /// Aligned plain-text row: method, precision, recall, F1.
    pub fn table_row(&self) -> String {
        format!(
            "{:<24} {:>9.4} {:>9.4} {:>9.4}",
            self.model, self.precision, self.recall, self.f1
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<24} {:>9} {:>9} {:>9}",
            "Method", "Precision", "Recall", "F1 Score"
        )
    }
}

/// Render reports as one aligned table.
pub fn format_table(reports: &[&MetricsReport]) -> String {
    let mut out = MetricsReport::table_header();
    for r in reports {
        out.push('\n');
        out.push_str(&r.table_row());
    }
    out
}

/// Run the model over every graph of `split` and pool the counts.
/// Deterministic and order-independent: counts are integer sums.
pub fn evaluate_model(
    model: &AnyModel,
    ds: &LabeledDataset,
    split: Split,
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::InvalidThreshold(threshold));
    }
    let entries: Vec<_> = ds.iter_split(split).collect();
    if entries.is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    let per_graph: Result<Vec<(Vec<f64>, Vec<Option<bool>>)>, EvalError> = entries
        .par_iter()
        .map(|e| {
            let prepared = model.prepare(&e.graph)?;
            let probs = model.forward_probs(model.tensors(), &prepared)?;
            Ok((probs, prepared.labels()))
        })
        .collect();
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for (p, l) in per_graph? {
        probs.extend(p);
        labels.extend(l);
    }
    let counts = confusion_counts(&probs, &labels, threshold)?;
    let (precision, recall, f1) = prf1(counts.tp, counts.fp, counts.fn_count);
    Ok(MetricsReport {
        model: model.kind().to_string(),
        tp: counts.tp,
        fp: counts.fp,
        fn_count: counts.fn_count,
        tn: counts.tn,
        precision,
        recall,
        f1,
        threshold,
        n_graphs: entries.len(),
        n_nodes: (counts.tp + counts.fp + counts.fn_count + counts.tn) as usize,
        config_fingerprint: fingerprint(model, split, threshold, entries.len()),
    })
}

fn fingerprint(model: &AnyModel, split: Split, threshold: f64, n_graphs: usize) -> String {
    let dims = model.dims();
    let key = format!(
        "{}|{}x{}x{}x{}x{}|{split:?}|{threshold}|{n_graphs}",
        model.kind(),
        dims.d_category,
        dims.d_relation,
        dims.hidden,
        dims.attn,
        dims.layers
    );
    let digest = Sha256::digest(key.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Drop each relation independently with probability `drop_prob` (which
/// must lie in [0, 1)); category nodes are untouched and the result is
/// valid whenever the input was. Deterministic per seed.
pub fn perturb_edges(g: &HeteroSceneGraph, drop_prob: f64, seed: u64) -> HeteroSceneGraph {
    assert!(
        (0.0..1.0).contains(&drop_prob),
        "drop_prob must lie in [0, 1), got {drop_prob}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = g.clone();
    out.relations = g
        .relations
        .iter()
        .filter(|_| rng.random::<f64>() >= drop_prob)
        .cloned()
        .collect();
    out
}

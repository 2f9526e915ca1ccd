//! Imbalance-compensated loss, exact reverse-mode gradients with a
//! finite-difference checker, Adam, and the deterministic training loop.
//!
//! The loss is class-weighted binary cross-entropy: positives are weighted
//! by clamp(N_neg / N_pos, 1, cap), computed once over the training split
//! so the objective is fixed across epochs. Gradients come from the tape
//! recording of the forward pass; `gradcheck` compares every scalar
//! parameter against central finite differences and is the standing oracle
//! for all four architectures.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabeledDataset, Split};
use crate::eval::{confusion_counts, prf1};
use crate::graph::HeteroSceneGraph;
use crate::models::{cast_tensors, AnyModel, ModelError, PreparedGraph};
use crate::numeric::Real;
use crate::tape::{Tape, Tensors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Graphs per optimizer step.
    pub batch: usize,
    /// Upper clamp for the positive class weight.
    pub pos_weight_cap: f64,
    /// Epochs without monitored-F1 improvement before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 40,
            batch: 8,
            pos_weight_cap: 100.0,
            early_stop_patience: 6,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.pos_weight_cap < 1.0 {
            return Err(TrainError::Config(
                "pos_weight_cap must be at least 1".into(),
            ));
        }
        if self.batch == 0 {
            return Err(TrainError::Config("batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no labeled nodes to compute a loss over")]
    NoLabeledNodes,
    #[error("training split needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("gradcheck requires a positive epsilon")]
    InvalidEpsilon,
    #[error("gradcheck runs at 64-bit precision only")]
    PrecisionRequired,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Loss with per-node contributions retained for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// One entry per labeled node, in input order.
    pub per_node: Vec<f64>,
}

/// Class-weighted binary cross-entropy, averaged over labeled nodes:
/// L = (1/N) Σ [pos_weight·y·(−ln p) + (1−y)·(−ln(1−p))], log arguments
/// clamped at 1e-12. Unknown labels are excluded.
pub fn imbalance_loss(
    probs: &[f64],
    labels: &[Option<bool>],
    pos_weight: f64,
) -> Result<LossValue, TrainError> {
    debug_assert_eq!(probs.len(), labels.len());
    let mut per_node = Vec::new();
    for (&p, label) in probs.iter().zip(labels) {
        let Some(y) = label else { continue };
        let arg = if *y { p } else { 1.0 - p }.max(crate::tape::LOG_CLAMP);
        let w = if *y { pos_weight } else { 1.0 };
        per_node.push(-w * arg.ln());
    }
    if per_node.is_empty() {
        return Err(TrainError::NoLabeledNodes);
    }
    let total = per_node.iter().sum::<f64>() / per_node.len() as f64;
    Ok(LossValue { total, per_node })
}

/// clamp(N_neg / N_pos, 1, cap) over the known labels of `split`.
pub fn pos_weight_for(ds: &LabeledDataset, split: Split, cap: f64) -> Result<f64, TrainError> {
    let mut pos = 0usize;
    let mut neg = 0usize;
    for e in ds.iter_split(split) {
        for c in &e.graph.categories {
            match c.privacy.as_bool() {
                Some(true) => pos += 1,
                Some(false) => neg += 1,
                None => {}
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(TrainError::DegenerateLabels);
    }
    Ok((neg as f64 / pos as f64).clamp(1.0, cap))
}

/// One graph ready for gradient work: its prepared form plus labels aligned
/// to ascending category ids.
pub struct GraphBatchItem {
    pub prepared: PreparedGraph,
    pub labels: Vec<Option<bool>>,
}

impl GraphBatchItem {
    pub fn new(model: &AnyModel, g: &HeteroSceneGraph) -> Result<GraphBatchItem, TrainError> {
        let prepared = model.prepare(g)?;
        let labels = prepared.labels();
        Ok(GraphBatchItem { prepared, labels })
    }
}

/// Mean loss over every labeled node of the batch, through the plain
/// forward pass. This is the reference value finite differences probe.
pub fn batch_loss_value<F: Real>(
    model: &AnyModel,
    tensors: &Tensors<F>,
    batch: &[&GraphBatchItem],
    pos_weight: f64,
) -> Result<f64, TrainError> {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for item in batch {
        let p = model.forward_probs(tensors, &item.prepared)?;
        probs.extend(p.into_iter().map(|v| v.as_f64()));
        labels.extend_from_slice(&item.labels);
    }
    Ok(imbalance_loss(&probs, &labels, pos_weight)?.total)
}

/// Exact reverse-mode gradients of the batch loss with respect to every
/// tensor. Per-graph tapes run independently (parallel when a pool is
/// configured) and fold in graph order, so the result is deterministic.
pub fn gradients<F: Real>(
    model: &AnyModel,
    tensors: &Tensors<F>,
    batch: &[&GraphBatchItem],
    pos_weight: f64,
) -> Result<(f64, Tensors<F>), TrainError> {
    let per_graph: Result<Vec<Option<(F, Tensors<F>, usize)>>, TrainError> = batch
        .par_iter()
        .map(|item| {
            let n_labeled = item.labels.iter().flatten().count();
            if n_labeled == 0 {
                return Ok(None);
            }
            let mut tape = Tape::new();
            let prob_vars = model.tape_probs(&mut tape, tensors, &item.prepared)?;
            let mut terms = Vec::with_capacity(n_labeled);
            for (&p, label) in prob_vars.iter().zip(&item.labels) {
                if let Some(y) = label {
                    let w = if *y { F::of(pos_weight) } else { F::one() };
                    terms.push(tape.bce_loss(p, *y, w));
                }
            }
            let sum = tape.sum_scalars(terms);
            let grads = tape.backward(sum, tensors);
            Ok(Some((tape.scalar_value(sum), grads, n_labeled)))
        })
        .collect();

    let mut total_nodes = 0usize;
    let mut loss_sum = 0.0f64;
    let mut acc: Tensors<F> = tensors
        .iter()
        .map(|t| ndarray::Array2::zeros(t.dim()))
        .collect();
    for part in per_graph?.into_iter().flatten() {
        let (l, grads, n) = part;
        loss_sum += l.as_f64();
        total_nodes += n;
        for (a, g) in acc.iter_mut().zip(&grads) {
            *a += g;
        }
    }
    if total_nodes == 0 {
        return Err(TrainError::NoLabeledNodes);
    }
    let scale = F::of(1.0 / total_nodes as f64);
    for a in &mut acc {
        a.mapv_inplace(|v| v * scale);
    }
    for (spec, g) in model.tensor_specs().iter().zip(&acc) {
        if g.iter().any(|v| !v.as_f64().is_finite()) {
            return Err(TrainError::NonFiniteGradient(spec.name.clone()));
        }
    }
    Ok((loss_sum / total_nodes as f64, acc))
}

/// Batch gradients at full precision.
pub fn compute_gradients(
    model: &AnyModel,
    batch: &[&GraphBatchItem],
    pos_weight: f64,
) -> Result<(f64, Tensors<f64>), TrainError> {
    gradients(model, model.tensors(), batch, pos_weight)
}

/// Compare every analytic gradient entry against a central finite
/// difference of the loss; returns the maximum relative error
/// |a − n| / max(|a|, |n|, 1e-8). Runs at 64-bit precision.
pub fn gradcheck(
    model: &AnyModel,
    graph: &HeteroSceneGraph,
    pos_weight: f64,
    epsilon: f64,
) -> Result<f64, TrainError> {
    if !(epsilon > 0.0) {
        return Err(TrainError::InvalidEpsilon);
    }
    let item = GraphBatchItem::new(model, graph)?;
    let batch = [&item];
    let (_, analytic) = gradients(model, model.tensors(), &batch, pos_weight)?;

    let mut tensors = model.tensors().clone();
    let mut max_err = 0.0f64;
    for t in 0..tensors.len() {
        for r in 0..tensors[t].nrows() {
            for c in 0..tensors[t].ncols() {
                let orig = tensors[t][(r, c)];
                tensors[t][(r, c)] = orig + epsilon;
                let hi = batch_loss_value(model, &tensors, &batch, pos_weight)?;
                tensors[t][(r, c)] = orig - epsilon;
                let lo = batch_loss_value(model, &tensors, &batch, pos_weight)?;
                tensors[t][(r, c)] = orig;
                let numeric = (hi - lo) / (2.0 * epsilon);
                let a = analytic[t][(r, c)];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                max_err = max_err.max(err);
            }
        }
    }
    Ok(max_err)
}

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct Adam<F: Real> {
    m: Tensors<F>,
    v: Tensors<F>,
    t: u64,
    lr: F,
}

impl<F: Real> Adam<F> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(tensors: &Tensors<F>, lr: f64) -> Adam<F> {
        Adam {
            m: tensors
                .iter()
                .map(|t| ndarray::Array2::zeros(t.dim()))
                .collect(),
            v: tensors
                .iter()
                .map(|t| ndarray::Array2::zeros(t.dim()))
                .collect(),
            t: 0,
            lr: F::of(lr),
        }
    }

    pub fn step(&mut self, tensors: &mut Tensors<F>, grads: &Tensors<F>) {
        self.t += 1;
        let b1 = F::of(Self::BETA1);
        let b2 = F::of(Self::BETA2);
        let eps = F::of(Self::EPS);
        let c1 = F::of(1.0 / (1.0 - Self::BETA1.powi(self.t as i32)));
        let c2 = F::of(1.0 / (1.0 - Self::BETA2.powi(self.t as i32)));
        for ((th, m), (v, g)) in tensors
            .iter_mut()
            .zip(&mut self.m)
            .zip(self.v.iter_mut().zip(grads))
        {
            ndarray::Zip::from(th)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|th, m, v, g| {
                    *m = b1 * *m + (F::one() - b1) * *g;
                    *v = b2 * *v + (F::one() - b2) * *g * *g;
                    let m_hat = *m * c1;
                    let v_hat = *v * c2;
                    *th = *th - self.lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub pos_weight: f64,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

impl TrainLog {
    /// JSON-lines rendering, one record per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("epoch record serialization"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Everything except wall-clock timings; equal across identical runs.
    pub fn deterministic_view(&self) -> Vec<(usize, f64, f64, f64, f64)> {
        self.epochs
            .iter()
            .map(|e| (e.epoch, e.loss, e.val_precision, e.val_recall, e.val_f1))
            .collect()
    }
}

pub struct TrainOutcome {
    pub model: AnyModel,
    pub log: TrainLog,
}

/// Train `model` on the dataset's training split with Adam and early
/// stopping on validation F1 (threshold 0.5), returning the
/// best-validation-F1 parameters. Fully deterministic for a given
/// (dataset, config, initial model).
pub fn train(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    model: AnyModel,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F64 => train_impl::<f64>(ds, cfg, model),
        Precision::F32 => train_impl::<f32>(ds, cfg, model),
    }
}

fn train_impl<F: Real>(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    mut model: AnyModel,
) -> Result<TrainOutcome, TrainError> {
    let pos_weight = pos_weight_for(ds, Split::Train, cfg.pos_weight_cap)?;

    let train_items: Result<Vec<GraphBatchItem>, TrainError> = ds
        .iter_split(Split::Train)
        .map(|e| GraphBatchItem::new(&model, &e.graph))
        .collect();
    let train_items = train_items?;
    let val_items: Result<Vec<GraphBatchItem>, TrainError> = ds
        .iter_split(Split::Val)
        .map(|e| GraphBatchItem::new(&model, &e.graph))
        .collect();
    let val_items = val_items?;
    // Monitor the validation split when it has labels, else the train split.
    let monitor: &[GraphBatchItem] = if val_items
        .iter()
        .any(|i| i.labels.iter().any(Option::is_some))
    {
        &val_items
    } else {
        &train_items
    };

    let mut tensors: Tensors<F> = cast_tensors(model.tensors());
    let mut adam = Adam::new(&tensors, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog {
        pos_weight,
        ..TrainLog::default()
    };
    let mut best: Option<(usize, f64, Tensors<F>)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        order.shuffle(&mut rng);

        let mut step_losses = Vec::new();
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&GraphBatchItem> = chunk.iter().map(|&i| &train_items[i]).collect();
            let (loss, grads) = gradients(&model, &tensors, &batch, pos_weight)?;
            adam.step(&mut tensors, &grads);
            step_losses.push(loss);
        }
        let epoch_loss = step_losses.iter().sum::<f64>() / step_losses.len().max(1) as f64;

        let (precision, recall, f1) = split_metrics(&model, &tensors, monitor)?;
        log.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            val_precision: precision,
            val_recall: recall,
            val_f1: f1,
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().map_or(true, |(_, best_f1, _)| f1 > *best_f1);
        if improved {
            best = Some((epoch, f1, tensors.clone()));
        } else if let Some((best_epoch, _, _)) = best {
            if epoch - best_epoch >= cfg.early_stop_patience {
                break;
            }
        }
    }

    if let Some((best_epoch, best_f1, best_tensors)) = best {
        log.best_epoch = best_epoch;
        log.best_val_f1 = best_f1;
        *model.tensors_mut() = cast_tensors(&best_tensors);
    }
    Ok(TrainOutcome { model, log })
}

fn split_metrics<F: Real>(
    model: &AnyModel,
    tensors: &Tensors<F>,
    items: &[GraphBatchItem],
) -> Result<(f64, f64, f64), TrainError> {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for item in items {
        probs.extend(
            model
                .forward_probs(tensors, &item.prepared)?
                .into_iter()
                .map(|p| p.as_f64()),
        );
        labels.extend_from_slice(&item.labels);
    }
    match confusion_counts(&probs, &labels, 0.5) {
        Ok(counts) => Ok(prf1(counts.tp, counts.fp, counts.fn_count)),
        Err(_) => Ok((0.0, 0.0, 0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{CategoryNode, Dims, Origin, Privacy};
    use crate::models::{ModelDims, ModelKind};
    use crate::synthgen::{generate_dataset, ContextRule, GenConfig};

    fn labeled_node(id: u32, privacy: Privacy) -> CategoryNode {
        CategoryNode {
            id,
            category: "person".into(),
            features: vec![0.25, -0.5],
            bbox: None,
            privacy,
            origin: Origin::Source,
        }
    }

    #[test]
    fn loss_symmetric_half_probability_is_ln_two() {
        let l = imbalance_loss(&[0.5, 0.5], &[Some(true), Some(false)], 1.0).unwrap();
        assert!((l.total - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(l.per_node.len(), 2);
    }

    #[test]
    fn loss_perfect_predictions_vanish() {
        let l = imbalance_loss(&[1.0 - 1e-15, 1e-15], &[Some(true), Some(false)], 1.0).unwrap();
        assert!(l.total.abs() < 1e-9);
    }

    #[test]
    fn loss_weighted_example() {
        // pos_weight 3, y = [1, 0], p = [0.8, 0.2]:
        // L = (3·0.223144 + 0.223144) / 2 = 0.446287.
        let l = imbalance_loss(&[0.8, 0.2], &[Some(true), Some(false)], 3.0).unwrap();
        assert!((l.total - 0.446287).abs() < 1e-6);
    }

    #[test]
    fn loss_with_unit_weight_is_plain_bce() {
        let probs = [0.9, 0.3, 0.6, 0.2];
        let labels = [Some(true), Some(false), None, Some(true)];
        let l = imbalance_loss(&probs, &labels, 1.0).unwrap();
        let expected = (-(0.9f64.ln()) - (0.7f64.ln()) - (0.2f64.ln())) / 3.0;
        assert_eq!(l.total, expected);
    }

    #[test]
    fn loss_requires_labels() {
        assert!(matches!(
            imbalance_loss(&[0.5], &[None], 1.0),
            Err(TrainError::NoLabeledNodes)
        ));
    }

    #[test]
    fn loss_is_invariant_under_node_permutation() {
        let rule = ContextRule::walking_on_street();
        let cfg = GenConfig {
            n_graphs: 1,
            seed: 8,
            ..GenConfig::default()
        };
        let g = generate_dataset(&cfg, &rule).unwrap().entries[0]
            .graph
            .clone();
        let dims = ModelDims {
            d_category: 16,
            d_relation: 16,
            hidden: 4,
            attn: 3,
            layers: 1,
        };
        let model = AnyModel::init(ModelKind::Hgr, &dims, 3).unwrap();

        let loss_of = |g: &HeteroSceneGraph| {
            let item = GraphBatchItem::new(&model, g).unwrap();
            batch_loss_value(&model, model.tensors(), &[&item], 2.0).unwrap()
        };
        let base = loss_of(&g);
        let mut permuted = g.clone();
        let n = permuted.categories.len() as u32;
        for c in &mut permuted.categories {
            c.id = (c.id * 13 + 5) % (13 * n); // injective on 0..n for prime 13
        }
        for r in &mut permuted.relations {
            r.subject_id = (r.subject_id * 13 + 5) % (13 * n);
            r.object_id = (r.object_id * 13 + 5) % (13 * n);
        }
        assert!((base - loss_of(&permuted)).abs() < 1e-12);
    }

    #[test]
    fn head_bias_gradient_is_probability_minus_label() {
        // Zero head ⇒ p = 0.5; single positive node ⇒ ∂L/∂b_head = p − y.
        let g = HeteroSceneGraph {
            dims: Dims {
                category: 2,
                relation: 2,
            },
            categories: vec![labeled_node(0, Privacy::Positive)],
            relations: vec![],
        };
        let dims = ModelDims {
            d_category: 2,
            d_relation: 2,
            hidden: 3,
            attn: 2,
            layers: 1,
        };
        for kind in [
            ModelKind::Hgr,
            ModelKind::Gcn,
            ModelKind::Gat,
            ModelKind::Mlp,
        ] {
            let mut model = AnyModel::init(kind, &dims, 1).unwrap();
            let n = model.tensors().len();
            model.tensors_mut()[n - 2].fill(0.0); // head weight
            model.tensors_mut()[n - 1].fill(0.0); // head bias
            let item = GraphBatchItem::new(&model, &g).unwrap();
            let (_, grads) = compute_gradients(&model, &[&item], 1.0).unwrap();
            assert_eq!(grads[n - 1][(0, 0)], -0.5, "{kind}");
        }
    }

    #[test]
    fn unused_tensors_get_finite_zero_gradients() {
        // A graph with no relations never exercises W2/W5/W6 beyond empty
        // paths; their gradients must still be defined and finite.
        let g = HeteroSceneGraph {
            dims: Dims {
                category: 2,
                relation: 2,
            },
            categories: vec![
                labeled_node(0, Privacy::Positive),
                labeled_node(1, Privacy::Negative),
            ],
            relations: vec![],
        };
        let dims = ModelDims {
            d_category: 2,
            d_relation: 2,
            hidden: 3,
            attn: 2,
            layers: 2,
        };
        let model = AnyModel::init(ModelKind::Hgr, &dims, 4).unwrap();
        let item = GraphBatchItem::new(&model, &g).unwrap();
        let (_, grads) = compute_gradients(&model, &[&item], 1.0).unwrap();
        for (spec, g) in model.tensor_specs().iter().zip(&grads) {
            assert!(g.iter().all(|v| v.is_finite()), "{}", spec.name);
            if spec.name.contains("w2") || spec.name.contains("w5") || spec.name.contains("w6") {
                assert!(g.iter().all(|&v| v == 0.0), "{}", spec.name);
            }
        }
    }

    #[test]
    fn gradcheck_uniform_attention_degenerate_model() {
        // Zeroed attention vectors make every α exactly uniform and the
        // remaining chain linear in the transforms. Finite differences are
        // probed away from the attention vectors' LeakyReLU kink at zero.
        let rule = ContextRule::walking_on_street();
        let cfg = GenConfig {
            n_graphs: 1,
            nodes_per_graph: (5, 5),
            relations_per_graph: (4, 4),
            seed: 2,
            d_category: 3,
            d_relation: 3,
            ..GenConfig::default()
        };
        let g = generate_dataset(&cfg, &rule).unwrap().entries[0]
            .graph
            .clone();
        let dims = ModelDims {
            d_category: 3,
            d_relation: 3,
            hidden: 4,
            attn: 3,
            layers: 1,
        };
        let mut model = AnyModel::init(ModelKind::Hgr, &dims, 5).unwrap();
        let attention_tensors: Vec<usize> = model
            .tensor_specs()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.name.contains(".a_"))
            .map(|(i, _)| i)
            .collect();
        for &i in &attention_tensors {
            model.tensors_mut()[i].fill(0.0);
        }

        let item = GraphBatchItem::new(&model, &g).unwrap();
        let (_, analytic) = compute_gradients(&model, &[&item], 1.5).unwrap();
        let mut tensors = model.tensors().clone();
        let eps = 1e-6;
        let mut max_err = 0.0f64;
        for t in 0..tensors.len() {
            if attention_tensors.contains(&t) {
                continue;
            }
            for r in 0..tensors[t].nrows() {
                for c in 0..tensors[t].ncols() {
                    let orig = tensors[t][(r, c)];
                    tensors[t][(r, c)] = orig + eps;
                    let hi = batch_loss_value(&model, &tensors, &[&item], 1.5).unwrap();
                    tensors[t][(r, c)] = orig - eps;
                    let lo = batch_loss_value(&model, &tensors, &[&item], 1.5).unwrap();
                    tensors[t][(r, c)] = orig;
                    let numeric = (hi - lo) / (2.0 * eps);
                    let a = analytic[t][(r, c)];
                    max_err =
                        max_err.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
                }
            }
        }
        assert!(max_err < 1e-6, "max relative error {max_err}");
    }

    #[test]
    fn gradcheck_full_models_small() {
        let rule = ContextRule::walking_on_street();
        let cfg = GenConfig {
            n_graphs: 1,
            nodes_per_graph: (6, 6),
            relations_per_graph: (5, 9),
            seed: 103,
            d_category: 3,
            d_relation: 3,
            ..GenConfig::default()
        };
        let g = generate_dataset(&cfg, &rule).unwrap().entries[0]
            .graph
            .clone();
        let dims = ModelDims {
            d_category: 3,
            d_relation: 3,
            hidden: 4,
            attn: 3,
            layers: 2,
        };
        for kind in [
            ModelKind::Hgr,
            ModelKind::Gcn,
            ModelKind::Gat,
            ModelKind::Mlp,
        ] {
            for seed in [0, 1] {
                let model = AnyModel::init(kind, &dims, seed).unwrap();
                // 1e-4 keeps the central difference above the f64 noise
                // floor at coordinates whose true gradient vanishes.
                let err = gradcheck(&model, &g, 2.0, 1e-4).unwrap();
                assert!(err < 1e-4, "{kind} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn gradcheck_rejects_zero_epsilon() {
        let g = HeteroSceneGraph {
            dims: Dims {
                category: 2,
                relation: 2,
            },
            categories: vec![labeled_node(0, Privacy::Positive)],
            relations: vec![],
        };
        let dims = ModelDims {
            d_category: 2,
            d_relation: 2,
            hidden: 2,
            attn: 2,
            layers: 1,
        };
        let model = AnyModel::init(ModelKind::Mlp, &dims, 0).unwrap();
        assert!(matches!(
            gradcheck(&model, &g, 1.0, 0.0),
            Err(TrainError::InvalidEpsilon)
        ));
    }

    fn tiny_task(seed: u64) -> LabeledDataset {
        let rule = ContextRule::walking_on_street();
        let cfg = GenConfig {
            n_graphs: 40,
            nodes_per_graph: (6, 10),
            relations_per_graph: (5, 10),
            seed,
            d_category: 8,
            d_relation: 8,
            ..GenConfig::default()
        };
        generate_dataset(&cfg, &rule).unwrap()
    }

    fn tiny_dims() -> ModelDims {
        ModelDims {
            d_category: 8,
            d_relation: 8,
            hidden: 8,
            attn: 4,
            layers: 2,
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let ds = tiny_task(1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let init = AnyModel::init(ModelKind::Hgr, &tiny_dims(), 9).unwrap();
        let out = train(&ds, &cfg, init.clone()).unwrap();
        assert_eq!(out.model, init);
        assert!(out.log.epochs.is_empty());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let ds = tiny_task(2);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        let init = AnyModel::init(ModelKind::Hgr, &tiny_dims(), 7).unwrap();
        let a = train(&ds, &cfg, init.clone()).unwrap();
        let b = train(&ds, &cfg, init).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log.deterministic_view(), b.log.deterministic_view());
    }

    #[test]
    fn training_loss_decreases_early_for_most_seeds() {
        let ds = tiny_task(3);
        let mut decreasing = 0;
        for seed in 0..5u64 {
            // Recorded fixture: at 3e-3 every seed of this task descends
            // monotonically through epoch 5.
            let cfg = TrainConfig {
                epochs: 5,
                seed,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            };
            let init = AnyModel::init(ModelKind::Hgr, &tiny_dims(), seed).unwrap();
            let out = train(&ds, &cfg, init).unwrap();
            let losses: Vec<f64> = out.log.epochs.iter().map(|e| e.loss).collect();
            if losses.windows(2).all(|w| w[1] < w[0]) {
                decreasing += 1;
            }
        }
        assert!(
            decreasing >= 4,
            "only {decreasing}/5 seeds had strictly decreasing loss"
        );
    }

    #[test]
    fn training_rejects_degenerate_labels() {
        let mut ds = tiny_task(4);
        for e in &mut ds.entries {
            for c in &mut e.graph.categories {
                c.privacy = Privacy::Negative;
            }
        }
        let cfg = TrainConfig::default();
        let init = AnyModel::init(ModelKind::Hgr, &tiny_dims(), 0).unwrap();
        assert!(matches!(
            train(&ds, &cfg, init),
            Err(TrainError::DegenerateLabels)
        ));
    }

    #[test]
    fn f32_training_runs_and_stays_finite() {
        let ds = tiny_task(5);
        let cfg = TrainConfig {
            epochs: 2,
            precision: Precision::F32,
            ..TrainConfig::default()
        };
        let init = AnyModel::init(ModelKind::Hgr, &tiny_dims(), 2).unwrap();
        let out = train(&ds, &cfg, init).unwrap();
        assert!(out.model.tensors().iter().flatten().all(|v| v.is_finite()));
        assert_eq!(out.log.epochs.len(), 2);
        // Parameters live on the f32 grid.
        for t in out.model.tensors() {
            for &v in t {
                assert_eq!(v, v as f32 as f64);
            }
        }
    }
}

//! Model registry: shared dimensions, tensor layout descriptions, Glorot
//! initialization, the unified model enum and the checkpoint file format.
//!
//! A checkpoint is a single JSON document: a header (format version, model
//! kind, dims, seed, training metadata) followed by every tensor as a flat
//! array in declared order, with full round-trip float precision.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, GatParams, GcnParams, HomoGraph, MlpParams};
use crate::graph::{GraphError, HeteroSceneGraph, HybridGraph, NodeId};
use crate::hgr::{self, HgrParams};
use crate::numeric::glorot_uniform;
use crate::tape::{Tape, Tensors, VarId};

/// Dimensions shared by every model kind. `attn` is only used by the hybrid
/// graph network's semantic level; `layers` is ignored by the MLP (one
/// hidden layer by construction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_category: usize,
    pub d_relation: usize,
    pub hidden: usize,
    pub attn: usize,
    pub layers: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("d_category", self.d_category),
            ("d_relation", self.d_relation),
            ("hidden", self.hidden),
            ("attn", self.attn),
            ("layers", self.layers),
        ] {
            if v == 0 {
                return Err(ModelError::Dim(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("graph has no {0} nodes")]
    EmptyGraphKind(crate::graph::NodeKind),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Shape and initialization recipe for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub zero_init: bool,
}

impl TensorSpec {
    pub fn matrix(name: impl Into<String>, rows: usize, cols: usize) -> TensorSpec {
        TensorSpec {
            name: name.into(),
            rows,
            cols,
            fan_in: cols,
            fan_out: rows,
            zero_init: false,
        }
    }

    /// Column vector scored against activations (attention vectors, heads).
    pub fn score_vector(name: impl Into<String>, len: usize) -> TensorSpec {
        TensorSpec {
            name: name.into(),
            rows: len,
            cols: 1,
            fan_in: len,
            fan_out: 1,
            zero_init: false,
        }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> TensorSpec {
        TensorSpec {
            name: name.into(),
            rows: len,
            cols: 1,
            fan_in: len,
            fan_out: 1,
            zero_init: true,
        }
    }
}

/// Glorot-uniform tensors (biases zero), deterministic per seed.
pub fn init_tensors(specs: &[TensorSpec], seed: u64) -> Tensors<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    specs
        .iter()
        .map(|s| {
            if s.zero_init {
                Array2::zeros((s.rows, s.cols))
            } else {
                glorot_uniform(&mut rng, s.rows, s.cols, s.fan_in, s.fan_out)
            }
        })
        .collect()
}

/// Check a tensor list against its layout description.
pub fn check_tensors(specs: &[TensorSpec], tensors: &Tensors<f64>) -> Result<(), ModelError> {
    if specs.len() != tensors.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} tensors, found {}",
            specs.len(),
            tensors.len()
        )));
    }
    for (s, t) in specs.iter().zip(tensors) {
        if t.dim() != (s.rows, s.cols) {
            return Err(ModelError::Checkpoint(format!(
                "tensor {} has shape {:?}, expected ({}, {})",
                s.name,
                t.dim(),
                s.rows,
                s.cols
            )));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Checkpoint(format!(
                "tensor {} has non-finite entries",
                s.name
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hgr,
    Gcn,
    Gat,
    Mlp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Hgr => write!(f, "hgr"),
            ModelKind::Gcn => write!(f, "gcn"),
            ModelKind::Gat => write!(f, "gat"),
            ModelKind::Mlp => write!(f, "mlp"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hgr" => Ok(ModelKind::Hgr),
            "gcn" => Ok(ModelKind::Gcn),
            "gat" => Ok(ModelKind::Gat),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(ModelError::Checkpoint(format!(
                "unknown model kind {other:?}"
            ))),
        }
    }
}

/// Graph representation a model consumes, derived once per graph.
#[derive(Debug, Clone)]
pub enum PreparedGraph {
    Hybrid(HybridGraph),
    Homo(HomoGraph),
    /// Features-only models read the scene graph directly.
    Plain(HeteroSceneGraph),
}

impl PreparedGraph {
    /// Category node ids in ascending order, the alignment of all forward
    /// outputs.
    pub fn category_ids(&self) -> Vec<NodeId> {
        match self {
            PreparedGraph::Hybrid(h) => h.category_ids().to_vec(),
            PreparedGraph::Homo(h) => h.category_ids().to_vec(),
            PreparedGraph::Plain(g) => {
                let mut ids: Vec<NodeId> = g.categories.iter().map(|c| c.id).collect();
                ids.sort_unstable();
                ids
            }
        }
    }

    /// Known privacy labels aligned to `category_ids`.
    pub fn labels(&self) -> Vec<Option<bool>> {
        let base = match self {
            PreparedGraph::Hybrid(h) => &h.base,
            PreparedGraph::Homo(h) => h.base(),
            PreparedGraph::Plain(g) => g,
        };
        let mut pairs: Vec<(NodeId, Option<bool>)> = base
            .categories
            .iter()
            .map(|c| (c.id, c.privacy.as_bool()))
            .collect();
        pairs.sort_by_key(|(id, _)| *id);
        pairs.into_iter().map(|(_, l)| l).collect()
    }
}

/// Any trainable model, dispatching the four architectures behind one API.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Hgr(HgrParams),
    Gcn(GcnParams),
    Gat(GatParams),
    Mlp(MlpParams),
}

impl AnyModel {
    pub fn init(kind: ModelKind, dims: &ModelDims, seed: u64) -> Result<AnyModel, ModelError> {
        dims.validate()?;
        Ok(match kind {
            ModelKind::Hgr => AnyModel::Hgr(hgr::init_params(dims, seed)?),
            ModelKind::Gcn => AnyModel::Gcn(baselines::init_gcn(dims, seed)?),
            ModelKind::Gat => AnyModel::Gat(baselines::init_gat(dims, seed)?),
            ModelKind::Mlp => AnyModel::Mlp(baselines::init_mlp(dims, seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Hgr(_) => ModelKind::Hgr,
            AnyModel::Gcn(_) => ModelKind::Gcn,
            AnyModel::Gat(_) => ModelKind::Gat,
            AnyModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn dims(&self) -> &ModelDims {
        match self {
            AnyModel::Hgr(p) => &p.dims,
            AnyModel::Gcn(p) => &p.dims,
            AnyModel::Gat(p) => &p.dims,
            AnyModel::Mlp(p) => &p.dims,
        }
    }

    pub fn tensors(&self) -> &Tensors<f64> {
        match self {
            AnyModel::Hgr(p) => &p.tensors,
            AnyModel::Gcn(p) => &p.tensors,
            AnyModel::Gat(p) => &p.tensors,
            AnyModel::Mlp(p) => &p.tensors,
        }
    }

    pub fn tensors_mut(&mut self) -> &mut Tensors<f64> {
        match self {
            AnyModel::Hgr(p) => &mut p.tensors,
            AnyModel::Gcn(p) => &mut p.tensors,
            AnyModel::Gat(p) => &mut p.tensors,
            AnyModel::Mlp(p) => &mut p.tensors,
        }
    }

    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let dims = self.dims();
        match self.kind() {
            ModelKind::Hgr => hgr::tensor_specs(dims),
            ModelKind::Gcn => baselines::gcn_tensor_specs(dims),
            ModelKind::Gat => baselines::gat_tensor_specs(dims),
            ModelKind::Mlp => baselines::mlp_tensor_specs(dims),
        }
    }

    /// Derive the representation this model's forward pass consumes.
    pub fn prepare(&self, g: &HeteroSceneGraph) -> Result<PreparedGraph, ModelError> {
        prepare_for(self.kind(), g)
    }

    /// Per-category-node probabilities aligned to the prepared graph's
    /// ascending category ids.
    pub fn forward_probs<F: crate::numeric::Real>(
        &self,
        tensors: &Tensors<F>,
        prepared: &PreparedGraph,
    ) -> Result<Vec<F>, ModelError> {
        match (self, prepared) {
            (AnyModel::Hgr(p), PreparedGraph::Hybrid(h)) => hgr::forward_probs(tensors, &p.dims, h),
            (AnyModel::Gcn(p), PreparedGraph::Homo(h)) => {
                baselines::gcn_forward_probs(tensors, &p.dims, h)
            }
            (AnyModel::Gat(p), PreparedGraph::Homo(h)) => {
                baselines::gat_forward_probs(tensors, &p.dims, h)
            }
            (AnyModel::Mlp(p), PreparedGraph::Plain(g)) => {
                baselines::mlp_forward_probs(tensors, &p.dims, g)
            }
            _ => Err(ModelError::Dim(
                "prepared graph does not match model kind".into(),
            )),
        }
    }

    /// Record per-node probability variables on a tape for gradient work.
    pub fn tape_probs<F: crate::numeric::Real>(
        &self,
        tape: &mut Tape<F>,
        tensors: &Tensors<F>,
        prepared: &PreparedGraph,
    ) -> Result<Vec<VarId>, ModelError> {
        match (self, prepared) {
            (AnyModel::Hgr(p), PreparedGraph::Hybrid(h)) => {
                hgr::tape_probs(tape, tensors, &p.dims, h)
            }
            (AnyModel::Gcn(p), PreparedGraph::Homo(h)) => {
                baselines::gcn_tape_probs(tape, tensors, &p.dims, h)
            }
            (AnyModel::Gat(p), PreparedGraph::Homo(h)) => {
                baselines::gat_tape_probs(tape, tensors, &p.dims, h)
            }
            (AnyModel::Mlp(p), PreparedGraph::Plain(g)) => {
                baselines::mlp_tape_probs(tape, tensors, &p.dims, g)
            }
            _ => Err(ModelError::Dim(
                "prepared graph does not match model kind".into(),
            )),
        }
    }

    /// Convenience: prepare + forward, pairing probabilities with node ids.
    pub fn predict(&self, g: &HeteroSceneGraph) -> Result<Vec<(NodeId, f64)>, ModelError> {
        let prepared = self.prepare(g)?;
        let probs = self.forward_probs(self.tensors(), &prepared)?;
        Ok(prepared.category_ids().into_iter().zip(probs).collect())
    }
}

pub fn prepare_for(kind: ModelKind, g: &HeteroSceneGraph) -> Result<PreparedGraph, ModelError> {
    Ok(match kind {
        ModelKind::Hgr => PreparedGraph::Hybrid(g.derive_hybrid()?),
        ModelKind::Gcn | ModelKind::Gat => PreparedGraph::Homo(baselines::homogenize(g)?),
        ModelKind::Mlp => PreparedGraph::Plain(g.clone()),
    })
}

// --- checkpoint format -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    model: ModelKind,
    dims: ModelDims,
    seed: u64,
    #[serde(default)]
    metadata: serde_json::Value,
    tensors: Vec<TensorDoc>,
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

/// Serialize a model (plus free-form training metadata) to checkpoint JSON.
pub fn checkpoint_to_json(model: &AnyModel, seed: u64, metadata: serde_json::Value) -> String {
    let specs = model.tensor_specs();
    let doc = CheckpointDoc {
        format_version: 1,
        model: model.kind(),
        dims: *model.dims(),
        seed,
        metadata,
        tensors: specs
            .iter()
            .zip(model.tensors())
            .map(|(s, t)| TensorDoc {
                name: s.name.clone(),
                shape: [s.rows, s.cols],
                data: t.iter().copied().collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("checkpoint serialization")
}

/// Parse and verify a checkpoint document.
pub fn checkpoint_from_json(text: &str) -> Result<AnyModel, ModelError> {
    let doc: CheckpointDoc =
        serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if doc.format_version != 1 {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format version {}",
            doc.format_version
        )));
    }
    let mut model = AnyModel::init(doc.model, &doc.dims, 0)?;
    let specs = model.tensor_specs();
    if specs.len() != doc.tensors.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} tensors for {} model, found {}",
            specs.len(),
            doc.model,
            doc.tensors.len()
        )));
    }
    let tensors: Result<Tensors<f64>, ModelError> = specs
        .iter()
        .zip(doc.tensors)
        .map(|(s, t)| {
            if t.name != s.name || t.shape != [s.rows, s.cols] {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {} (shape {:?}) does not match expected {} ({}, {})",
                    t.name, t.shape, s.name, s.rows, s.cols
                )));
            }
            Array2::from_shape_vec((s.rows, s.cols), t.data)
                .map_err(|e| ModelError::Checkpoint(e.to_string()))
        })
        .collect();
    let tensors = tensors?;
    check_tensors(&specs, &tensors)?;
    *model.tensors_mut() = tensors;
    Ok(model)
}

pub fn save_checkpoint(
    model: &AnyModel,
    seed: u64,
    metadata: serde_json::Value,
    path: &Path,
) -> Result<(), ModelError> {
    fs::write(path, checkpoint_to_json(model, seed, metadata)).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<AnyModel, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    checkpoint_from_json(&text)
}

/// Cast a tensor list to another precision.
pub fn cast_tensors<A: crate::numeric::Real, B: crate::numeric::Real>(
    tensors: &Tensors<A>,
) -> Tensors<B> {
    tensors
        .iter()
        .map(|t| t.mapv(|v| B::of(v.as_f64())))
        .collect()
}

//! Privacy-sensitive object identification over structured scene graphs.
//!
//! The pipeline classifies each object node of a scene graph as
//! privacy-sensitive or not from its *context* rather than its own features:
//!
//! 1. [`graph`]: heterogeneous scene graphs (category + relation nodes),
//!    hybrid-graph derivation with four metapaths, validation, JSON I/O.
//! 2. [`synthgen`]: synthetic labeled datasets whose labels depend only on
//!    relational context, for dataset-free verification.
//! 3. [`augment`]: contextual perturbation oversampling (CPOS) and a SMOTE
//!    baseline for balancing skewed privacy-class distributions.
//! 4. [`hgr`]: the hybrid graph reasoning network: per-metapath node-level
//!    attention, semantic-level fusion, multi-layer stacking, sigmoid head.
//! 5. [`baselines`]: GCN / GAT over a homogenized graph and a features-only
//!    MLP for ablation.
//! 6. [`training`]: class-weighted loss, reverse-mode gradients checked
//!    against finite differences, Adam, deterministic training loop.
//! 7. [`eval`]: confusion counts, precision/recall/F1, model evaluation,
//!    edge-drop robustness probes.

pub mod augment;
pub mod baselines;
pub mod dataset;
pub mod eval;
pub mod graph;
pub mod hgr;
pub mod models;
pub mod numeric;
pub mod synthgen;
pub mod tape;
pub mod training;

pub use dataset::{DatasetEntry, LabeledDataset, Split};
pub use graph::{
    CategoryNode, HeteroSceneGraph, HybridGraph, MetaPath, NodeRef, Privacy, RelationNode,
};
pub use models::{AnyModel, ModelDims, ModelKind};

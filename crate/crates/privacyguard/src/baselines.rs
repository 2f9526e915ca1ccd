//! Ablation comparators: GCN and GAT over a homogenized graph, and a
//! features-only MLP that classifies each object from its own appearance
//! with no graph access at all.
//!
//! Homogenization folds both node kinds into one set (features zero-padded
//! to a common width) with one undirected edge per subject/object incidence
//! plus a self-loop on every node. All baselines share the training module,
//! loss and head conventions so comparisons isolate the architecture.

use ndarray::Array1;

use crate::graph::{HeteroSceneGraph, NodeId};
use crate::models::{init_tensors, ModelDims, ModelError, TensorSpec};
use crate::numeric::{relu, sigmoid, Real};
use crate::tape::{attention_forward, Tape, Tensors, VarId};

/// Both node kinds in one homogeneous graph. Node order is sorted category
/// ids followed by sorted relation ids; the category block is the label/
/// prediction mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HomoGraph {
    base: HeteroSceneGraph,
    cat_ids: Vec<NodeId>,
    rel_ids: Vec<NodeId>,
    /// Zero-padded features, one per node, width `common_dim`.
    features: Vec<Vec<f64>>,
    /// Symmetric neighbor lists including self-loops, by node index.
    neighbors: Vec<Vec<usize>>,
    /// One per self-loop plus one per subject/object incidence.
    edge_count: usize,
    common_dim: usize,
}

impl HomoGraph {
    pub fn base(&self) -> &HeteroSceneGraph {
        &self.base
    }

    pub fn category_ids(&self) -> &[NodeId] {
        &self.cat_ids
    }

    pub fn node_count(&self) -> usize {
        self.cat_ids.len() + self.rel_ids.len()
    }

    /// Number of category nodes; node indices below this are categories.
    pub fn category_count(&self) -> usize {
        self.cat_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn common_dim(&self) -> usize {
        self.common_dim
    }

    pub fn neighbors_of(&self, idx: usize) -> &[usize] {
        &self.neighbors[idx]
    }

    pub fn features_of(&self, idx: usize) -> &[f64] {
        &self.features[idx]
    }
}

/// Fold a heterogeneous scene graph into a [`HomoGraph`].
pub fn homogenize(g: &HeteroSceneGraph) -> Result<HomoGraph, ModelError> {
    let report = g.validate();
    if !report.is_ok() {
        return Err(ModelError::Graph(crate::graph::GraphError::InvalidGraph(
            report,
        )));
    }
    let common_dim = g.dims.category.max(g.dims.relation);
    let pad = |f: &[f64]| {
        let mut v = f.to_vec();
        v.resize(common_dim, 0.0);
        v
    };

    let mut cat_order: Vec<usize> = (0..g.categories.len()).collect();
    cat_order.sort_by_key(|&i| g.categories[i].id);
    let cat_ids: Vec<NodeId> = cat_order.iter().map(|&i| g.categories[i].id).collect();
    let mut rel_order: Vec<usize> = (0..g.relations.len()).collect();
    rel_order.sort_by_key(|&i| g.relations[i].id);
    let rel_ids: Vec<NodeId> = rel_order.iter().map(|&i| g.relations[i].id).collect();

    let n_cat = cat_ids.len();
    let n = n_cat + rel_ids.len();
    let mut features = Vec::with_capacity(n);
    for &i in &cat_order {
        features.push(pad(&g.categories[i].features));
    }
    for &i in &rel_order {
        features.push(pad(&g.relations[i].features));
    }

    let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut edge_count = n; // self-loops
    for (k, &ri) in rel_order.iter().enumerate() {
        let r = &g.relations[ri];
        let rel_idx = n_cat + k;
        for endpoint in [r.subject_id, r.object_id] {
            let cat_idx = cat_ids
                .binary_search(&endpoint)
                .expect("validated endpoint");
            neighbors[cat_idx].push(rel_idx);
            neighbors[rel_idx].push(cat_idx);
            edge_count += 1;
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }

    Ok(HomoGraph {
        base: g.clone(),
        cat_ids,
        rel_ids,
        features,
        neighbors,
        edge_count,
        common_dim,
    })
}

// --- parameter layouts -------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub dims: ModelDims,
    pub tensors: Tensors<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub dims: ModelDims,
    pub tensors: Tensors<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub dims: ModelDims,
    pub tensors: Tensors<f64>,
}

fn common_dim(dims: &ModelDims) -> usize {
    dims.d_category.max(dims.d_relation)
}

pub fn gcn_tensor_specs(dims: &ModelDims) -> Vec<TensorSpec> {
    let h = dims.hidden;
    let mut specs = Vec::new();
    for l in 0..dims.layers {
        let d_in = if l == 0 { common_dim(dims) } else { h };
        specs.push(TensorSpec::matrix(format!("layer{l}.w"), h, d_in));
    }
    specs.push(TensorSpec::score_vector("head.w", h));
    specs.push(TensorSpec::bias("head.b", 1));
    specs
}

pub fn gat_tensor_specs(dims: &ModelDims) -> Vec<TensorSpec> {
    let h = dims.hidden;
    let mut specs = Vec::new();
    for l in 0..dims.layers {
        let d_in = if l == 0 { common_dim(dims) } else { h };
        specs.push(TensorSpec::matrix(format!("layer{l}.w"), h, d_in));
        specs.push(TensorSpec::score_vector(format!("layer{l}.a"), 2 * h));
    }
    specs.push(TensorSpec::score_vector("head.w", h));
    specs.push(TensorSpec::bias("head.b", 1));
    specs
}

pub fn mlp_tensor_specs(dims: &ModelDims) -> Vec<TensorSpec> {
    let h = dims.hidden;
    vec![
        TensorSpec::matrix("hidden.w", h, dims.d_category),
        TensorSpec::bias("hidden.b", h),
        TensorSpec::score_vector("head.w", h),
        TensorSpec::bias("head.b", 1),
    ]
}

pub fn init_gcn(dims: &ModelDims, seed: u64) -> Result<GcnParams, ModelError> {
    dims.validate()?;
    Ok(GcnParams {
        dims: *dims,
        tensors: init_tensors(&gcn_tensor_specs(dims), seed),
    })
}

pub fn init_gat(dims: &ModelDims, seed: u64) -> Result<GatParams, ModelError> {
    dims.validate()?;
    Ok(GatParams {
        dims: *dims,
        tensors: init_tensors(&gat_tensor_specs(dims), seed),
    })
}

pub fn init_mlp(dims: &ModelDims, seed: u64) -> Result<MlpParams, ModelError> {
    dims.validate()?;
    Ok(MlpParams {
        dims: *dims,
        tensors: init_tensors(&mlp_tensor_specs(dims), seed),
    })
}

fn check_homo_dims(dims: &ModelDims, hg: &HomoGraph) -> Result<(), ModelError> {
    if hg.common_dim() != common_dim(dims)
        || hg.base.dims.category != dims.d_category
        || hg.base.dims.relation != dims.d_relation
    {
        return Err(ModelError::Dim(format!(
            "graph features are ({}, {}), model expects ({}, {})",
            hg.base.dims.category, hg.base.dims.relation, dims.d_category, dims.d_relation
        )));
    }
    Ok(())
}

/// Symmetric-normalized propagation coefficient for an edge (i, j): one
/// over the square root of both incidence degrees (self-loops included).
fn gcn_coeff<F: Real>(hg: &HomoGraph, i: usize, j: usize) -> F {
    let di = hg.neighbors[i].len() as f64;
    let dj = hg.neighbors[j].len() as f64;
    F::of(1.0 / (di * dj).sqrt())
}

// --- GCN ---------------------------------------------------------------------

/// Per layer: H' = ReLU(D^(-1/2) Â D^(-1/2) · H · W), Â with self-loops;
/// sigmoid head over the category block.
pub fn gcn_forward_probs<F: Real>(
    tensors: &Tensors<F>,
    dims: &ModelDims,
    hg: &HomoGraph,
) -> Result<Vec<F>, ModelError> {
    check_homo_dims(dims, hg)?;
    let n = hg.node_count();
    let mut h: Vec<Array1<F>> = (0..n)
        .map(|i| hg.features[i].iter().map(|&v| F::of(v)).collect())
        .collect();
    for l in 0..dims.layers {
        let w = &tensors[l];
        let transformed: Vec<Array1<F>> = h.iter().map(|x| w.dot(x)).collect();
        h = (0..n)
            .map(|i| {
                let mut acc: Array1<F> = Array1::zeros(dims.hidden);
                for &j in &hg.neighbors[i] {
                    acc.scaled_add(gcn_coeff(hg, i, j), &transformed[j]);
                }
                acc.mapv(relu)
            })
            .collect();
    }
    let w = tensors[dims.layers].column(0);
    let b = tensors[dims.layers + 1][(0, 0)];
    Ok(h[..hg.category_count()]
        .iter()
        .map(|z| sigmoid(w.dot(z) + b))
        .collect())
}

pub fn gcn_tape_probs<F: Real>(
    tape: &mut Tape<F>,
    tensors: &Tensors<F>,
    dims: &ModelDims,
    hg: &HomoGraph,
) -> Result<Vec<VarId>, ModelError> {
    check_homo_dims(dims, hg)?;
    let n = hg.node_count();
    let mut h: Vec<VarId> = (0..n)
        .map(|i| tape.input(hg.features[i].iter().map(|&v| F::of(v)).collect()))
        .collect();
    for l in 0..dims.layers {
        let transformed: Vec<VarId> = h.iter().map(|&x| tape.matvec(tensors, l, x)).collect();
        h = (0..n)
            .map(|i| {
                let coeffs: Vec<F> = hg.neighbors[i]
                    .iter()
                    .map(|&j| gcn_coeff(hg, i, j))
                    .collect();
                let xs: Vec<VarId> = hg.neighbors[i].iter().map(|&j| transformed[j]).collect();
                let s = tape.weighted_sum_const(coeffs, xs);
                tape.relu(s)
            })
            .collect();
    }
    Ok(h[..hg.category_count()]
        .iter()
        .map(|&z| tape.head_sigmoid(tensors, dims.layers, dims.layers + 1, z))
        .collect())
}

// --- GAT ---------------------------------------------------------------------

/// Identical attention arithmetic to the hybrid network's node level, but
/// over the single homogeneous edge set and with no semantic level.
pub fn gat_forward_probs<F: Real>(
    tensors: &Tensors<F>,
    dims: &ModelDims,
    hg: &HomoGraph,
) -> Result<Vec<F>, ModelError> {
    check_homo_dims(dims, hg)?;
    let n = hg.node_count();
    let mut h: Vec<Array1<F>> = (0..n)
        .map(|i| hg.features[i].iter().map(|&v| F::of(v)).collect())
        .collect();
    for l in 0..dims.layers {
        let w = &tensors[2 * l];
        let a = tensors[2 * l + 1].column(0).to_owned();
        let transformed: Vec<Array1<F>> = h.iter().map(|x| w.dot(x)).collect();
        h = (0..n)
            .map(|i| {
                let neighbors: Vec<&Array1<F>> =
                    hg.neighbors[i].iter().map(|&j| &transformed[j]).collect();
                attention_forward(&a, &transformed[i], &neighbors).z
            })
            .collect();
    }
    let w = tensors[2 * dims.layers].column(0);
    let b = tensors[2 * dims.layers + 1][(0, 0)];
    Ok(h[..hg.category_count()]
        .iter()
        .map(|z| sigmoid(w.dot(z) + b))
        .collect())
}

pub fn gat_tape_probs<F: Real>(
    tape: &mut Tape<F>,
    tensors: &Tensors<F>,
    dims: &ModelDims,
    hg: &HomoGraph,
) -> Result<Vec<VarId>, ModelError> {
    check_homo_dims(dims, hg)?;
    let n = hg.node_count();
    let mut h: Vec<VarId> = (0..n)
        .map(|i| tape.input(hg.features[i].iter().map(|&v| F::of(v)).collect()))
        .collect();
    for l in 0..dims.layers {
        let transformed: Vec<VarId> = h.iter().map(|&x| tape.matvec(tensors, 2 * l, x)).collect();
        h = (0..n)
            .map(|i| {
                let vars: Vec<VarId> = hg.neighbors[i].iter().map(|&j| transformed[j]).collect();
                tape.attn_aggregate(tensors, 2 * l + 1, transformed[i], &vars)
            })
            .collect();
    }
    Ok(h[..hg.category_count()]
        .iter()
        .map(|&z| tape.head_sigmoid(tensors, 2 * dims.layers, 2 * dims.layers + 1, z))
        .collect())
}

// --- MLP ---------------------------------------------------------------------

fn sorted_category_features<F: Real>(g: &HeteroSceneGraph) -> Vec<Array1<F>> {
    let mut order: Vec<usize> = (0..g.categories.len()).collect();
    order.sort_by_key(|&i| g.categories[i].id);
    order
        .into_iter()
        .map(|i| g.categories[i].features.iter().map(|&v| F::of(v)).collect())
        .collect()
}

/// Appearance-only null model: one hidden ReLU layer over the node's own
/// features, no graph access.
pub fn mlp_forward_probs<F: Real>(
    tensors: &Tensors<F>,
    dims: &ModelDims,
    g: &HeteroSceneGraph,
) -> Result<Vec<F>, ModelError> {
    if g.dims.category != dims.d_category {
        return Err(ModelError::Dim(format!(
            "graph category features are {}, model expects {}",
            g.dims.category, dims.d_category
        )));
    }
    let w1 = &tensors[0];
    let b1 = tensors[1].column(0);
    let w = tensors[2].column(0);
    let b = tensors[3][(0, 0)];
    Ok(sorted_category_features::<F>(g)
        .iter()
        .map(|x| {
            let hidden = (w1.dot(x) + &b1).mapv(relu);
            sigmoid(w.dot(&hidden) + b)
        })
        .collect())
}

pub fn mlp_tape_probs<F: Real>(
    tape: &mut Tape<F>,
    tensors: &Tensors<F>,
    dims: &ModelDims,
    g: &HeteroSceneGraph,
) -> Result<Vec<VarId>, ModelError> {
    if g.dims.category != dims.d_category {
        return Err(ModelError::Dim(format!(
            "graph category features are {}, model expects {}",
            g.dims.category, dims.d_category
        )));
    }
    Ok(sorted_category_features::<F>(g)
        .into_iter()
        .map(|x| {
            let x = tape.input(x);
            let u = tape.matvec(tensors, 0, x);
            let u = tape.add_bias(tensors, u, 1);
            let hidden = tape.relu(u);
            tape.head_sigmoid(tensors, 2, 3, hidden)
        })
        .collect())
}

//! Minimal reverse-mode differentiation tape for the graph networks.
//!
//! Values flowing through the tape are vectors or scalars; parameter
//! matrices never flow as values but are referenced by index into the
//! model's tensor list, and `backward` accumulates their gradients into a
//! parallel list. Operations are fused at the granularity the networks
//! need (attention aggregation, semantic scoring, sigmoid head) so both
//! the forward values and the backward sweep stay cheap and deterministic:
//! every reduction runs in the order the inputs were recorded.

use ndarray::{Array1, Array2};

use crate::numeric::{elu, elu_grad, leaky_relu, leaky_relu_grad, sigmoid, softmax, Real};

/// Model parameters as a flat tensor list; vectors are stored as (n, 1)
/// and scalars as (1, 1) so one container fits every tensor.
pub type Tensors<F> = Vec<Array2<F>>;

/// Lower clamp for binary cross-entropy log arguments.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// Forward pieces of one attention aggregation, shared between the plain
/// forward pass and the tape so both produce bit-identical values.
pub struct AttnParts<F> {
    /// Pre-LeakyReLU logits, one per neighbor.
    pub raw: Vec<F>,
    /// Softmax weights over the neighborhood.
    pub alpha: Vec<F>,
    /// Weighted neighbor sum before the ELU.
    pub pre_act: Array1<F>,
    /// ELU(pre_act).
    pub z: Array1<F>,
}

/// z = ELU(Σ_m α_m v_m), α = softmax(LeakyReLU(a · [t ‖ v_m])). The first
/// half of `a` scores the target, the second half the neighbor.
pub fn attention_forward<F: Real>(
    a: &Array1<F>,
    target: &Array1<F>,
    neighbors: &[&Array1<F>],
) -> AttnParts<F> {
    debug_assert!(!neighbors.is_empty());
    let h = a.len() / 2;
    let (a_target, a_neighbor) = (a.slice(ndarray::s![..h]), a.slice(ndarray::s![h..]));
    let t_score = a_target.dot(target);
    let raw: Vec<F> = neighbors
        .iter()
        .map(|m| t_score + a_neighbor.dot(*m))
        .collect();
    let logits: Vec<F> = raw.iter().map(|&r| leaky_relu(r)).collect();
    let alpha = softmax(&logits);
    let mut pre_act = Array1::zeros(neighbors[0].len());
    for (m, &w) in neighbors.iter().zip(&alpha) {
        pre_act.scaled_add(w, *m);
    }
    let z = pre_act.mapv(elu);
    AttnParts {
        raw,
        alpha,
        pre_act,
        z,
    }
}

/// s = q · tanh(Ws z + bs); also returns the tanh output for reuse.
pub fn semantic_score_forward<F: Real>(
    q: &Array2<F>,
    ws: &Array2<F>,
    bs: &Array2<F>,
    z: &Array1<F>,
) -> (F, Array1<F>) {
    let u = ws.dot(z) + bs.column(0);
    let t = u.mapv(F::tanh);
    (q.column(0).dot(&t), t)
}

#[derive(Debug, Clone)]
enum Value<F> {
    Vec(Array1<F>),
    Scalar(F),
}

#[derive(Debug)]
enum Op<F> {
    /// Constant vector leaf (input features, zero embeddings).
    Input,
    /// y = W · x with W a parameter matrix.
    MatVec { w: usize, x: VarId },
    /// y = x + b with b a parameter vector.
    AddBias { x: VarId, b: usize },
    /// y = relu(x) elementwise.
    Relu { x: VarId },
    /// z = ELU(Σ_m α_m v_m) with α = softmax over LeakyReLU(a · [t ‖ v_m]).
    /// `raw` caches the pre-LeakyReLU logits, `pre_act` the pre-ELU sum.
    AttnAggregate {
        a: usize,
        target: VarId,
        neighbors: Vec<VarId>,
        raw: Vec<F>,
        alpha: Vec<F>,
        pre_act: Array1<F>,
    },
    /// y = Σ_m c_m x_m with fixed coefficients (graph-convolution propagate).
    WeightedSumConst { coeffs: Vec<F>, xs: Vec<VarId> },
    /// s = q · tanh(Ws z + bs); `t` caches the tanh output.
    SemanticScore {
        q: usize,
        ws: usize,
        bs: usize,
        z: VarId,
        t: Array1<F>,
    },
    /// Mean of scalar nodes.
    MeanScalars { xs: Vec<VarId> },
    /// Sum of scalar nodes.
    SumScalars { xs: Vec<VarId> },
    /// y = β₀ z₀ + β₁ z₁ with β = softmax(w₀, w₁) over scalar path scores.
    SemanticCombine {
        w: [VarId; 2],
        z: [VarId; 2],
        beta: [F; 2],
    },
    /// p = sigmoid(w · z + b).
    HeadSigmoid { w: usize, b: usize, z: VarId },
    /// Weighted binary cross-entropy of one node against its label.
    BceLoss { p: VarId, y: bool, weight: F },
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
}

/// A recorded forward computation.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Tape { nodes: Vec::new() }
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Value<F>, op: Op<F>) -> VarId {
        self.nodes.push(Node { value, op });
        VarId(self.nodes.len() - 1)
    }

    pub fn vec_value(&self, id: VarId) -> &Array1<F> {
        match &self.nodes[id.0].value {
            Value::Vec(v) => v,
            Value::Scalar(_) => panic!("expected vector value"),
        }
    }

    pub fn scalar_value(&self, id: VarId) -> F {
        match &self.nodes[id.0].value {
            Value::Scalar(s) => *s,
            Value::Vec(_) => panic!("expected scalar value"),
        }
    }

    pub fn input(&mut self, v: Array1<F>) -> VarId {
        self.push(Value::Vec(v), Op::Input)
    }

    pub fn zero_vec(&mut self, len: usize) -> VarId {
        self.input(Array1::zeros(len))
    }

    pub fn matvec(&mut self, tensors: &Tensors<F>, w: usize, x: VarId) -> VarId {
        let y = tensors[w].dot(self.vec_value(x));
        self.push(Value::Vec(y), Op::MatVec { w, x })
    }

    pub fn add_bias(&mut self, tensors: &Tensors<F>, x: VarId, b: usize) -> VarId {
        let y = self.vec_value(x) + &tensors[b].column(0);
        self.push(Value::Vec(y), Op::AddBias { x, b })
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let y = self.vec_value(x).mapv(crate::numeric::relu);
        self.push(Value::Vec(y), Op::Relu { x })
    }

    /// Attention aggregation over a non-empty neighborhood. The parameter
    /// vector `a` has length 2h; its first half scores the target, the
    /// second half the neighbor.
    pub fn attn_aggregate(
        &mut self,
        tensors: &Tensors<F>,
        a: usize,
        target: VarId,
        neighbors: &[VarId],
    ) -> VarId {
        assert!(
            !neighbors.is_empty(),
            "empty neighborhoods take the zero embedding"
        );
        let av = tensors[a].column(0).to_owned();
        let neighbor_vals: Vec<&Array1<F>> = neighbors.iter().map(|&m| self.vec_value(m)).collect();
        let parts = attention_forward(&av, self.vec_value(target), &neighbor_vals);
        self.push(
            Value::Vec(parts.z),
            Op::AttnAggregate {
                a,
                target,
                neighbors: neighbors.to_vec(),
                raw: parts.raw,
                alpha: parts.alpha,
                pre_act: parts.pre_act,
            },
        )
    }

    /// Normalized attention weights of an aggregation node, for diagnostics.
    pub fn attention_weights(&self, id: VarId) -> Option<&[F]> {
        match &self.nodes[id.0].op {
            Op::AttnAggregate { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    pub fn weighted_sum_const(&mut self, coeffs: Vec<F>, xs: Vec<VarId>) -> VarId {
        assert_eq!(coeffs.len(), xs.len());
        assert!(!xs.is_empty());
        let mut y = Array1::zeros(self.vec_value(xs[0]).len());
        for (&c, &x) in coeffs.iter().zip(&xs) {
            y.scaled_add(c, self.vec_value(x));
        }
        self.push(Value::Vec(y), Op::WeightedSumConst { coeffs, xs })
    }

    pub fn semantic_score(
        &mut self,
        tensors: &Tensors<F>,
        q: usize,
        ws: usize,
        bs: usize,
        z: VarId,
    ) -> VarId {
        let (s, t) =
            semantic_score_forward(&tensors[q], &tensors[ws], &tensors[bs], self.vec_value(z));
        self.push(Value::Scalar(s), Op::SemanticScore { q, ws, bs, z, t })
    }

    pub fn mean_scalars(&mut self, xs: Vec<VarId>) -> VarId {
        assert!(!xs.is_empty());
        let mut sum = F::zero();
        for &x in &xs {
            sum += self.scalar_value(x);
        }
        let mean = sum / F::of(xs.len() as f64);
        self.push(Value::Scalar(mean), Op::MeanScalars { xs })
    }

    pub fn sum_scalars(&mut self, xs: Vec<VarId>) -> VarId {
        assert!(!xs.is_empty());
        let mut sum = F::zero();
        for &x in &xs {
            sum += self.scalar_value(x);
        }
        self.push(Value::Scalar(sum), Op::SumScalars { xs })
    }

    pub fn semantic_combine(&mut self, w: [VarId; 2], z: [VarId; 2]) -> VarId {
        let scores = [self.scalar_value(w[0]), self.scalar_value(w[1])];
        let beta_v = softmax(&scores);
        let beta = [beta_v[0], beta_v[1]];
        let y = self.vec_value(z[0]) * beta[0] + self.vec_value(z[1]) * beta[1];
        self.push(Value::Vec(y), Op::SemanticCombine { w, z, beta })
    }

    /// Semantic weights β of a combine node, for diagnostics.
    pub fn semantic_weights(&self, id: VarId) -> Option<[F; 2]> {
        match &self.nodes[id.0].op {
            Op::SemanticCombine { beta, .. } => Some(*beta),
            _ => None,
        }
    }

    pub fn head_sigmoid(&mut self, tensors: &Tensors<F>, w: usize, b: usize, z: VarId) -> VarId {
        let u = tensors[w].column(0).dot(self.vec_value(z)) + tensors[b][(0, 0)];
        self.push(Value::Scalar(sigmoid(u)), Op::HeadSigmoid { w, b, z })
    }

    /// Weighted binary cross-entropy term with the log argument clamped.
    pub fn bce_loss(&mut self, p: VarId, y: bool, weight: F) -> VarId {
        let pv = self.scalar_value(p);
        let clamp = F::of(LOG_CLAMP);
        let arg = if y { pv } else { F::one() - pv }.max(clamp);
        let loss = -weight * arg.ln();
        self.push(Value::Scalar(loss), Op::BceLoss { p, y, weight })
    }

    /// Reverse sweep from `root`; returns per-tensor gradients in the shape
    /// of `tensors`. Accumulation order is fixed by the recording order.
    pub fn backward(&self, root: VarId, tensors: &Tensors<F>) -> Tensors<F> {
        let mut grads: Tensors<F> = tensors.iter().map(|t| Array2::zeros(t.dim())).collect();
        let mut adjoints: Vec<Option<Value<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoints[root.0] = Some(match &self.nodes[root.0].value {
            Value::Scalar(_) => Value::Scalar(F::one()),
            Value::Vec(v) => Value::Vec(Array1::ones(v.len())),
        });

        for i in (0..self.nodes.len()).rev() {
            let adj = match adjoints[i].take() {
                Some(a) => a,
                None => continue,
            };
            match (&self.nodes[i].op, adj) {
                (Op::Input, _) => {}
                (Op::MatVec { w, x }, Value::Vec(g)) => {
                    let xv = self.vec_value(*x);
                    for (r, gr) in g.iter().enumerate() {
                        for (c, xc) in xv.iter().enumerate() {
                            grads[*w][(r, c)] += *gr * *xc;
                        }
                    }
                    let dx = tensors[*w].t().dot(&g);
                    add_vec(&mut adjoints[x.0], dx);
                }
                (Op::AddBias { x, b }, Value::Vec(g)) => {
                    for (r, gr) in g.iter().enumerate() {
                        grads[*b][(r, 0)] += *gr;
                    }
                    add_vec(&mut adjoints[x.0], g);
                }
                (Op::Relu { x }, Value::Vec(g)) => {
                    let xv = self.vec_value(*x);
                    let dx = ndarray::Zip::from(&g).and(xv).map_collect(|&gi, &xi| {
                        if xi > F::zero() {
                            gi
                        } else {
                            F::zero()
                        }
                    });
                    add_vec(&mut adjoints[x.0], dx);
                }
                (
                    Op::AttnAggregate {
                        a,
                        target,
                        neighbors,
                        raw,
                        alpha,
                        pre_act,
                    },
                    Value::Vec(g),
                ) => {
                    let gu = ndarray::Zip::from(&g)
                        .and(pre_act)
                        .map_collect(|&gi, &ui| gi * elu_grad(ui));
                    // Scalar sensitivities of the weighted sum to each α.
                    let s: Vec<F> = neighbors
                        .iter()
                        .map(|&m| gu.dot(self.vec_value(m)))
                        .collect();
                    let mut s_bar = F::zero();
                    for (&am, &sm) in alpha.iter().zip(&s) {
                        s_bar += am * sm;
                    }
                    let av = tensors[*a].column(0);
                    let h = av.len() / 2;
                    let a_target = av.slice(ndarray::s![..h]).to_owned();
                    let a_neighbor = av.slice(ndarray::s![h..]).to_owned();
                    let tv = self.vec_value(*target).clone();
                    let mut dlogit_sum = F::zero();
                    for (m, &nbr) in neighbors.iter().enumerate() {
                        let de = alpha[m] * (s[m] - s_bar);
                        let dl = de * leaky_relu_grad(raw[m]);
                        dlogit_sum += dl;
                        let nv = self.vec_value(nbr).clone();
                        for (r, (t_r, n_r)) in tv.iter().zip(nv.iter()).enumerate() {
                            grads[*a][(r, 0)] += dl * *t_r;
                            grads[*a][(h + r, 0)] += dl * *n_r;
                        }
                        let dv = &gu * alpha[m] + &a_neighbor * dl;
                        add_vec(&mut adjoints[nbr.0], dv);
                    }
                    add_vec(&mut adjoints[target.0], a_target * dlogit_sum);
                }
                (Op::WeightedSumConst { coeffs, xs }, Value::Vec(g)) => {
                    for (&c, &x) in coeffs.iter().zip(xs) {
                        add_vec(&mut adjoints[x.0], &g * c);
                    }
                }
                (Op::SemanticScore { q, ws, bs, z, t }, Value::Scalar(gs)) => {
                    let zv = self.vec_value(*z);
                    let qv = tensors[*q].column(0);
                    // du = gs · q ⊙ (1 − t²)
                    let du = ndarray::Zip::from(&qv)
                        .and(t)
                        .map_collect(|&qi, &ti| gs * qi * (F::one() - ti * ti));
                    for (r, ti) in t.iter().enumerate() {
                        grads[*q][(r, 0)] += gs * *ti;
                        grads[*bs][(r, 0)] += du[r];
                        for (c, zc) in zv.iter().enumerate() {
                            grads[*ws][(r, c)] += du[r] * *zc;
                        }
                    }
                    let dz = tensors[*ws].t().dot(&du);
                    add_vec(&mut adjoints[z.0], dz);
                }
                (Op::MeanScalars { xs }, Value::Scalar(gs)) => {
                    let share = gs / F::of(xs.len() as f64);
                    for &x in xs {
                        add_scalar(&mut adjoints[x.0], share);
                    }
                }
                (Op::SumScalars { xs }, Value::Scalar(gs)) => {
                    for &x in xs {
                        add_scalar(&mut adjoints[x.0], gs);
                    }
                }
                (Op::SemanticCombine { w, z, beta }, Value::Vec(g)) => {
                    let s = [g.dot(self.vec_value(z[0])), g.dot(self.vec_value(z[1]))];
                    let s_bar = beta[0] * s[0] + beta[1] * s[1];
                    for k in 0..2 {
                        add_vec(&mut adjoints[z[k].0], &g * beta[k]);
                        add_scalar(&mut adjoints[w[k].0], beta[k] * (s[k] - s_bar));
                    }
                }
                (Op::HeadSigmoid { w, b, z }, Value::Scalar(gp)) => {
                    let p = self.scalar_value(VarId(i));
                    let du = gp * p * (F::one() - p);
                    let zv = self.vec_value(*z);
                    for (r, zr) in zv.iter().enumerate() {
                        grads[*w][(r, 0)] += du * *zr;
                    }
                    grads[*b][(0, 0)] += du;
                    let dz = tensors[*w].column(0).to_owned() * du;
                    add_vec(&mut adjoints[z.0], dz);
                }
                (Op::BceLoss { p, y, weight }, Value::Scalar(gl)) => {
                    let pv = self.scalar_value(*p);
                    let clamp = F::of(LOG_CLAMP);
                    let dp = if *y {
                        if pv > clamp {
                            -*weight / pv
                        } else {
                            F::zero()
                        }
                    } else if F::one() - pv > clamp {
                        *weight / (F::one() - pv)
                    } else {
                        F::zero()
                    };
                    add_scalar(&mut adjoints[p.0], gl * dp);
                }
                (op, _) => unreachable!("adjoint kind mismatch for {op:?}"),
            }
        }
        grads
    }
}

fn add_vec<F: Real>(slot: &mut Option<Value<F>>, dv: Array1<F>) {
    match slot {
        Some(Value::Vec(v)) => *v += &dv,
        None => *slot = Some(Value::Vec(dv)),
        Some(Value::Scalar(_)) => panic!("scalar adjoint where vector expected"),
    }
}

fn add_scalar<F: Real>(slot: &mut Option<Value<F>>, ds: F) {
    match slot {
        Some(Value::Scalar(s)) => *s += ds,
        None => *slot = Some(Value::Scalar(ds)),
        Some(Value::Vec(_)) => panic!("vector adjoint where scalar expected"),
    }
}

//! Shared numeric primitives: the precision-generic scalar trait,
//! activations, stabilized softmax and deterministic seed derivation.

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;

/// Scalar type the network kernels are generic over. Training runs in either
/// `f32` or `f64`; gradient checking requires `f64`.
pub trait Real:
    Float + LinalgScalar + ScalarOperand + std::ops::AddAssign + Send + Sync + std::fmt::Debug
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// LeakyReLU slope used by all attention logits.
pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
pub fn leaky_relu<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::of(LEAKY_SLOPE) * x
    }
}

#[inline]
pub fn leaky_relu_grad<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        F::of(LEAKY_SLOPE)
    }
}

#[inline]
pub fn elu<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        x.exp() - F::one()
    }
}

/// Derivative of ELU in terms of its input.
#[inline]
pub fn elu_grad<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        x.exp()
    }
}

#[inline]
pub fn relu<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::zero()
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Softmax with max-subtraction. Adding a constant to every input leaves the
/// output bit-identical because the shifted values cancel against the shifted
/// maximum.
pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    debug_assert!(!logits.is_empty());
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&e| (e - max).exp()).collect();
    let mut sum = F::zero();
    for &e in &exps {
        sum += e;
    }
    exps.into_iter().map(|e| e / sum).collect()
}

/// SplitMix64 step; used to derive independent per-item seeds from a master
/// seed so work can be farmed out without sharing RNG state.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th derived stream of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x51ed_270b)))
}

/// FNV-1a over bytes; stable across runs, used to seed per-tag embeddings.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Glorot-uniform matrix: entries ~ U(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
/// For weight matrices fan_in = cols, fan_out = rows; callers pass explicit
/// fans for vectors (fan_out = 1).
pub fn glorot_uniform<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Array2<f64> {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-s..s))
}

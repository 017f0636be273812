//! Minimal deterministic neural-network substrate.
//!
//! Everything is f64 on the CPU with explicit shapes `(N, C, H, W)`. Layers
//! expose three entry points: `forward` for frozen inference, `forward_t`
//! which also returns the cache needed for differentiation, and `backward`
//! which consumes that cache, accumulates parameter gradients in place, and
//! returns the input gradient. There is no implicit graph; networks compose
//! layers explicitly, which keeps every gradient path visible and testable
//! against finite differences.
//!
//! Determinism contract: no threading, no iteration-order surprises, all
//! randomness injected through seeded generators. Same inputs, same bits.

mod adam;
mod conv;
mod norm;
mod ops;

pub mod gradcheck;

pub use adam::Adam;
pub use conv::{conv_out_side, conv_transpose_out_side, Conv2d, Conv2dCache, ConvTranspose2d,
    ConvTranspose2dCache};
pub use norm::{InstanceNorm2d, InstanceNorm2dCache};
pub use ops::{
    concat_channels, cross_entropy, downsample2x_backward, downsample2x_forward,
    global_avg_pool, global_avg_pool_backward, mean_all, mean_all_backward, softmax_rows,
    split_channels, Activation, ActivationCache, ActivationKind, Linear, LinearCache,
};

use ndarray::{Array4, ArrayD};
use rand::Rng;
use thiserror::Error;

/// Activations and images inside the network substrate.
pub type Tensor = Array4<f64>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A trainable tensor together with its gradient accumulator and Adam
/// moment estimates. Keeping optimizer state next to the value makes
/// checkpoint save/resume a plain serialization of the parameter list.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        let m = ArrayD::zeros(value.raw_dim());
        let v = ArrayD::zeros(value.raw_dim());
        Self { value, grad, m, v }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(shape.to_vec()))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Named references to a network's parameters, in a stable order. The order
/// defines the checkpoint layout and the optimizer walk.
pub type ParamRefs<'a> = Vec<(String, &'a Param)>;
pub type ParamRefsMut<'a> = Vec<(String, &'a mut Param)>;

/// Standard-normal draw via Box-Muller, so only a `Rng` is needed.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// He-style initialization: zero-mean normal with `std = sqrt(2 / fan_in)`.
pub fn he_init<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| std * normal(rng)).collect();
    ArrayD::from_shape_vec(shape.to_vec(), data).expect("shape/product agree")
}

/// Total number of scalar parameters behind a parameter list.
pub fn param_count(params: &ParamRefs<'_>) -> usize {
    params.iter().map(|(_, p)| p.len()).sum()
}

/// SHA-256 over the raw parameter values in visit order; detects any bit
/// change, which is how freeze contracts are enforced in tests.
pub fn param_digest(params: &ParamRefs<'_>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for (name, p) in params {
        hasher.update(name.as_bytes());
        for v in p.value.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

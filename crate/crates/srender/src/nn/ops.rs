//! Elementwise activations, pooling, channel plumbing, the dense head, and
//! the classification loss.

use ndarray::{Array2, Array4};
use rand::Rng;

use super::{he_init, Param, ParamRefs, ParamRefsMut, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

/// Stateless elementwise nonlinearity. The cache stores whichever tensor the
/// derivative is cheapest from: the input for the rectifiers, the output for
/// the squashers.
#[derive(Debug, Clone, Copy)]
pub struct Activation {
    pub kind: ActivationKind,
}

pub struct ActivationCache {
    saved: Tensor,
}

impl Activation {
    pub fn relu() -> Self {
        Self {
            kind: ActivationKind::Relu,
        }
    }

    pub fn leaky_relu(slope: f64) -> Self {
        Self {
            kind: ActivationKind::LeakyRelu(slope),
        }
    }

    pub fn tanh() -> Self {
        Self {
            kind: ActivationKind::Tanh,
        }
    }

    pub fn sigmoid() -> Self {
        Self {
            kind: ActivationKind::Sigmoid,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self.kind {
            ActivationKind::Relu => x.mapv(|v| v.max(0.0)),
            ActivationKind::LeakyRelu(a) => x.mapv(|v| if v >= 0.0 { v } else { a * v }),
            ActivationKind::Tanh => x.mapv(f64::tanh),
            ActivationKind::Sigmoid => x.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        }
    }

    pub fn forward_t(&self, x: &Tensor) -> (Tensor, ActivationCache) {
        let y = self.forward(x);
        let saved = match self.kind {
            ActivationKind::Relu | ActivationKind::LeakyRelu(_) => x.clone(),
            ActivationKind::Tanh | ActivationKind::Sigmoid => y.clone(),
        };
        (y, ActivationCache { saved })
    }

    pub fn backward(&self, cache: &ActivationCache, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        match self.kind {
            ActivationKind::Relu => {
                ndarray::Zip::from(&mut dx)
                    .and(&cache.saved)
                    .for_each(|d, &x| {
                        if x < 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            ActivationKind::LeakyRelu(a) => {
                ndarray::Zip::from(&mut dx)
                    .and(&cache.saved)
                    .for_each(|d, &x| {
                        if x < 0.0 {
                            *d *= a;
                        }
                    });
            }
            ActivationKind::Tanh => {
                ndarray::Zip::from(&mut dx)
                    .and(&cache.saved)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
            }
            ActivationKind::Sigmoid => {
                ndarray::Zip::from(&mut dx)
                    .and(&cache.saved)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
            }
        }
        dx
    }
}

/// Fully connected head over `(N, F)` feature matrices.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // (out, in)
    pub bias: Param,   // (out,)
    pub in_features: usize,
    pub out_features: usize,
}

pub struct LinearCache {
    input: Array2<f64>,
}

impl Linear {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(he_init(&[out_features, in_features], in_features, rng)),
            bias: Param::zeros(&[out_features]),
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2-d weight");
        let mut y = x.dot(&w.t());
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += self.bias.value[[j]];
            }
        }
        y
    }

    pub fn forward_t(&self, x: &Array2<f64>) -> (Array2<f64>, LinearCache) {
        (self.forward(x), LinearCache { input: x.clone() })
    }

    pub fn backward(&mut self, cache: &LinearCache, dy: &Array2<f64>) -> Array2<f64> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2-d weight")
            .to_owned();
        let dw = dy.t().dot(&cache.input);
        self.weight.grad += &dw.into_dyn();
        let db = dy.sum_axis(ndarray::Axis(0));
        self.bias.grad += &db.into_dyn();
        dy.dot(&w)
    }

    pub fn params(&self, prefix: &str) -> ParamRefs<'_> {
        vec![
            (format!("{prefix}.weight"), &self.weight),
            (format!("{prefix}.bias"), &self.bias),
        ]
    }

    pub fn params_mut(&mut self, prefix: &str) -> ParamRefsMut<'_> {
        vec![
            (format!("{prefix}.weight"), &mut self.weight),
            (format!("{prefix}.bias"), &mut self.bias),
        ]
    }
}

/// `(N, C, H, W) -> (N, C)` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let m = (h * w) as f64;
    Array2::from_shape_fn((n, c), |(ni, ci)| {
        let mut acc = 0.0;
        for y in 0..h {
            for xx in 0..w {
                acc += x[[ni, ci, y, xx]];
            }
        }
        acc / m
    })
}

pub fn global_avg_pool_backward(dy: &Array2<f64>, h: usize, w: usize) -> Tensor {
    let (n, c) = dy.dim();
    let m = (h * w) as f64;
    Array4::from_shape_fn((n, c, h, w), |(ni, ci, _, _)| dy[[ni, ci]] / m)
}

/// Stacks two tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, h, w) = a.dim();
    let (nb, cb, hb, wb) = b.dim();
    assert_eq!((n, h, w), (nb, hb, wb), "concat spatial shapes");
    let mut out = Array4::zeros((n, ca + cb, h, w));
    out.slice_mut(ndarray::s![.., ..ca, .., ..]).assign(a);
    out.slice_mut(ndarray::s![.., ca.., .., ..]).assign(b);
    out
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels(dy: &Tensor, first: usize) -> (Tensor, Tensor) {
    let a = dy.slice(ndarray::s![.., ..first, .., ..]).to_owned();
    let b = dy.slice(ndarray::s![.., first.., .., ..]).to_owned();
    (a, b)
}

/// 2x2 mean pooling on tensors; the differentiable twin of the image-level
/// half-scale operator feeding the second discriminator.
pub fn downsample2x_forward(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "even dimensions required");
    Array4::from_shape_fn((n, c, h / 2, w / 2), |(ni, ci, y, xx)| {
        0.25 * (x[[ni, ci, 2 * y, 2 * xx]]
            + x[[ni, ci, 2 * y, 2 * xx + 1]]
            + x[[ni, ci, 2 * y + 1, 2 * xx]]
            + x[[ni, ci, 2 * y + 1, 2 * xx + 1]])
    })
}

pub fn downsample2x_backward(dy: &Tensor) -> Tensor {
    let (n, c, h, w) = dy.dim();
    Array4::from_shape_fn((n, c, h * 2, w * 2), |(ni, ci, y, xx)| {
        0.25 * dy[[ni, ci, y / 2, xx / 2]]
    })
}

/// Softmax rows of a logit matrix.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy over a batch with integer targets; returns the loss
/// and the logit gradient in one pass.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let (n, _k) = logits.dim();
    assert_eq!(n, targets.len(), "one target per row");
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut dlogits = probs.clone();
    for (i, &t) in targets.iter().enumerate() {
        loss -= probs[[i, t]].max(1e-300).ln();
        dlogits[[i, t]] -= 1.0;
    }
    (loss / n as f64, dlogits / n as f64)
}

/// Bias-free sum of all elements, and its trivial backward. The patch-score
/// mean used by the adversarial losses is this divided by the element count.
pub fn mean_all(x: &Tensor) -> f64 {
    x.sum() / x.len() as f64
}

pub fn mean_all_backward(x_dim: (usize, usize, usize, usize), dmean: f64) -> Tensor {
    let len = x_dim.0 * x_dim.1 * x_dim.2 * x_dim.3;
    Array4::from_elem(x_dim, dmean / len as f64)
}

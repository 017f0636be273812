//! Instance normalization: per-sample, per-channel statistics over the
//! spatial grid, so nothing couples across the batch and inference is
//! deterministic with no running averages.

use ndarray::{Array1, Array4};

use super::{Param, ParamRefs, ParamRefsMut, Tensor};

pub struct InstanceNorm2dCache {
    normalized: Tensor,
    inv_std: ndarray::Array2<f64>, // (N, C)
}

#[derive(Debug, Clone)]
pub struct InstanceNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
    pub channels: usize,
}

impl InstanceNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Array1::ones(channels).into_dyn()),
            beta: Param::zeros(&[channels]),
            eps: 1e-5,
            channels,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.forward_t(x).0
    }

    pub fn forward_t(&self, x: &Tensor) -> (Tensor, InstanceNorm2dCache) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "instance norm channels");
        let m = (h * w) as f64;
        let mut out = Array4::zeros((n, c, h, w));
        let mut normalized = Array4::zeros((n, c, h, w));
        let mut inv_std = ndarray::Array2::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let mut mean = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        mean += x[[ni, ci, y, xx]];
                    }
                }
                mean /= m;
                let mut var = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        let d = x[[ni, ci, y, xx]] - mean;
                        var += d * d;
                    }
                }
                var /= m;
                let inv = 1.0 / (var + self.eps).sqrt();
                inv_std[[ni, ci]] = inv;
                let g = self.gamma.value[[ci]];
                let b = self.beta.value[[ci]];
                for y in 0..h {
                    for xx in 0..w {
                        let xh = (x[[ni, ci, y, xx]] - mean) * inv;
                        normalized[[ni, ci, y, xx]] = xh;
                        out[[ni, ci, y, xx]] = g * xh + b;
                    }
                }
            }
        }
        (out, InstanceNorm2dCache { normalized, inv_std })
    }

    pub fn backward(&mut self, cache: &InstanceNorm2dCache, dy: &Tensor) -> Tensor {
        let (n, c, h, w) = dy.dim();
        let m = (h * w) as f64;
        let mut dx = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let g = self.gamma.value[[ci]];
                let inv = cache.inv_std[[ni, ci]];
                // Accumulate the two means the compact formula needs.
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                let mut dgamma = 0.0;
                let mut dbeta = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        let d = dy[[ni, ci, y, xx]];
                        let xh = cache.normalized[[ni, ci, y, xx]];
                        let dxh = d * g;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        dgamma += d * xh;
                        dbeta += d;
                    }
                }
                self.gamma.grad[[ci]] += dgamma;
                self.beta.grad[[ci]] += dbeta;
                let mean_dxh = sum_dxh / m;
                let mean_dxh_xh = sum_dxh_xh / m;
                for y in 0..h {
                    for xx in 0..w {
                        let dxh = dy[[ni, ci, y, xx]] * g;
                        let xh = cache.normalized[[ni, ci, y, xx]];
                        dx[[ni, ci, y, xx]] = inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                    }
                }
            }
        }
        dx
    }

    /// Input gradient only, for frozen layers.
    pub fn backward_data(&self, cache: &InstanceNorm2dCache, dy: &Tensor) -> Tensor {
        let (n, c, h, w) = dy.dim();
        let m = (h * w) as f64;
        let mut dx = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let g = self.gamma.value[[ci]];
                let inv = cache.inv_std[[ni, ci]];
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        let dxh = dy[[ni, ci, y, xx]] * g;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * cache.normalized[[ni, ci, y, xx]];
                    }
                }
                let mean_dxh = sum_dxh / m;
                let mean_dxh_xh = sum_dxh_xh / m;
                for y in 0..h {
                    for xx in 0..w {
                        let dxh = dy[[ni, ci, y, xx]] * g;
                        let xh = cache.normalized[[ni, ci, y, xx]];
                        dx[[ni, ci, y, xx]] = inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                    }
                }
            }
        }
        dx
    }

    pub fn params(&self, prefix: &str) -> ParamRefs<'_> {
        vec![
            (format!("{prefix}.gamma"), &self.gamma),
            (format!("{prefix}.beta"), &self.beta),
        ]
    }

    pub fn params_mut(&mut self, prefix: &str) -> ParamRefsMut<'_> {
        vec![
            (format!("{prefix}.gamma"), &mut self.gamma),
            (format!("{prefix}.beta"), &mut self.beta),
        ]
    }
}

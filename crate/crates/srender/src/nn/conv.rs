//! Strided 2-D convolution and its transpose, built on im2col/col2im so both
//! forward and backward passes reduce to one matrix product each.

use ndarray::{s, Array2, Array4};
use rand::Rng;

use super::{he_init, Param, ParamRefs, ParamRefsMut, Tensor};

/// Output side length of a convolution: `floor((n + 2p - k) / s) + 1`.
pub fn conv_out_side(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Output side length of a transposed convolution:
/// `(n - 1) * s - 2p + k + output_pad`.
pub fn conv_transpose_out_side(
    n: usize,
    k: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> usize {
    (n - 1) * stride + k + output_pad - 2 * pad
}

/// Gathers sliding windows of one sample `(C, H, W)` into a matrix of shape
/// `(C*KH*KW, OH*OW)`. Out-of-bounds taps read as zero.
fn im2col(
    x: &ndarray::ArrayView3<'_, f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Scatters a column matrix back onto an image plane, accumulating where
/// windows overlap. Exact adjoint of [`im2col`].
fn col2im(
    cols: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> ndarray::Array3<f64> {
    let mut x = ndarray::Array3::zeros((c, h, w));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += cols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    x
}

/// Cache for the convolution backward pass: the input is enough, columns are
/// regathered on demand to keep memory proportional to activations.
pub struct Conv2dCache {
    input: Tensor,
}

/// `out = W * x + b` over sliding windows; weight layout `(O, I, KH, KW)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::new(he_init(
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            )),
            bias: Param::zeros(&[out_channels]),
            stride,
            pad,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn out_side(&self, n: usize) -> usize {
        conv_out_side(n, self.kernel, self.stride, self.pad)
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let k = self.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, self.in_channels * k * k))
            .expect("contiguous weight")
            .to_owned()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = (self.out_side(h), self.out_side(w));
        let wmat = self.weight_matrix();
        let mut out = Array4::zeros((n, self.out_channels, oh, ow));
        for ni in 0..n {
            let cols = im2col(
                &x.slice(s![ni, .., .., ..]),
                self.kernel,
                self.kernel,
                self.stride,
                self.pad,
                oh,
                ow,
            );
            let y = wmat.dot(&cols); // (O, OH*OW)
            for o in 0..self.out_channels {
                let b = self.bias.value[[o]];
                for oy in 0..oh {
                    for ox in 0..ow {
                        out[[ni, o, oy, ox]] = y[[o, oy * ow + ox]] + b;
                    }
                }
            }
        }
        out
    }

    pub fn forward_t(&self, x: &Tensor) -> (Tensor, Conv2dCache) {
        let out = self.forward(x);
        (out, Conv2dCache { input: x.clone() })
    }

    /// Accumulates dW/db into the layer and returns dX.
    pub fn backward(&mut self, cache: &Conv2dCache, dy: &Tensor) -> Tensor {
        let x = &cache.input;
        let (n, _, h, w) = x.dim();
        let (_, o, oh, ow) = dy.dim();
        let k = self.kernel;
        let wmat = self.weight_matrix();
        let mut dx = Array4::zeros(x.raw_dim());
        let mut dwmat = Array2::<f64>::zeros((o, self.in_channels * k * k));
        for ni in 0..n {
            let cols = im2col(
                &x.slice(s![ni, .., .., ..]),
                k,
                k,
                self.stride,
                self.pad,
                oh,
                ow,
            );
            let mut dy_mat = Array2::zeros((o, oh * ow));
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        dy_mat[[oc, oy * ow + ox]] = dy[[ni, oc, oy, ox]];
                    }
                }
            }
            dwmat = dwmat + dy_mat.dot(&cols.t());
            let dcols = wmat.t().dot(&dy_mat);
            let dxi = col2im(&dcols, self.in_channels, h, w, k, k, self.stride, self.pad, oh, ow);
            dx.slice_mut(s![ni, .., .., ..]).assign(&dxi);
            for oc in 0..o {
                let mut acc = 0.0;
                for oy in 0..oh {
                    for ox in 0..ow {
                        acc += dy[[ni, oc, oy, ox]];
                    }
                }
                self.bias.grad[[oc]] += acc;
            }
        }
        let dw = dwmat
            .into_shape_with_order((o, self.in_channels, k, k))
            .expect("shape");
        self.weight.grad += &dw.into_dyn();
        dx
    }

    /// Input gradient only, for frozen layers: no parameter gradients are
    /// touched, so `&self` suffices.
    pub fn backward_data(&self, cache: &Conv2dCache, dy: &Tensor) -> Tensor {
        let (n, o, oh, ow) = dy.dim();
        let k = self.kernel;
        let wmat = self.weight_matrix();
        let (_, _, h, w) = cache.input.dim();
        let mut dx = Array4::zeros((n, self.in_channels, h, w));
        for ni in 0..n {
            let mut dy_mat = Array2::zeros((o, oh * ow));
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        dy_mat[[oc, oy * ow + ox]] = dy[[ni, oc, oy, ox]];
                    }
                }
            }
            let dcols = wmat.t().dot(&dy_mat);
            let dxi = col2im(&dcols, self.in_channels, h, w, k, k, self.stride, self.pad, oh, ow);
            dx.slice_mut(s![ni, .., .., ..]).assign(&dxi);
        }
        dx
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

pub struct ConvTranspose2dCache {
    input: Tensor,
}

/// Transposed (fractionally strided) convolution; weight layout
/// `(I, O, KH, KW)`. Forward scatters, so it is the exact adjoint of a
/// stride-`s` convolution gather.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::new(he_init(
                &[in_channels, out_channels, kernel, kernel],
                fan_in,
                rng,
            )),
            bias: Param::zeros(&[out_channels]),
            stride,
            pad,
            output_pad,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn out_side(&self, n: usize) -> usize {
        conv_transpose_out_side(n, self.kernel, self.stride, self.pad, self.output_pad)
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let k = self.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.in_channels, self.out_channels * k * k))
            .expect("contiguous weight")
            .to_owned()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "transposed conv input channels");
        let (oh, ow) = (self.out_side(h), self.out_side(w));
        let k = self.kernel;
        let wmat = self.weight_matrix(); // (I, O*K*K)
        let mut out = Array4::zeros((n, self.out_channels, oh, ow));
        for ni in 0..n {
            let mut x_mat = Array2::zeros((self.in_channels, h * w));
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        x_mat[[ci, y * w + xx]] = x[[ni, ci, y, xx]];
                    }
                }
            }
            let cols = wmat.t().dot(&x_mat); // (O*K*K, H*W)
            let yi = col2im(&cols, self.out_channels, oh, ow, k, k, self.stride, self.pad, h, w);
            let mut slot = out.slice_mut(s![ni, .., .., ..]);
            slot.assign(&yi);
            for o in 0..self.out_channels {
                let b = self.bias.value[[o]];
                slot.slice_mut(s![o, .., ..]).mapv_inplace(|v| v + b);
            }
        }
        out
    }

    pub fn forward_t(&self, x: &Tensor) -> (Tensor, ConvTranspose2dCache) {
        let out = self.forward(x);
        (out, ConvTranspose2dCache { input: x.clone() })
    }

    pub fn backward(&mut self, cache: &ConvTranspose2dCache, dy: &Tensor) -> Tensor {
        let x = &cache.input;
        let (n, _, h, w) = x.dim();
        let (_, _, oh, ow) = dy.dim();
        let k = self.kernel;
        let wmat = self.weight_matrix();
        let mut dx = Array4::zeros(x.raw_dim());
        let mut dwmat = Array2::<f64>::zeros((self.in_channels, self.out_channels * k * k));
        for ni in 0..n {
            // Gradient w.r.t. input gathers dy exactly like a forward conv.
            let dy_cols = im2col(
                &dy.slice(s![ni, .., .., ..]),
                k,
                k,
                self.stride,
                self.pad,
                h,
                w,
            ); // (O*K*K, H*W); output grid here is the *input* grid
            let dx_mat = wmat.dot(&dy_cols); // (I, H*W)
            for ci in 0..self.in_channels {
                for y in 0..h {
                    for xx in 0..w {
                        dx[[ni, ci, y, xx]] = dx_mat[[ci, y * w + xx]];
                    }
                }
            }
            let mut x_mat = Array2::zeros((self.in_channels, h * w));
            for ci in 0..self.in_channels {
                for y in 0..h {
                    for xx in 0..w {
                        x_mat[[ci, y * w + xx]] = x[[ni, ci, y, xx]];
                    }
                }
            }
            dwmat = dwmat + x_mat.dot(&dy_cols.t());
            for o in 0..self.out_channels {
                let mut acc = 0.0;
                for oy in 0..oh {
                    for ox in 0..ow {
                        acc += dy[[ni, o, oy, ox]];
                    }
                }
                self.bias.grad[[o]] += acc;
            }
        }
        let dw = dwmat
            .into_shape_with_order((self.in_channels, self.out_channels, k, k))
            .expect("shape");
        self.weight.grad += &dw.into_dyn();
        dx
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

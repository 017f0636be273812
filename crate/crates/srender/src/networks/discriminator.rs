//! Patch discriminator: a short stack of 4x4 convolutions, stride 2 except
//! the last two layers, leaky rectifiers, and a sigmoid patch grid. The two
//! training-time discriminators share this architecture and differ only in
//! input scale. The condition and the judged image enter channel-concatenated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generator::fingerprint_str;
use crate::nn::{
    Activation, ActivationCache, Conv2d, Conv2dCache, InstanceNorm2d, InstanceNorm2dCache,
    NnError, ParamRefs, ParamRefsMut, Tensor,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub n_layers: usize,
    pub kernel: usize,
}

impl DiscriminatorSpec {
    pub fn paper(in_channels: usize) -> Self {
        Self {
            in_channels,
            base_channels: 64,
            n_layers: 5,
            kernel: 4,
        }
    }

    pub fn toy(in_channels: usize) -> Self {
        Self {
            in_channels,
            base_channels: 16,
            n_layers: 5,
            kernel: 4,
        }
    }

    /// Shallow narrow variant for finite-difference checks: 159 parameters.
    pub fn micro() -> Self {
        Self {
            in_channels: 2,
            base_channels: 2,
            n_layers: 3,
            kernel: 3,
        }
    }

    /// Stride per layer: 2 until the last two layers, then 1.
    pub fn stride(&self, layer: usize) -> usize {
        if layer + 2 < self.n_layers {
            2
        } else {
            1
        }
    }

    /// Channel width entering layer `i`; doubles per layer from the base.
    fn width(&self, i: usize) -> usize {
        self.base_channels << i
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_str(&format!(
            "discriminator:in={},base={},layers={},kernel={}",
            self.in_channels, self.base_channels, self.n_layers, self.kernel
        ))
    }

    /// Side length of the score grid for a given input side, by the
    /// convolution arithmetic of every layer in order.
    pub fn grid_side(&self, mut side: usize) -> usize {
        for i in 0..self.n_layers {
            side = crate::nn::conv_out_side(side, self.kernel, self.stride(i), 1);
        }
        side
    }
}

struct DLayer {
    conv: Conv2d,
    norm: Option<InstanceNorm2d>,
    act: Activation,
}

pub struct DLayerCache {
    conv: Conv2dCache,
    norm: Option<InstanceNorm2dCache>,
    act: ActivationCache,
}

pub struct DiscriminatorCache {
    layers: Vec<DLayerCache>,
}

pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    layers: Vec<DLayer>,
}

impl Discriminator {
    pub fn new<R: Rng>(spec: DiscriminatorSpec, rng: &mut R) -> Self {
        let mut layers = Vec::new();
        for i in 0..spec.n_layers {
            let last = i + 1 == spec.n_layers;
            let (cin, cout) = if last {
                (spec.width(i - 1).min(512), 1)
            } else if i == 0 {
                (spec.in_channels, spec.width(0))
            } else {
                (spec.width(i - 1).min(512), spec.width(i).min(512))
            };
            let conv = Conv2d::new(cin, cout, spec.kernel, spec.stride(i), 1, rng);
            // No normalization on the first layer (raw intensities carry
            // signal) nor on the single-channel score layer.
            let norm = if i == 0 || last {
                None
            } else {
                Some(InstanceNorm2d::new(cout))
            };
            let act = if last {
                Activation::sigmoid()
            } else {
                Activation::leaky_relu(0.2)
            };
            layers.push(DLayer { conv, norm, act });
        }
        Self { spec, layers }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        let (_, c, h, w) = x.dim();
        if c != self.spec.in_channels {
            return Err(NnError::ShapeMismatch(format!(
                "discriminator expects {} channels, got {c}",
                self.spec.in_channels
            )));
        }
        if self.spec.grid_side(h) == 0 || self.spec.grid_side(w) == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "input {h}x{w} too small for the score grid"
            )));
        }
        Ok(())
    }

    /// Score grid only.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Ok(self.forward_features(x)?.pop().expect("nonempty"))
    }

    /// Post-activation outputs of every layer; the last entry is the sigmoid
    /// patch grid.
    pub fn forward_features(&self, x: &Tensor) -> Result<Vec<Tensor>, NnError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.conv.forward(&h);
            if let Some(norm) = &layer.norm {
                h = norm.forward(&h);
            }
            h = layer.act.forward(&h);
            acts.push(h.clone());
        }
        Ok(acts)
    }

    pub fn forward_features_t(
        &self,
        x: &Tensor,
    ) -> Result<(Vec<Tensor>, DiscriminatorCache), NnError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (a, conv) = layer.conv.forward_t(&h);
            let (a, norm) = match &layer.norm {
                Some(n) => {
                    let (a, c) = n.forward_t(&a);
                    (a, Some(c))
                }
                None => (a, None),
            };
            let (a, act) = layer.act.forward_t(&a);
            h = a.clone();
            acts.push(a);
            caches.push(DLayerCache { conv, norm, act });
        }
        Ok((acts, DiscriminatorCache { layers: caches }))
    }

    /// Backward with a gradient injected at every layer's activation output
    /// (`dacts[i]`, zeros where a layer receives none). Accumulates parameter
    /// gradients; returns the gradient on the concatenated input.
    pub fn backward(&mut self, cache: &DiscriminatorCache, dacts: &[Tensor]) -> Tensor {
        assert_eq!(dacts.len(), self.layers.len(), "one gradient per layer");
        let mut d = dacts.last().expect("nonempty").clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &mut self.layers[i];
            let lc = &cache.layers[i];
            let mut g = layer.act.backward(&lc.act, &d);
            if let (Some(norm), Some(nc)) = (&mut layer.norm, &lc.norm) {
                g = norm.backward(nc, &g);
            }
            d = layer.conv.backward(&lc.conv, &g);
            if i > 0 {
                d += &dacts[i - 1];
            }
        }
        d
    }

    /// Frozen twin of [`backward`]: same flow, no parameter gradients.
    pub fn backward_data(&self, cache: &DiscriminatorCache, dacts: &[Tensor]) -> Tensor {
        assert_eq!(dacts.len(), self.layers.len(), "one gradient per layer");
        let mut d = dacts.last().expect("nonempty").clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let lc = &cache.layers[i];
            let mut g = layer.act.backward(&lc.act, &d);
            if let (Some(norm), Some(nc)) = (&layer.norm, &lc.norm) {
                g = norm.backward_data(nc, &g);
            }
            d = layer.conv.backward_data(&lc.conv, &g);
            if i > 0 {
                d += &dacts[i - 1];
            }
        }
        d
    }

    pub fn params(&self, prefix: &str) -> ParamRefs<'_> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.conv.params(&format!("{prefix}.l{i}")));
            if let Some(norm) = &layer.norm {
                out.extend(norm.params(&format!("{prefix}.l{i}.norm")));
            }
        }
        out
    }

    pub fn params_mut(&mut self, prefix: &str) -> ParamRefsMut<'_> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.conv.params_mut(&format!("{prefix}.l{i}")));
            if let Some(norm) = &mut layer.norm {
                out.extend(norm.params_mut(&format!("{prefix}.l{i}.norm")));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut("d") {
            p.zero_grad();
        }
    }
}

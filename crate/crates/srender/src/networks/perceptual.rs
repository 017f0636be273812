//! Frozen perceptual feature extractor: four convolution-rectifier stages
//! tapped at cumulative strides 1, 2, 4, 8. Weights are derived from a fixed
//! documented seed at construction and never change, so feature distances
//! are reproducible across processes with no external weight download; a
//! classification-pretrained network can be swapped in through the same
//! interface if one is available.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generator::fingerprint_str;
use crate::nn::{
    Activation, ActivationCache, Conv2d, Conv2dCache, NnError, ParamRefs, Tensor,
};

/// Seed behind the bundled weights. Changing it changes every perceptual
/// distance, so it is part of the network fingerprint.
pub const PHI_WEIGHT_SEED: u64 = 0x7065_7263; // "perc"

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptualSpec {
    pub in_channels: usize,
    pub channels: [usize; 4],
}

impl PerceptualSpec {
    pub fn bundled(in_channels: usize) -> Self {
        Self {
            in_channels,
            channels: [8, 16, 32, 64],
        }
    }

    /// Narrow variant for finite-difference checks: 134 parameters.
    pub fn micro() -> Self {
        Self {
            in_channels: 1,
            channels: [2, 2, 2, 2],
        }
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_str(&format!(
            "perceptual:in={},channels={:?},seed={PHI_WEIGHT_SEED}",
            self.in_channels, self.channels
        ))
    }
}

pub struct Perceptual {
    pub spec: PerceptualSpec,
    stages: Vec<Conv2d>,
}

pub struct PerceptualCache {
    stages: Vec<(Conv2dCache, ActivationCache)>,
}

impl Perceptual {
    /// Construction is deterministic: the weights depend only on the spec.
    pub fn new(spec: PerceptualSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(PHI_WEIGHT_SEED);
        let mut stages = Vec::new();
        let mut cin = spec.in_channels;
        for (i, &cout) in spec.channels.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            stages.push(Conv2d::new(cin, cout, 3, stride, 1, &mut rng));
            cin = cout;
        }
        Self { spec, stages }
    }

    pub fn n_taps(&self) -> usize {
        self.stages.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        let (_, c, h, w) = x.dim();
        if c != self.spec.in_channels {
            return Err(NnError::ShapeMismatch(format!(
                "perceptual extractor expects {} channels, got {c}",
                self.spec.in_channels
            )));
        }
        if h < 8 || w < 8 {
            return Err(NnError::BadShape(format!(
                "input {h}x{w} too small for the stride-8 tap"
            )));
        }
        Ok(())
    }

    /// Post-rectifier activations of all four stages.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>, NnError> {
        self.check_input(x)?;
        let relu = Activation::relu();
        let mut acts = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for conv in &self.stages {
            h = relu.forward(&conv.forward(&h));
            acts.push(h.clone());
        }
        Ok(acts)
    }

    pub fn features_t(&self, x: &Tensor) -> Result<(Vec<Tensor>, PerceptualCache), NnError> {
        self.check_input(x)?;
        let relu = Activation::relu();
        let mut acts = Vec::with_capacity(self.stages.len());
        let mut caches = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for conv in &self.stages {
            let (a, cc) = conv.forward_t(&h);
            let (a, ac) = relu.forward_t(&a);
            h = a.clone();
            acts.push(a);
            caches.push((cc, ac));
        }
        Ok((acts, PerceptualCache { stages: caches }))
    }

    /// Input gradient from gradients at every tap; parameters stay frozen.
    pub fn backward_data(&self, cache: &PerceptualCache, dacts: &[Tensor]) -> Tensor {
        assert_eq!(dacts.len(), self.stages.len(), "one gradient per tap");
        let relu = Activation::relu();
        let mut d = dacts.last().expect("nonempty").clone();
        for i in (0..self.stages.len()).rev() {
            let (cc, ac) = &cache.stages[i];
            let g = relu.backward(ac, &d);
            d = self.stages[i].backward_data(cc, &g);
            if i > 0 {
                d += &dacts[i - 1];
            }
        }
        d
    }

    pub fn params(&self) -> ParamRefs<'_> {
        let mut out = Vec::new();
        for (i, conv) in self.stages.iter().enumerate() {
            out.extend(conv.params(&format!("phi.stage{i}")));
        }
        out
    }

    /// Only the checkpoint walk may touch these; nothing else gets mutable
    /// access, which is what keeps the freeze contract structural.
    pub(crate) fn params_mut_for_checkpoint(&mut self) -> crate::nn::ParamRefsMut<'_> {
        let mut out = Vec::new();
        for (i, conv) in self.stages.iter_mut().enumerate() {
            out.extend(conv.params_mut(&format!("phi.stage{i}")));
        }
        out
    }
}

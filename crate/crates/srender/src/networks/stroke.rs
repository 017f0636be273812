//! Stroke-type classifier: an input convolution, one densely connected
//! block, an output convolution, global average pooling, and a 7-way linear
//! head. Trained once on labeled patches, then frozen; during generator
//! training only its activations are read.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generator::fingerprint_str;
use crate::nn::{
    concat_channels, global_avg_pool, global_avg_pool_backward, softmax_rows, split_channels,
    Activation, ActivationCache, Conv2d, Conv2dCache, InstanceNorm2d, InstanceNorm2dCache,
    Linear, LinearCache, NnError, ParamRefs, ParamRefsMut, Tensor,
};

/// The seven stroke types, in their fixed one-hot order. `Clips` preserves
/// the source vocabulary verbatim; it plausibly means "lips" but renaming it
/// here would silently diverge from the labeling convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrokeLabel {
    Skin,
    Hair,
    Boundary,
    EyeBrow,
    Eye,
    Clips,
    Ear,
}

impl StrokeLabel {
    pub const COUNT: usize = 7;

    pub const ALL: [StrokeLabel; 7] = [
        StrokeLabel::Skin,
        StrokeLabel::Hair,
        StrokeLabel::Boundary,
        StrokeLabel::EyeBrow,
        StrokeLabel::Eye,
        StrokeLabel::Clips,
        StrokeLabel::Ear,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).expect("member")
    }

    pub fn from_index(i: usize) -> Option<StrokeLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            StrokeLabel::Skin => "skin",
            StrokeLabel::Hair => "hair",
            StrokeLabel::Boundary => "boundary",
            StrokeLabel::EyeBrow => "eye_brow",
            StrokeLabel::Eye => "eye",
            StrokeLabel::Clips => "clips",
            StrokeLabel::Ear => "ear",
        }
    }

    pub fn from_name(name: &str) -> Option<StrokeLabel> {
        Self::ALL.iter().copied().find(|l| l.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrokeClassifierSpec {
    pub patch_size: usize,
    pub in_channels: usize,
    pub stem_channels: usize,
    pub dense_layers: usize,
    pub growth: usize,
    pub out_channels: usize,
}

impl Default for StrokeClassifierSpec {
    fn default() -> Self {
        Self {
            patch_size: 64,
            in_channels: 1,
            stem_channels: 16,
            dense_layers: 4,
            growth: 16,
            out_channels: 64,
        }
    }
}

impl StrokeClassifierSpec {
    /// Tiny variant for finite-difference checks: 161 parameters.
    pub fn micro() -> Self {
        Self {
            patch_size: 8,
            in_channels: 1,
            stem_channels: 2,
            dense_layers: 1,
            growth: 2,
            out_channels: 2,
        }
    }

    /// Channels leaving the dense block.
    pub fn dense_out_channels(&self) -> usize {
        self.stem_channels + self.dense_layers * self.growth
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_str(&format!(
            "stroke:patch={},in={},stem={},dense={},growth={},out={},classes={}",
            self.patch_size,
            self.in_channels,
            self.stem_channels,
            self.dense_layers,
            self.growth,
            self.out_channels,
            StrokeLabel::COUNT
        ))
    }
}

/// One dense-block stage: normalize and rectify the running concatenation,
/// convolve to `growth` new channels, append.
struct DenseLayer {
    norm: InstanceNorm2d,
    conv: Conv2d,
}

pub struct StrokeClassifier {
    pub spec: StrokeClassifierSpec,
    stem: Conv2d,
    dense: Vec<DenseLayer>,
    out_conv: Conv2d,
    out_norm: InstanceNorm2d,
    head: Linear,
}

struct DenseLayerCache {
    norm: InstanceNorm2dCache,
    act: ActivationCache,
    conv: Conv2dCache,
}

pub struct StrokeFeatureCache {
    stem: Conv2dCache,
    dense: Vec<DenseLayerCache>,
    out_conv: Conv2dCache,
    out_norm: InstanceNorm2dCache,
    out_act: ActivationCache,
    out_hw: (usize, usize),
}

pub struct StrokeForwardCache {
    features: StrokeFeatureCache,
    head: LinearCache,
}

impl StrokeClassifier {
    pub fn new<R: Rng>(spec: StrokeClassifierSpec, rng: &mut R) -> Self {
        let stem = Conv2d::new(spec.in_channels, spec.stem_channels, 3, 2, 1, rng);
        let mut dense = Vec::new();
        for l in 0..spec.dense_layers {
            let cin = spec.stem_channels + l * spec.growth;
            dense.push(DenseLayer {
                norm: InstanceNorm2d::new(cin),
                conv: Conv2d::new(cin, spec.growth, 3, 1, 1, rng),
            });
        }
        let out_conv = Conv2d::new(spec.dense_out_channels(), spec.out_channels, 3, 2, 1, rng);
        let out_norm = InstanceNorm2d::new(spec.out_channels);
        let head = Linear::new(spec.out_channels, StrokeLabel::COUNT, rng);
        Self {
            spec,
            stem,
            dense,
            out_conv,
            out_norm,
            head,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        let (_, c, h, w) = x.dim();
        let p = self.spec.patch_size;
        if c != self.spec.in_channels || h != p || w != p {
            return Err(NnError::BadShape(format!(
                "stroke classifier expects {}x{p}x{p} patches, got {c}x{h}x{w}",
                self.spec.in_channels
            )));
        }
        Ok(())
    }

    /// The two activation taps read by the stroke loss: the dense-block
    /// output and the rectified output-convolution features.
    pub fn features(&self, x: &Tensor) -> Result<[Tensor; 2], NnError> {
        let (f, _) = self.features_t(x)?;
        Ok(f)
    }

    pub fn features_t(&self, x: &Tensor) -> Result<([Tensor; 2], StrokeFeatureCache), NnError> {
        self.check_input(x)?;
        let relu = Activation::relu();
        let (mut cat, stem) = self.stem.forward_t(x);
        let mut dense_caches = Vec::new();
        for layer in &self.dense {
            let (a, norm) = layer.norm.forward_t(&cat);
            let (a, act) = relu.forward_t(&a);
            let (h, conv) = layer.conv.forward_t(&a);
            cat = concat_channels(&cat, &h);
            dense_caches.push(DenseLayerCache { norm, act, conv });
        }
        let dense_out = cat;
        let (o, out_conv) = self.out_conv.forward_t(&dense_out);
        let (o, out_norm) = self.out_norm.forward_t(&o);
        let (out_act, out_act_cache) = relu.forward_t(&o);
        let (_, _, oh, ow) = out_act.dim();
        Ok((
            [dense_out, out_act],
            StrokeFeatureCache {
                stem,
                dense: dense_caches,
                out_conv,
                out_norm,
                out_act: out_act_cache,
                out_hw: (oh, ow),
            },
        ))
    }

    /// Class logits `(N, 7)`.
    pub fn forward_logits(&self, x: &Tensor) -> Result<Array2<f64>, NnError> {
        let ([_, out_act], _) = &self.features_t(x)?;
        Ok(self.head.forward(&global_avg_pool(out_act)))
    }

    pub fn forward_logits_t(
        &self,
        x: &Tensor,
    ) -> Result<(Array2<f64>, StrokeForwardCache), NnError> {
        let ([_, out_act], features) = self.features_t(x)?;
        let pooled = global_avg_pool(&out_act);
        let (logits, head) = self.head.forward_t(&pooled);
        Ok((logits, StrokeForwardCache { features, head }))
    }

    /// Probability vectors `(N, 7)`: nonnegative rows summing to 1.
    pub fn forward_probs(&self, x: &Tensor) -> Result<Array2<f64>, NnError> {
        Ok(softmax_rows(&self.forward_logits(x)?))
    }

    /// Training backward from the logit gradient; accumulates everywhere.
    pub fn backward_logits(&mut self, cache: &StrokeForwardCache, dlogits: &Array2<f64>) -> Tensor {
        let dpooled = self.head.backward(&cache.head, dlogits);
        let (oh, ow) = cache.features.out_hw;
        let d_out_act = global_avg_pool_backward(&dpooled, oh, ow);
        let relu = Activation::relu();
        let fc = &cache.features;
        let d = relu.backward(&fc.out_act, &d_out_act);
        let d = self.out_norm.backward(&fc.out_norm, &d);
        let mut d_cat = self.out_conv.backward(&fc.out_conv, &d);
        for (layer, lc) in self.dense.iter_mut().zip(&fc.dense).rev() {
            let keep = d_cat.dim().1 - self.spec.growth;
            let (d_prev, d_h) = split_channels(&d_cat, keep);
            let d = layer.conv.backward(&lc.conv, &d_h);
            let d = relu.backward(&lc.act, &d);
            let d = layer.norm.backward(&lc.norm, &d);
            d_cat = d_prev + d;
        }
        self.stem.backward(&fc.stem, &d_cat)
    }

    /// Frozen backward from gradients at the two feature taps; returns the
    /// patch gradient without touching any parameter.
    pub fn backward_features_data(
        &self,
        cache: &StrokeFeatureCache,
        d_dense_out: &Tensor,
        d_out_act: &Tensor,
    ) -> Tensor {
        let relu = Activation::relu();
        let d = relu.backward(&cache.out_act, d_out_act);
        let d = self.out_norm.backward_data(&cache.out_norm, &d);
        let mut d_cat = self.out_conv.backward_data(&cache.out_conv, &d) + d_dense_out;
        for (layer, lc) in self.dense.iter().zip(&cache.dense).rev() {
            let keep = d_cat.dim().1 - self.spec.growth;
            let (d_prev, d_h) = split_channels(&d_cat, keep);
            let d = layer.conv.backward_data(&lc.conv, &d_h);
            let d = relu.backward(&lc.act, &d);
            let d = layer.norm.backward_data(&lc.norm, &d);
            d_cat = d_prev + d;
        }
        self.stem.backward_data(&cache.stem, &d_cat)
    }

    pub fn params(&self) -> ParamRefs<'_> {
        let mut out = self.stem.params("psi.stem");
        for (i, layer) in self.dense.iter().enumerate() {
            out.extend(layer.norm.params(&format!("psi.dense{i}.norm")));
            out.extend(layer.conv.params(&format!("psi.dense{i}.conv")));
        }
        out.extend(self.out_conv.params("psi.out_conv"));
        out.extend(self.out_norm.params("psi.out_norm"));
        out.extend(self.head.params("psi.head"));
        out
    }

    pub fn params_mut(&mut self) -> ParamRefsMut<'_> {
        let mut out = self.stem.params_mut("psi.stem");
        for (i, layer) in self.dense.iter_mut().enumerate() {
            out.extend(layer.norm.params_mut(&format!("psi.dense{i}.norm")));
            out.extend(layer.conv.params_mut(&format!("psi.dense{i}.conv")));
        }
        out.extend(self.out_conv.params_mut("psi.out_conv"));
        out.extend(self.out_norm.params_mut("psi.out_norm"));
        out.extend(self.head.params_mut("psi.head"));
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;
    use ndarray::Array4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn patch(n: usize, side: usize) -> Tensor {
        Array4::from_shape_fn((n, 1, side, side), |(s, _, y, x)| {
            ((s * 41 + y * 11 + x * 3) % 23) as f64 / 23.0
        })
    }

    #[test]
    fn labels_are_exactly_seven_with_stable_round_trip() {
        assert_eq!(StrokeLabel::COUNT, 7);
        assert_eq!(StrokeLabel::ALL.len(), 7);
        for (i, l) in StrokeLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(StrokeLabel::from_index(i), Some(*l));
            assert_eq!(StrokeLabel::from_name(l.name()), Some(*l));
        }
        assert_eq!(StrokeLabel::from_index(7), None);
    }

    #[test]
    fn probabilities_have_seven_entries_summing_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = StrokeClassifier::new(StrokeClassifierSpec::default(), &mut rng);
        let p = psi.forward_probs(&patch(2, 64)).unwrap();
        assert_eq!(p.dim(), (2, 7));
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn wrong_patch_size_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = StrokeClassifier::new(StrokeClassifierSpec::default(), &mut rng);
        assert!(matches!(
            psi.forward_probs(&patch(1, 32)),
            Err(NnError::BadShape(_))
        ));
    }

    #[test]
    fn micro_spec_is_small_enough_for_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = StrokeClassifier::new(StrokeClassifierSpec::micro(), &mut rng);
        assert!(param_count(&psi.params()) <= 200, "{}", param_count(&psi.params()));
    }

    #[test]
    fn classifier_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut psi = StrokeClassifier::new(StrokeClassifierSpec::micro(), &mut rng);
        let x = patch(2, 8);
        let targets = [3usize, 5];
        psi.zero_grad();
        let (logits, cache) = psi.forward_logits_t(&x).unwrap();
        let (_, dlogits) = crate::nn::cross_entropy(&logits, &targets);
        psi.backward_logits(&cache, &dlogits);
        let analytic: Vec<Vec<f64>> = psi
            .params()
            .iter()
            .map(|(_, p)| p.grad.iter().cloned().collect())
            .collect();
        let h = 1e-5;
        let loss_of = |psi: &StrokeClassifier| {
            let logits = psi.forward_logits(&x).unwrap();
            crate::nn::cross_entropy(&logits, &targets).0
        };
        for pi in 0..analytic.len() {
            for ei in 0..analytic[pi].len() {
                {
                    let mut ps = psi.params_mut();
                    ps[pi].1.value.as_slice_mut().unwrap()[ei] += h;
                }
                let fp = loss_of(&psi);
                {
                    let mut ps = psi.params_mut();
                    ps[pi].1.value.as_slice_mut().unwrap()[ei] -= 2.0 * h;
                }
                let fm = loss_of(&psi);
                {
                    let mut ps = psi.params_mut();
                    ps[pi].1.value.as_slice_mut().unwrap()[ei] += h;
                }
                let num = (fp - fm) / (2.0 * h);
                let ana = analytic[pi][ei];
                let scale = ana.abs().max(num.abs()).max(1.0);
                assert!(
                    (ana - num).abs() <= 1e-5 * scale,
                    "param {pi}[{ei}]: {ana} vs {num}"
                );
            }
        }
    }

    #[test]
    fn frozen_feature_backward_matches_finite_differences_on_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = StrokeClassifier::new(StrokeClassifierSpec::micro(), &mut rng);
        let x = patch(1, 8);
        let [f0, f1] = psi.features(&x).unwrap();
        let w0 = crate::nn::gradcheck::probe_weights(ndarray::IxDyn(f0.shape()))
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let w1 = crate::nn::gradcheck::probe_weights(ndarray::IxDyn(f1.shape()))
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap()
            .mapv(|v| v * 1.7);
        let objective = |x: &Tensor| {
            let [f0, f1] = psi.features(x).unwrap();
            f0.iter().zip(w0.iter()).map(|(a, b)| a * b).sum::<f64>()
                + f1.iter().zip(w1.iter()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = psi.features_t(&x).unwrap();
        let dx = psi.backward_features_data(&cache, &w0, &w1);
        let before = crate::nn::param_digest(&psi.params());
        let h = 1e-5;
        let mut xp = x.clone();
        for ei in 0..x.len() {
            xp.as_slice_mut().unwrap()[ei] += h;
            let fp = objective(&xp);
            xp.as_slice_mut().unwrap()[ei] -= 2.0 * h;
            let fm = objective(&xp);
            xp.as_slice_mut().unwrap()[ei] += h;
            let num = (fp - fm) / (2.0 * h);
            let ana = dx.as_slice().unwrap()[ei];
            let scale = ana.abs().max(num.abs()).max(1.0);
            assert!((ana - num).abs() <= 1e-5 * scale, "input[{ei}]: {ana} vs {num}");
        }
        assert_eq!(before, crate::nn::param_digest(&psi.params()));
    }
}

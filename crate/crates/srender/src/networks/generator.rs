//! Residual encoder-decoder generator. One stride-1 entry convolution, a
//! stack of stride-2 downsampling convolutions, residual blocks at the
//! bottleneck, the mirrored transposed stack, and a stride-1 transposed
//! output layer whose squashed range is remapped to `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    Activation, ActivationCache, Conv2d, Conv2dCache, ConvTranspose2d, ConvTranspose2dCache,
    InstanceNorm2d, InstanceNorm2dCache, NnError, ParamRefs, ParamRefsMut, Tensor,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub channel_cap: usize,
    pub n_down: usize,
    pub n_resblocks: usize,
}

impl GeneratorSpec {
    /// Full-scale defaults: 5 convolutional layers (1 entry + 4 downsampling),
    /// 9 residual blocks, 5 transposed layers (4 upsampling + 1 output).
    pub fn paper(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            base_channels: 64,
            channel_cap: 512,
            n_down: 4,
            n_resblocks: 9,
        }
    }

    /// Same depth as the paper profile with thin channels, for 64-pixel runs.
    pub fn toy(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            base_channels: 16,
            channel_cap: 64,
            n_down: 4,
            n_resblocks: 9,
        }
    }

    /// Tiny network for finite-difference gradient checks on 8-pixel images:
    /// full layer structure, single-channel width, 150 parameters.
    pub fn micro() -> Self {
        Self {
            in_channels: 1,
            out_channels: 1,
            base_channels: 1,
            channel_cap: 1,
            n_down: 1,
            n_resblocks: 1,
        }
    }

    /// Encoder channel widths: entry output first, then each downsampling
    /// stage, doubling up to the cap.
    pub fn channels(&self) -> Vec<usize> {
        let mut out = vec![self.base_channels];
        for _ in 0..self.n_down {
            let last = *out.last().expect("nonempty");
            out.push((last * 2).min(self.channel_cap));
        }
        out
    }

    /// `(convolutional, transposed, residual)` layer counts implied by the
    /// spec; the paper profile yields (5, 5, 9).
    pub fn layer_plan(&self) -> (usize, usize, usize) {
        (1 + self.n_down, self.n_down + 1, self.n_resblocks)
    }

    /// Input sides must be divisible by this for the stride-2 stages to
    /// invert exactly.
    pub fn divisor(&self) -> usize {
        1 << self.n_down
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_str(&format!(
            "generator:in={},out={},base={},cap={},down={},res={}",
            self.in_channels,
            self.out_channels,
            self.base_channels,
            self.channel_cap,
            self.n_down,
            self.n_resblocks
        ))
    }
}

pub(crate) fn fingerprint_str(s: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(s.as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

/// conv-norm-relu-conv-norm with an identity skip. Zeroing the second
/// convolution makes the block the identity, since the norm maps a constant
/// zero plane to zero.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub norm1: InstanceNorm2d,
    pub conv2: Conv2d,
    pub norm2: InstanceNorm2d,
}

pub struct ResBlockCache {
    c1: Conv2dCache,
    n1: InstanceNorm2dCache,
    a1: ActivationCache,
    c2: Conv2dCache,
    n2: InstanceNorm2dCache,
}

impl ResBlock {
    fn new<R: Rng>(channels: usize, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::new(channels, channels, 3, 1, 1, rng),
            norm1: InstanceNorm2d::new(channels),
            conv2: Conv2d::new(channels, channels, 3, 1, 1, rng),
            norm2: InstanceNorm2d::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let relu = Activation::relu();
        let h = self.norm1.forward(&self.conv1.forward(x));
        let h = relu.forward(&h);
        let h = self.norm2.forward(&self.conv2.forward(&h));
        x + &h
    }

    fn forward_t(&self, x: &Tensor) -> (Tensor, ResBlockCache) {
        let relu = Activation::relu();
        let (h, c1) = self.conv1.forward_t(x);
        let (h, n1) = self.norm1.forward_t(&h);
        let (h, a1) = relu.forward_t(&h);
        let (h, c2) = self.conv2.forward_t(&h);
        let (h, n2) = self.norm2.forward_t(&h);
        (x + &h, ResBlockCache { c1, n1, a1, c2, n2 })
    }

    fn backward(&mut self, cache: &ResBlockCache, dy: &Tensor) -> Tensor {
        let relu = Activation::relu();
        let d = self.norm2.backward(&cache.n2, dy);
        let d = self.conv2.backward(&cache.c2, &d);
        let d = relu.backward(&cache.a1, &d);
        let d = self.norm1.backward(&cache.n1, &d);
        let d = self.conv1.backward(&cache.c1, &d);
        d + dy
    }

    fn params(&self, prefix: &str) -> ParamRefs<'_> {
        let mut out = self.conv1.params(&format!("{prefix}.conv1"));
        out.extend(self.norm1.params(&format!("{prefix}.norm1")));
        out.extend(self.conv2.params(&format!("{prefix}.conv2")));
        out.extend(self.norm2.params(&format!("{prefix}.norm2")));
        out
    }

    fn params_mut(&mut self, prefix: &str) -> ParamRefsMut<'_> {
        let mut out = self.conv1.params_mut(&format!("{prefix}.conv1"));
        out.extend(self.norm1.params_mut(&format!("{prefix}.norm1")));
        out.extend(self.conv2.params_mut(&format!("{prefix}.conv2")));
        out.extend(self.norm2.params_mut(&format!("{prefix}.norm2")));
        out
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    entry: Conv2d,
    entry_norm: InstanceNorm2d,
    downs: Vec<(Conv2d, InstanceNorm2d)>,
    res: Vec<ResBlock>,
    ups: Vec<(ConvTranspose2d, InstanceNorm2d)>,
    out: ConvTranspose2d,
}

pub struct GeneratorCache {
    entry: (Conv2dCache, InstanceNorm2dCache, ActivationCache),
    downs: Vec<(Conv2dCache, InstanceNorm2dCache, ActivationCache)>,
    res: Vec<ResBlockCache>,
    ups: Vec<(ConvTranspose2dCache, InstanceNorm2dCache, ActivationCache)>,
    out: (ConvTranspose2dCache, ActivationCache),
}

impl Generator {
    pub fn new<R: Rng>(spec: GeneratorSpec, rng: &mut R) -> Self {
        let chans = spec.channels();
        let entry = Conv2d::new(spec.in_channels, chans[0], 7, 1, 3, rng);
        let entry_norm = InstanceNorm2d::new(chans[0]);
        let mut downs = Vec::new();
        for i in 0..spec.n_down {
            downs.push((
                Conv2d::new(chans[i], chans[i + 1], 3, 2, 1, rng),
                InstanceNorm2d::new(chans[i + 1]),
            ));
        }
        let bottleneck = *chans.last().expect("nonempty");
        let res = (0..spec.n_resblocks)
            .map(|_| ResBlock::new(bottleneck, rng))
            .collect();
        let mut ups = Vec::new();
        for i in (0..spec.n_down).rev() {
            ups.push((
                ConvTranspose2d::new(chans[i + 1], chans[i], 3, 2, 1, 1, rng),
                InstanceNorm2d::new(chans[i]),
            ));
        }
        let out = ConvTranspose2d::new(chans[0], spec.out_channels, 7, 1, 3, 0, rng);
        Self {
            spec,
            entry,
            entry_norm,
            downs,
            res,
            ups,
            out,
        }
    }

    /// Actual `(convolutional, transposed, residual)` layer counts.
    pub fn layer_counts(&self) -> (usize, usize, usize) {
        (1 + self.downs.len(), self.ups.len() + 1, self.res.len())
    }

    pub fn res_blocks_mut(&mut self) -> &mut Vec<ResBlock> {
        &mut self.res
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        let (_, c, h, w) = x.dim();
        if c != self.spec.in_channels {
            return Err(NnError::BadShape(format!(
                "generator expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        let d = self.spec.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(NnError::BadShape(format!(
                "generator input sides must be divisible by {d}, got {h}x{w}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let relu = Activation::relu();
        let tanh = Activation::tanh();
        let mut h = relu.forward(&self.entry_norm.forward(&self.entry.forward(x)));
        for (conv, norm) in &self.downs {
            h = relu.forward(&norm.forward(&conv.forward(&h)));
        }
        for block in &self.res {
            h = block.forward(&h);
        }
        for (tconv, norm) in &self.ups {
            h = relu.forward(&norm.forward(&tconv.forward(&h)));
        }
        let t = tanh.forward(&self.out.forward(&h));
        Ok(t.mapv(|v| (v + 1.0) * 0.5))
    }

    pub fn forward_t(&self, x: &Tensor) -> Result<(Tensor, GeneratorCache), NnError> {
        self.check_input(x)?;
        let relu = Activation::relu();
        let tanh = Activation::tanh();
        let (h, ec) = self.entry.forward_t(x);
        let (h, en) = self.entry_norm.forward_t(&h);
        let (mut h, ea) = relu.forward_t(&h);
        let mut downs = Vec::new();
        for (conv, norm) in &self.downs {
            let (a, cc) = conv.forward_t(&h);
            let (a, nc) = norm.forward_t(&a);
            let (a, ac) = relu.forward_t(&a);
            h = a;
            downs.push((cc, nc, ac));
        }
        let mut res = Vec::new();
        for block in &self.res {
            let (a, rc) = block.forward_t(&h);
            h = a;
            res.push(rc);
        }
        let mut ups = Vec::new();
        for (tconv, norm) in &self.ups {
            let (a, cc) = tconv.forward_t(&h);
            let (a, nc) = norm.forward_t(&a);
            let (a, ac) = relu.forward_t(&a);
            h = a;
            ups.push((cc, nc, ac));
        }
        let (t, oc) = self.out.forward_t(&h);
        let (t, oa) = tanh.forward_t(&t);
        let y = t.mapv(|v| (v + 1.0) * 0.5);
        Ok((
            y,
            GeneratorCache {
                entry: (ec, en, ea),
                downs,
                res,
                ups,
                out: (oc, oa),
            },
        ))
    }

    /// Accumulates parameter gradients for the whole stack and returns the
    /// input gradient.
    pub fn backward(&mut self, cache: &GeneratorCache, dy: &Tensor) -> Tensor {
        let relu = Activation::relu();
        let tanh = Activation::tanh();
        let mut d = dy.mapv(|v| v * 0.5); // d/dt of (t + 1) / 2
        d = tanh.backward(&cache.out.1, &d);
        d = self.out.backward(&cache.out.0, &d);
        for ((tconv, norm), (cc, nc, ac)) in self.ups.iter_mut().zip(&cache.ups).rev() {
            d = relu.backward(ac, &d);
            d = norm.backward(nc, &d);
            d = tconv.backward(cc, &d);
        }
        for (block, rc) in self.res.iter_mut().zip(&cache.res).rev() {
            d = block.backward(rc, &d);
        }
        for ((conv, norm), (cc, nc, ac)) in self.downs.iter_mut().zip(&cache.downs).rev() {
            d = relu.backward(ac, &d);
            d = norm.backward(nc, &d);
            d = conv.backward(cc, &d);
        }
        d = relu.backward(&cache.entry.2, &d);
        d = self.entry_norm.backward(&cache.entry.1, &d);
        self.entry.backward(&cache.entry.0, &d)
    }

    pub fn params(&self) -> ParamRefs<'_> {
        let mut out = self.entry.params("g.entry");
        out.extend(self.entry_norm.params("g.entry_norm"));
        for (i, (conv, norm)) in self.downs.iter().enumerate() {
            out.extend(conv.params(&format!("g.down{i}")));
            out.extend(norm.params(&format!("g.down{i}.norm")));
        }
        for (i, block) in self.res.iter().enumerate() {
            out.extend(block.params(&format!("g.res{i}")));
        }
        for (i, (tconv, norm)) in self.ups.iter().enumerate() {
            out.extend(tconv.params(&format!("g.up{i}")));
            out.extend(norm.params(&format!("g.up{i}.norm")));
        }
        out.extend(self.out.params("g.out"));
        out
    }

    pub fn params_mut(&mut self) -> ParamRefsMut<'_> {
        let mut out = self.entry.params_mut("g.entry");
        out.extend(self.entry_norm.params_mut("g.entry_norm"));
        for (i, (conv, norm)) in self.downs.iter_mut().enumerate() {
            out.extend(conv.params_mut(&format!("g.down{i}")));
            out.extend(norm.params_mut(&format!("g.down{i}.norm")));
        }
        for (i, block) in self.res.iter_mut().enumerate() {
            out.extend(block.params_mut(&format!("g.res{i}")));
        }
        for (i, (tconv, norm)) in self.ups.iter_mut().enumerate() {
            out.extend(tconv.params_mut(&format!("g.up{i}")));
            out.extend(norm.params_mut(&format!("g.up{i}.norm")));
        }
        out.extend(self.out.params_mut("g.out"));
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }
}

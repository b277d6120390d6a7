//! Network assembly: stem, blocks of composite layers fed by cross-layer
//! mixes, block transitions, and the classifier head.

use crate::cldc::{sum_sources, Cldc};
use crate::error::{Error, Result};
use crate::model::spec::{Connectivity, ModelSpec, Stem};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm, Conv2d, Linear,
    MaxPool, MaxPoolIndices, Mode, Param,
};
use crate::tensor::{Rng, Tensor4};

type Named<'a, T> = Vec<(String, &'a mut T)>;

/// Combines the feature maps of a block into one input.
#[derive(Clone, Debug, PartialEq)]
pub enum Mixer {
    Cldc(Cldc),
    Sum,
}

impl Mixer {
    fn new(connectivity: Connectivity, rows: usize, channels: usize) -> Result<Self> {
        Ok(match connectivity {
            Connectivity::Cldc => Mixer::Cldc(Cldc::new(rows, channels)?),
            Connectivity::Residual => Mixer::Sum,
        })
    }

    pub fn mix(&self, live: &[&Tensor4]) -> Result<Tensor4> {
        match self {
            Mixer::Cldc(c) => c.forward_live(live),
            Mixer::Sum => sum_sources(live),
        }
    }

    fn backward(&mut self, live: &[&Tensor4], dy: &Tensor4) -> Result<Vec<Tensor4>> {
        match self {
            Mixer::Cldc(c) => c.backward_live(live, dy),
            Mixer::Sum => Ok(vec![dy.clone(); live.len()]),
        }
    }

    pub fn as_cldc(&self) -> Option<&Cldc> {
        match self {
            Mixer::Cldc(c) => Some(c),
            Mixer::Sum => None,
        }
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        if let Mixer::Cldc(c) = self {
            out.push((format!("{prefix}.cldc.weight"), &c.weight));
            out.push((format!("{prefix}.cldc.bias"), &c.bias));
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        if let Mixer::Cldc(c) = self {
            out.push((format!("{prefix}.cldc.weight"), &mut c.weight));
            out.push((format!("{prefix}.cldc.bias"), &mut c.bias));
        }
    }
}

fn bn_params<'a>(bn: &'a BatchNorm, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
    out.push((format!("{prefix}.gamma"), &bn.gamma));
    out.push((format!("{prefix}.beta"), &bn.beta));
}

fn bn_buffers<'a>(bn: &'a BatchNorm, prefix: &str, out: &mut Vec<(String, &'a Tensor4)>) {
    out.push((format!("{prefix}.running_mean"), &bn.running_mean));
    out.push((format!("{prefix}.running_var"), &bn.running_var));
}

/// BN → ReLU → 1×1 (W→B) → BN → ReLU → 3×3 (B→B) → BN → ReLU → 1×1 (B→W).
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub bn1: BatchNorm,
    pub conv1: Conv2d,
    pub bn2: BatchNorm,
    pub conv2: Conv2d,
    pub bn3: BatchNorm,
    pub conv3: Conv2d,
    cache: Option<[Tensor4; 6]>,
}

impl Composite {
    fn new(width: usize, base: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            bn1: BatchNorm::new(width)?,
            conv1: Conv2d::he(width, base, 1, 1, 0, rng)?,
            bn2: BatchNorm::new(base)?,
            conv2: Conv2d::he(base, base, 3, 1, 1, rng)?,
            bn3: BatchNorm::new(base)?,
            conv3: Conv2d::he(base, width, 1, 1, 0, rng)?,
            cache: None,
        })
    }

    fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        let r1 = relu(&self.bn1.forward_eval(x)?);
        let r2 = relu(&self.bn2.forward_eval(&self.conv1.forward(&r1)?)?);
        let r3 = relu(&self.bn3.forward_eval(&self.conv2.forward(&r2)?)?);
        self.conv3.forward(&r3)
    }

    fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let a1 = self.bn1.forward(x, Mode::Train)?;
        let r1 = relu(&a1);
        let a2 = self.bn2.forward(&self.conv1.forward(&r1)?, Mode::Train)?;
        let r2 = relu(&a2);
        let a3 = self.bn3.forward(&self.conv2.forward(&r2)?, Mode::Train)?;
        let r3 = relu(&a3);
        let out = self.conv3.forward(&r3)?;
        self.cache = Some([a1, r1, a2, r2, a3, r3]);
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let [a1, r1, a2, r2, a3, r3] = self.cache.take().ok_or(Error::MissingCache {
            op: "composite backward",
        })?;
        let d = self.conv3.backward(&r3, dy)?;
        let d = self.bn3.backward(&relu_backward(&a3, &d)?)?;
        let d = self.conv2.backward(&r2, &d)?;
        let d = self.bn2.backward(&relu_backward(&a2, &d)?)?;
        let d = self.conv1.backward(&r1, &d)?;
        self.bn1.backward(&relu_backward(&a1, &d)?)
    }

    fn collect<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Param)>) {
        bn_params(&self.bn1, &format!("{p}.bn1"), out);
        out.push((format!("{p}.conv1.weight"), &self.conv1.weight));
        bn_params(&self.bn2, &format!("{p}.bn2"), out);
        out.push((format!("{p}.conv2.weight"), &self.conv2.weight));
        bn_params(&self.bn3, &format!("{p}.bn3"), out);
        out.push((format!("{p}.conv3.weight"), &self.conv3.weight));
    }

    fn buffers<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Tensor4)>) {
        bn_buffers(&self.bn1, &format!("{p}.bn1"), out);
        bn_buffers(&self.bn2, &format!("{p}.bn2"), out);
        bn_buffers(&self.bn3, &format!("{p}.bn3"), out);
    }
}

/// One composite layer and the mix that feeds it.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub mixer: Mixer,
    pub composite: Composite,
}

/// Mix of a finished block → BN → ReLU → strided conv. No activation
/// follows the conv.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub mixer: Mixer,
    pub bn: BatchNorm,
    pub conv: Conv2d,
    cache: Option<[Tensor4; 2]>,
}

impl Transition {
    fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        self.conv.forward(&relu(&self.bn.forward_eval(x)?))
    }

    fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let a = self.bn.forward(x, Mode::Train)?;
        let r = relu(&a);
        let out = self.conv.forward(&r)?;
        self.cache = Some([a, r]);
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let [a, r] = self.cache.take().ok_or(Error::MissingCache {
            op: "transition backward",
        })?;
        let d = self.conv.backward(&r, dy)?;
        self.bn.backward(&relu_backward(&a, &d)?)
    }
}

/// Mix of the last block → BN → ReLU → global average pool → linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub mixer: Mixer,
    pub bn: BatchNorm,
    pub linear: Linear,
    cache: Option<[Tensor4; 3]>,
}

impl Head {
    fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        let r = relu(&self.bn.forward_eval(x)?);
        self.linear.forward(&global_avg_pool(&r))
    }

    fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let a = self.bn.forward(x, Mode::Train)?;
        let r = relu(&a);
        let pooled = global_avg_pool(&r);
        let logits = self.linear.forward(&pooled)?;
        self.cache = Some([a, r, pooled]);
        Ok(logits)
    }

    fn backward(&mut self, dlogits: &Tensor4) -> Result<Tensor4> {
        let [a, r, pooled] = self.cache.take().ok_or(Error::MissingCache {
            op: "head backward",
        })?;
        let d = self.linear.backward(&pooled, dlogits)?;
        let d = global_avg_pool_backward(r.shape(), &d)?;
        self.bn.backward(&relu_backward(&a, &d)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StemLayer {
    pub conv: Conv2d,
    pub pool: Option<MaxPool>,
    cache: Option<(Tensor4, Option<MaxPoolIndices>)>,
}

impl StemLayer {
    fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        let y = self.conv.forward(x)?;
        match &self.pool {
            Some(p) => Ok(p.forward(&y)?.0),
            None => Ok(y),
        }
    }

    fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let y = self.conv.forward(x)?;
        let (out, idx) = match &self.pool {
            Some(p) => {
                let (o, i) = p.forward(&y)?;
                (o, Some(i))
            }
            None => (y, None),
        };
        self.cache = Some((x.clone(), idx));
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor4) -> Result<()> {
        let (x, idx) = self.cache.take().ok_or(Error::MissingCache {
            op: "stem backward",
        })?;
        let dy = match (&self.pool, idx) {
            (Some(p), Some(i)) => p.backward(&i, dy)?,
            _ => dy.clone(),
        };
        // The input gradient is not needed.
        self.conv.backward(&x, &dy)?;
        Ok(())
    }
}

/// An instantiated network with its parameter registry.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    pub stem: StemLayer,
    pub blocks: Vec<Vec<Layer>>,
    pub transitions: Vec<Transition>,
    pub head: Head,
    /// Feature maps `h₀ … h_L` of every block from the last train forward.
    maps: Option<Vec<Vec<Tensor4>>>,
}

impl Model {
    /// He-normal convs and classifier, BN (1, 0) with running stats (0, 1),
    /// cross-layer weights 1 and biases 0.
    pub fn build(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let w0 = spec.stem_width();
        let stem = match spec.stem {
            Stem::Cifar => StemLayer {
                conv: Conv2d::he(3, w0, 3, 1, 1, rng)?,
                pool: None,
                cache: None,
            },
            Stem::Imagenet => StemLayer {
                conv: Conv2d::he(3, w0, 7, 2, 3, rng)?,
                pool: Some(MaxPool::new(3, 2, 1)?),
                cache: None,
            },
        };
        let mut blocks = Vec::with_capacity(spec.blocks());
        let mut transitions = Vec::with_capacity(spec.blocks() - 1);
        for k in 0..spec.blocks() {
            let (width, base, count) = (spec.width(k), spec.base_widths[k], spec.layer_counts[k]);
            let mut layers = Vec::with_capacity(count);
            for l in 1..=count {
                layers.push(Layer {
                    mixer: Mixer::new(spec.connectivity, spec.cldc_rows(k, l), width)?,
                    composite: Composite::new(width, base, rng)?,
                });
            }
            blocks.push(layers);
            if k + 1 < spec.blocks() {
                let kernel = spec.transition.kernel();
                transitions.push(Transition {
                    mixer: Mixer::new(spec.connectivity, count + 1, width)?,
                    bn: BatchNorm::new(width)?,
                    conv: Conv2d::he(
                        width,
                        spec.width(k + 1),
                        kernel,
                        2,
                        spec.transition.padding(),
                        rng,
                    )?,
                    cache: None,
                });
            }
        }
        let last = spec.blocks() - 1;
        let width = spec.width(last);
        let head = Head {
            mixer: Mixer::new(spec.connectivity, spec.layer_counts[last] + 1, width)?,
            bn: BatchNorm::new(width)?,
            linear: Linear::he(width, spec.num_classes, rng)?,
            cache: None,
        };
        Ok(Self {
            spec: spec.clone(),
            stem,
            blocks,
            transitions,
            head,
            maps: None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let s = x.shape();
        if s.c != 3 {
            return Err(Error::InvalidArgument(format!(
                "model expects 3-channel images, got {} channels",
                s.c
            )));
        }
        self.spec.block_input_sizes(s.h, s.w)?;
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Inference with running statistics; leaves the model untouched.
    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        self.forward_probe(x, &mut |_, _, _| {})
    }

    /// Eval-mode forward that reports every mixing site: its name, live
    /// sources, and the combined output.
    pub fn forward_probe(
        &self,
        x: &Tensor4,
        probe: &mut dyn FnMut(&str, &[&Tensor4], &Tensor4),
    ) -> Result<Tensor4> {
        self.check_input(x)?;
        let mut h = self.stem.forward_eval(x)?;
        for (k, layers) in self.blocks.iter().enumerate() {
            let mut maps = vec![h];
            for (l, layer) in layers.iter().enumerate() {
                let refs: Vec<&Tensor4> = maps.iter().collect();
                let input = layer.mixer.mix(&refs)?;
                probe(&format!("block{}.layer{}", k + 1, l + 1), &refs, &input);
                let out = layer.composite.forward_eval(&input)?;
                maps.push(out);
            }
            let refs: Vec<&Tensor4> = maps.iter().collect();
            if let Some(t) = self.transitions.get(k) {
                let mixed = t.mixer.mix(&refs)?;
                probe(&format!("transition{}", k + 1), &refs, &mixed);
                h = t.forward_eval(&mixed)?;
            } else {
                let mixed = self.head.mixer.mix(&refs)?;
                probe("head", &refs, &mixed);
                return self.head.forward_eval(&mixed);
            }
        }
        unreachable!("a validated spec has at least one block")
    }

    /// Train-mode forward: batch statistics, running-stat updates, and
    /// caches for [`Self::backward`].
    pub fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        self.maps = None;
        let mut all_maps = Vec::with_capacity(self.blocks.len());
        let mut h = self.stem.forward_train(x)?;
        let mut logits = None;
        for k in 0..self.blocks.len() {
            let mut maps = vec![h.clone()];
            for layer in &mut self.blocks[k] {
                let refs: Vec<&Tensor4> = maps.iter().collect();
                let input = layer.mixer.mix(&refs)?;
                let out = layer.composite.forward_train(&input)?;
                maps.push(out);
            }
            let refs: Vec<&Tensor4> = maps.iter().collect();
            if let Some(t) = self.transitions.get_mut(k) {
                let mixed = t.mixer.mix(&refs)?;
                h = t.forward_train(&mixed)?;
            } else {
                let mixed = self.head.mixer.mix(&refs)?;
                logits = Some(self.head.forward_train(&mixed)?);
            }
            all_maps.push(maps);
        }
        self.maps = Some(all_maps);
        Ok(logits.expect("a validated spec has at least one block"))
    }

    /// Backpropagates `dlogits` through the last train forward,
    /// accumulating into every parameter gradient. Returns the gradient
    /// reaching each block feature map `h₀ … h_L`. Consumes the caches.
    pub fn backward(&mut self, dlogits: &Tensor4) -> Result<Vec<Vec<Tensor4>>> {
        let maps = self.maps.take().ok_or(Error::MissingCache {
            op: "model backward",
        })?;
        let mut all_grads: Vec<Vec<Tensor4>> = vec![Vec::new(); maps.len()];

        let last = maps.len() - 1;
        let d_mixed = self.head.backward(dlogits)?;
        let refs: Vec<&Tensor4> = maps[last].iter().collect();
        let mut dmaps = self.head.mixer.backward(&refs, &d_mixed)?;

        for k in (0..maps.len()).rev() {
            let block_maps = &maps[k];
            for (l, layer) in self.blocks[k].iter_mut().enumerate().rev() {
                // layer l (0-based) produced maps[l + 1] from maps[0..=l]
                let d_input = layer.composite.backward(&dmaps[l + 1])?;
                let refs: Vec<&Tensor4> = block_maps[..=l].iter().collect();
                let grads = layer.mixer.backward(&refs, &d_input)?;
                for (acc, g) in dmaps.iter_mut().zip(&grads) {
                    acc.add_assign(g)?;
                }
            }
            let dh0 = dmaps[0].clone();
            all_grads[k] = std::mem::take(&mut dmaps);
            if k > 0 {
                let t = &mut self.transitions[k - 1];
                let d_mixed = t.backward(&dh0)?;
                let refs: Vec<&Tensor4> = maps[k - 1].iter().collect();
                dmaps = t.mixer.backward(&refs, &d_mixed)?;
            } else {
                self.stem.backward(&dh0)?;
            }
        }
        Ok(all_grads)
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Learnable tensors in registry (topological) order.
    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        out.push(("stem.conv.weight".to_string(), &self.stem.conv.weight));
        for (k, layers) in self.blocks.iter().enumerate() {
            for (l, layer) in layers.iter().enumerate() {
                let p = format!("block{}.layer{}", k + 1, l + 1);
                layer.mixer.collect(&p, &mut out);
                layer.composite.collect(&p, &mut out);
            }
            if let Some(t) = self.transitions.get(k) {
                let p = format!("transition{}", k + 1);
                t.mixer.collect(&p, &mut out);
                bn_params(&t.bn, &format!("{p}.bn"), &mut out);
                out.push((format!("{p}.conv.weight"), &t.conv.weight));
            }
        }
        self.head.mixer.collect("head", &mut out);
        bn_params(&self.head.bn, "head.bn", &mut out);
        out.push(("head.linear.weight".to_string(), &self.head.linear.weight));
        out.push(("head.linear.bias".to_string(), &self.head.linear.bias));
        out
    }

    /// Mutable view of [`Self::params`], same order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.split_registries_mut().0
    }

    /// Batch-norm running statistics, registry order.
    pub fn buffers(&self) -> Vec<(String, &Tensor4)> {
        let mut out = Vec::new();
        for (k, layers) in self.blocks.iter().enumerate() {
            for (l, layer) in layers.iter().enumerate() {
                layer
                    .composite
                    .buffers(&format!("block{}.layer{}", k + 1, l + 1), &mut out);
            }
            if let Some(t) = self.transitions.get(k) {
                bn_buffers(&t.bn, &format!("transition{}.bn", k + 1), &mut out);
            }
        }
        bn_buffers(&self.head.bn, "head.bn", &mut out);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor4)> {
        self.split_registries_mut().1
    }

    /// Every saved tensor: parameters, then running statistics.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor4)> {
        let mut out: Vec<(String, &Tensor4)> = self
            .params()
            .into_iter()
            .map(|(n, p)| (n, &p.value))
            .collect();
        out.extend(self.buffers());
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor4)> {
        let (params, bufs) = self.split_registries_mut();
        let mut out: Vec<(String, &mut Tensor4)> =
            params.into_iter().map(|(n, p)| (n, &mut p.value)).collect();
        out.extend(bufs);
        out
    }

    fn split_registries_mut(&mut self) -> (Named<'_, Param>, Named<'_, Tensor4>) {
        // One traversal so params and running stats can be borrowed together.
        let mut params = Vec::new();
        let mut bufs = Vec::new();
        params.push(("stem.conv.weight".to_string(), &mut self.stem.conv.weight));
        let mut t_iter = self.transitions.iter_mut();
        for (k, layers) in self.blocks.iter_mut().enumerate() {
            for (l, layer) in layers.iter_mut().enumerate() {
                let p = format!("block{}.layer{}", k + 1, l + 1);
                layer.mixer.collect_mut(&p, &mut params);
                let c = &mut layer.composite;
                split_bn(&mut c.bn1, &format!("{p}.bn1"), &mut params, &mut bufs);
                params.push((format!("{p}.conv1.weight"), &mut c.conv1.weight));
                split_bn(&mut c.bn2, &format!("{p}.bn2"), &mut params, &mut bufs);
                params.push((format!("{p}.conv2.weight"), &mut c.conv2.weight));
                split_bn(&mut c.bn3, &format!("{p}.bn3"), &mut params, &mut bufs);
                params.push((format!("{p}.conv3.weight"), &mut c.conv3.weight));
            }
            if let Some(t) = t_iter.next() {
                let p = format!("transition{}", k + 1);
                t.mixer.collect_mut(&p, &mut params);
                split_bn(&mut t.bn, &format!("{p}.bn"), &mut params, &mut bufs);
                params.push((format!("{p}.conv.weight"), &mut t.conv.weight));
            }
        }
        let head = &mut self.head;
        head.mixer.collect_mut("head", &mut params);
        split_bn(&mut head.bn, "head.bn", &mut params, &mut bufs);
        params.push(("head.linear.weight".to_string(), &mut head.linear.weight));
        params.push(("head.linear.bias".to_string(), &mut head.linear.bias));
        (params, bufs)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// The parameter at registry position `index`.
    pub fn param_mut(&mut self, index: usize) -> Option<&mut Param> {
        self.params_mut().into_iter().nth(index).map(|(_, p)| p)
    }

    /// Every cross-layer convolution with its site name, in registry order.
    pub fn cldc_sites(&self) -> Vec<(String, &Cldc)> {
        let mut out = Vec::new();
        for (k, layers) in self.blocks.iter().enumerate() {
            for (l, layer) in layers.iter().enumerate() {
                if let Some(c) = layer.mixer.as_cldc() {
                    out.push((format!("block{}.layer{}", k + 1, l + 1), c));
                }
            }
            if let Some(c) = self.transitions.get(k).and_then(|t| t.mixer.as_cldc()) {
                out.push((format!("transition{}", k + 1), c));
            }
        }
        if let Some(c) = self.head.mixer.as_cldc() {
            out.push(("head".to_string(), c));
        }
        out
    }

    /// Replaces every cross-layer weight by `1 + scale·N(0,1)` and bias by
    /// `scale·N(0,1)`, giving generic (non-residual) mixing.
    pub fn perturb_cldc(&mut self, scale: f64, rng: &mut Rng) -> Result<()> {
        for (name, p) in self.params_mut() {
            if name.ends_with(".cldc.weight") {
                p.value = Tensor4::randn(p.value.shape(), 1.0, scale, rng)?;
            } else if name.ends_with(".cldc.bias") {
                p.value = Tensor4::randn(p.value.shape(), 0.0, scale, rng)?;
            }
        }
        Ok(())
    }

    /// Copies every tensor whose name and shape also exist in `other`.
    /// Returns how many tensors were copied.
    pub fn copy_shared_from(&mut self, other: &Model) -> usize {
        let source: std::collections::HashMap<String, &Tensor4> =
            other.named_tensors().into_iter().collect();
        let mut copied = 0;
        for (name, t) in self.named_tensors_mut() {
            if let Some(src) = source.get(&name) {
                if src.shape() == t.shape() {
                    *t = (*src).clone();
                    copied += 1;
                }
            }
        }
        copied
    }
}

fn split_bn<'a>(
    bn: &'a mut BatchNorm,
    prefix: &str,
    params: &mut Vec<(String, &'a mut Param)>,
    bufs: &mut Vec<(String, &'a mut Tensor4)>,
) {
    params.push((format!("{prefix}.gamma"), &mut bn.gamma));
    params.push((format!("{prefix}.beta"), &mut bn.beta));
    bufs.push((format!("{prefix}.running_mean"), &mut bn.running_mean));
    bufs.push((format!("{prefix}.running_var"), &mut bn.running_var));
}

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{ArchConfig, INPUT_CHANNELS, OUTPUT_CHANNELS};
use super::ops::{
    conv2d, conv2d_backward, dense, dense_backward, elu, elu_grad_from_output, norm_act, norm_act_backward,
    transposed_conv2d, transposed_conv2d_backward, NormCache, NormMode,
};
use super::{concat_channels, split_channels, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap, Mask};

/// Exponential-average weight of the current batch in the running statistics.
pub const RUNNING_MOMENTUM: f64 = 0.1;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Bottleneck,
    Harmonization,
    Parsing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<S> {
    pub group: ParamGroup,
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Conv,
    Deconv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Norm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

/// Indices into the parameter list for one (de)convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    kind: Kind,
    weight: usize,
    bias: Option<usize>,
    norm: Option<Norm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct LayerCache<S> {
    input: Tensor<S>,
    norm: Option<NormCache<S>>,
}

/// Activations retained by a forward pass for [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    generation: u64,
    mode: Mode,
    batch: usize,
    encoder: Vec<LayerCache<S>>,
    fc_in: Vec<S>,
    fc_mid: Vec<S>,
    fc_out: Vec<S>,
    harmonization: Vec<LayerCache<S>>,
    parsing: Vec<LayerCache<S>>,
}

/// Result of a batched forward pass.
#[derive(Debug, Clone)]
pub struct Forward<S> {
    /// `[n, 3, S, S]`, unclamped linear output.
    pub harmonized: Tensor<S>,
    /// `[n, C, S, S]` scene-parsing logits.
    pub logits: Tensor<S>,
    pub cache: ForwardCache<S>,
}

/// Gradients of every parameter, aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    values: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_for(net: &Network<S>) -> Self {
        Self { values: net.params.iter().map(|p| vec![S::zero(); p.value.len()]).collect() }
    }

    pub fn get(&self, index: usize) -> &[S] {
        &self.values[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut [S] {
        &mut self.values[index]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[S]> {
        self.values.iter().map(Vec::as_slice)
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().flatten().all(|v| *v == S::zero())
    }

    fn add(&mut self, index: usize, grad: &[S]) {
        self.values[index].iter_mut().zip(grad).for_each(|(a, &b)| *a += b);
    }
}

/// Joint encoder with a harmonization decoder and a scene-parsing decoder.
#[derive(Debug, Clone)]
pub struct Network<S> {
    config: ArchConfig,
    params: Vec<Param<S>>,
    stats: Vec<RunningStats<S>>,
    encoder: Vec<Layer>,
    fc: [Dense; 2],
    harmonization: Vec<Layer>,
    parsing: Vec<Layer>,
    generation: u64,
}

struct Builder<'a, S> {
    params: Vec<Param<S>>,
    stats: Vec<RunningStats<S>>,
    rng: &'a mut ChaCha8Rng,
}

impl<S: Scalar> Builder<'_, S> {
    fn push(&mut self, name: String, group: ParamGroup, shape: &[usize], std: Option<f64>) -> usize {
        let n: usize = shape.iter().product();
        let data = match std {
            Some(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| S::from_f64(dist.sample(self.rng))).collect()
            }
            None => vec![S::zero(); n],
        };
        self.params.push(Param { name, group, value: Tensor::from_vec(shape, data).expect("sized") });
        self.params.len() - 1
    }

    fn fill(&mut self, index: usize, value: f64) {
        self.params[index].value.data_mut().fill(S::from_f64(value));
    }

    /// A layer followed by batch norm + scale + ELU when `normalized`, or a
    /// plain biased linear layer otherwise.
    fn layer(&mut self, kind: Kind, name: &str, group: ParamGroup, shape: [usize; 4], stride: usize, normalized: bool) -> Layer {
        let [a, b, k, _] = shape;
        let (out_c, fan_in) = match kind {
            Kind::Conv => (a, b * k * k),
            // Each deconv output sums over roughly in*k*k/stride^2 terms.
            Kind::Deconv => (b, (a * k * k / (stride * stride)).max(1)),
        };
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = self.push(format!("{name}.weight"), group, &shape, Some(std));
        if normalized {
            let gamma = self.push(format!("{name}.gamma"), group, &[out_c], None);
            self.fill(gamma, 1.0);
            let beta = self.push(format!("{name}.beta"), group, &[out_c], None);
            self.stats.push(RunningStats { group, mean: vec![S::zero(); out_c], var: vec![S::one(); out_c] });
            Layer { kind, weight, bias: None, norm: Some(Norm { gamma, beta, stats: self.stats.len() - 1 }) }
        } else {
            let bias = self.push(format!("{name}.bias"), group, &[out_c], None);
            Layer { kind, weight, bias: Some(bias), norm: None }
        }
    }

    fn dense(&mut self, name: &str, out_dim: usize, in_dim: usize) -> Dense {
        let std = (2.0 / in_dim as f64).sqrt();
        let weight = self.push(format!("{name}.weight"), ParamGroup::Bottleneck, &[out_dim, in_dim], Some(std));
        let bias = self.push(format!("{name}.bias"), ParamGroup::Bottleneck, &[out_dim], None);
        Dense { weight, bias }
    }
}

impl<S: Scalar> Network<S> {
    /// Builds a network with He-initialized weights drawn from `seed`.
    pub fn build(config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { params: Vec::new(), stats: Vec::new(), rng: &mut rng };
        let ch = &config.encoder_channels;
        let (d, k, s) = (config.depth(), config.kernel_size, config.stride);

        let mut encoder = Vec::with_capacity(d);
        let mut in_c = INPUT_CHANNELS;
        for (i, &c) in ch.iter().enumerate() {
            encoder.push(b.layer(Kind::Conv, &format!("enc{i}"), ParamGroup::Encoder, [c, in_c, k, k], s, true));
            in_c = c;
        }
        let feat = config.bottleneck_features();
        let fc = [b.dense("fc1", config.bottleneck_dim, feat), b.dense("fc2", feat, config.bottleneck_dim)];

        let mut decoder = |name: &str, group, head: usize, cross: bool| {
            (0..d)
                .map(|j| {
                    let c = ch[d - 1 - j];
                    let in_c = if cross && j > 0 { 3 * c } else { 2 * c };
                    let last = j + 1 == d;
                    let out_c = if last { head } else { ch[d - 2 - j] };
                    b.layer(Kind::Deconv, &format!("{name}{j}"), group, [in_c, out_c, k, k], s, !last)
                })
                .collect::<Vec<_>>()
        };
        let harmonization = decoder("harm", ParamGroup::Harmonization, OUTPUT_CHANNELS, true);
        let parsing = decoder("pars", ParamGroup::Parsing, config.num_classes, false);
        let Builder { params, stats, .. } = b;
        Ok(Self { config, params, stats, encoder, fc, harmonization, parsing, generation: next_generation() })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<S>] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<S>] {
        &mut self.stats
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Toggles the cross-decoder links without touching parameters.
    pub fn set_cross_decoder_links(&mut self, on: bool) {
        self.config.cross_decoder_links = on;
        self.generation = next_generation();
    }

    /// Converts every parameter and statistic to another precision.
    pub fn cast<T: Scalar>(&self) -> Network<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::from_f64(x.as_f64())).collect::<Vec<T>>();
        Network {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), group: p.group, value: p.value.cast() })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats { group: s.group, mean: conv(&s.mean), var: conv(&s.var) })
                .collect(),
            encoder: self.encoder.clone(),
            fc: self.fc,
            harmonization: self.harmonization.clone(),
            parsing: self.parsing.clone(),
            generation: next_generation(),
        }
    }

    fn value(&self, index: usize) -> &Tensor<S> {
        &self.params[index].value
    }

    fn layer_forward(&self, layer: &Layer, input: Tensor<S>, mode: Mode) -> Result<(Tensor<S>, LayerCache<S>)> {
        let (s, p) = (self.config.stride, self.config.padding);
        let w = self.value(layer.weight);
        let bias = layer.bias.map(|b| self.value(b).data());
        let pre = match layer.kind {
            Kind::Conv => conv2d(&input, w, bias, s, p)?,
            Kind::Deconv => transposed_conv2d(&input, w, bias, s, p)?,
        };
        let Some(norm) = layer.norm else {
            return Ok((pre, LayerCache { input, norm: None }));
        };
        let stats = &self.stats[norm.stats];
        let nm = match mode {
            Mode::Train => NormMode::Train,
            Mode::Eval => NormMode::Eval { mean: &stats.mean, var: &stats.var },
        };
        let (out, cache) = norm_act(&pre, self.value(norm.gamma).data(), self.value(norm.beta).data(), nm)?;
        Ok((out, LayerCache { input, norm: Some(cache) }))
    }

    fn layer_backward(&self, layer: &Layer, cache: &LayerCache<S>, grad_out: Tensor<S>, grads: &mut Gradients<S>) -> Result<Tensor<S>> {
        let (s, p) = (self.config.stride, self.config.padding);
        let grad_pre = match (layer.norm, &cache.norm) {
            (Some(norm), Some(nc)) => {
                let (dx, dg, db) = norm_act_backward(nc, self.value(norm.gamma).data(), &grad_out);
                grads.add(norm.gamma, &dg);
                grads.add(norm.beta, &db);
                dx
            }
            _ => grad_out,
        };
        let w = self.value(layer.weight);
        let (dx, dw, db) = match layer.kind {
            Kind::Conv => conv2d_backward(&cache.input, w, &grad_pre, s, p)?,
            Kind::Deconv => transposed_conv2d_backward(&cache.input, w, &grad_pre, s, p)?,
        };
        grads.add(layer.weight, &dw);
        if let Some(b) = layer.bias {
            grads.add(b, &db);
        }
        Ok(dx)
    }

    /// Batched forward pass on a `[n, 4, S, S]` input (RGB + mask).
    pub fn forward(&self, input: &Tensor<S>, mode: Mode) -> Result<Forward<S>> {
        let cfg = &self.config;
        let size = cfg.input_size;
        if input.shape().len() != 4 || input.shape()[1..] != [INPUT_CHANNELS, size, size] || input.shape()[0] == 0 {
            return Err(Error::ShapeMismatch(format!(
                "network expects [n, {INPUT_CHANNELS}, {size}, {size}] input, got {:?}",
                input.shape()
            )));
        }
        let n = input.shape()[0];
        let d = cfg.depth();

        let mut encoder = Vec::with_capacity(d);
        let mut feats: Vec<Tensor<S>> = Vec::with_capacity(d);
        let mut x = input.clone();
        for layer in &self.encoder {
            let (out, cache) = self.layer_forward(layer, x, mode)?;
            encoder.push(cache);
            feats.push(out.clone());
            x = out;
        }

        let fc_in = x.into_data();
        let [fc1, fc2] = self.fc;
        let mut fc_mid = dense(&fc_in, n, self.value(fc1.weight).data(), self.value(fc1.bias).data());
        fc_mid.iter_mut().for_each(|v| *v = elu(*v));
        let mut fc_out = dense(&fc_mid, n, self.value(fc2.weight).data(), self.value(fc2.bias).data());
        fc_out.iter_mut().for_each(|v| *v = elu(*v));
        let b = cfg.bottleneck_size();
        let code = Tensor::from_vec(&[n, cfg.encoder_channels[d - 1], b, b], fc_out.clone())?;

        let mut parsing = Vec::with_capacity(d);
        let mut parsing_out = Vec::with_capacity(d);
        let mut prev = code.clone();
        for (j, layer) in self.parsing.iter().enumerate() {
            let inp = concat_channels(&[&prev, &feats[d - 1 - j]])?;
            let (out, cache) = self.layer_forward(layer, inp, mode)?;
            parsing.push(cache);
            parsing_out.push(out.clone());
            prev = out;
        }
        let logits = prev;

        let mut harmonization = Vec::with_capacity(d);
        let mut prev = code;
        for (j, layer) in self.harmonization.iter().enumerate() {
            let skip = &feats[d - 1 - j];
            let inp = if j == 0 {
                concat_channels(&[&prev, skip])?
            } else if cfg.cross_decoder_links {
                concat_channels(&[&prev, skip, &parsing_out[j - 1]])?
            } else {
                concat_channels(&[&prev, skip, &Tensor::zeros(parsing_out[j - 1].shape())])?
            };
            let (out, cache) = self.layer_forward(layer, inp, mode)?;
            harmonization.push(cache);
            prev = out;
        }

        let cache = ForwardCache {
            generation: self.generation,
            mode,
            batch: n,
            encoder,
            fc_in,
            fc_mid,
            fc_out,
            harmonization,
            parsing,
        };
        Ok(Forward { harmonized: prev, logits, cache })
    }

    /// Single-image forward: returns the clamped harmonized image, the
    /// `[1, C, S, S]` logits and the cache.
    pub fn forward_joint(&self, composite: &Image, mask: &Mask, mode: Mode) -> Result<(Image, Tensor<S>, ForwardCache<S>)> {
        let input = input_tensor(&[(composite, mask)], self.config.input_size)?;
        let out = self.forward(&input, mode)?;
        Ok((tensor_to_image(&out.harmonized, 0), out.logits, out.cache))
    }

    /// Gradients of all parameters given upstream gradients on both heads.
    pub fn backward(&self, cache: &ForwardCache<S>, grad_harmonized: &Tensor<S>, grad_logits: &Tensor<S>) -> Result<Gradients<S>> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache("parameters changed since the forward pass"));
        }
        if cache.mode != Mode::Train {
            return Err(Error::StaleCache("backward needs a train-mode forward cache"));
        }
        let cfg = &self.config;
        let (n, d, size) = (cache.batch, cfg.depth(), cfg.input_size);
        if grad_harmonized.shape() != [n, OUTPUT_CHANNELS, size, size] || grad_logits.shape() != [n, cfg.num_classes, size, size] {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradients {:?} / {:?} do not match the forward outputs",
                grad_harmonized.shape(),
                grad_logits.shape()
            )));
        }
        let ch = &cfg.encoder_channels;
        let mut grads = Gradients::zeros_for(self);
        let mut d_feats: Vec<Tensor<S>> =
            (0..d).map(|i| Tensor::zeros(&[n, ch[i], cfg.size_at(i + 1), cfg.size_at(i + 1)])).collect();
        let mut d_parsing_out: Vec<Option<Tensor<S>>> = vec![None; d];

        let mut grad = grad_harmonized.clone();
        for j in (0..d).rev() {
            let dinp = self.layer_backward(&self.harmonization[j], &cache.harmonization[j], grad, &mut grads)?;
            let c = ch[d - 1 - j];
            let parts = if j == 0 { vec![c, c] } else { vec![c, c, c] };
            let mut split = split_channels(&dinp, &parts).into_iter();
            grad = split.next().expect("prev part");
            d_feats[d - 1 - j].add_assign(&split.next().expect("skip part"));
            if let (Some(cross), true) = (split.next(), cfg.cross_decoder_links) {
                d_parsing_out[j - 1] = Some(cross);
            }
        }
        let d_code_h = grad;

        let mut grad = grad_logits.clone();
        for j in (0..d).rev() {
            let dinp = self.layer_backward(&self.parsing[j], &cache.parsing[j], grad, &mut grads)?;
            let c = ch[d - 1 - j];
            let mut split = split_channels(&dinp, &[c, c]).into_iter();
            grad = split.next().expect("prev part");
            d_feats[d - 1 - j].add_assign(&split.next().expect("skip part"));
            if j > 0 {
                if let Some(cross) = &d_parsing_out[j - 1] {
                    grad.add_assign(cross);
                }
            }
        }
        let mut d_code = d_code_h.into_data();
        d_code.iter_mut().zip(grad.data()).for_each(|(a, &b)| *a += b);

        let [fc1, fc2] = self.fc;
        d_code.iter_mut().zip(&cache.fc_out).for_each(|(g, &y)| *g *= elu_grad_from_output(y));
        let (mut d_mid, dw, db) = dense_backward(&cache.fc_mid, n, self.value(fc2.weight).data(), &d_code);
        grads.add(fc2.weight, &dw);
        grads.add(fc2.bias, &db);
        d_mid.iter_mut().zip(&cache.fc_mid).for_each(|(g, &y)| *g *= elu_grad_from_output(y));
        let (d_in, dw, db) = dense_backward(&cache.fc_in, n, self.value(fc1.weight).data(), &d_mid);
        grads.add(fc1.weight, &dw);
        grads.add(fc1.bias, &db);
        d_feats[d - 1].data_mut().iter_mut().zip(&d_in).for_each(|(a, &b)| *a += b);

        for i in (0..d).rev() {
            let g = std::mem::replace(&mut d_feats[i], Tensor::zeros(&[0]));
            let dinp = self.layer_backward(&self.encoder[i], &cache.encoder[i], g, &mut grads)?;
            if i > 0 {
                d_feats[i - 1].add_assign(&dinp);
            }
        }
        Ok(grads)
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics, skipping layers in `frozen` groups.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<S>, frozen: &[ParamGroup]) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = S::from_f64(RUNNING_MOMENTUM);
        let layers = self.encoder.iter().zip(&cache.encoder).chain(
            self.harmonization.iter().zip(&cache.harmonization).chain(self.parsing.iter().zip(&cache.parsing)),
        );
        for (layer, lc) in layers {
            let (Some(norm), Some(nc)) = (layer.norm, &lc.norm) else { continue };
            let stats = &mut self.stats[norm.stats];
            if frozen.contains(&stats.group) {
                continue;
            }
            for (r, &b) in stats.mean.iter_mut().zip(&nc.batch_mean) {
                *r = (S::one() - m) * *r + m * b;
            }
            for (r, &b) in stats.var.iter_mut().zip(&nc.batch_var) {
                *r = (S::one() - m) * *r + m * b;
            }
        }
    }
}

/// Stacks `(composite, mask)` pairs into a `[n, 4, S, S]` network input.
pub fn input_tensor<S: Scalar>(items: &[(&Image, &Mask)], size: usize) -> Result<Tensor<S>> {
    let plane = size * size;
    let mut data = Vec::with_capacity(items.len() * INPUT_CHANNELS * plane);
    for (img, mask) in items {
        if img.dims() != (size, size) || mask.dims() != (size, size) {
            return Err(Error::DimensionMismatch { expected: (size, size), actual: img.dims() });
        }
        for c in 0..3 {
            data.extend(img.data().iter().skip(c).step_by(3).map(|&v| S::from_f64(v as f64)));
        }
        data.extend(mask.data().iter().map(|&m| S::from_f64(m as f64)));
    }
    Tensor::from_vec(&[items.len(), INPUT_CHANNELS, size, size], data)
}

/// Stacks RGB images into a `[n, 3, S, S]` tensor.
pub fn image_tensor<S: Scalar>(images: &[&Image]) -> Result<Tensor<S>> {
    let (h, w) = images[0].dims();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        crate::image::ensure_same_dims((h, w), img.dims())?;
        for c in 0..3 {
            data.extend(img.data().iter().skip(c).step_by(3).map(|&v| S::from_f64(v as f64)));
        }
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

/// Batch item `index` of a `[n, 3, H, W]` tensor as an image, clamped to [0, 1].
pub fn tensor_to_image<S: Scalar>(t: &Tensor<S>, index: usize) -> Image {
    let (_, c, h, w) = t.dims4();
    assert_eq!(c, 3, "image tensors have 3 channels");
    let item = t.item(index);
    let plane = h * w;
    Image::from_clamped(h, w, (0..plane * 3).map(|i| item[(i % 3) * plane + i / 3].as_f64() as f32).collect())
        .expect("sized")
}

/// Per-pixel argmax of batch item `index` of `[n, C, H, W]` logits.
pub fn logits_to_labels<S: Scalar>(logits: &Tensor<S>, index: usize) -> LabelMap {
    let (_, c, h, w) = logits.dims4();
    let item = logits.item(index);
    let plane = h * w;
    let data = (0..plane)
        .map(|p| {
            let mut best = 0;
            for k in 1..c {
                if item[k * plane + p] > item[best * plane + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(h, w, c, data).expect("argmax is in range")
}

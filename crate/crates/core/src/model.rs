//! The four regression networks: {fused, independent} x {conv9, conv5}.
//!
//! Input batches are `[B, 6, 149]` (sensor rows x differential time steps);
//! each head emits `[B, 29]` position differences for one axis.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{join_list, KeyValues};
use crate::error::{ModelError, NnError};
use crate::nn::{
    relu_backward_in_place, relu_in_place, BatchNormLayer, BnCache, ConvLayer, DenseLayer, DropoutLayer,
    maxpool_time_backward, maxpool_time_forward, Mode, ParamCount, PoolIndex,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SENSOR_ROWS: usize = 6;
pub const INPUT_LEN: usize = 149;
pub const OUTPUT_LEN: usize = 29;

/// Spatial axis of the lab frame: X walking direction, Y lateral, Z vertical.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(format!("unknown axis {:?}", s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// One shared trunk with X, Y and Z heads.
    Fused,
    /// Three disjoint single-axis networks.
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    Conv9,
    Conv5,
}

/// Position of batch norm relative to the activation inside a conv block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockOrder {
    /// Conv -> ReLU -> BN -> pool
    ReluBn,
    /// Conv -> BN -> ReLU -> pool
    BnRelu,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    _ => Err(format!("expected one of {:?}", [$($text),+])),
                }
            }
        }
    };
}

text_enum!(Variant { Fused => "fused", Independent => "independent" });
text_enum!(Depth { Conv9 => "9", Conv5 => "5" });
text_enum!(BlockOrder { ReluBn => "relu_bn", BnRelu => "bn_relu" });

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Weights from N(0, sigma^2).
    Normal { sigma: f64 },
    /// Weights from N(0, 2 / fan_in).
    He,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Normal { sigma: 0.01 }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::Normal { sigma } => write!(f, "normal:{}", sigma),
            InitScheme::He => f.write_str("he"),
        }
    }
}

impl FromStr for InitScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "he" {
            return Ok(InitScheme::He);
        }
        if s == "normal" {
            return Ok(InitScheme::default());
        }
        match s.strip_prefix("normal:") {
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|s| *s >= 0.0)
                .map(|sigma| InitScheme::Normal { sigma })
                .ok_or_else(|| format!("bad sigma in {:?}", s)),
            None => Err(format!("expected `he` or `normal:<sigma>`, found {:?}", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub depth: Depth,
    /// Unscaled conv widths.
    pub channels: Vec<usize>,
    /// Unscaled hidden dense widths.
    pub dense: Vec<usize>,
    pub out_len: usize,
    pub dropout_p: f64,
    pub channel_scale: Ratio<u32>,
    pub block_order: BlockOrder,
}

impl ModelConfig {
    pub fn new(variant: Variant, depth: Depth) -> Self {
        let (channels, dense) = match depth {
            Depth::Conv9 => (vec![64, 64, 128, 128, 256, 256, 512, 512, 1024], vec![1024, 512]),
            Depth::Conv5 => (vec![64, 128, 256, 512, 1024], vec![512]),
        };
        ModelConfig {
            variant,
            depth,
            channels,
            dense,
            out_len: OUTPUT_LEN,
            dropout_p: crate::nn::DEFAULT_DROPOUT,
            channel_scale: Ratio::from_integer(1),
            block_order: BlockOrder::ReluBn,
        }
    }

    pub fn with_scale(mut self, scale: Ratio<u32>) -> Self {
        self.channel_scale = scale;
        self
    }

    fn scale(&self, width: usize) -> usize {
        let s = self.channel_scale;
        ((width as u64 * *s.numer() as u64) / *s.denom() as u64).max(1) as usize
    }

    pub fn scaled_channels(&self) -> Vec<usize> {
        self.channels.iter().map(|&w| self.scale(w)).collect()
    }

    pub fn scaled_dense(&self) -> Vec<usize> {
        self.dense.iter().map(|&w| self.scale(w)).collect()
    }

    /// Whether conv block `i` ends with a 1x2 time pool. The 9-layer stack
    /// leaves its first two blocks unpooled.
    pub fn pools_after(&self, i: usize) -> bool {
        match self.depth {
            Depth::Conv9 => i >= 2,
            Depth::Conv5 => true,
        }
    }

    /// Time extent after every pooled block.
    pub fn time_extent(&self) -> usize {
        (0..self.channels.len()).fold(INPUT_LEN, |w, i| if self.pools_after(i) { w / 2 } else { w })
    }

    pub fn flatten_width(&self) -> usize {
        SENSOR_ROWS * self.time_extent() * self.scaled_channels().last().copied().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.channels.is_empty() {
            return bad("channels must not be empty".into());
        }
        if self.channels.contains(&0) || self.dense.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if *self.channel_scale.numer() == 0 || *self.channel_scale.denom() == 0 {
            return bad(format!("channel_scale must be positive, got {}", self.channel_scale));
        }
        if self.out_len != OUTPUT_LEN {
            return bad(format!("out_len must be {}, got {}", OUTPUT_LEN, self.out_len));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        let mut w = INPUT_LEN;
        for i in 0..self.channels.len() {
            if self.pools_after(i) {
                if w < 2 {
                    return bad(format!("time axis exhausted before pool {}", i + 1));
                }
                w /= 2;
            }
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KeyValues, prefix: &str) {
        kv.set(&format!("{prefix}variant"), self.variant);
        kv.set(&format!("{prefix}depth"), self.depth);
        kv.set(&format!("{prefix}channels"), join_list(&self.channels));
        kv.set(&format!("{prefix}dense"), join_list(&self.dense));
        kv.set(&format!("{prefix}out_len"), self.out_len);
        kv.set(&format!("{prefix}dropout_p"), self.dropout_p);
        kv.set(&format!("{prefix}scale"), self.channel_scale);
        kv.set(&format!("{prefix}block_order"), self.block_order);
    }

    /// Reads keys under `prefix`, starting from the defaults of the given depth.
    pub fn from_kv(kv: &KeyValues, prefix: &str) -> Result<Self, ModelError> {
        let e = |err: crate::config::KvError| ModelError::InvalidConfig(err.to_string());
        let variant = kv.get_or(&format!("{prefix}variant"), Variant::Fused).map_err(e)?;
        let depth = kv.get_or(&format!("{prefix}depth"), Depth::Conv9).map_err(e)?;
        let mut cfg = ModelConfig::new(variant, depth);
        if let Some(c) = kv.get_list(&format!("{prefix}channels")).map_err(e)? {
            cfg.channels = c;
        }
        if let Some(d) = kv.get_list(&format!("{prefix}dense")).map_err(e)? {
            cfg.dense = d;
        }
        cfg.out_len = kv.get_or(&format!("{prefix}out_len"), cfg.out_len).map_err(e)?;
        cfg.dropout_p = kv.get_or(&format!("{prefix}dropout_p"), cfg.dropout_p).map_err(e)?;
        cfg.channel_scale = kv.get_or(&format!("{prefix}scale"), cfg.channel_scale).map_err(e)?;
        cfg.block_order = kv.get_or(&format!("{prefix}block_order"), cfg.block_order).map_err(e)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: ConvLayer<T>,
    pub bn: BatchNormLayer<T>,
    pub pool: bool,
}

/// One network: conv trunk, hidden dense layers and one head per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    axes: Vec<Axis>,
    pub blocks: Vec<ConvBlock<T>>,
    pub hidden: Vec<DenseLayer<T>>,
    pub heads: Vec<DenseLayer<T>>,
    dropout: DropoutLayer,
}

struct BlockCache<T> {
    input: Tensor<T>,
    relu_out: Tensor<T>,
    bn: BnCache<T>,
    pool: Option<PoolIndex>,
}

struct HiddenCache<T> {
    input: Tensor<T>,
    relu_out: Tensor<T>,
    mask: Option<Tensor<T>>,
}

/// Activations kept by [`Model::forward`] for [`Model::backward`].
pub struct ForwardCache<T> {
    mode: Mode,
    batch: usize,
    trunk_shape: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
    hidden: Vec<HiddenCache<T>>,
    head_input: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    /// Zero-initialized network predicting `axes` (all three for fused).
    pub fn zeros(config: &ModelConfig, axes: &[Axis]) -> Result<Self, ModelError> {
        config.validate()?;
        if axes.is_empty() {
            return Err(ModelError::InvalidConfig("a model needs at least one head".into()));
        }
        let channels = config.scaled_channels();
        let mut blocks = Vec::with_capacity(channels.len());
        let mut c_in = 1;
        for (i, &c) in channels.iter().enumerate() {
            blocks.push(ConvBlock {
                conv: ConvLayer::zeros(c_in, c),
                bn: BatchNormLayer::new(c),
                pool: config.pools_after(i),
            });
            c_in = c;
        }
        let mut hidden = Vec::new();
        let mut n_in = config.flatten_width();
        for &n in &config.scaled_dense() {
            hidden.push(DenseLayer::zeros(n_in, n));
            n_in = n;
        }
        let heads = axes.iter().map(|_| DenseLayer::zeros(n_in, config.out_len)).collect();
        Ok(Model {
            config: config.clone(),
            axes: axes.to_vec(),
            blocks,
            hidden,
            heads,
            dropout: DropoutLayer { p: config.dropout_p },
        })
    }

    /// Random weights per `init`, zero biases, identity batch norm.
    pub fn build<R: Rng + ?Sized>(config: &ModelConfig, axes: &[Axis], init: InitScheme, rng: &mut R) -> Result<Self, ModelError> {
        let mut m = Self::zeros(config, axes)?;
        let mut fill = |w: &mut Tensor<T>, fan_in: usize| {
            let sigma = match init {
                InitScheme::Normal { sigma } => sigma,
                InitScheme::He => (2.0 / fan_in as f64).sqrt(),
            };
            if sigma == 0.0 {
                return;
            }
            let dist = Normal::new(0.0, sigma).expect("finite sigma");
            for v in w.data_mut() {
                *v = T::of(dist.sample(rng));
            }
        };
        for b in &mut m.blocks {
            let fan_in = b.conv.in_channels() * 9;
            fill(&mut b.conv.weight, fan_in);
        }
        for d in m.hidden.iter_mut().chain(m.heads.iter_mut()) {
            let fan_in = d.n_in();
            fill(&mut d.weight, fan_in);
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// Trainable tensors in a fixed order shared by [`Model::backward`].
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend([&b.conv.weight, &b.conv.bias, &b.bn.gamma, &b.bn.beta]);
        }
        for d in self.hidden.iter().chain(&self.heads) {
            v.extend([&d.weight, &d.bias]);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.push(&mut b.conv.weight);
            v.push(&mut b.conv.bias);
            v.push(&mut b.bn.gamma);
            v.push(&mut b.bn.beta);
        }
        for d in self.hidden.iter_mut().chain(self.heads.iter_mut()) {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.blocks.len() {
            for p in ["weight", "bias", "gamma", "beta"] {
                let layer = if p == "gamma" || p == "beta" { "bn" } else { "conv" };
                v.push(format!("{}{}.{}", layer, i + 1, p));
            }
        }
        for i in 0..self.hidden.len() {
            v.push(format!("dense{}.weight", i + 1));
            v.push(format!("dense{}.bias", i + 1));
        }
        for a in &self.axes {
            v.push(format!("head_{}.weight", a.name()));
            v.push(format!("head_{}.bias", a.name()));
        }
        v
    }

    /// Batch-norm running statistics (not trained by gradient).
    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.bn.running_mean, &b.bn.running_var])
            .collect()
    }

    /// Parameters followed by buffers: the checkpoint order.
    pub fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        let mut bufs = Vec::new();
        for b in &mut self.blocks {
            v.push(&mut b.conv.weight);
            v.push(&mut b.conv.bias);
            v.push(&mut b.bn.gamma);
            v.push(&mut b.bn.beta);
            bufs.push(&mut b.bn.running_mean);
            bufs.push(&mut b.bn.running_var);
        }
        for d in self.hidden.iter_mut().chain(self.heads.iter_mut()) {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v.extend(bufs);
        v
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize, NnError> {
        match *x.shape() {
            [b, SENSOR_ROWS, INPUT_LEN] if b > 0 => Ok(b),
            _ => Err(NnError::shape(
                "model_forward",
                format!("[B, {}, {}]", SENSOR_ROWS, INPUT_LEN),
                format!("{:?}", x.shape()),
            )),
        }
    }

    /// Forward pass keeping everything needed for [`Model::backward`]. Train
    /// mode updates batch-norm running statistics and draws dropout masks
    /// from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<Tensor<T>>, ForwardCache<T>), NnError> {
        let batch = self.check_input(x)?;
        let order = self.config.block_order;
        let mut act = x.clone().reshape(&[1, batch, SENSOR_ROWS, INPUT_LEN])?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let z = block.conv.forward(&act)?;
            let (relu_out, bn_out, bn) = match order {
                BlockOrder::ReluBn => {
                    let mut a = z;
                    relu_in_place(&mut a);
                    let (b, cache) = match mode {
                        Mode::Train => block.bn.forward_train(&a)?,
                        Mode::Infer => block.bn.forward_infer(&a)?,
                    };
                    (a, b, cache)
                }
                BlockOrder::BnRelu => {
                    let (mut b, cache) = match mode {
                        Mode::Train => block.bn.forward_train(&z)?,
                        Mode::Infer => block.bn.forward_infer(&z)?,
                    };
                    relu_in_place(&mut b);
                    (b.clone(), b, cache)
                }
            };
            let (out, pool) = if block.pool {
                let (p, idx) = maxpool_time_forward(&bn_out)?;
                (p, Some(idx))
            } else {
                (bn_out, None)
            };
            blocks.push(BlockCache {
                input: std::mem::replace(&mut act, out),
                relu_out,
                bn,
                pool,
            });
        }
        let trunk_shape = act.shape().to_vec();
        let mut feat = flatten(&act);
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let mut h = layer.forward(&feat)?;
            relu_in_place(&mut h);
            let (d, mask) = self.dropout.forward(&h, mode, rng);
            hidden.push(HiddenCache {
                input: std::mem::replace(&mut feat, d),
                relu_out: h,
                mask,
            });
        }
        let outputs = self
            .heads
            .iter()
            .map(|h| h.forward(&feat))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((
            outputs,
            ForwardCache {
                mode,
                batch,
                trunk_shape,
                blocks,
                hidden,
                head_input: feat,
            },
        ))
    }

    /// Deterministic inference (running batch-norm statistics, no dropout).
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>, NnError> {
        let batch = self.check_input(x)?;
        let mut act = x.clone().reshape(&[1, batch, SENSOR_ROWS, INPUT_LEN])?;
        for block in &self.blocks {
            let mut z = block.conv.forward(&act)?;
            match self.config.block_order {
                BlockOrder::ReluBn => {
                    relu_in_place(&mut z);
                    z = block.bn.forward_infer(&z)?.0;
                }
                BlockOrder::BnRelu => {
                    z = block.bn.forward_infer(&z)?.0;
                    relu_in_place(&mut z);
                }
            }
            act = if block.pool { maxpool_time_forward(&z)?.0 } else { z };
        }
        let mut feat = flatten(&act);
        for layer in &self.hidden {
            feat = layer.forward(&feat)?;
            relu_in_place(&mut feat);
        }
        self.heads.iter().map(|h| h.forward(&feat)).collect()
    }

    /// Gradients of `sum_h <grad_outputs[h], outputs[h]>` with respect to
    /// every tensor of [`Model::params`], in the same order.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_outputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, NnError> {
        if grad_outputs.len() != self.heads.len() {
            return Err(NnError::shape(
                "model_backward",
                format!("{} head gradients", self.heads.len()),
                format!("{}", grad_outputs.len()),
            ));
        }
        let b = cache.batch;
        let mut head_grads = Vec::with_capacity(2 * self.heads.len());
        let mut d_feat = Tensor::zeros(cache.head_input.shape());
        for (head, g) in self.heads.iter().zip(grad_outputs) {
            g.expect_shape("model_backward", &[b, self.config.out_len])?;
            let hg = head.backward(&cache.head_input, g, true)?;
            for (acc, v) in d_feat.data_mut().iter_mut().zip(hg.x.as_ref().unwrap().data()) {
                *acc += *v;
            }
            head_grads.push(hg.weight);
            head_grads.push(hg.bias);
        }

        let mut hidden_grads = Vec::with_capacity(2 * self.hidden.len());
        for (layer, hc) in self.hidden.iter().zip(&cache.hidden).rev() {
            let mut d = self.dropout.backward(hc.mask.as_ref(), &d_feat)?;
            relu_backward_in_place(&hc.relu_out, &mut d);
            let g = layer.backward(&hc.input, &d, true)?;
            d_feat = g.x.unwrap();
            hidden_grads.push((g.weight, g.bias));
        }
        hidden_grads.reverse();

        let mut d_act = unflatten(&d_feat, &cache.trunk_shape)?;
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (i, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let d_pool_in = match &bc.pool {
                Some(idx) => maxpool_time_backward(idx, &d_act)?,
                None => d_act,
            };
            let (d_z, bn_grads) = match self.config.block_order {
                BlockOrder::ReluBn => {
                    let g = block.bn.backward(&bc.bn, &d_pool_in)?;
                    let mut d = g.x.clone();
                    relu_backward_in_place(&bc.relu_out, &mut d);
                    (d, g)
                }
                BlockOrder::BnRelu => {
                    let mut d = d_pool_in;
                    relu_backward_in_place(&bc.relu_out, &mut d);
                    let g = block.bn.backward(&bc.bn, &d)?;
                    (g.x.clone(), g)
                }
            };
            let cg = block.conv.backward(&bc.input, &d_z, i > 0)?;
            d_act = cg.x.unwrap_or_else(|| Tensor::zeros(&[0]));
            block_grads.push((cg.weight, cg.bias, bn_grads.gamma, bn_grads.beta));
        }
        block_grads.reverse();
        let _ = cache.mode;

        let mut grads = Vec::with_capacity(self.params().len());
        for (w, bias, g, beta) in block_grads {
            grads.extend([w, bias, g, beta]);
        }
        for (w, bias) in hidden_grads {
            grads.extend([w, bias]);
        }
        grads.extend(head_grads);
        Ok(grads)
    }

    pub fn parameter_breakdown(&self) -> ParamReport {
        let mut rows = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            rows.push(ParamRow::new(
                format!("conv{}", i + 1),
                format!("{}->{} 3x3", b.conv.in_channels(), b.conv.out_channels()),
                b.conv.param_count(),
            ));
            rows.push(ParamRow::new(format!("bn{}", i + 1), format!("{} ch", b.bn.channels()), b.bn.param_count()));
        }
        for (i, d) in self.hidden.iter().enumerate() {
            rows.push(ParamRow::new(
                format!("dense{}", i + 1),
                format!("{}->{}", d.n_in(), d.n_out()),
                d.param_count(),
            ));
        }
        for (a, d) in self.axes.iter().zip(&self.heads) {
            rows.push(ParamRow::new(
                format!("head_{}", a.name()),
                format!("{}->{}", d.n_in(), d.n_out()),
                d.param_count(),
            ));
        }
        ParamReport { rows }
    }
}

impl<T: Scalar> ParamCount for Model<T> {
    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

/// `[C, B, H, W] -> [B, C*H*W]`, feature order `(c, h, w)`.
fn flatten<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (c, b, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        for bi in 0..b {
            let src = &x.data()[(ci * b + bi) * hw..][..hw];
            out[bi * c * hw + ci * hw..][..hw].copy_from_slice(src);
        }
    }
    Tensor::from_vec(&[b, c * hw], out).expect("flatten preserves length")
}

fn unflatten<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>, NnError> {
    let (c, b, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    x.expect_shape("unflatten", &[b, c * hw])?;
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        for bi in 0..b {
            out[(ci * b + bi) * hw..][..hw].copy_from_slice(&x.data()[bi * c * hw + ci * hw..][..hw]);
        }
    }
    Tensor::from_vec(shape, out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRow {
    pub layer: String,
    pub shape: String,
    pub count: usize,
}

impl ParamRow {
    fn new(layer: String, shape: String, count: usize) -> Self {
        ParamRow { layer, shape, count }
    }
}

/// Per-layer trainable parameter counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamReport {
    pub rows: Vec<ParamRow>,
}

impl ParamReport {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    /// Signed difference to a reference total, and its relative size.
    pub fn compare(&self, reference: usize) -> (i64, f64) {
        let diff = self.total() as i64 - reference as i64;
        (diff, diff as f64 / reference as f64)
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:<16} {:>12}", "layer", "shape", "params")?;
        for r in &self.rows {
            writeln!(f, "{:<12} {:<16} {:>12}", r.layer, r.shape, r.count)?;
        }
        write!(f, "{:<12} {:<16} {:>12}", "total", "", self.total())
    }
}

/// A trained predictor: one fused network or three single-axis networks.
#[derive(Clone, Debug, PartialEq)]
pub enum Regressor<T> {
    Fused(Model<T>),
    Independent(Vec<Model<T>>),
}

impl<T: Scalar> Regressor<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        Ok(match config.variant {
            Variant::Fused => Regressor::Fused(Model::zeros(config, &Axis::ALL)?),
            Variant::Independent => Regressor::Independent(
                Axis::ALL
                    .iter()
                    .map(|&a| Model::zeros(config, &[a]))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }

    /// Initializes every network from one seed (independent models draw in X, Y, Z order).
    pub fn build(config: &ModelConfig, init: InitScheme, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match config.variant {
            Variant::Fused => Regressor::Fused(Model::build(config, &Axis::ALL, init, &mut rng)?),
            Variant::Independent => Regressor::Independent(
                Axis::ALL
                    .iter()
                    .map(|&a| Model::build(config, &[a], init, &mut rng))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.models()[0].config()
    }

    pub fn models(&self) -> Vec<&Model<T>> {
        match self {
            Regressor::Fused(m) => vec![m],
            Regressor::Independent(ms) => ms.iter().collect(),
        }
    }

    pub fn models_mut(&mut self) -> Vec<&mut Model<T>> {
        match self {
            Regressor::Fused(m) => vec![m],
            Regressor::Independent(ms) => ms.iter_mut().collect(),
        }
    }

    /// Infer-mode predictions for X, Y and Z, each `[B, 29]`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<[Tensor<T>; 3], NnError> {
        match self {
            Regressor::Fused(m) => {
                let mut out = m.predict(x)?.into_iter();
                Ok([out.next().unwrap(), out.next().unwrap(), out.next().unwrap()])
            }
            Regressor::Independent(ms) => {
                let mut out = ms.iter().map(|m| m.predict(x).map(|mut v| v.remove(0)));
                Ok([out.next().unwrap()?, out.next().unwrap()?, out.next().unwrap()?])
            }
        }
    }

    pub fn count_parameters(&self) -> ParamReport {
        match self {
            Regressor::Fused(m) => m.parameter_breakdown(),
            Regressor::Independent(ms) => {
                let mut rows = Vec::new();
                for m in ms {
                    let tag = m.axes()[0].name();
                    for r in m.parameter_breakdown().rows {
                        if r.layer.starts_with("head_") {
                            rows.push(r);
                        } else {
                            rows.push(ParamRow::new(format!("{}:{}", tag, r.layer), r.shape, r.count));
                        }
                    }
                }
                ParamReport { rows }
            }
        }
    }

    /// Writes `manifest.txt` (config and tensor directory) and `tensors.bin`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ModelError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut kv = KeyValues::new();
        kv.set("format", "gaittrack-checkpoint");
        kv.set("version", 1);
        kv.set("dtype", format!("{:?}", T::DTYPE).to_lowercase());
        self.config().to_kv(&mut kv, "model.");
        let mut blob = Vec::new();
        let mut idx = 0;
        for m in self.models() {
            let names = m.param_names();
            let prefix = match self {
                Regressor::Fused(_) => String::new(),
                Regressor::Independent(_) => format!("{}:", m.axes()[0].name()),
            };
            let buffer_names = (1..=m.blocks.len()).flat_map(|i| [format!("bn{}.running_mean", i), format!("bn{}.running_var", i)]);
            let tensors = m.params().into_iter().chain(m.buffers());
            for (name, t) in names.into_iter().chain(buffer_names).zip(tensors) {
                kv.set(
                    &format!("tensor.{:04}", idx),
                    format!("{}{} {}", prefix, name, join_list(t.shape())),
                );
                t.encode(&mut blob);
                idx += 1;
            }
        }
        kv.set("tensor_count", idx);
        let manifest = dir.join("manifest.txt");
        fs::write(&manifest, kv.to_string()).map_err(io(&manifest))?;
        let tensors = dir.join("tensors.bin");
        let mut w = BufWriter::new(fs::File::create(&tensors).map_err(io(&tensors))?);
        w.write_all(&blob).map_err(io(&tensors))?;
        w.flush().map_err(io(&tensors))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let manifest = dir.join("manifest.txt");
        let text = fs::read_to_string(&manifest).map_err(|source| ModelError::Io {
            path: manifest.clone(),
            source,
        })?;
        let kv = KeyValues::parse(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if kv.get_str("format") != Some("gaittrack-checkpoint") {
            return Err(ModelError::Checkpoint(format!("{} is not a checkpoint manifest", manifest.display())));
        }
        let config = ModelConfig::from_kv(&kv, "model.")?;
        let mut reg = Regressor::<T>::zeros(&config)?;
        let count: usize = kv
            .require("tensor_count")
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let path = dir.join("tensors.bin");
        let file = fs::File::open(&path).map_err(|source| ModelError::Io { path: path.clone(), source })?;
        let mut r = BufReader::new(file);
        let mut loaded = 0;
        for m in reg.models_mut() {
            for slot in m.state_mut() {
                let t = Tensor::<T>::read_from(&mut r)
                    .map_err(|e| ModelError::Checkpoint(format!("tensor {}: {}", loaded, e)))?;
                if slot.shape() != t.shape() {
                    return Err(ModelError::Checkpoint(format!(
                        "tensor {} has shape {:?}, config expects {:?}",
                        loaded,
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t;
                loaded += 1;
            }
        }
        if loaded != count {
            return Err(ModelError::Checkpoint(format!("manifest lists {} tensors, loaded {}", count, loaded)));
        }
        Ok(reg)
    }
}

impl<T: Scalar> ParamCount for Regressor<T> {
    fn param_count(&self) -> usize {
        self.models().iter().map(|m| m.param_count()).sum()
    }
}

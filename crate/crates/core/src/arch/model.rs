//! Model construction and forward pass.
//!
//! A [`ModelSpec`] is the layer plan plus the ordered parameter and buffer
//! registries; it is pure data derived from an [`ArchConfig`]. A [`Model`]
//! pairs a shared spec with concrete tensors.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;

use crate::arch::config::{ActPlacement, ArchConfig, BlockKind, NormKind, NormPlacement, StemKind};
use crate::arch::state::{EntryKind, StateDict, StateEntry};
use crate::autodiff::activation::PRELU_INIT;
use crate::autodiff::{Activation, BnMode, Conv2dParams, Graph, Var, BN_MOMENTUM, NORM_EPS};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamRole {
    ConvWeight { fan_in: usize, gain: f64 },
    ConvBias,
    NormWeight,
    NormBias,
    PreluAlpha,
    HeadWeight,
    HeadBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    /// Belongs to a batch-norm layer (kept local under FedBN).
    pub batch_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormLayer {
    pub kind: NormKind,
    pub gamma: usize,
    pub beta: usize,
    /// Running mean / variance buffer indices (batch norm only).
    pub running: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        weight: usize,
        bias: Option<usize>,
        params: Conv2dParams,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Norm(NormLayer),
    Act {
        kind: Activation,
        alpha: Option<usize>,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// `x + f(x)` with `f` the inner sequence.
    Residual(Vec<Layer>),
    GlobalAvgPool,
    Linear {
        weight: usize,
        bias: usize,
    },
}

impl Layer {
    /// Visits this layer and, for residual blocks, every nested layer.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Layer)) {
        f(self);
        if let Layer::Residual(inner) = self {
            for l in inner {
                l.visit(f);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub config: ArchConfig,
    pub layers: Vec<Layer>,
    pub params: Vec<ParamInfo>,
    pub buffers: Vec<BufferInfo>,
    /// Name of each activation layer, in forward order.
    pub activation_names: Vec<String>,
}

#[derive(Default)]
pub(crate) struct Registry {
    params: Vec<ParamInfo>,
    buffers: Vec<BufferInfo>,
    activation_names: Vec<String>,
}

impl Registry {
    fn param(&mut self, name: String, shape: Vec<usize>, role: ParamRole, batch_norm: bool) -> usize {
        self.params.push(ParamInfo {
            name,
            shape,
            role,
            batch_norm,
        });
        self.params.len() - 1
    }

    fn buffer(&mut self, name: String, shape: Vec<usize>, init: f64) -> usize {
        self.buffers.push(BufferInfo { name, shape, init });
        self.buffers.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        gain: f64,
    ) -> Layer {
        let fan_in = cin / groups * kernel * kernel;
        let weight = self.param(
            format!("{prefix}.weight"),
            vec![cout, cin / groups, kernel, kernel],
            ParamRole::ConvWeight { fan_in, gain },
            false,
        );
        let bias = self.param(format!("{prefix}.bias"), vec![cout], ParamRole::ConvBias, false);
        Layer::Conv {
            weight,
            bias: Some(bias),
            params: Conv2dParams::new(stride, padding, groups),
            in_channels: cin,
            out_channels: cout,
            kernel,
        }
    }

    fn norm(&mut self, prefix: &str, kind: NormKind, channels: usize) -> Option<Layer> {
        let bn = kind == NormKind::BatchNorm;
        match kind {
            NormKind::None => None,
            NormKind::LayerNormC | NormKind::BatchNorm => {
                let gamma = self.param(format!("{prefix}.weight"), vec![channels], ParamRole::NormWeight, bn);
                let beta = self.param(format!("{prefix}.bias"), vec![channels], ParamRole::NormBias, bn);
                let running = bn.then(|| {
                    (
                        self.buffer(format!("{prefix}.running_mean"), vec![channels], 0.0),
                        self.buffer(format!("{prefix}.running_var"), vec![channels], 1.0),
                    )
                });
                Some(Layer::Norm(NormLayer {
                    kind,
                    gamma,
                    beta,
                    running,
                }))
            }
        }
    }

    fn act(&mut self, prefix: &str, kind: Activation, channels: usize) -> Layer {
        self.activation_names.push(prefix.to_string());
        let alpha = (kind == Activation::Prelu)
            .then(|| self.param(format!("{prefix}.alpha"), vec![channels], ParamRole::PreluAlpha, false));
        Layer::Act { kind, alpha }
    }
}

/// Settings for one residual block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub width: usize,
    pub kernel_size: usize,
    pub activation: Activation,
    pub act_placement: ActPlacement,
    pub norm_placement: NormPlacement,
    pub norm_kind: NormKind,
}

impl BlockSpec {
    /// `(in, out, kernel, groups)` of the three convolutions, in order.
    pub fn convs(&self) -> Result<[(usize, usize, usize, usize); 3]> {
        let (w, k) = (self.width, self.kernel_size);
        Ok(match self.kind {
            BlockKind::Normal => {
                if w % 4 != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "normal block width {w} not divisible by 4"
                    )));
                }
                let h = w / 4;
                [(w, h, 1, 1), (h, h, k, h), (h, w, 1, 1)]
            }
            BlockKind::Invert => [(w, 4 * w, 1, 1), (4 * w, 4 * w, k, 4 * w), (4 * w, w, 1, 1)],
            BlockKind::InvertUp => [(w, w, k, w), (w, 4 * w, 1, 1), (4 * w, w, 1, 1)],
        })
    }
}

/// One residual block: three convolutions with normalizers and activations
/// after the positions the placements keep (normalizer first).
pub(crate) fn build_block(reg: &mut Registry, prefix: &str, spec: &BlockSpec) -> Result<Layer> {
    let mut layers = Vec::new();
    for (i, (cin, cout, k, groups)) in spec.convs()?.into_iter().enumerate() {
        let pos = i + 1;
        // the closing projection starts small so each block begins near identity
        let gain = if pos == 3 { 0.5 } else { 1.0 };
        layers.push(reg.conv(&format!("{prefix}.conv{pos}"), cin, cout, k, 1, k / 2, groups, gain));
        if spec.norm_placement.keeps(pos) {
            layers.extend(reg.norm(&format!("{prefix}.norm{pos}"), spec.norm_kind, cout));
        }
        if spec.act_placement.keeps(pos) {
            layers.push(reg.act(&format!("{prefix}.act{pos}"), spec.activation, cout));
        }
    }
    Ok(Layer::Residual(layers))
}

/// Stem layers mapping `[N, 3, R, R]` to `[N, width, R/4, R/4]`.
pub(crate) fn build_stem(
    reg: &mut Registry,
    kind: StemKind,
    width: usize,
    activation: Activation,
    norm: NormKind,
) -> Vec<Layer> {
    let mut layers = Vec::new();
    match kind {
        StemKind::ResNetStem => {
            layers.push(reg.conv("stem.conv1", 3, width, 7, 2, 3, 1, 1.0));
            layers.extend(reg.norm("stem.norm1", norm, width));
            layers.push(reg.act("stem.act1", activation, width));
            layers.push(Layer::MaxPool {
                kernel: 3,
                stride: 2,
                padding: 1,
            });
        }
        StemKind::ResNetStemNoPool => {
            layers.push(reg.conv("stem.conv1", 3, width, 7, 4, 3, 1, 1.0));
            layers.extend(reg.norm("stem.norm1", norm, width));
            layers.push(reg.act("stem.act1", activation, width));
        }
        StemKind::SwinStem => {
            layers.push(reg.conv("stem.conv1", 3, width, 4, 4, 0, 1, 1.0));
            layers.extend(reg.norm("stem.norm1", norm, width));
        }
        StemKind::SwinStemK5 => {
            layers.push(reg.conv("stem.conv1", 3, width, 5, 4, 2, 1, 1.0));
            layers.extend(reg.norm("stem.norm1", norm, width));
        }
        StemKind::ConvStem => {
            let half = width / 2;
            layers.push(reg.conv("stem.conv1", 3, half, 3, 2, 1, 1, 1.0));
            layers.extend(reg.norm("stem.norm1", norm, half));
            layers.push(reg.act("stem.act1", activation, half));
            layers.push(reg.conv("stem.conv2", half, width, 3, 2, 1, 1, 1.0));
            layers.extend(reg.norm("stem.norm2", norm, width));
        }
    }
    layers
}

impl ModelSpec {
    /// Stem, four stages with 2x2 stride-2 downsampling between them, global
    /// average pooling, an optional final normalizer, and a linear head.
    pub fn build(config: &ArchConfig) -> Result<Self> {
        config.validate()?;
        let mut reg = Registry::default();
        let mut layers = build_stem(
            &mut reg,
            config.stem,
            config.channels[0],
            config.activation,
            config.norm_kind,
        );
        for stage in 0..4 {
            let width = config.channels[stage];
            if stage > 0 {
                let prev = config.channels[stage - 1];
                layers.extend(reg.norm(&format!("stages.{stage}.down.norm"), config.norm_kind, prev));
                layers.push(reg.conv(&format!("stages.{stage}.down.conv"), prev, width, 2, 2, 0, 1, 1.0));
            }
            let block = BlockSpec {
                kind: config.block,
                width,
                kernel_size: config.kernel_size,
                activation: config.activation,
                act_placement: config.act_placement,
                norm_placement: config.norm_placement,
                norm_kind: config.norm_kind,
            };
            for b in 0..config.depths[stage] {
                layers.push(build_block(&mut reg, &format!("stages.{stage}.blocks.{b}"), &block)?);
            }
        }
        layers.push(Layer::GlobalAvgPool);
        let last = config.channels[3];
        layers.extend(reg.norm("head_norm", config.norm_kind, last));
        let weight = reg.param(
            "head.weight".into(),
            vec![config.num_classes, last],
            ParamRole::HeadWeight,
            false,
        );
        let bias = reg.param("head.bias".into(), vec![config.num_classes], ParamRole::HeadBias, false);
        layers.push(Layer::Linear { weight, bias });
        Ok(ModelSpec {
            config: config.clone(),
            layers,
            params: reg.params,
            buffers: reg.buffers,
            activation_names: reg.activation_names,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }

    /// Indices of parameters belonging to the classifier head.
    pub fn is_head(&self, index: usize) -> bool {
        matches!(
            self.params[index].role,
            ParamRole::HeadWeight | ParamRole::HeadBias
        )
    }

    fn init_param(info: &ParamInfo, rng: &mut impl Rng) -> Tensor {
        let n: usize = info.shape.iter().product();
        let normal = |std: f64, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            let d = Normal::new(0.0, std).expect("finite std");
            // truncated at two standard deviations
            (0..n)
                .map(|_| loop {
                    let v: f64 = d.sample(rng);
                    if v.abs() <= 2.0 * std {
                        break v;
                    }
                })
                .collect()
        };
        let data = match info.role {
            ParamRole::ConvWeight { fan_in, gain } => normal(gain / (fan_in as f64).sqrt(), rng),
            ParamRole::HeadWeight => normal(0.02, rng),
            ParamRole::ConvBias | ParamRole::NormBias | ParamRole::HeadBias => vec![0.0; n],
            ParamRole::NormWeight => vec![1.0; n],
            ParamRole::PreluAlpha => vec![PRELU_INIT; n],
        };
        Tensor::new(info.shape.clone(), data).expect("registry shapes are consistent")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct ForwardOutput {
    pub logits: Var,
    /// Graph leaf for each registered parameter, in registry order.
    pub params: Vec<Var>,
    /// Mean output of each activation layer, in forward order.
    pub activation_means: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: Arc<ModelSpec>,
    params: Vec<Tensor>,
    buffers: Vec<Tensor>,
}

impl Model {
    /// Builds and initializes a model; identical `(config, seed)` give
    /// identical weights.
    pub fn new(config: &ArchConfig, seed: u64) -> Result<Self> {
        let spec = Arc::new(ModelSpec::build(config)?);
        Ok(Model::init(spec, seed))
    }

    pub fn init(spec: Arc<ModelSpec>, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::STREAM_INIT]);
        let params = spec.params.iter().map(|p| ModelSpec::init_param(p, &mut r)).collect();
        let buffers = spec
            .buffers
            .iter()
            .map(|b| Tensor::full(&b.shape, b.init))
            .collect();
        Model {
            spec,
            params,
            buffers,
        }
    }

    pub fn spec(&self) -> &Arc<ModelSpec> {
        &self.spec
    }

    pub fn config(&self) -> &ArchConfig {
        &self.spec.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    pub fn num_params(&self) -> usize {
        self.spec.num_params()
    }

    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: Mode) -> Result<ForwardOutput> {
        let params: Vec<Var> = self.params.iter().map(|t| g.param(t.clone())).collect();
        let mut ctx = Ctx {
            g,
            params: &params,
            buffers: &mut self.buffers,
            mode,
            activation_means: Vec::new(),
        };
        let logits = run_layers(&self.spec.layers, x, &mut ctx)?;
        let activation_means = ctx.activation_means;
        Ok(ForwardOutput {
            logits,
            params,
            activation_means,
        })
    }

    /// Class predictions in eval mode.
    pub fn predict(&mut self, images: Tensor) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let x = g.input(images);
        let out = self.forward(&mut g, x, Mode::Eval)?;
        let logits = g.value(out.logits);
        let k = logits.shape()[1];
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn state_dict(&self) -> StateDict {
        let mut entries: Vec<StateEntry> = self
            .spec
            .params
            .iter()
            .zip(&self.params)
            .map(|(info, t)| StateEntry {
                name: info.name.clone(),
                kind: EntryKind::Param,
                batch_norm: info.batch_norm,
                tensor: t.clone(),
            })
            .collect();
        entries.extend(self.spec.buffers.iter().zip(&self.buffers).map(|(info, t)| StateEntry {
            name: info.name.clone(),
            kind: EntryKind::Buffer,
            batch_norm: true,
            tensor: t.clone(),
        }));
        StateDict { entries }
    }

    /// Copies every entry of `sd` into the model. With `keep_batch_norm`,
    /// batch-norm affine parameters and running statistics are left as they
    /// are.
    pub fn load_state_dict(&mut self, sd: &StateDict, keep_batch_norm: bool) -> Result<()> {
        let expected = self.spec.params.len() + self.spec.buffers.len();
        if sd.entries.len() != expected {
            return Err(Error::Shape(format!(
                "state dict has {} entries, model has {expected}",
                sd.entries.len()
            )));
        }
        let np = self.spec.params.len();
        for (i, e) in sd.entries.iter().enumerate() {
            let (name, slot) = if i < np {
                (&self.spec.params[i].name, &mut self.params[i])
            } else {
                (&self.spec.buffers[i - np].name, &mut self.buffers[i - np])
            };
            if &e.name != name || e.tensor.shape() != slot.shape() {
                return Err(Error::Shape(format!(
                    "state entry `{}` {:?} does not match `{name}` {:?}",
                    e.name,
                    e.tensor.shape(),
                    slot.shape()
                )));
            }
            if keep_batch_norm && e.batch_norm {
                continue;
            }
            *slot = e.tensor.clone();
        }
        Ok(())
    }
}

struct Ctx<'a> {
    g: &'a mut Graph,
    params: &'a [Var],
    buffers: &'a mut [Tensor],
    mode: Mode,
    activation_means: Vec<f64>,
}

fn run_layers(layers: &[Layer], mut x: Var, ctx: &mut Ctx<'_>) -> Result<Var> {
    for layer in layers {
        x = run_layer(layer, x, ctx)?;
    }
    Ok(x)
}

fn run_layer(layer: &Layer, x: Var, ctx: &mut Ctx<'_>) -> Result<Var> {
    match layer {
        Layer::Conv {
            weight, bias, params, ..
        } => ctx
            .g
            .conv2d(x, ctx.params[*weight], bias.map(|b| ctx.params[b]), *params),
        Layer::Norm(n) => {
            let (gamma, beta) = (ctx.params[n.gamma], ctx.params[n.beta]);
            match (n.kind, n.running) {
                (NormKind::BatchNorm, Some((rm, rv))) => {
                    let mut mean = std::mem::replace(&mut ctx.buffers[rm], Tensor::scalar(0.0));
                    let mut var = std::mem::replace(&mut ctx.buffers[rv], Tensor::scalar(0.0));
                    let mode = match ctx.mode {
                        Mode::Train => BnMode::Train,
                        Mode::Eval => BnMode::Eval,
                    };
                    let out = ctx
                        .g
                        .batch_norm(x, gamma, beta, &mut mean, &mut var, BN_MOMENTUM, NORM_EPS, mode);
                    ctx.buffers[rm] = mean;
                    ctx.buffers[rv] = var;
                    out
                }
                _ => ctx.g.layer_norm_c(x, gamma, beta, NORM_EPS),
            }
        }
        Layer::Act { kind, alpha } => {
            let y = match alpha {
                Some(a) => ctx.g.prelu(x, ctx.params[*a])?,
                None => ctx.g.activation(*kind, x)?,
            };
            let v = ctx.g.value(y);
            ctx.activation_means
                .push(v.data().iter().sum::<f64>() / v.numel().max(1) as f64);
            Ok(y)
        }
        Layer::MaxPool {
            kernel,
            stride,
            padding,
        } => ctx.g.maxpool2d(x, *kernel, *stride, *padding),
        Layer::Residual(inner) => {
            let y = run_layers(inner, x, ctx)?;
            ctx.g.add(x, y)
        }
        Layer::GlobalAvgPool => ctx.g.global_avg_pool(x),
        Layer::Linear { weight, bias } => ctx.g.linear(x, ctx.params[*weight], ctx.params[*bias]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(layers: &[Layer], pred: impl Fn(&Layer) -> bool) -> usize {
        let mut n = 0;
        for l in layers {
            l.visit(&mut |x| {
                if pred(x) {
                    n += 1
                }
            });
        }
        n
    }

    fn block(kind: BlockKind, act: ActPlacement, norm: NormPlacement, norm_kind: NormKind) -> (Layer, Registry) {
        let mut reg = Registry::default();
        let spec = BlockSpec {
            kind,
            width: 8,
            kernel_size: 3,
            activation: Activation::Silu,
            act_placement: act,
            norm_placement: norm,
            norm_kind,
        };
        let l = build_block(&mut reg, "b", &spec).unwrap();
        (l, reg)
    }

    fn position_after_conv(layer: &Layer, want: impl Fn(&Layer) -> bool) -> Vec<usize> {
        let Layer::Residual(inner) = layer else { panic!() };
        let mut conv = 0;
        let mut out = Vec::new();
        for l in inner {
            if matches!(l, Layer::Conv { .. }) {
                conv += 1;
            } else if want(l) {
                out.push(conv);
            }
        }
        out
    }

    #[test]
    fn act_positions_follow_placement() {
        let is_act = |l: &Layer| matches!(l, Layer::Act { .. });
        let (b, _) = block(BlockKind::Invert, ActPlacement::Act1, NormPlacement::All, NormKind::LayerNormC);
        assert_eq!(position_after_conv(&b, is_act), vec![1]);
        let (b, _) = block(BlockKind::Normal, ActPlacement::Act3, NormPlacement::All, NormKind::LayerNormC);
        assert_eq!(position_after_conv(&b, is_act), vec![3]);
        let (b, _) = block(BlockKind::Normal, ActPlacement::All, NormPlacement::Norm2, NormKind::LayerNormC);
        assert_eq!(position_after_conv(&b, is_act), vec![1, 2, 3]);
        let is_norm = |l: &Layer| matches!(l, Layer::Norm(_));
        assert_eq!(position_after_conv(&b, is_norm), vec![2]);
    }

    #[test]
    fn norm_precedes_act_at_same_position() {
        let (b, _) = block(BlockKind::Invert, ActPlacement::Act1, NormPlacement::Norm1, NormKind::LayerNormC);
        let Layer::Residual(inner) = b else { panic!() };
        assert!(matches!(inner[1], Layer::Norm(_)));
        assert!(matches!(inner[2], Layer::Act { .. }));
    }

    #[test]
    fn invert_up_act2_nonorm_param_count() {
        let (b, reg) = block(BlockKind::InvertUp, ActPlacement::Act2, NormPlacement::NoNorm, NormKind::None);
        let Layer::Residual(inner) = &b else { panic!() };
        assert!(matches!(inner[0], Layer::Conv { kernel: 3, .. }));
        assert_eq!(position_after_conv(&b, |l| matches!(l, Layer::Act { .. })), vec![2]);
        assert_eq!(count(inner, |l| matches!(l, Layer::Norm(_))), 0);
        let (w, k) = (8usize, 3usize);
        let n: usize = reg.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        assert_eq!(n, w * k * k + 8 * w * w + 6 * w);
    }

    #[test]
    fn stems_downsample_four_times() {
        for &stem in StemKind::ALL {
            let mut cfg = ArchConfig::fedconv_tiny(BlockKind::InvertUp, 4);
            cfg.stem = stem;
            let mut reg = Registry::default();
            let layers = build_stem(&mut reg, stem, 8, Activation::Silu, NormKind::None);
            let spec = ModelSpec {
                config: cfg,
                layers,
                params: reg.params,
                buffers: reg.buffers,
                activation_names: reg.activation_names,
            };
            let mut m = Model::init(Arc::new(spec), 0);
            let mut g = Graph::new();
            let x = g.input(Tensor::zeros(&[1, 3, 32, 32]));
            let out = m.forward(&mut g, x, Mode::Eval).unwrap();
            assert_eq!(g.value(out.logits).shape(), &[1, 8, 8, 8], "{stem}");
        }
    }

    #[test]
    fn tiny_fedconv_runs_forward() {
        let cfg = ArchConfig::fedconv_tiny(BlockKind::InvertUp, 4);
        let mut m = Model::new(&cfg, 1).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[2, 3, 32, 32], 0.3));
        let out = m.forward(&mut g, x, Mode::Train).unwrap();
        assert_eq!(g.value(out.logits).shape(), &[2, 4]);
        assert_eq!(out.params.len(), m.spec().params.len());
    }

    #[test]
    fn registry_names_are_unique_and_stable() {
        for cfg in [ArchConfig::resnet_m(), ArchConfig::fedconv(BlockKind::Normal)] {
            let a = ModelSpec::build(&cfg).unwrap();
            let b = ModelSpec::build(&cfg).unwrap();
            assert_eq!(a.params, b.params);
            let mut names: Vec<&str> = a.params.iter().map(|p| p.name.as_str()).collect();
            names.extend(a.buffers.iter().map(|b| b.name.as_str()));
            let total = names.len();
            names.sort_unstable();
            names.dedup();
            assert_eq!(names.len(), total);
        }
    }

    #[test]
    fn batch_norm_model_has_buffers() {
        let mut cfg = ArchConfig::fedconv_tiny(BlockKind::Invert, 4);
        cfg.norm_kind = NormKind::BatchNorm;
        cfg.norm_placement = NormPlacement::All;
        let spec = ModelSpec::build(&cfg).unwrap();
        assert!(!spec.buffers.is_empty());
        assert!(spec.params.iter().any(|p| p.batch_norm));
        let m = Model::init(Arc::new(spec), 3);
        let sd = m.state_dict();
        assert!(sd.entries.iter().any(|e| e.name.ends_with("running_var")));
    }

    #[test]
    fn load_state_dict_can_keep_batch_norm() {
        let mut cfg = ArchConfig::fedconv_tiny(BlockKind::Invert, 4);
        cfg.norm_kind = NormKind::BatchNorm;
        cfg.norm_placement = NormPlacement::Norm3;
        let mut a = Model::new(&cfg, 1).unwrap();
        let b = Model::new(&cfg, 2).unwrap();
        let before = a.state_dict();
        a.load_state_dict(&b.state_dict(), true).unwrap();
        for ((ea, eb), e0) in a.state_dict().entries.iter().zip(&b.state_dict().entries).zip(&before.entries) {
            if ea.batch_norm {
                assert!(ea.tensor.bits_eq(&e0.tensor));
            } else {
                assert!(ea.tensor.bits_eq(&eb.tensor));
            }
        }
    }
}

//! The broadcast-residual classifier.
//!
//! Layout: front 5x5 stride-2 conv to 2c channels, four stages of
//! broadcast-residual blocks with widths {c, 1.5c, 2c, 2.5c} and depths
//! {2, 2, 2, 3}, 2x2 max-pools after stages 1 and 2, then a 1x1 classifier
//! conv and global average pooling. The first block of each stage changes
//! channel count (a transition block: leading 1x1 conv + BN + ReLU, no
//! identity shortcut).
//!
//! Each block splits into a 2D path (frequency depthwise 3x1 conv + sub-band
//! norm) and a 1D path fed by the frequency average of the 2D path (temporal
//! depthwise 1x3 conv + BN + swish + 1x1 conv + dropout). The 1D output is
//! broadcast back over frequency and summed with the 2D path and, in
//! non-transition blocks, the identity.

use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::norm::{BandStats, GlobalFreqStats};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Axis, Shape, Tensor};
use rand::RngCore;

/// Where frequency-wise normalization is applied.
///
/// `ResNorm` places `lambda * x + freq_in(x)` on the input and after the last
/// block of every stage (five sites). `PreResNorm` normalizes the input only.
/// `FreqIn` uses plain instance normalization at the same five sites.
/// `GlobalFreqNorm` applies fixed per-frequency statistics fitted on the
/// training corpus to the input. `None` disables normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    ResNorm,
    PreResNorm,
    FreqIn,
    GlobalFreqNorm,
    None,
}

impl NormMode {
    pub fn parse(s: &str) -> Result<NormMode> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "resnorm" => Ok(NormMode::ResNorm),
            "preresnorm" => Ok(NormMode::PreResNorm),
            "freqin" => Ok(NormMode::FreqIn),
            "globalfreqnorm" => Ok(NormMode::GlobalFreqNorm),
            "none" => Ok(NormMode::None),
            other => Err(Error::InvalidArg(format!(
                "unknown norm mode `{other}`; expected resnorm, pre_resnorm, freqin, globalfreqnorm or none"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormMode::ResNorm => "resnorm",
            NormMode::PreResNorm => "pre_resnorm",
            NormMode::FreqIn => "freqin",
            NormMode::GlobalFreqNorm => "globalfreqnorm",
            NormMode::None => "none",
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            NormMode::ResNorm => 0,
            NormMode::PreResNorm => 1,
            NormMode::FreqIn => 2,
            NormMode::GlobalFreqNorm => 3,
            NormMode::None => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<NormMode> {
        Ok(match tag {
            0 => NormMode::ResNorm,
            1 => NormMode::PreResNorm,
            2 => NormMode::FreqIn,
            3 => NormMode::GlobalFreqNorm,
            4 => NormMode::None,
            other => {
                return Err(Error::FileFormat(format!("unknown norm mode tag {other}")));
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Base width c; stage widths are round(c), round(1.5c), round(2c), round(2.5c).
    pub base_channels: usize,
    pub num_classes: usize,
    pub input_freq_bins: usize,
    pub dropout: f64,
    pub ssn_sub_bands: usize,
    pub norm_mode: NormMode,
    /// Residual weight in `lambda * x + freq_in(x)`.
    pub lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 80,
            num_classes: 10,
            input_freq_bins: 256,
            dropout: 0.1,
            ssn_sub_bands: 4,
            norm_mode: NormMode::ResNorm,
            lambda: 0.1,
        }
    }
}

pub const STAGE_DEPTHS: [usize; 4] = [2, 2, 2, 3];
pub const STAGE_WIDTH_FACTORS: [f64; 4] = [1.0, 1.5, 2.0, 2.5];

impl ModelConfig {
    /// Channel widths: front conv output followed by the four stage widths.
    pub fn widths(&self) -> (usize, [usize; 4]) {
        let c = self.base_channels as f64;
        let stages = [
            (c * STAGE_WIDTH_FACTORS[0]).round() as usize,
            (c * STAGE_WIDTH_FACTORS[1]).round() as usize,
            (c * STAGE_WIDTH_FACTORS[2]).round() as usize,
            (c * STAGE_WIDTH_FACTORS[3]).round() as usize,
        ];
        (2 * self.base_channels, stages)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::InvalidArg("model: base_channels must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArg(format!(
                "model: need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArg(format!(
                "model: dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.ssn_sub_bands == 0 {
            return Err(Error::InvalidArg("model: ssn_sub_bands must be positive".into()));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidArg("model: lambda must be finite".into()));
        }
        // frequency extent at each sub-band norm site: input/2 (stages 1, 2
        // before pools see input/2 and input/4... walk it explicitly)
        let mut f = self.input_freq_bins;
        if f % 2 != 0 {
            return Err(Error::InvalidArg(format!(
                "model: front conv stride 2 needs an even frequency extent, got {f}"
            )));
        }
        f /= 2;
        for (si, _) in STAGE_DEPTHS.iter().enumerate() {
            if f % self.ssn_sub_bands != 0 {
                return Err(Error::InvalidArg(format!(
                    "model: stage {} sees frequency extent {f}, not divisible into {} sub-bands",
                    si + 1,
                    self.ssn_sub_bands
                )));
            }
            if si < 2 {
                if f % 2 != 0 {
                    return Err(Error::InvalidArg(format!(
                        "model: max-pool after stage {} needs an even frequency extent, got {f}",
                        si + 1
                    )));
                }
                f /= 2;
            }
        }
        Ok(())
    }
}

/// A convolution layer's parameters.
#[derive(Debug, Clone)]
pub struct ConvParams<S: Scalar> {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: Tensor<S>,
    pub bias: Option<Tensor<S>>,
}

/// Batch-norm family parameters; `bands == 1` is plain BN over (N, F, T),
/// `bands > 1` is sub-band normalization.
#[derive(Debug, Clone)]
pub struct NormParams<S: Scalar> {
    pub name: String,
    pub bands: usize,
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running: BandStats<S>,
}

#[derive(Debug, Clone)]
pub struct BcBlock<S: Scalar> {
    /// 1x1 conv + BN (+ReLU) present only when the block changes width.
    pub transition: Option<(ConvParams<S>, NormParams<S>)>,
    pub freq_dw: ConvParams<S>,
    pub ssn: NormParams<S>,
    pub time_dw: ConvParams<S>,
    pub time_bn: NormParams<S>,
    pub pointwise: ConvParams<S>,
}

impl<S: Scalar> BcBlock<S> {
    pub fn is_transition(&self) -> bool {
        self.transition.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct Model<S: Scalar> {
    pub cfg: ModelConfig,
    pub front: ConvParams<S>,
    pub front_bn: NormParams<S>,
    pub stages: Vec<Vec<BcBlock<S>>>,
    pub classifier: ConvParams<S>,
    /// Present only when `norm_mode == GlobalFreqNorm` and fitted.
    pub global_stats: Option<GlobalFreqStats<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Hook for weight-space transforms during forward (fake quantization in
/// quantization-aware training). Receives the weight leaf and returns the
/// node to convolve with.
pub trait WeightTransform<S: Scalar> {
    fn apply(&self, name: &str, tape: &mut Tape<S>, w: NodeId) -> Result<NodeId>;
}

/// Everything a forward pass exposes besides the logits.
pub struct ForwardPass<S: Scalar> {
    pub logits: NodeId,
    /// Trainable parameter leaves, in a stable order.
    pub params: Vec<(String, NodeId)>,
    /// Batch statistics produced by train-mode norm layers, keyed by layer name.
    pub stat_updates: Vec<(String, BandStats<S>)>,
    /// Named intermediate output shapes, one entry per structural layer.
    pub shapes: Vec<(String, Shape)>,
    /// The broadcast (frequency-expanded) 1D-path node of every block.
    pub broadcast_nodes: Vec<NodeId>,
    /// Frequency-normalization applications (input site plus stage sites).
    pub norm_sites: usize,
}

fn uniform_init<S: Scalar, R: RngCore>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<S> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.fill_uniform(rng, bound);
    t
}

fn conv_params<S: Scalar, R: RngCore>(
    name: &str,
    spec: ConvSpec,
    with_bias: bool,
    rng: &mut R,
) -> ConvParams<S> {
    let fan_in = (spec.in_channels / spec.groups) * spec.kernel.0 * spec.kernel.1;
    let weight = uniform_init(spec.weight_shape(), fan_in, rng);
    let bias = with_bias.then(|| Tensor::zeros(Shape::new(1, spec.out_channels, 1, 1)));
    ConvParams {
        name: name.to_string(),
        spec,
        weight,
        bias,
    }
}

fn norm_params<S: Scalar>(name: &str, channels: usize, bands: usize) -> NormParams<S> {
    NormParams {
        name: name.to_string(),
        bands,
        gamma: Tensor::filled(Shape::new(1, channels, bands, 1), S::one()),
        beta: Tensor::zeros(Shape::new(1, channels, bands, 1)),
        running: BandStats::identity(channels, bands),
    }
}

impl<S: Scalar> Model<S> {
    pub fn build<R: RngCore>(cfg: ModelConfig, rng: &mut R) -> Result<Model<S>> {
        cfg.validate()?;
        let (front_ch, widths) = cfg.widths();
        let front = conv_params(
            "front.conv",
            ConvSpec::full(1, front_ch, (5, 5), (2, 2), (2, 2)),
            false,
            rng,
        );
        let front_bn = norm_params("front.bn", front_ch, 1);

        let mut stages = Vec::with_capacity(4);
        let mut in_ch = front_ch;
        for (si, (&depth, &out_ch)) in STAGE_DEPTHS.iter().zip(widths.iter()).enumerate() {
            let mut blocks = Vec::with_capacity(depth);
            for bi in 0..depth {
                let prefix = format!("s{}.b{}", si + 1, bi + 1);
                let transition = if in_ch != out_ch {
                    let conv = conv_params(
                        &format!("{prefix}.trans.conv"),
                        ConvSpec::pointwise(in_ch, out_ch),
                        false,
                        rng,
                    );
                    let bn = norm_params(&format!("{prefix}.trans.bn"), out_ch, 1);
                    Some((conv, bn))
                } else {
                    None
                };
                blocks.push(BcBlock {
                    transition,
                    freq_dw: conv_params(
                        &format!("{prefix}.freq_dw"),
                        ConvSpec::depthwise(out_ch, (3, 1), (1, 0)),
                        false,
                        rng,
                    ),
                    ssn: norm_params(&format!("{prefix}.ssn"), out_ch, cfg.ssn_sub_bands),
                    time_dw: conv_params(
                        &format!("{prefix}.time_dw"),
                        ConvSpec::depthwise(out_ch, (1, 3), (0, 1)),
                        false,
                        rng,
                    ),
                    time_bn: norm_params(&format!("{prefix}.time_bn"), out_ch, 1),
                    pointwise: conv_params(
                        &format!("{prefix}.pw"),
                        ConvSpec::pointwise(out_ch, out_ch),
                        false,
                        rng,
                    ),
                });
                in_ch = out_ch;
            }
            stages.push(blocks);
        }

        let classifier = conv_params(
            "classifier",
            ConvSpec::pointwise(in_ch, cfg.num_classes),
            true,
            rng,
        );
        Ok(Model {
            cfg,
            front,
            front_bn,
            stages,
            classifier,
            global_stats: None,
        })
    }

    /// All blocks in execution order.
    pub fn blocks(&self) -> impl Iterator<Item = &BcBlock<S>> {
        self.stages.iter().flatten()
    }

    /// All convolution layers in execution order.
    pub fn conv_layers(&self) -> Vec<&ConvParams<S>> {
        let mut v = vec![&self.front];
        for b in self.blocks() {
            if let Some((c, _)) = &b.transition {
                v.push(c);
            }
            v.push(&b.freq_dw);
            v.push(&b.time_dw);
            v.push(&b.pointwise);
        }
        v.push(&self.classifier);
        v
    }

    /// All normalization layers in execution order.
    pub fn norm_layers(&self) -> Vec<&NormParams<S>> {
        let mut v = vec![&self.front_bn];
        for b in self.blocks() {
            if let Some((_, n)) = &b.transition {
                v.push(n);
            }
            v.push(&b.ssn);
            v.push(&b.time_bn);
        }
        v
    }

    pub fn conv_layers_mut(&mut self) -> Vec<&mut ConvParams<S>> {
        let mut v: Vec<&mut ConvParams<S>> = vec![&mut self.front];
        for b in self.stages.iter_mut().flatten() {
            if let Some((c, _)) = &mut b.transition {
                v.push(c);
            }
            v.push(&mut b.freq_dw);
            v.push(&mut b.time_dw);
            v.push(&mut b.pointwise);
        }
        v.push(&mut self.classifier);
        v
    }

    pub fn norm_layers_mut(&mut self) -> Vec<&mut NormParams<S>> {
        let mut v: Vec<&mut NormParams<S>> = vec![&mut self.front_bn];
        for b in self.stages.iter_mut().flatten() {
            if let Some((_, n)) = &mut b.transition {
                v.push(n);
            }
            v.push(&mut b.ssn);
            v.push(&mut b.time_bn);
        }
        v
    }

    /// Trainable tensors with stable names, in execution order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for c in self.conv_layers() {
            out.push((format!("{}.w", c.name), &c.weight));
            if let Some(b) = &c.bias {
                out.push((format!("{}.b", c.name), b));
            }
        }
        for n in self.norm_layers() {
            out.push((format!("{}.gamma", n.name), &n.gamma));
            out.push((format!("{}.beta", n.name), &n.beta));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut convs: Vec<&mut ConvParams<S>> = vec![&mut self.front];
        let mut norms: Vec<&mut NormParams<S>> = vec![&mut self.front_bn];
        for b in self.stages.iter_mut().flatten() {
            if let Some((c, n)) = &mut b.transition {
                convs.push(c);
                norms.push(n);
            }
            convs.push(&mut b.freq_dw);
            convs.push(&mut b.time_dw);
            convs.push(&mut b.pointwise);
            norms.push(&mut b.ssn);
            norms.push(&mut b.time_bn);
        }
        convs.push(&mut self.classifier);
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::new();
        for c in convs {
            out.push((format!("{}.w", c.name), &mut c.weight));
            if let Some(b) = &mut c.bias {
                out.push((format!("{}.b", c.name), b));
            }
        }
        for n in norms {
            out.push((format!("{}.gamma", n.name), &mut n.gamma));
            out.push((format!("{}.beta", n.name), &mut n.beta));
        }
        out
    }

    /// Convolution weight tensors only (the prune/quantize scope), with names.
    pub fn conv_weights(&self) -> Vec<(String, &Tensor<S>)> {
        self.conv_layers()
            .into_iter()
            .map(|c| (format!("{}.w", c.name), &c.weight))
            .collect()
    }

    pub fn conv_weights_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        self.conv_layers_mut()
            .into_iter()
            .map(|c| (format!("{}.w", c.name), &mut c.weight))
            .collect()
    }

    /// Blend train-mode batch statistics into the running estimates.
    pub fn commit_stats(&mut self, updates: &[(String, BandStats<S>)], momentum: S) {
        let mut norms = self.norm_layers_mut();
        for (name, batch) in updates {
            if let Some(n) = norms.iter_mut().find(|n| &n.name == name) {
                n.running.blend(batch, momentum);
            }
        }
    }

    /// Forward pass on a tape. Train mode needs `rng` when dropout is active.
    pub fn forward_on_tape<R: RngCore>(
        &self,
        tape: &mut Tape<S>,
        input: NodeId,
        mode: Mode,
        mut rng: Option<&mut R>,
        wt: Option<&dyn WeightTransform<S>>,
    ) -> Result<ForwardPass<S>> {
        let xs = tape.value(input).shape();
        if xs.c != 1 {
            return Err(Error::Shape(format!(
                "forward: expected single-channel input, got {} channels",
                xs.c
            )));
        }
        if xs.f != self.cfg.input_freq_bins {
            return Err(Error::Shape(format!(
                "forward: input frequency extent {} does not match the configured {}",
                xs.f, self.cfg.input_freq_bins
            )));
        }
        if xs.t < 8 {
            return Err(Error::Shape(format!(
                "forward: time extent {} too short to survive two stride-2 reductions",
                xs.t
            )));
        }
        if mode == Mode::Train && self.cfg.dropout > 0.0 && rng.is_none() {
            return Err(Error::InvalidArg(
                "forward: train mode with dropout needs an rng".into(),
            ));
        }

        let mut pass = ForwardPass {
            logits: input,
            params: Vec::new(),
            stat_updates: Vec::new(),
            shapes: Vec::new(),
            broadcast_nodes: Vec::new(),
            norm_sites: 0,
        };
        let train = mode == Mode::Train;
        let lambda = S::from_f64(self.cfg.lambda);

        let mut h = input;
        // input normalization site
        h = match self.cfg.norm_mode {
            NormMode::ResNorm | NormMode::PreResNorm => {
                let y = tape.res_norm(h, lambda)?;
                pass.norm_sites += 1;
                pass.shapes.push(("input.norm".into(), tape.value(y).shape()));
                y
            }
            NormMode::FreqIn => {
                let y = tape.freq_in(h)?;
                pass.norm_sites += 1;
                pass.shapes.push(("input.norm".into(), tape.value(y).shape()));
                y
            }
            NormMode::GlobalFreqNorm => {
                let stats = self.global_stats.as_ref().ok_or_else(|| {
                    Error::NotFitted(
                        "global frequency statistics missing; fit them before forward".into(),
                    )
                })?;
                let (a, b) = stats.to_affine();
                let y = tape.freq_affine(h, &a, &b)?;
                pass.norm_sites += 1;
                pass.shapes.push(("input.norm".into(), tape.value(y).shape()));
                y
            }
            NormMode::None => h,
        };

        h = self.conv(tape, h, &self.front, train, wt, &mut pass)?;
        h = self.norm(tape, h, &self.front_bn, train, &mut pass)?;
        h = tape.relu(h);
        pass.shapes.push(("front".into(), tape.value(h).shape()));

        for (si, stage) in self.stages.iter().enumerate() {
            for block in stage {
                h = self.block(tape, h, block, train, rng.as_deref_mut(), wt, &mut pass)?;
            }
            // stage-end normalization site, before any pooling
            h = match self.cfg.norm_mode {
                NormMode::ResNorm => {
                    pass.norm_sites += 1;
                    tape.res_norm(h, lambda)?
                }
                NormMode::FreqIn => {
                    pass.norm_sites += 1;
                    tape.freq_in(h)?
                }
                _ => h,
            };
            pass.shapes
                .push((format!("stage{}", si + 1), tape.value(h).shape()));
            if si < 2 {
                h = tape.maxpool2x2(h)?;
                pass.shapes
                    .push((format!("pool{}", si + 1), tape.value(h).shape()));
            }
        }

        h = self.conv(tape, h, &self.classifier, train, wt, &mut pass)?;
        pass.shapes.push(("classifier".into(), tape.value(h).shape()));
        let logits = tape.reduce_mean(h, &[Axis::F, Axis::T])?;
        pass.shapes.push(("logits".into(), tape.value(logits).shape()));
        pass.logits = logits;
        Ok(pass)
    }

    #[allow(clippy::too_many_arguments)]
    fn block<R: RngCore>(
        &self,
        tape: &mut Tape<S>,
        x: NodeId,
        block: &BcBlock<S>,
        train: bool,
        mut rng: Option<&mut R>,
        wt: Option<&dyn WeightTransform<S>>,
        pass: &mut ForwardPass<S>,
    ) -> Result<NodeId> {
        let mut h = x;
        if let Some((tconv, tbn)) = &block.transition {
            h = self.conv(tape, h, tconv, train, wt, pass)?;
            h = self.norm(tape, h, tbn, train, pass)?;
            h = tape.relu(h);
        }
        let identity = (!block.is_transition()).then_some(h);

        let f2 = self.conv(tape, h, &block.freq_dw, train, wt, pass)?;
        let f2 = self.norm(tape, f2, &block.ssn, train, pass)?;

        let favg = tape.reduce_mean(f2, &[Axis::F])?;
        let t1 = self.conv(tape, favg, &block.time_dw, train, wt, pass)?;
        let t1 = self.norm(tape, t1, &block.time_bn, train, pass)?;
        let t1 = tape.swish(t1);
        let mut t1 = self.conv(tape, t1, &block.pointwise, train, wt, pass)?;
        if train && self.cfg.dropout > 0.0 {
            let r = rng.as_deref_mut().expect("checked at forward entry");
            t1 = tape.dropout(t1, self.cfg.dropout, r)?;
        }
        let broadcast = tape.expand(t1, tape.value(f2).shape())?;
        pass.broadcast_nodes.push(broadcast);

        let mut sum = tape.add(f2, broadcast)?;
        if let Some(id) = identity {
            sum = tape.add(sum, id)?;
        }
        Ok(tape.relu(sum))
    }

    fn conv(
        &self,
        tape: &mut Tape<S>,
        x: NodeId,
        p: &ConvParams<S>,
        train: bool,
        wt: Option<&dyn WeightTransform<S>>,
        pass: &mut ForwardPass<S>,
    ) -> Result<NodeId> {
        let mut w = if train {
            let id = tape.leaf(p.weight.clone().with_grad());
            pass.params.push((format!("{}.w", p.name), id));
            id
        } else {
            tape.constant(p.weight.clone())
        };
        if let Some(wt) = wt {
            w = wt.apply(&p.name, tape, w)?;
        }
        let b = match &p.bias {
            Some(bias) if train => {
                let id = tape.leaf(bias.clone().with_grad());
                pass.params.push((format!("{}.b", p.name), id));
                Some(id)
            }
            Some(bias) => Some(tape.constant(bias.clone())),
            None => None,
        };
        tape.conv2d(x, w, b, p.spec)
    }

    fn norm(
        &self,
        tape: &mut Tape<S>,
        x: NodeId,
        n: &NormParams<S>,
        train: bool,
        pass: &mut ForwardPass<S>,
    ) -> Result<NodeId> {
        let (gamma, beta) = if train {
            let g = tape.leaf(n.gamma.clone().with_grad());
            let b = tape.leaf(n.beta.clone().with_grad());
            pass.params.push((format!("{}.gamma", n.name), g));
            pass.params.push((format!("{}.beta", n.name), b));
            (g, b)
        } else {
            (tape.constant(n.gamma.clone()), tape.constant(n.beta.clone()))
        };
        if train {
            let (y, batch) = tape.ssn_train(x, gamma, beta, n.bands)?;
            pass.stat_updates.push((n.name.clone(), batch));
            Ok(y)
        } else {
            tape.ssn_eval(x, gamma, beta, &n.running, n.bands)
        }
    }

    /// Eval-mode logits for a batch, (N, num_classes, 1, 1).
    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let pass = self.forward_eval(&mut tape, input)?;
        Ok(tape.value(pass.logits).clone())
    }

    /// Eval-mode forward without dropout, so no rng is involved.
    pub fn forward_eval(&self, tape: &mut Tape<S>, input: NodeId) -> Result<ForwardPass<S>> {
        self.forward_on_tape::<rand_chacha::ChaCha8Rng>(tape, input, Mode::Eval, None, None)
    }
}

/// One row of the parameter table.
#[derive(Debug, Clone)]
pub struct ParamRow {
    pub name: String,
    pub kind: &'static str,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamTotals {
    pub conv_params: usize,
    pub norm_params: usize,
    pub total: usize,
}

/// Per-layer parameter counts plus totals, split into convolution-family
/// parameters (weights and biases) and normalization affine parameters.
/// Running statistics are buffers, not parameters, and are not counted.
pub fn count_params<S: Scalar>(model: &Model<S>) -> (Vec<ParamRow>, ParamTotals) {
    let mut rows = Vec::new();
    let mut conv_params = 0usize;
    let mut norm_params = 0usize;
    for (name, t) in model.named_params() {
        let is_norm = name.ends_with(".gamma") || name.ends_with(".beta");
        let kind = if is_norm { "norm" } else { "conv" };
        if is_norm {
            norm_params += t.numel();
        } else {
            conv_params += t.numel();
        }
        rows.push(ParamRow {
            name,
            kind,
            count: t.numel(),
        });
    }
    (
        rows,
        ParamTotals {
            conv_params,
            norm_params,
            total: conv_params + norm_params,
        },
    )
}

/// Receptive-field accumulation over the serial conv/pool path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfReport {
    /// Counting every kernel, max-pool windows included.
    pub rf_freq: usize,
    pub rf_time: usize,
    /// Counting convolution kernels only; pool windows contribute just their
    /// stride. This is the figure usually quoted for this architecture.
    pub rf_conv_only_freq: usize,
    pub rf_conv_only_time: usize,
    pub jump_freq: usize,
    pub jump_time: usize,
}

/// Single-axis receptive-field accumulation over (kernel, stride) layers:
/// `rf += (k - 1) * jump; jump *= stride`.
pub fn rf_walk(layers: &[(usize, usize)]) -> (usize, usize) {
    let mut rf = 1usize;
    let mut jump = 1usize;
    for &(k, s) in layers {
        rf += (k - 1) * jump;
        jump *= s;
    }
    (rf, jump)
}

/// Elementwise, normalization and 1x1 layers contribute nothing. The 1D
/// temporal path shares the 2D path's temporal kernels, so the serial walk
/// covers it. The stack is fixed, so the result is width-independent.
pub fn receptive_field() -> RfReport {
    // (kf, kt, sf, st, is_pool)
    let mut layers: Vec<(usize, usize, usize, usize, bool)> = vec![(5, 5, 2, 2, false)];
    for (si, depth) in STAGE_DEPTHS.iter().enumerate() {
        for _ in 0..*depth {
            layers.push((3, 1, 1, 1, false)); // frequency depthwise
            layers.push((1, 3, 1, 1, false)); // temporal depthwise
        }
        if si < 2 {
            layers.push((2, 2, 2, 2, true));
        }
    }
    let axis = |take_freq: bool, include_pool_kernel: bool| -> Vec<(usize, usize)> {
        layers
            .iter()
            .map(|&(kf, kt, sf, st, pool)| {
                let (k, s) = if take_freq { (kf, sf) } else { (kt, st) };
                if pool && !include_pool_kernel {
                    (1, s)
                } else {
                    (k, s)
                }
            })
            .collect()
    };
    let (rf_f, jf) = rf_walk(&axis(true, true));
    let (rf_t, jt) = rf_walk(&axis(false, true));
    let (cf, _) = rf_walk(&axis(true, false));
    let (ct, _) = rf_walk(&axis(false, false));
    RfReport {
        rf_freq: rf_f,
        rf_time: rf_t,
        rf_conv_only_freq: cf,
        rf_conv_only_time: ct,
        jump_freq: jf,
        jump_time: jt,
    }
}

/// The expected named shape chain for an input, computed from the layer
/// arithmetic alone (no tensors).
pub fn shape_chain(cfg: &ModelConfig, input: Shape) -> Vec<(String, Shape)> {
    let (front_ch, widths) = cfg.widths();
    let mut out = Vec::new();
    // front conv: kernel 5, stride 2, padding 2 on both axes
    let mut f = (input.f + 2 * 2 - 5) / 2 + 1;
    let mut t = (input.t + 2 * 2 - 5) / 2 + 1;
    out.push(("front".to_string(), Shape::new(input.n, front_ch, f, t)));
    for si in 0..4 {
        out.push((format!("stage{}", si + 1), Shape::new(input.n, widths[si], f, t)));
        if si < 2 {
            f /= 2;
            t /= 2;
            out.push((format!("pool{}", si + 1), Shape::new(input.n, widths[si], f, t)));
        }
    }
    out.push((
        "classifier".to_string(),
        Shape::new(input.n, cfg.num_classes, f, t),
    ));
    out.push((
        "logits".to_string(),
        Shape::new(input.n, cfg.num_classes, 1, 1),
    ));
    out
}

//! Model compression: one-shot magnitude pruning over the convolution
//! weights, symmetric 8-bit weight quantization with a straight-through
//! fine-tuning hook, half-precision storage for everything else, and a
//! packed deployment format with byte-exact size accounting.
//!
//! The pipeline treats convolution weights and the remaining parameters
//! differently: conv weights are pruned and stored sparse (8-bit integers
//! with one scale per tensor, or raw half floats), while normalization
//! affines and biases are stored dense in half precision. Running norm
//! statistics are folded into the affine pair before packing, so a packed
//! model carries no separate statistics.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use half::f16;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{
    expect_eof, expect_magic, read_f32, read_i8, read_str, read_u16, read_u32, read_u8,
    write_f32, write_i8, write_str, write_u16, write_u32, write_u8,
};
use crate::checkpoint::{read_config, read_shape, write_config, write_shape};
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, WeightTransform};
use crate::norm::{BandStats, GlobalFreqStats, NORM_EPS};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Shape, Tensor};
use crate::train::{evaluate, train, Distill, EvalReport, TrainConfig, TrainOpts};

pub const BCRQ_MAGIC: &[u8; 4] = b"BCRQ";
pub const BCRQ_VERSION: u16 = 1;

/// Signed 8-bit range bound; zero always maps to quantized zero.
pub const QUANT_MAX: f64 = 127.0;

// ---------------------------------------------------------------------------
// Pruning

/// Whether the prune budget is pooled across all conv layers or applied to
/// each layer separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PruneScope {
    #[default]
    Global,
    PerLayer,
}

impl PruneScope {
    pub fn parse(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "global" => Ok(PruneScope::Global),
            "perlayer" => Ok(PruneScope::PerLayer),
            _ => Err(Error::InvalidArg(format!(
                "unknown prune scope `{s}` (expected global or per_layer)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PruneScope::Global => "global",
            PruneScope::PerLayer => "per_layer",
        }
    }
}

/// Keep/drop masks for every conv weight tensor, keyed by parameter name
/// (`<layer>.w`), so they plug directly into `TrainOpts::masks`.
#[derive(Debug, Clone)]
pub struct PruneMask {
    masks: BTreeMap<String, Vec<bool>>,
    pub ratio: f64,
    pub scope: PruneScope,
}

impl PruneMask {
    pub fn masks(&self) -> &BTreeMap<String, Vec<bool>> {
        &self.masks
    }

    /// Weights the mask keeps.
    pub fn kept(&self) -> usize {
        self.masks
            .values()
            .map(|m| m.iter().filter(|&&k| k).count())
            .sum()
    }

    pub fn total(&self) -> usize {
        self.masks.values().map(Vec::len).sum()
    }

    /// Fraction of conv weights dropped.
    pub fn sparsity(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            1.0 - self.kept() as f64 / total as f64
        }
    }

    /// Zero the dropped positions in place.
    pub fn apply<S: Scalar>(&self, model: &mut Model<S>) {
        for (name, w) in model.conv_weights_mut() {
            if let Some(mask) = self.masks.get(&name) {
                for (v, &keep) in w.data_mut().iter_mut().zip(mask) {
                    if !keep {
                        *v = S::zero();
                    }
                }
            }
        }
    }
}

/// Mask the smallest-magnitude fraction `ratio` of the given tensors (flat
/// slices with names). Ties broken by layer order, then flat index. Returned
/// masks preserve the input ordering.
fn magnitude_masks<S: Scalar>(
    layers: &[(String, &[S])],
    ratio: f64,
    scope: PruneScope,
) -> Vec<Vec<bool>> {
    let mut masks: Vec<Vec<bool>> = layers.iter().map(|(_, w)| vec![true; w.len()]).collect();
    match scope {
        PruneScope::Global => {
            let mut order: Vec<(f64, usize, usize)> = Vec::new();
            for (layer, (_, w)) in layers.iter().enumerate() {
                for (i, &v) in w.iter().enumerate() {
                    order.push((v.to_f64().abs(), layer, i));
                }
            }
            let drop = (ratio * order.len() as f64).round() as usize;
            order.sort_unstable_by(|a, b| {
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
            });
            for &(_, layer, i) in &order[..drop] {
                masks[layer][i] = false;
            }
        }
        PruneScope::PerLayer => {
            for (layer, (_, w)) in layers.iter().enumerate() {
                let mut order: Vec<(f64, usize)> = w
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (v.to_f64().abs(), i))
                    .collect();
                let drop = (ratio * order.len() as f64).round() as usize;
                order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, i) in &order[..drop] {
                    masks[layer][i] = false;
                }
            }
        }
    }
    masks
}

/// One-shot unstructured magnitude pruning over the conv weights (biases are
/// left alone). Drops the smallest-magnitude fraction `ratio`; ties broken by
/// layer order, then flat index. The mask is reusable across fine-tuning.
pub fn magnitude_prune<S: Scalar>(
    model: &Model<S>,
    ratio: f64,
    scope: PruneScope,
) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArg(format!(
            "prune ratio {ratio} outside [0, 1)"
        )));
    }
    let layers: Vec<(String, &[S])> = model
        .conv_weights()
        .into_iter()
        .map(|(name, w)| (name, w.data()))
        .collect();
    let picked = magnitude_masks(&layers, ratio, scope);
    let masks = layers
        .iter()
        .map(|(name, _)| name.clone())
        .zip(picked)
        .collect();
    Ok(PruneMask {
        masks,
        ratio,
        scope,
    })
}

// ---------------------------------------------------------------------------
// Quantization

/// Symmetric 8-bit quantization with one scale per tensor:
/// `scale = max|w| / 127` (1 when all-zero), `q = clamp(round(w/scale), ±127)`.
/// Rounding is half away from zero. Ratios are taken against the raw maximum
/// (`w/max * 127` rather than `w/scale`) so exact ties such as
/// `0.5/1.0 * 127 = 63.5` hit the rounding rule instead of division noise;
/// the max-magnitude element always lands on ±127 exactly.
pub fn quantize_sym<S: Scalar>(w: &[S]) -> (Vec<i8>, S) {
    let maxabs = w.iter().fold(S::zero(), |a, &v| a.max(v.abs()));
    if maxabs == S::zero() {
        return (vec![0; w.len()], S::one());
    }
    let scale = maxabs / S::from_f64(QUANT_MAX);
    let q = w
        .iter()
        .map(|&v| {
            let r = (v / maxabs * S::from_f64(QUANT_MAX)).round().to_f64();
            r.clamp(-QUANT_MAX, QUANT_MAX) as i8
        })
        .collect();
    (q, scale)
}

pub fn dequantize<S: Scalar>(q: &[i8], scale: S) -> Vec<S> {
    q.iter().map(|&qi| S::from_f64(qi as f64) * scale).collect()
}

/// Quantize-then-dequantize. A second application is a no-op: the recovered
/// codes are exact because the perturbation is far below half a step, and the
/// recomputed scale `fl(fl(127·s)/127)` returns `s` bit-for-bit (verified
/// exhaustively over f32 binades).
pub fn fake_quant<S: Scalar>(w: &[S]) -> Vec<S> {
    let (q, scale) = quantize_sym(w);
    dequantize(&q, scale)
}

/// Round each value through IEEE binary16. Storage-only: compute stays in
/// the working precision.
pub fn f16_round_trip<S: Scalar>(w: &[S]) -> Vec<S> {
    w.iter()
        .map(|&v| S::from_f64(f16::from_f64(v.to_f64()).to_f64()))
        .collect()
}

fn to_f16_bits<S: Scalar>(w: &[S]) -> Vec<u16> {
    w.iter().map(|&v| f16::from_f64(v.to_f64()).to_bits()).collect()
}

fn from_f16_bits<S: Scalar>(bits: &[u16]) -> Vec<S> {
    bits.iter()
        .map(|&b| S::from_f64(f16::from_bits(b).to_f64()))
        .collect()
}

fn f32_round_trip<S: Scalar>(w: &[S]) -> Vec<S> {
    w.iter().map(|&v| S::from_f64(v.to_f64() as f32 as f64)).collect()
}

// ---------------------------------------------------------------------------
// Storage scheme

/// How conv weights are stored. Everything else (norm affines, biases) is
/// always half precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvCoding {
    #[default]
    Int8,
    F16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QuantScheme {
    pub conv: ConvCoding,
}

impl QuantScheme {
    pub fn int8() -> Self {
        QuantScheme { conv: ConvCoding::Int8 }
    }

    pub fn f16() -> Self {
        QuantScheme { conv: ConvCoding::F16 }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "int8" | "i8" | "8bit" => Ok(Self::int8()),
            "f16" | "fp16" | "half" => Ok(Self::f16()),
            _ => Err(Error::InvalidArg(format!(
                "unknown quantization scheme `{s}` (expected int8 or f16)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self.conv {
            ConvCoding::Int8 => "int8",
            ConvCoding::F16 => "f16",
        }
    }

    fn tag(self) -> u8 {
        match self.conv {
            ConvCoding::Int8 => 1,
            ConvCoding::F16 => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Self::int8()),
            2 => Ok(Self::f16()),
            _ => Err(Error::FileFormat(format!("unknown scheme tag {tag}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Fake-quantization forward hook

/// Fake-quantizes conv weights on the tape during training. Dropped positions
/// are zeroed through a 0/1 constant multiply, so their gradients vanish; the
/// quantize-dequantize value then rides a straight-through estimator, which
/// passes the remaining gradients through the rounding unchanged.
pub struct QatWeights<'a> {
    scheme: QuantScheme,
    masks: Option<&'a BTreeMap<String, Vec<bool>>>,
}

impl<'a> QatWeights<'a> {
    pub fn new(scheme: QuantScheme) -> Self {
        QatWeights { scheme, masks: None }
    }

    pub fn with_masks(scheme: QuantScheme, masks: &'a BTreeMap<String, Vec<bool>>) -> Self {
        QatWeights {
            scheme,
            masks: Some(masks),
        }
    }
}

impl<'a, S: Scalar> WeightTransform<S> for QatWeights<'a> {
    fn apply(&self, name: &str, tape: &mut Tape<S>, w: NodeId) -> Result<NodeId> {
        let shape = tape.value(w).shape();
        let mut node = w;
        if let Some(masks) = self.masks {
            if let Some(mask) = masks.get(&format!("{name}.w")) {
                if mask.len() != shape.numel() {
                    return Err(Error::Shape(format!(
                        "mask for {name} has {} entries, weight has {}",
                        mask.len(),
                        shape.numel()
                    )));
                }
                let m: Vec<S> = mask
                    .iter()
                    .map(|&k| if k { S::one() } else { S::zero() })
                    .collect();
                let mc = tape.constant(Tensor::from_vec(shape, m)?);
                node = tape.mul(node, mc)?;
            }
        }
        let fq = match self.scheme.conv {
            ConvCoding::Int8 => fake_quant(tape.value(node).data()),
            ConvCoding::F16 => f16_round_trip(tape.value(node).data()),
        };
        tape.ste(node, Tensor::from_vec(shape, fq)?)
    }
}

// ---------------------------------------------------------------------------
// Norm folding

/// Collapse eval-mode normalization `gamma * (x - mean) / sqrt(var + eps) +
/// beta` into a single affine pair.
pub fn fold_norm_stats<S: Scalar>(
    gamma: &[S],
    beta: &[S],
    stats: &BandStats<S>,
) -> (Vec<S>, Vec<S>) {
    let eps = S::from_f64(NORM_EPS);
    let mut g2 = Vec::with_capacity(gamma.len());
    let mut b2 = Vec::with_capacity(beta.len());
    for i in 0..gamma.len() {
        let inv = (stats.var[i] + eps).sqrt().recip();
        let g = gamma[i] * inv;
        g2.push(g);
        b2.push(beta[i] - g * stats.mean[i]);
    }
    (g2, b2)
}

/// Rewrite every norm layer in place: folded affine, identity running stats.
/// Eval output then matches the unfolded layer up to the epsilon that the
/// identity variance still passes through the denominator (a factor of
/// `1/sqrt(1 + eps)`, about 5e-6 relative).
pub fn fold_model_norms<S: Scalar>(model: &mut Model<S>) {
    for n in model.norm_layers_mut() {
        let (g, b) = fold_norm_stats(n.gamma.data(), n.beta.data(), &n.running);
        n.gamma.data_mut().copy_from_slice(&g);
        n.beta.data_mut().copy_from_slice(&b);
        let channels = n.gamma.numel() / n.bands;
        n.running = BandStats::identity(channels, n.bands);
    }
}

// ---------------------------------------------------------------------------
// Packed tensors

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Raw f16 bit patterns for every element.
    Dense16(Vec<u16>),
    /// 8-bit codes for the stored positions plus one scale.
    Sparse8 { q: Vec<i8>, scale: f32 },
    /// f16 bit patterns for the stored positions.
    Sparse16(Vec<u16>),
}

/// One tensor in packed form. Sparse payloads store only the positions where
/// the source value was nonzero, so decoding reproduces the sparsity pattern
/// (a kept value may still quantize to code 0; it stays stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseQuantTensor {
    pub name: String,
    pub shape: Shape,
    /// Flat indices of the stored values, strictly increasing. Empty for
    /// dense payloads.
    pub indices: Vec<u32>,
    pub payload: Payload,
}

impl SparseQuantTensor {
    pub fn dense16<S: Scalar>(name: &str, w: &Tensor<S>) -> Self {
        SparseQuantTensor {
            name: name.to_string(),
            shape: w.shape(),
            indices: Vec::new(),
            payload: Payload::Dense16(to_f16_bits(w.data())),
        }
    }

    pub fn sparse8<S: Scalar>(name: &str, w: &Tensor<S>) -> Self {
        let (q, scale) = quantize_sym(w.data());
        let mut indices = Vec::new();
        let mut codes = Vec::new();
        for (i, &v) in w.data().iter().enumerate() {
            if v != S::zero() {
                indices.push(i as u32);
                codes.push(q[i]);
            }
        }
        SparseQuantTensor {
            name: name.to_string(),
            shape: w.shape(),
            indices,
            payload: Payload::Sparse8 {
                q: codes,
                scale: scale.to_f64() as f32,
            },
        }
    }

    pub fn sparse16<S: Scalar>(name: &str, w: &Tensor<S>) -> Self {
        let mut indices = Vec::new();
        let mut vals = Vec::new();
        for (i, &v) in w.data().iter().enumerate() {
            if v != S::zero() {
                indices.push(i as u32);
                vals.push(f16::from_f64(v.to_f64()).to_bits());
            }
        }
        SparseQuantTensor {
            name: name.to_string(),
            shape: w.shape(),
            indices,
            payload: Payload::Sparse16(vals),
        }
    }

    pub fn encoding(&self) -> &'static str {
        match self.payload {
            Payload::Dense16(_) => "dense16",
            Payload::Sparse8 { .. } => "sparse8",
            Payload::Sparse16(_) => "sparse16",
        }
    }

    pub fn value_count(&self) -> usize {
        match &self.payload {
            Payload::Dense16(v) => v.len(),
            Payload::Sparse8 { q, .. } => q.len(),
            Payload::Sparse16(v) => v.len(),
        }
    }

    /// Bytes the stored values themselves occupy (1 per 8-bit code, 2 per
    /// half float). Indices and scales are accounted separately.
    pub fn payload_bytes(&self) -> usize {
        match &self.payload {
            Payload::Dense16(v) => 2 * v.len(),
            Payload::Sparse8 { q, .. } => q.len(),
            Payload::Sparse16(v) => 2 * v.len(),
        }
    }

    pub fn index_bytes(&self) -> usize {
        4 * self.indices.len()
    }

    /// Reconstruct the dense tensor.
    pub fn decode<S: Scalar>(&self) -> Result<Tensor<S>> {
        match &self.payload {
            Payload::Dense16(bits) => {
                if bits.len() != self.shape.numel() {
                    return Err(Error::FileFormat(format!(
                        "{}: dense payload {} values for shape {}",
                        self.name,
                        bits.len(),
                        self.shape
                    )));
                }
                Tensor::from_vec(self.shape, from_f16_bits(bits))
            }
            Payload::Sparse8 { q, scale } => {
                let vals = dequantize(q, S::from_f64(*scale as f64));
                self.scatter(&vals)
            }
            Payload::Sparse16(bits) => self.scatter(&from_f16_bits::<S>(bits)),
        }
    }

    fn scatter<S: Scalar>(&self, vals: &[S]) -> Result<Tensor<S>> {
        if vals.len() != self.indices.len() {
            return Err(Error::FileFormat(format!(
                "{}: {} values for {} indices",
                self.name,
                vals.len(),
                self.indices.len()
            )));
        }
        let mut t = Tensor::zeros(self.shape);
        let data = t.data_mut();
        for (&i, &v) in self.indices.iter().zip(vals) {
            let i = i as usize;
            if i >= data.len() {
                return Err(Error::FileFormat(format!(
                    "{}: index {i} outside {} elements",
                    self.name,
                    data.len()
                )));
            }
            data[i] = v;
        }
        Ok(t)
    }

    fn encoding_tag(&self) -> u8 {
        match self.payload {
            Payload::Dense16(_) => 0,
            Payload::Sparse8 { .. } => 1,
            Payload::Sparse16(_) => 2,
        }
    }

    /// Record layout: name, shape, encoding byte, value count, delta-coded
    /// indices (first absolute, then gaps), payload, f32 scale (1.0 when the
    /// encoding carries none).
    fn write_record<W: Write>(&self, w: &mut W) -> Result<()> {
        write_str(w, &self.name)?;
        write_shape(w, self.shape)?;
        write_u8(w, self.encoding_tag())?;
        write_u32(w, self.value_count() as u32)?;
        let mut prev = 0u32;
        for (k, &idx) in self.indices.iter().enumerate() {
            let delta = if k == 0 { idx } else { idx - prev };
            write_u32(w, delta)?;
            prev = idx;
        }
        let scale = match &self.payload {
            Payload::Dense16(bits) | Payload::Sparse16(bits) => {
                for &b in bits {
                    write_u16(w, b)?;
                }
                1.0f32
            }
            Payload::Sparse8 { q, scale } => {
                for &c in q {
                    write_i8(w, c)?;
                }
                *scale
            }
        };
        write_f32(w, scale)
    }

    fn read_record<R: Read>(r: &mut R) -> Result<Self> {
        let name = read_str(r)?;
        let shape = read_shape(r)?;
        let tag = read_u8(r)?;
        let count = read_u32(r)? as usize;
        if count > shape.numel() {
            return Err(Error::FileFormat(format!(
                "{name}: {count} values exceed shape {shape}"
            )));
        }
        let mut indices = Vec::new();
        if tag != 0 {
            indices.reserve(count);
            let mut prev = 0u32;
            for k in 0..count {
                let delta = read_u32(r)?;
                if k > 0 && delta == 0 {
                    return Err(Error::FileFormat(format!(
                        "{name}: indices not strictly increasing"
                    )));
                }
                let idx = if k == 0 {
                    delta
                } else {
                    prev.checked_add(delta).ok_or_else(|| {
                        Error::FileFormat(format!("{name}: index overflow"))
                    })?
                };
                if idx as usize >= shape.numel() {
                    return Err(Error::FileFormat(format!(
                        "{name}: index {idx} outside shape {shape}"
                    )));
                }
                indices.push(idx);
                prev = idx;
            }
        } else if count != shape.numel() {
            return Err(Error::FileFormat(format!(
                "{name}: dense record holds {count} of {} values",
                shape.numel()
            )));
        }
        let payload = match tag {
            0 | 2 => {
                let mut bits = Vec::with_capacity(count);
                for _ in 0..count {
                    bits.push(read_u16(r)?);
                }
                if tag == 0 {
                    let _scale = read_f32(r)?;
                    Payload::Dense16(bits)
                } else {
                    let _scale = read_f32(r)?;
                    Payload::Sparse16(bits)
                }
            }
            1 => {
                let mut q = Vec::with_capacity(count);
                for _ in 0..count {
                    q.push(read_i8(r)?);
                }
                let scale = read_f32(r)?;
                Payload::Sparse8 { q, scale }
            }
            _ => {
                return Err(Error::FileFormat(format!(
                    "{name}: unknown encoding tag {tag}"
                )))
            }
        };
        Ok(SparseQuantTensor {
            name,
            shape,
            indices,
            payload,
        })
    }
}

// ---------------------------------------------------------------------------
// Size accounting

#[derive(Debug, Clone)]
pub struct LayerBytes {
    pub name: String,
    pub encoding: &'static str,
    pub values: usize,
    pub payload_bytes: usize,
    pub index_bytes: usize,
}

/// Byte accounting for a packed model. The headline figure is
/// `payload_kib`: value bytes only, the arithmetic deployment size budgets
/// are quoted in. Index overhead and container framing (names, shapes,
/// scales, header, checksum) are reported separately.
#[derive(Debug, Clone, Default)]
pub struct SizeReport {
    pub layers: Vec<LayerBytes>,
    pub payload_bytes: usize,
    pub index_bytes: usize,
    /// Full byte-stream length, when the report came from an actual pack.
    pub container_bytes: usize,
}

impl SizeReport {
    pub fn add(
        &mut self,
        name: &str,
        encoding: &'static str,
        values: usize,
        payload_bytes: usize,
        index_bytes: usize,
    ) {
        self.layers.push(LayerBytes {
            name: name.to_string(),
            encoding,
            values,
            payload_bytes,
            index_bytes,
        });
        self.payload_bytes += payload_bytes;
        self.index_bytes += index_bytes;
    }

    /// Accounting-only entry from a value count: 1 byte per sparse8 value,
    /// 2 per half float, 4 index bytes per sparse value.
    pub fn add_counts(&mut self, name: &str, encoding: &'static str, values: usize) -> Result<()> {
        let (payload, index) = match encoding {
            "dense16" => (2 * values, 0),
            "sparse8" => (values, 4 * values),
            "sparse16" => (2 * values, 4 * values),
            _ => {
                return Err(Error::InvalidArg(format!(
                    "unknown encoding `{encoding}`"
                )))
            }
        };
        self.add(name, encoding_str(encoding), values, payload, index);
        Ok(())
    }

    pub fn add_record(&mut self, rec: &SparseQuantTensor) {
        self.add(
            &rec.name,
            rec.encoding(),
            rec.value_count(),
            rec.payload_bytes(),
            rec.index_bytes(),
        );
    }

    /// Value bytes / 1024: the headline figure.
    pub fn payload_kib(&self) -> f64 {
        self.payload_bytes as f64 / 1024.0
    }

    /// Values plus indices.
    pub fn kib_with_index(&self) -> f64 {
        (self.payload_bytes + self.index_bytes) as f64 / 1024.0
    }

    pub fn container_kib(&self) -> f64 {
        self.container_bytes as f64 / 1024.0
    }

    /// Framing bytes beyond values and indices (header, names, shapes,
    /// scales, checksum). Zero for count-only reports.
    pub fn framing_bytes(&self) -> usize {
        self.container_bytes
            .saturating_sub(self.payload_bytes + self.index_bytes)
    }

    pub fn total_values(&self) -> usize {
        self.layers.iter().map(|l| l.values).sum()
    }

    /// Plain-text table for logs and CLI output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>9} {:>8} {:>12} {:>11}\n",
            "layer", "encoding", "values", "payload [B]", "index [B]"
        ));
        for l in &self.layers {
            out.push_str(&format!(
                "{:<22} {:>9} {:>8} {:>12} {:>11}\n",
                l.name, l.encoding, l.values, l.payload_bytes, l.index_bytes
            ));
        }
        out.push_str(&format!(
            "total: {} KiB payload ({} B), {} KiB with indices",
            kib_display(self.payload_kib()),
            self.payload_bytes,
            kib_display(self.kib_with_index())
        ));
        if self.container_bytes > 0 {
            out.push_str(&format!(
                ", {} KiB container ({} B framing)",
                kib_display(self.container_kib()),
                self.framing_bytes()
            ));
        }
        out.push('\n');
        out
    }
}

/// One decimal, truncated rather than rounded, so a displayed size never
/// overstates the budget figure it came from.
pub fn kib_display(kib: f64) -> String {
    format!("{:.1}", (kib * 10.0).floor() / 10.0)
}

fn encoding_str(e: &str) -> &'static str {
    match e {
        "dense16" => "dense16",
        "sparse8" => "sparse8",
        _ => "sparse16",
    }
}

pub fn kib(bytes: usize) -> f64 {
    bytes as f64 / 1024.0
}

// ---------------------------------------------------------------------------
// Packing

/// Encode every parameter tensor: conv weights per the scheme (sparse, after
/// masking), biases and folded norm affines dense in half precision.
fn pack_records<S: Scalar>(
    model: &Model<S>,
    mask: Option<&PruneMask>,
    scheme: QuantScheme,
) -> Result<Vec<SparseQuantTensor>> {
    let mut records = Vec::new();
    for c in model.conv_layers() {
        let wname = format!("{}.w", c.name);
        let masked = match mask.and_then(|m| m.masks.get(&wname)) {
            Some(keep) => {
                if keep.len() != c.weight.numel() {
                    return Err(Error::Shape(format!(
                        "mask for {} has {} entries, weight has {}",
                        c.name,
                        keep.len(),
                        c.weight.numel()
                    )));
                }
                let vals: Vec<S> = c
                    .weight
                    .data()
                    .iter()
                    .zip(keep)
                    .map(|(&v, &k)| if k { v } else { S::zero() })
                    .collect();
                Tensor::from_vec(c.weight.shape(), vals)?
            }
            None => c.weight.clone(),
        };
        records.push(match scheme.conv {
            ConvCoding::Int8 => SparseQuantTensor::sparse8(&wname, &masked),
            ConvCoding::F16 => SparseQuantTensor::sparse16(&wname, &masked),
        });
        if let Some(bias) = &c.bias {
            records.push(SparseQuantTensor::dense16(&format!("{}.b", c.name), bias));
        }
    }
    for n in model.norm_layers() {
        let (g, b) = fold_norm_stats(n.gamma.data(), n.beta.data(), &n.running);
        let gt = Tensor::from_vec(n.gamma.shape(), g)?;
        let bt = Tensor::from_vec(n.beta.shape(), b)?;
        records.push(SparseQuantTensor::dense16(&format!("{}.gamma", n.name), &gt));
        records.push(SparseQuantTensor::dense16(&format!("{}.beta", n.name), &bt));
    }
    Ok(records)
}

/// Overwrite a model's parameters from packed records (strict one-to-one:
/// every record must land, every parameter must be covered) and reset the
/// norm layers to folded form.
fn install_records<S: Scalar>(
    model: &mut Model<S>,
    records: &[SparseQuantTensor],
) -> Result<()> {
    let mut decoded: BTreeMap<&str, Tensor<S>> = BTreeMap::new();
    for rec in records {
        if decoded.insert(rec.name.as_str(), rec.decode()?).is_some() {
            return Err(Error::FileFormat(format!("duplicate tensor {}", rec.name)));
        }
    }
    for (name, param) in model.named_params_mut() {
        let t = decoded
            .remove(name.as_str())
            .ok_or_else(|| Error::FileFormat(format!("missing tensor {name}")))?;
        if t.shape() != param.shape() {
            return Err(Error::FileFormat(format!(
                "{name}: packed shape {} vs model {}",
                t.shape(),
                param.shape()
            )));
        }
        *param = t;
    }
    if let Some(name) = decoded.keys().next() {
        return Err(Error::FileFormat(format!("unexpected tensor {name}")));
    }
    for n in model.norm_layers_mut() {
        let channels = n.gamma.numel() / n.bands;
        n.running = BandStats::identity(channels, n.bands);
    }
    Ok(())
}

/// The deployable form of a trained model, without serialization: masked and
/// quantized conv weights, half-rounded biases, folded half-rounded norm
/// affines over identity stats, global stats rounded through f32. `unpack`
/// of the corresponding `pack` output reproduces it bit for bit.
pub fn compress_model<S: Scalar>(
    model: &Model<S>,
    mask: Option<&PruneMask>,
    scheme: QuantScheme,
) -> Result<Model<S>> {
    let records = pack_records(model, mask, scheme)?;
    let mut out = model.clone();
    install_records(&mut out, &records)?;
    if let Some(gs) = &model.global_stats {
        out.global_stats = Some(GlobalFreqStats {
            mean: f32_round_trip(&gs.mean),
            std: f32_round_trip(&gs.std),
        });
    }
    Ok(out)
}

/// Serialize: header (magic, version, model config, scheme), records,
/// optional global stats (raw f32), trailing CRC32 of everything before it.
pub fn pack<S: Scalar>(
    model: &Model<S>,
    mask: Option<&PruneMask>,
    scheme: QuantScheme,
) -> Result<(Vec<u8>, SizeReport)> {
    let records = pack_records(model, mask, scheme)?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(BCRQ_MAGIC);
    write_u16(&mut buf, BCRQ_VERSION)?;
    write_config(&mut buf, &model.cfg)?;
    write_u8(&mut buf, scheme.tag())?;
    write_u32(&mut buf, records.len() as u32)?;
    let mut report = SizeReport::default();
    for rec in &records {
        rec.write_record(&mut buf)?;
        report.add_record(rec);
    }
    match &model.global_stats {
        Some(gs) => {
            write_u8(&mut buf, 1)?;
            write_u32(&mut buf, gs.mean.len() as u32)?;
            for &v in &gs.mean {
                write_f32(&mut buf, v.to_f64() as f32)?;
            }
            for &v in &gs.std {
                write_f32(&mut buf, v.to_f64() as f32)?;
            }
        }
        None => write_u8(&mut buf, 0)?,
    }
    let crc = crc32fast::hash(&buf);
    write_u32(&mut buf, crc)?;
    report.container_bytes = buf.len();
    Ok((buf, report))
}

/// Parse a packed stream back into an eval-ready model. The checksum is
/// verified before any content is trusted.
pub fn unpack<S: Scalar>(bytes: &[u8]) -> Result<(Model<S>, QuantScheme)> {
    if bytes.len() < 8 {
        return Err(Error::FileFormat("packed model truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::FileFormat(format!(
            "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }
    let mut r = Cursor::new(body);
    expect_magic(&mut r, BCRQ_MAGIC)?;
    let version = read_u16(&mut r)?;
    if version != BCRQ_VERSION {
        return Err(Error::FileFormat(format!(
            "unsupported pack version {version} (expected {BCRQ_VERSION})"
        )));
    }
    let cfg = read_config(&mut r)?;
    let scheme = QuantScheme::from_tag(read_u8(&mut r)?)?;
    let count = read_u32(&mut r)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        records.push(SparseQuantTensor::read_record(&mut r)?);
    }
    let mut model = Model::build(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    install_records(&mut model, &records)?;
    match read_u8(&mut r)? {
        0 => {}
        1 => {
            let len = read_u32(&mut r)? as usize;
            let mut mean = Vec::with_capacity(len);
            for _ in 0..len {
                mean.push(S::from_f64(read_f32(&mut r)? as f64));
            }
            let mut std = Vec::with_capacity(len);
            for _ in 0..len {
                std.push(S::from_f64(read_f32(&mut r)? as f64));
            }
            model.global_stats = Some(GlobalFreqStats { mean, std });
        }
        flag => {
            return Err(Error::FileFormat(format!(
                "bad global-stats flag {flag}"
            )))
        }
    }
    expect_eof(&mut r)?;
    Ok((model, scheme))
}

pub fn write_pack_file<S: Scalar>(
    path: &Path,
    model: &Model<S>,
    mask: Option<&PruneMask>,
    scheme: QuantScheme,
) -> Result<SizeReport> {
    let (bytes, report) = pack(model, mask, scheme)?;
    std::fs::write(path, bytes)
        .map_err(|e| Error::FileFormat(format!("{}: {e}", path.display())))?;
    Ok(report)
}

pub fn read_pack_file<S: Scalar>(path: &Path) -> Result<(Model<S>, QuantScheme)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::FileFormat(format!("{}: {e}", path.display())))?;
    unpack(&bytes)
}

// ---------------------------------------------------------------------------
// Distillation pipeline

/// End-to-end compression recipe: distill a dense student from the teacher,
/// prune it, fine-tune under fake quantization (still distilling), pack.
#[derive(Debug, Clone)]
pub struct CompressConfig {
    /// Dense student phase.
    pub train: TrainConfig,
    /// Fake-quantized fine-tune phase; zero epochs skips it.
    pub finetune: TrainConfig,
    pub prune_ratio: f64,
    pub scope: PruneScope,
    pub scheme: QuantScheme,
    /// Apply quantize-dequantize to conv weights during the fine-tune. Off,
    /// the fine-tune only maintains the pruning mask.
    pub fake_quant: bool,
    /// Weight on the hard-label term of the distillation loss.
    pub beta: f64,
    pub temperature: f64,
}

impl Default for CompressConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let finetune = TrainConfig {
            epochs: 30,
            warmup_epochs: 3,
            peak_lr: 0.02,
            ..train.clone()
        };
        CompressConfig {
            train,
            finetune,
            prune_ratio: 0.89,
            scope: PruneScope::Global,
            scheme: QuantScheme::int8(),
            fake_quant: true,
            beta: 0.5,
            temperature: 4.0,
        }
    }
}

#[derive(Debug)]
pub struct DistillOutcome<S: Scalar> {
    /// Dense student after the distillation phase.
    pub student: Model<S>,
    /// Student after pruning and the fake-quantized fine-tune (raw weights,
    /// unfolded norms).
    pub finetuned: Model<S>,
    /// Deployable model decoded back out of the packed bytes.
    pub compressed: Model<S>,
    pub bytes: Vec<u8>,
    pub report: SizeReport,
    pub mask: PruneMask,
    pub dense_eval: EvalReport,
    pub compressed_eval: EvalReport,
}

// Weight-init stream tag; training streams use 1 through 5.
const STREAM_INIT: u64 = 6;

/// RNG for initializing freshly built model weights under `seed`. A stream
/// separate from the training streams, so the same seed gives the same
/// initial weights regardless of the training schedule; build models from
/// this when a run must be reproducible against the distillation pipeline.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_INIT);
    rng
}

/// Distill `student_cfg` from the teacher, then compress it. Evaluation
/// reports bracket the compression (dense student vs unpacked artifact).
pub fn distill_compress<S: Scalar>(
    teacher: &Model<S>,
    student_cfg: &ModelConfig,
    corpus: &Corpus<S>,
    eval_set: &Corpus<S>,
    cfg: &CompressConfig,
) -> Result<DistillOutcome<S>> {
    let mut rng = init_rng(cfg.train.seed);
    let student = Model::build(student_cfg.clone(), &mut rng)?;
    let dense = train(
        student,
        corpus,
        None,
        &cfg.train,
        TrainOpts {
            distill: Some(Distill {
                teacher,
                beta: cfg.beta,
                temperature: cfg.temperature,
            }),
            ..TrainOpts::default()
        },
    )?
    .model;
    let dense_eval = evaluate(&dense, eval_set)?;

    let mask = magnitude_prune(&dense, cfg.prune_ratio, cfg.scope)?;
    let mut finetuned = dense.clone();
    mask.apply(&mut finetuned);
    if cfg.finetune.epochs > 0 {
        let qat = QatWeights::with_masks(cfg.scheme, mask.masks());
        finetuned = train(
            finetuned,
            corpus,
            None,
            &cfg.finetune,
            TrainOpts {
                masks: Some(mask.masks()),
                weight_transform: if cfg.fake_quant { Some(&qat) } else { None },
                distill: Some(Distill {
                    teacher,
                    beta: cfg.beta,
                    temperature: cfg.temperature,
                }),
                ..TrainOpts::default()
            },
        )?
        .model;
    }

    let (bytes, report) = pack(&finetuned, Some(&mask), cfg.scheme)?;
    let (compressed, _) = unpack::<S>(&bytes)?;
    let compressed_eval = evaluate(&compressed, eval_set)?;
    Ok(DistillOutcome {
        student: dense,
        finetuned,
        compressed,
        bytes,
        report,
        mask,
        dense_eval,
        compressed_eval,
    })
}

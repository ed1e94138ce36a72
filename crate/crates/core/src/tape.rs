//! Reverse-mode differentiation over a flat tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! state for the adjoint. Nodes only reference earlier nodes, so the tape is
//! already a topological order and `backward` is a single reverse sweep.
//!
//! Ops take exact shapes; broadcasting is explicit via `expand`. Gradients
//! accumulate by addition when a node fans out. Straight-through ops pass the
//! incoming gradient unchanged; hard quantization has no adjoint on purpose
//! and reports an error if a gradient ever reaches it.

use crate::conv::{
    conv2d_backward_input, conv2d_backward_weights, conv2d_forward, ConvSpec,
};
use crate::error::{Error, Result};
use crate::norm::{
    freq_affine, freq_affine_backward, freq_in_backward, freq_in_forward, ssn_backward,
    ssn_forward_eval, ssn_forward_train, BandStats, SsnCache,
};
use crate::pool::{
    avgpool2x2_backward, avgpool2x2_forward, expand, maxpool2x2_backward, maxpool2x2_forward,
    reduce_mean, reduce_to, reduction_count,
};
use crate::scalar::Scalar;
use crate::tensor::{Axis, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<S: Scalar> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    },
    MaxPool2x2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    AvgPool2x2 {
        x: NodeId,
    },
    ReduceMean {
        x: NodeId,
        axes: Vec<Axis>,
    },
    Expand {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        k: S,
    },
    AddScalar {
        x: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Swish {
        x: NodeId,
    },
    FreqIn {
        x: NodeId,
        inv_std: Vec<S>,
    },
    Ssn {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        bands: usize,
        cache: SsnCache<S>,
    },
    FreqAffine {
        x: NodeId,
        a: Vec<S>,
    },
    SoftmaxXent {
        logits: NodeId,
        targets: Tensor<S>,
        probs: Tensor<S>,
    },
    /// Straight-through estimator: forward is a caller-supplied transform of
    /// x, backward pretends the transform was the identity.
    Ste {
        x: NodeId,
    },
    /// Hard, non-differentiable transform. Reached by a gradient -> error.
    NoAdjoint {
        name: &'static str,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Gradients keyed by tape node, produced by `Tape::backward`.
pub struct GradStore<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> GradStore<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<S>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a tensor, honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor<S>) -> NodeId {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    /// Insert a tensor that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<S>) -> NodeId {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    fn rg2(&self, a: NodeId, b: NodeId) -> bool {
        self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let y = conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        )?;
        let rg = self.rg2(x, w) || b.is_some_and(|b| self.nodes[b.0].requires_grad);
        Ok(self.push(y, Op::Conv2d { x, w, b, spec }, rg))
    }

    pub fn maxpool2x2(&mut self, x: NodeId) -> Result<NodeId> {
        let (y, argmax) = maxpool2x2_forward(self.value(x))?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(y, Op::MaxPool2x2 { x, argmax }, rg))
    }

    pub fn avgpool2x2(&mut self, x: NodeId) -> Result<NodeId> {
        let y = avgpool2x2_forward(self.value(x))?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(y, Op::AvgPool2x2 { x }, rg))
    }

    pub fn reduce_mean(&mut self, x: NodeId, axes: &[Axis]) -> Result<NodeId> {
        let y = reduce_mean(self.value(x), axes)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            y,
            Op::ReduceMean {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    pub fn expand(&mut self, x: NodeId, target: Shape) -> Result<NodeId> {
        let y = expand(self.value(x), target)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(y, Op::Expand { x }, rg))
    }

    fn zip_op(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<NodeId> {
        let y = self.value(a).zip(self.value(b), f)?;
        let rg = self.rg2(a, b);
        Ok(self.push(y, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: NodeId, k: S) -> NodeId {
        let y = self.value(x).map(|v| v * k);
        let rg = self.nodes[x.0].requires_grad;
        self.push(y, Op::Scale { x, k }, rg)
    }

    pub fn add_scalar(&mut self, x: NodeId, k: S) -> NodeId {
        let y = self.value(x).map(|v| v + k);
        let rg = self.nodes[x.0].requires_grad;
        self.push(y, Op::AddScalar { x }, rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(|v| v.max(S::zero()));
        let rg = self.nodes[x.0].requires_grad;
        self.push(y, Op::Relu { x }, rg)
    }

    pub fn swish(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(|v| v * sigmoid(v));
        let rg = self.nodes[x.0].requires_grad;
        self.push(y, Op::Swish { x }, rg)
    }

    pub fn freq_in(&mut self, x: NodeId) -> Result<NodeId> {
        let (y, inv_std) = freq_in_forward(self.value(x))?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(y, Op::FreqIn { x, inv_std }, rg))
    }

    /// Residual normalization: `lambda * x + freq_in(x)`.
    pub fn res_norm(&mut self, x: NodeId, lambda: S) -> Result<NodeId> {
        let scaled = self.scale(x, lambda);
        let normed = self.freq_in(x)?;
        self.add(scaled, normed)
    }

    /// Training-mode sub-band normalization. Returns the output node and the
    /// batch moments, which the caller folds into running statistics after
    /// the optimizer step.
    pub fn ssn_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        bands: usize,
    ) -> Result<(NodeId, BandStats<S>)> {
        let (y, cache, batch) =
            ssn_forward_train(self.value(x), self.value(gamma), self.value(beta), bands)?;
        let rg = self.rg2(x, gamma) || self.nodes[beta.0].requires_grad;
        let id = self.push(
            y,
            Op::Ssn {
                x,
                gamma,
                beta,
                bands,
                cache,
            },
            rg,
        );
        Ok((id, batch))
    }

    /// Eval-mode sub-band normalization with fixed running statistics.
    pub fn ssn_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: &BandStats<S>,
        bands: usize,
    ) -> Result<NodeId> {
        let (y, cache) = ssn_forward_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            bands,
        )?;
        let rg = self.rg2(x, gamma) || self.nodes[beta.0].requires_grad;
        Ok(self.push(
            y,
            Op::Ssn {
                x,
                gamma,
                beta,
                bands,
                cache,
            },
            rg,
        ))
    }

    /// Fixed per-frequency affine `y = a[f] x + b[f]`.
    pub fn freq_affine(&mut self, x: NodeId, a: &[S], b: &[S]) -> Result<NodeId> {
        let y = freq_affine(self.value(x), a, b)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            y,
            Op::FreqAffine {
                x,
                a: a.to_vec(),
            },
            rg,
        ))
    }

    /// Mean softmax cross entropy against soft targets. Logits and targets
    /// are (batch, classes, 1, 1); each target row must sum to 1.
    pub fn softmax_xent(&mut self, logits: NodeId, targets: Tensor<S>) -> Result<NodeId> {
        let ls = self.value(logits).shape();
        if ls.f != 1 || ls.t != 1 {
            return Err(Error::Shape(format!(
                "softmax_xent: logits must be (batch, classes, 1, 1), got {ls}"
            )));
        }
        if targets.shape() != ls {
            return Err(Error::Shape(format!(
                "softmax_xent: targets {} do not match logits {ls}",
                targets.shape()
            )));
        }
        let k = ls.c;
        let td = targets.data();
        for n in 0..ls.n {
            let row: S = td[n * k..(n + 1) * k].iter().copied().sum();
            let drift = (row - S::one()).abs();
            if drift > S::from_f64(1e-4) {
                return Err(Error::InvalidArg(format!(
                    "softmax_xent: target row {n} sums to {row}, not 1",
                )));
            }
        }
        let probs = softmax_rows(self.value(logits));
        let mut loss = S::zero();
        let xd = self.value(logits).data();
        for n in 0..ls.n {
            // log-softmax from shifted logits, not from the probabilities,
            // to keep the loss exact for saturated rows
            let row = &xd[n * k..(n + 1) * k];
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let logsum = row
                .iter()
                .map(|v| (*v - max).exp())
                .sum::<S>()
                .ln();
            for c in 0..k {
                let lsm = row[c] - max - logsum;
                loss = loss - td[n * k + c] * lsm;
            }
        }
        let mean = loss / S::from_f64(ls.n as f64);
        let rg = self.nodes[logits.0].requires_grad;
        Ok(self.push(
            Tensor::scalar(mean),
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            },
            rg,
        ))
    }

    /// Straight-through estimator: `transformed` is used as the value, the
    /// gradient flows to `x` unchanged. Shapes must match.
    pub fn ste(&mut self, x: NodeId, transformed: Tensor<S>) -> Result<NodeId> {
        if transformed.shape() != self.value(x).shape() {
            return Err(Error::Shape(format!(
                "ste: transformed {} does not match input {}",
                transformed.shape(),
                self.value(x).shape()
            )));
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(transformed, Op::Ste { x }, rg))
    }

    /// Hard non-differentiable transform. The value participates in forward
    /// computation; any gradient reaching it is an error.
    pub fn no_adjoint(
        &mut self,
        x: NodeId,
        value: Tensor<S>,
        name: &'static str,
    ) -> NodeId {
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::NoAdjoint { name }, rg)
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1-p)`. `p == 0` is the identity; the mask is a tape constant so
    /// the backward pass needs no special case.
    pub fn dropout<R: rand::Rng>(&mut self, x: NodeId, p: f64, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArg(format!(
                "dropout: probability {p} outside [0, 1)"
            )));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep_scale = S::from_f64(1.0 / (1.0 - p));
        let shape = self.value(x).shape();
        let mut mask = Tensor::zeros(shape);
        for v in mask.data_mut() {
            if rng.gen::<f64>() >= p {
                *v = keep_scale;
            }
        }
        let m = self.constant(mask);
        self.mul(x, m)
    }

    /// Reverse sweep from a scalar `root`. Returns gradients for every node
    /// that requires one.
    pub fn backward(&self, root: NodeId) -> Result<GradStore<S>> {
        let root_val = self.value(root);
        if root_val.numel() != 1 {
            return Err(Error::InvalidArg(format!(
                "backward: root must be scalar, got {}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(S::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            // leaves keep their gradient; interior nodes hand it to inputs
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                _ => {
                    if !self.nodes[i].requires_grad {
                        continue;
                    }
                }
            }
            match &self.nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { x, w, b, spec } => {
                    if self.nodes[x.0].requires_grad {
                        let dx = conv2d_backward_input(
                            &g,
                            self.value(*w),
                            spec,
                            self.value(*x).shape(),
                        );
                        accumulate(&mut grads, *x, dx)?;
                    }
                    let need_w = self.nodes[w.0].requires_grad;
                    let need_b = b.is_some_and(|b| self.nodes[b.0].requires_grad);
                    if need_w || need_b {
                        let (dw, db) =
                            conv2d_backward_weights(&g, self.value(*x), spec, need_b);
                        if need_w {
                            accumulate(&mut grads, *w, dw)?;
                        }
                        if let (Some(b), Some(mut db)) = (*b, db) {
                            // bias gradient reshaped to the stored bias layout
                            let bshape = self.value(b).shape();
                            db = Tensor::from_vec(bshape, db.into_data())?;
                            accumulate(&mut grads, b, db)?;
                        }
                    }
                }
                Op::MaxPool2x2 { x, argmax } => {
                    let dx = maxpool2x2_backward(&g, argmax, self.value(*x).shape());
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::AvgPool2x2 { x } => {
                    let dx = avgpool2x2_backward(&g, self.value(*x).shape());
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::ReduceMean { x, axes } => {
                    let xs = self.value(*x).shape();
                    let count = reduction_count(xs, axes);
                    let inv = S::from_f64(1.0 / count as f64);
                    let dx = expand(&g, xs)?.map(|v| v * inv);
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Expand { x } => {
                    let dx = reduce_to(&g, self.value(*x).shape())?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Add { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, g.clone())?;
                    }
                }
                Op::Sub { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, g.map(|v| -v))?;
                    }
                }
                Op::Mul { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        let da = g.zip(self.value(*b), |g, b| g * b)?;
                        accumulate(&mut grads, *a, da)?;
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = g.zip(self.value(*a), |g, a| g * a)?;
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::Scale { x, k } => {
                    let k = *k;
                    accumulate(&mut grads, *x, g.map(|v| v * k))?;
                }
                Op::AddScalar { x } => {
                    accumulate(&mut grads, *x, g)?;
                }
                Op::Relu { x } => {
                    let dx = g.zip(self.value(*x), |g, x| {
                        if x > S::zero() {
                            g
                        } else {
                            S::zero()
                        }
                    })?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Swish { x } => {
                    let dx = g.zip(self.value(*x), |g, x| {
                        let s = sigmoid(x);
                        g * s * (S::one() + x * (S::one() - s))
                    })?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::FreqIn { x, inv_std } => {
                    let dx = freq_in_backward(&g, &self.nodes[i].value, inv_std);
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Ssn {
                    x,
                    gamma,
                    beta,
                    bands,
                    cache,
                } => {
                    let (dx, dgamma, dbeta) = ssn_backward(&g, cache, self.value(*gamma), *bands);
                    if self.nodes[x.0].requires_grad {
                        accumulate(&mut grads, *x, dx)?;
                    }
                    if self.nodes[gamma.0].requires_grad {
                        accumulate(&mut grads, *gamma, dgamma)?;
                    }
                    if self.nodes[beta.0].requires_grad {
                        accumulate(&mut grads, *beta, dbeta)?;
                    }
                }
                Op::FreqAffine { x, a } => {
                    let dx = freq_affine_backward(&g, a);
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    probs,
                } => {
                    let n = probs.shape().n;
                    let gk = g.item() / S::from_f64(n as f64);
                    let dl = probs.zip(targets, |p, t| (p - t) * gk)?;
                    accumulate(&mut grads, *logits, dl)?;
                }
                Op::Ste { x } => {
                    accumulate(&mut grads, *x, g)?;
                }
                Op::NoAdjoint { name } => {
                    return Err(Error::NoAdjoint(name));
                }
            }
        }
        Ok(GradStore { grads })
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

fn accumulate<S: Scalar>(
    grads: &mut [Option<Tensor<S>>],
    id: NodeId,
    g: Tensor<S>,
) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => {
            if existing.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient accumulation shape clash: {} vs {}",
                    existing.shape(),
                    g.shape()
                )));
            }
            let ed = existing.data_mut();
            for (e, v) in ed.iter_mut().zip(g.data()) {
                *e = *e + *v;
            }
        }
        slot => *slot = Some(g),
    }
    Ok(())
}

/// Row softmax over the class axis of (batch, classes, 1, 1) logits.
/// Forward-only; not recorded on any tape.
pub fn softmax_rows<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let s = logits.shape();
    let k = s.c * s.f * s.t;
    let mut out = Tensor::zeros(s);
    let xd = logits.data();
    let od = out.data_mut();
    for n in 0..s.n {
        let row = &xd[n * k..(n + 1) * k];
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for (o, v) in od[n * k..(n + 1) * k].iter_mut().zip(row) {
            *o = (*v - max).exp();
            sum = sum + *o;
        }
        let inv = sum.recip();
        for o in od[n * k..(n + 1) * k].iter_mut() {
            *o = *o * inv;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ALL_AXES;
    use rand::SeedableRng;

    fn leaf_with_grad<S: Scalar>(tape: &mut Tape<S>, t: Tensor<S>) -> NodeId {
        tape.leaf(t.with_grad())
    }

    #[test]
    fn constant_chain_needs_no_grads() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(Shape::new(1, 1, 2, 2), 2.0f64));
        let y = tape.scale(x, 3.0);
        let loss = tape.reduce_mean(y, &ALL_AXES).unwrap();
        assert_eq!(tape.value(loss).item(), 6.0);
        let store = tape.backward(loss).unwrap();
        assert!(store.get(x).is_none());
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        let k = 10;
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(Shape::new(2, k, 1, 1)));
        let mut targets = Tensor::zeros(Shape::new(2, k, 1, 1));
        targets.data_mut()[0] = 1.0f64;
        targets.data_mut()[k + 3] = 1.0;
        let loss = tape.softmax_xent(logits, targets).unwrap();
        assert!((tape.value(loss).item() - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn two_class_xent_frozen_value() {
        let mut tape = Tape::new();
        let logits = tape.constant(
            Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.0f64, 0.0]).unwrap(),
        );
        let targets = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.0f64, 0.0]).unwrap();
        let loss = tape.softmax_xent(logits, targets).unwrap();
        // -ln(e / (e + 1)) = ln(1 + e^-1)
        assert!((tape.value(loss).item() - 0.3132616875182228).abs() < 1e-15);
    }

    #[test]
    fn xent_rejects_unnormalized_targets() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(Shape::new(1, 3, 1, 1)));
        let targets = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![0.5f64, 0.2, 0.2]).unwrap();
        assert!(tape.softmax_xent(logits, targets).is_err());
    }

    #[test]
    fn swish_frozen_value() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1.0f64));
        let y = tape.swish(x);
        assert!((tape.value(y).item() - 0.7310585786300049).abs() < 1e-15);
    }

    #[test]
    fn res_norm_frozen_two_point() {
        let mut tape = Tape::new();
        let x = tape.constant(
            Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0f64, 3.0]).unwrap(),
        );
        let y = tape.res_norm(x, 0.1).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - (-0.8999950000374997)).abs() < 1e-15);
        assert!((d[1] - 1.2999950000374997).abs() < 1e-15);
    }

    #[test]
    fn ste_passes_gradient_through() {
        let mut tape = Tape::new();
        let w = leaf_with_grad(
            &mut tape,
            Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![0.3f64, -1.7, 2.2, 0.0]).unwrap(),
        );
        let rounded = tape.value(w).map(|v| v.round());
        let q = tape.ste(w, rounded).unwrap();
        let loss = tape.reduce_mean(q, &ALL_AXES).unwrap();
        let store = tape.backward(loss).unwrap();
        let g = store.get(w).unwrap();
        for v in g.data() {
            assert_eq!(*v, 0.25);
        }
    }

    #[test]
    fn hard_quantize_in_grad_path_errors() {
        let mut tape = Tape::new();
        let w = leaf_with_grad(&mut tape, Tensor::filled(Shape::new(1, 1, 1, 3), 1.2f64));
        let rounded = tape.value(w).map(|v| v.round());
        let q = tape.no_adjoint(w, rounded, "quantize");
        let loss = tape.reduce_mean(q, &ALL_AXES).unwrap();
        match tape.backward(loss) {
            Err(Error::NoAdjoint("quantize")) => {}
            Err(other) => panic!("wrong error: {other}"),
            Ok(_) => panic!("hard quantize must not be differentiable"),
        }
    }

    #[test]
    fn hard_quantize_off_grad_path_is_fine() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::filled(Shape::new(1, 1, 1, 3), 1.2f64));
        let rounded = tape.value(c).map(|v| v.round());
        let _q = tape.no_adjoint(c, rounded, "quantize");
        let w = leaf_with_grad(&mut tape, Tensor::filled(Shape::new(1, 1, 1, 3), 2.0f64));
        let loss = tape.reduce_mean(w, &ALL_AXES).unwrap();
        assert!(tape.backward(loss).is_ok());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = leaf_with_grad(&mut tape, Tensor::filled(Shape::new(1, 1, 2, 2), 1.0f64));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = mean(x) + mean(x * x) => dloss/dx = 1/n + 2x/n
        let mut tape = Tape::new();
        let x = leaf_with_grad(
            &mut tape,
            Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![3.0f64, -1.0]).unwrap(),
        );
        let m1 = tape.reduce_mean(x, &ALL_AXES).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let m2 = tape.reduce_mean(sq, &ALL_AXES).unwrap();
        let loss = tape.add(m1, m2).unwrap();
        let store = tape.backward(loss).unwrap();
        let g = store.get(x).unwrap().data();
        assert!((g[0] - (0.5 + 3.0)).abs() < 1e-12);
        assert!((g[1] - (0.5 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn dropout_zero_probability_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = leaf_with_grad(&mut tape, Tensor::filled(Shape::new(1, 1, 2, 2), 3.0f64));
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut tape = Tape::new();
        let x = leaf_with_grad(&mut tape, Tensor::filled(Shape::new(1, 1, 10, 10), 1.0f64));
        let y = tape.dropout(x, 0.4, &mut rng).unwrap();
        for v in tape.value(y).data() {
            assert!(*v == 0.0 || (*v - 1.0 / 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut logits = Tensor::<f64>::zeros(Shape::new(3, 7, 1, 1));
        logits.fill_uniform(&mut rng, 5.0);
        let p = softmax_rows(&logits);
        for n in 0..3 {
            let s: f64 = p.data()[n * 7..(n + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

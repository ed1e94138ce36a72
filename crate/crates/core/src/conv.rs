//! Grouped 2-D convolution kernels: forward plus the two backward passes.
//!
//! Loops are ordered so the innermost axis is the contiguous time axis; for
//! stride-1 kernels the inner loop is a plain saxpy/dot over slices. All
//! accumulation orders are fixed, so outputs are bitwise reproducible.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Convolution geometry. Weights are laid out (out_channels, in_channels/groups, kF, kT).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (kF, kT)
    pub kernel: (usize, usize),
    /// (sF, sT)
    pub stride: (usize, usize),
    /// (pF, pT)
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    /// Ungrouped convolution.
    pub fn full(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups: 1,
        }
    }

    /// Depthwise convolution (groups == in == out).
    pub fn depthwise(channels: usize, kernel: (usize, usize), padding: (usize, usize)) -> Self {
        ConvSpec {
            in_channels: channels,
            out_channels: channels,
            kernel,
            stride: (1, 1),
            padding,
            groups: channels,
        }
    }

    /// 1x1 pointwise convolution.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec::full(in_channels, out_channels, (1, 1), (1, 1), (0, 0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArg(
                "conv: channels and groups must be positive".into(),
            ));
        }
        if self.in_channels % self.groups != 0 {
            return Err(Error::Shape(format!(
                "conv: in_channels {} not divisible by groups {}",
                self.in_channels, self.groups
            )));
        }
        if self.out_channels % self.groups != 0 {
            return Err(Error::Shape(format!(
                "conv: out_channels {} not divisible by groups {}",
                self.out_channels, self.groups
            )));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::InvalidArg(
                "conv: kernel and stride must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    /// Shape of the weight tensor, stored as (out, in/groups, kF, kT).
    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        )
    }

    /// Output shape for `input`, by the standard floor((dim + 2p - k)/s) + 1 arithmetic.
    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv: channel axis is {} but spec expects {} input channels",
                input.c, self.in_channels
            )));
        }
        let of = conv_out_extent(input.f, self.kernel.0, self.stride.0, self.padding.0)
            .ok_or_else(|| {
                Error::Shape(format!(
                    "conv: kernel {} does not fit frequency axis {} with padding {}",
                    self.kernel.0, input.f, self.padding.0
                ))
            })?;
        let ot = conv_out_extent(input.t, self.kernel.1, self.stride.1, self.padding.1)
            .ok_or_else(|| {
                Error::Shape(format!(
                    "conv: kernel {} does not fit time axis {} with padding {}",
                    self.kernel.1, input.t, self.padding.1
                ))
            })?;
        Ok(Shape::new(input.n, self.out_channels, of, ot))
    }
}

pub fn conv_out_extent(dim: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = dim + 2 * p;
    if padded < k {
        return None;
    }
    Some((padded - k) / s + 1)
}

/// Output positions `o` for which `o*stride + off` lands inside `[0, in_extent)`.
#[inline]
fn valid_out_range(out_extent: usize, in_extent: usize, off: isize, stride: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi_inclusive = (in_extent as isize - 1 - off).div_euclid(s);
    let lo = lo.max(0) as usize;
    let hi = (hi_inclusive + 1).clamp(0, out_extent as isize) as usize;
    (lo.min(hi), hi)
}

pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let xs = input.shape();
    let out_shape = spec.out_shape(xs)?;
    if weights.shape() != spec.weight_shape() {
        return Err(Error::Shape(format!(
            "conv: weight tensor {} does not match spec layout {}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.numel() != spec.out_channels {
            return Err(Error::Shape(format!(
                "conv: bias length {} != out_channels {}",
                b.numel(),
                spec.out_channels
            )));
        }
    }

    let (kf, kt) = spec.kernel;
    let (sf, st) = spec.stride;
    let (pf, pt) = spec.padding;
    let icpg = spec.in_channels / spec.groups;
    let ocpg = spec.out_channels / spec.groups;
    let (fin, tin) = (xs.f, xs.t);
    let (fo_n, to_n) = (out_shape.f, out_shape.t);

    let mut out = Tensor::zeros(out_shape);
    let xd = input.data();
    let wd = weights.data();
    let od = out.data_mut();
    let ws = spec.weight_shape();

    for n in 0..xs.n {
        for g in 0..spec.groups {
            for ocg in 0..ocpg {
                let oc = g * ocpg + ocg;
                let obase = out_shape.idx(n, oc, 0, 0);
                if let Some(b) = bias {
                    let bv = b.data()[oc];
                    for v in od[obase..obase + fo_n * to_n].iter_mut() {
                        *v = bv;
                    }
                }
                for icg in 0..icpg {
                    let ic = g * icpg + icg;
                    let xbase = xs.idx(n, ic, 0, 0);
                    for kfi in 0..kf {
                        let f_off = kfi as isize - pf as isize;
                        let (fo_lo, fo_hi) = valid_out_range(fo_n, fin, f_off, sf);
                        for kti in 0..kt {
                            let t_off = kti as isize - pt as isize;
                            let (to_lo, to_hi) = valid_out_range(to_n, tin, t_off, st);
                            if to_lo >= to_hi {
                                continue;
                            }
                            let w = wd[ws.idx(oc, icg, kfi, kti)];
                            for fo in fo_lo..fo_hi {
                                let fi = (fo as isize * sf as isize + f_off) as usize;
                                let xrow = xbase + fi * tin;
                                let yrow = obase + fo * to_n;
                                if st == 1 {
                                    let ti0 = (to_lo as isize + t_off) as usize;
                                    let len = to_hi - to_lo;
                                    let xsl = &xd[xrow + ti0..xrow + ti0 + len];
                                    let ysl = &mut od[yrow + to_lo..yrow + to_hi];
                                    for i in 0..len {
                                        ysl[i] = ysl[i] + w * xsl[i];
                                    }
                                } else {
                                    for to in to_lo..to_hi {
                                        let ti = (to as isize * st as isize + t_off) as usize;
                                        od[yrow + to] = od[yrow + to] + w * xd[xrow + ti];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient with respect to the convolution input.
pub fn conv2d_backward_input<S: Scalar>(
    grad_out: &Tensor<S>,
    weights: &Tensor<S>,
    spec: &ConvSpec,
    input_shape: Shape,
) -> Tensor<S> {
    let (kf, kt) = spec.kernel;
    let (sf, st) = spec.stride;
    let (pf, pt) = spec.padding;
    let icpg = spec.in_channels / spec.groups;
    let ocpg = spec.out_channels / spec.groups;
    let os = grad_out.shape();
    let (fin, tin) = (input_shape.f, input_shape.t);

    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    let dyd = grad_out.data();
    let wd = weights.data();
    let ws = spec.weight_shape();

    for n in 0..input_shape.n {
        for g in 0..spec.groups {
            for ocg in 0..ocpg {
                let oc = g * ocpg + ocg;
                let dybase = os.idx(n, oc, 0, 0);
                for icg in 0..icpg {
                    let ic = g * icpg + icg;
                    let dxbase = input_shape.idx(n, ic, 0, 0);
                    for kfi in 0..kf {
                        let f_off = kfi as isize - pf as isize;
                        let (fo_lo, fo_hi) = valid_out_range(os.f, fin, f_off, sf);
                        for kti in 0..kt {
                            let t_off = kti as isize - pt as isize;
                            let (to_lo, to_hi) = valid_out_range(os.t, tin, t_off, st);
                            if to_lo >= to_hi {
                                continue;
                            }
                            let w = wd[ws.idx(oc, icg, kfi, kti)];
                            for fo in fo_lo..fo_hi {
                                let fi = (fo as isize * sf as isize + f_off) as usize;
                                let dxrow = dxbase + fi * tin;
                                let dyrow = dybase + fo * os.t;
                                if st == 1 {
                                    let ti0 = (to_lo as isize + t_off) as usize;
                                    let len = to_hi - to_lo;
                                    let dysl = &dyd[dyrow + to_lo..dyrow + to_hi];
                                    let dxsl = &mut dxd[dxrow + ti0..dxrow + ti0 + len];
                                    for i in 0..len {
                                        dxsl[i] = dxsl[i] + w * dysl[i];
                                    }
                                } else {
                                    for to in to_lo..to_hi {
                                        let ti = (to as isize * st as isize + t_off) as usize;
                                        dxd[dxrow + ti] = dxd[dxrow + ti] + w * dyd[dyrow + to];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Gradients with respect to the weights and (when present) the bias.
pub fn conv2d_backward_weights<S: Scalar>(
    grad_out: &Tensor<S>,
    input: &Tensor<S>,
    spec: &ConvSpec,
    has_bias: bool,
) -> (Tensor<S>, Option<Tensor<S>>) {
    let (kf, kt) = spec.kernel;
    let (sf, st) = spec.stride;
    let (pf, pt) = spec.padding;
    let icpg = spec.in_channels / spec.groups;
    let ocpg = spec.out_channels / spec.groups;
    let xs = input.shape();
    let os = grad_out.shape();

    let ws = spec.weight_shape();
    let mut dw = Tensor::zeros(ws);
    let dwd = dw.data_mut();
    let xd = input.data();
    let dyd = grad_out.data();

    for n in 0..xs.n {
        for g in 0..spec.groups {
            for ocg in 0..ocpg {
                let oc = g * ocpg + ocg;
                let dybase = os.idx(n, oc, 0, 0);
                for icg in 0..icpg {
                    let ic = g * icpg + icg;
                    let xbase = xs.idx(n, ic, 0, 0);
                    for kfi in 0..kf {
                        let f_off = kfi as isize - pf as isize;
                        let (fo_lo, fo_hi) = valid_out_range(os.f, xs.f, f_off, sf);
                        for kti in 0..kt {
                            let t_off = kti as isize - pt as isize;
                            let (to_lo, to_hi) = valid_out_range(os.t, xs.t, t_off, st);
                            if to_lo >= to_hi {
                                continue;
                            }
                            let mut acc = S::zero();
                            for fo in fo_lo..fo_hi {
                                let fi = (fo as isize * sf as isize + f_off) as usize;
                                let xrow = xbase + fi * xs.t;
                                let dyrow = dybase + fo * os.t;
                                if st == 1 {
                                    let ti0 = (to_lo as isize + t_off) as usize;
                                    let len = to_hi - to_lo;
                                    let xsl = &xd[xrow + ti0..xrow + ti0 + len];
                                    let dysl = &dyd[dyrow + to_lo..dyrow + to_hi];
                                    for i in 0..len {
                                        acc = acc + xsl[i] * dysl[i];
                                    }
                                } else {
                                    for to in to_lo..to_hi {
                                        let ti = (to as isize * st as isize + t_off) as usize;
                                        acc = acc + xd[xrow + ti] * dyd[dyrow + to];
                                    }
                                }
                            }
                            let wi = ws.idx(oc, icg, kfi, kti);
                            dwd[wi] = dwd[wi] + acc;
                        }
                    }
                }
            }
        }
    }

    let dbias = if has_bias {
        let mut db = Tensor::zeros(Shape::new(1, spec.out_channels, 1, 1));
        let dbd = db.data_mut();
        for n in 0..os.n {
            for oc in 0..os.c {
                let base = os.idx(n, oc, 0, 0);
                let mut acc = S::zero();
                for v in &dyd[base..base + os.f * os.t] {
                    acc = acc + *v;
                }
                dbd[oc] = dbd[oc] + acc;
            }
        }
        Some(db)
    } else {
        None
    };

    (dw, dbias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn hand_convolution_2x2() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.25; 4]).unwrap();
        let spec = ConvSpec::full(1, 1, (2, 2), (1, 1), (0, 0));
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert!((y.item() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn identity_1x1() {
        let x = Tensor::from_vec(
            Shape::new(1, 1, 2, 3),
            vec![1.0f32, -2.0, 3.0, 4.0, 5.5, -6.0],
        )
        .unwrap();
        let w = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0f32]).unwrap();
        let b = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.0f32]).unwrap();
        let spec = ConvSpec::pointwise(1, 1);
        let y = conv2d_forward(&x, &w, Some(&b), &spec).unwrap();
        assert!(y.bit_eq(&{
            let mut c = x.clone();
            c.requires_grad = false;
            c
        }));
    }

    #[test]
    fn front_conv_shape_matches_table() {
        // 256 x T x 1 -> 128 x T/2 x 2c under 5x5 stride 2 pad 2
        let spec = ConvSpec::full(1, 16, (5, 5), (2, 2), (2, 2));
        let out = spec.out_shape(Shape::new(1, 1, 256, 330)).unwrap();
        assert_eq!(out, Shape::new(1, 16, 128, 165));
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let spec = ConvSpec::pointwise(3, 4);
        let err = spec.out_shape(Shape::new(1, 2, 8, 8)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("channel"), "diagnostic was: {msg}");
    }

    #[test]
    fn kernel_too_large_rejected() {
        let spec = ConvSpec::full(1, 1, (9, 1), (1, 1), (0, 0));
        assert!(spec.out_shape(Shape::new(1, 1, 4, 4)).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut x = Tensor::<f32>::zeros(Shape::new(2, 3, 9, 11));
        x.fill_uniform(&mut rng, 1.0);
        let spec = ConvSpec::full(3, 4, (3, 3), (2, 1), (1, 1));
        let mut w = Tensor::<f32>::zeros(spec.weight_shape());
        w.fill_uniform(&mut rng, 0.5);
        let a = conv2d_forward(&x, &w, None, &spec).unwrap();
        let b = conv2d_forward(&x, &w, None, &spec).unwrap();
        assert!(a.bit_eq(&b));
    }

    /// Depthwise conv must equal per-channel single convs.
    #[test]
    fn depthwise_equals_independent_single_channel_convs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let c = 5;
        let mut x = Tensor::<f64>::zeros(Shape::new(2, c, 8, 10));
        x.fill_uniform(&mut rng, 1.5);
        let spec = ConvSpec::depthwise(c, (3, 1), (1, 0));
        let mut w = Tensor::<f64>::zeros(spec.weight_shape());
        w.fill_uniform(&mut rng, 0.7);
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();

        let single = ConvSpec::full(1, 1, (3, 1), (1, 1), (1, 0));
        for ch in 0..c {
            let mut xc = Tensor::<f64>::zeros(Shape::new(2, 1, 8, 10));
            for n in 0..2 {
                for f in 0..8 {
                    for t in 0..10 {
                        xc.set(n, 0, f, t, x.at(n, ch, f, t));
                    }
                }
            }
            let wc = Tensor::from_vec(
                Shape::new(1, 1, 3, 1),
                (0..3).map(|k| w.at(ch, 0, k, 0)).collect(),
            )
            .unwrap();
            let yc = conv2d_forward(&xc, &wc, None, &single).unwrap();
            for n in 0..2 {
                for f in 0..8 {
                    for t in 0..10 {
                        assert_eq!(yc.at(n, 0, f, t).to_bits(), y.at(n, ch, f, t).to_bits());
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        /// Conv output shape follows the closed-form arithmetic for random valid specs.
        #[test]
        fn out_shape_matches_closed_form(
            n in 1usize..3, g in 1usize..4,
            icpg in 1usize..4, ocpg in 1usize..4,
            kf in 1usize..6, kt in 1usize..6,
            sf in 1usize..4, st in 1usize..4,
            pf in 0usize..3, pt in 0usize..3,
            fin in 1usize..20, tin in 1usize..20,
        ) {
            let spec = ConvSpec {
                in_channels: g * icpg,
                out_channels: g * ocpg,
                kernel: (kf, kt),
                stride: (sf, st),
                padding: (pf, pt),
                groups: g,
            };
            let input = Shape::new(n, g * icpg, fin, tin);
            match spec.out_shape(input) {
                Ok(out) => {
                    prop_assert_eq!(out.f, (fin + 2*pf - kf) / sf + 1);
                    prop_assert_eq!(out.t, (tin + 2*pt - kt) / st + 1);
                    prop_assert_eq!(out.c, g * ocpg);
                    prop_assert_eq!(out.n, n);
                    // run the kernel on ones to confirm the materialized shape
                    let x = Tensor::<f32>::filled(input, 1.0);
                    let w = Tensor::<f32>::filled(spec.weight_shape(), 0.5);
                    let y = conv2d_forward(&x, &w, None, &spec).unwrap();
                    prop_assert_eq!(y.shape(), out);
                    prop_assert!(y.all_finite());
                }
                Err(_) => {
                    prop_assert!(fin + 2*pf < kf || tin + 2*pt < kt);
                }
            }
        }
    }
}

//! Pooling and reduction kernels.
//!
//! Max pooling remembers flat argmax indices so the backward pass can route
//! gradients without recomputing the comparison. Odd trailing rows or columns
//! are dropped, matching stride-2 pooling without padding.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Axis, Shape, Tensor, ALL_AXES};

fn pool_out_shape(s: Shape) -> Result<Shape> {
    if s.f < 2 || s.t < 2 {
        return Err(Error::Shape(format!(
            "pool: 2x2 window does not fit input {s}"
        )));
    }
    Ok(Shape::new(s.n, s.c, s.f / 2, s.t / 2))
}

/// 2x2 stride-2 max pool. Returns the output and, per output element, the flat
/// index of the winning input element (first occurrence on ties).
pub fn maxpool2x2_forward<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    let xs = x.shape();
    let os = pool_out_shape(xs)?;
    let mut out = Tensor::zeros(os);
    let mut argmax = vec![0usize; os.numel()];
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..os.n {
        for c in 0..os.c {
            for fo in 0..os.f {
                for to in 0..os.t {
                    let mut best_i = xs.idx(n, c, 2 * fo, 2 * to);
                    let mut best = xd[best_i];
                    for (df, dt) in [(0, 1), (1, 0), (1, 1)] {
                        let i = xs.idx(n, c, 2 * fo + df, 2 * to + dt);
                        if xd[i] > best {
                            best = xd[i];
                            best_i = i;
                        }
                    }
                    let o = os.idx(n, c, fo, to);
                    od[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2x2_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    argmax: &[usize],
    input_shape: Shape,
) -> Tensor<S> {
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    for (g, &i) in grad_out.data().iter().zip(argmax.iter()) {
        dxd[i] = dxd[i] + *g;
    }
    dx
}

/// 2x2 stride-2 average pool.
pub fn avgpool2x2_forward<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let xs = x.shape();
    let os = pool_out_shape(xs)?;
    let quarter = S::from_f64(0.25);
    let mut out = Tensor::zeros(os);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..os.n {
        for c in 0..os.c {
            for fo in 0..os.f {
                let r0 = xs.idx(n, c, 2 * fo, 0);
                let r1 = xs.idx(n, c, 2 * fo + 1, 0);
                let orow = os.idx(n, c, fo, 0);
                for to in 0..os.t {
                    let s = xd[r0 + 2 * to]
                        + xd[r0 + 2 * to + 1]
                        + xd[r1 + 2 * to]
                        + xd[r1 + 2 * to + 1];
                    od[orow + to] = s * quarter;
                }
            }
        }
    }
    Ok(out)
}

pub fn avgpool2x2_backward<S: Scalar>(grad_out: &Tensor<S>, input_shape: Shape) -> Tensor<S> {
    let os = grad_out.shape();
    let quarter = S::from_f64(0.25);
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    let gd = grad_out.data();
    for n in 0..os.n {
        for c in 0..os.c {
            for fo in 0..os.f {
                let r0 = input_shape.idx(n, c, 2 * fo, 0);
                let r1 = input_shape.idx(n, c, 2 * fo + 1, 0);
                let grow = os.idx(n, c, fo, 0);
                for to in 0..os.t {
                    let g = gd[grow + to] * quarter;
                    dxd[r0 + 2 * to] = dxd[r0 + 2 * to] + g;
                    dxd[r0 + 2 * to + 1] = dxd[r0 + 2 * to + 1] + g;
                    dxd[r1 + 2 * to] = dxd[r1 + 2 * to] + g;
                    dxd[r1 + 2 * to + 1] = dxd[r1 + 2 * to + 1] + g;
                }
            }
        }
    }
    dx
}

fn reduced_shape(s: Shape, axes: &[Axis]) -> Shape {
    let mut out = s;
    for &a in axes {
        out = out.with_axis(a, 1);
    }
    out
}

fn check_reduction<S: Scalar>(x: &Tensor<S>, axes: &[Axis]) -> Result<()> {
    for &a in axes {
        if x.shape().axis(a) == 0 {
            return Err(Error::InvalidArg(format!(
                "reduce: axis {a:?} has extent 0, mean over nothing is undefined"
            )));
        }
    }
    Ok(())
}

/// Sum over `axes`, keeping each reduced axis with extent 1.
pub fn reduce_sum<S: Scalar>(x: &Tensor<S>, axes: &[Axis]) -> Result<Tensor<S>> {
    check_reduction(x, axes)?;
    let xs = x.shape();
    let os = reduced_shape(xs, axes);
    let mut out = Tensor::zeros(os);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for f in 0..xs.f {
                let xrow = xs.idx(n, c, f, 0);
                for t in 0..xs.t {
                    let o = os.idx(
                        n.min(os.n - 1),
                        c.min(os.c - 1),
                        f.min(os.f - 1),
                        t.min(os.t - 1),
                    );
                    od[o] = od[o] + xd[xrow + t];
                }
            }
        }
    }
    Ok(out)
}

/// Mean over `axes`, keeping each reduced axis with extent 1.
pub fn reduce_mean<S: Scalar>(x: &Tensor<S>, axes: &[Axis]) -> Result<Tensor<S>> {
    let mut out = reduce_sum(x, axes)?;
    let count = x.numel() / out.numel();
    let inv = S::from_f64(1.0 / count as f64);
    for v in out.data_mut() {
        *v = *v * inv;
    }
    Ok(out)
}

/// Number of input elements contributing to each output element of a
/// reduction over `axes`.
pub fn reduction_count(s: Shape, axes: &[Axis]) -> usize {
    axes.iter().map(|&a| s.axis(a)).product::<usize>().max(1)
}

/// Broadcast `x` to `target`: every axis must either match or have extent 1.
pub fn expand<S: Scalar>(x: &Tensor<S>, target: Shape) -> Result<Tensor<S>> {
    let xs = x.shape();
    for a in ALL_AXES {
        let (from, to) = (xs.axis(a), target.axis(a));
        if from != to && from != 1 {
            return Err(Error::Shape(format!(
                "expand: axis {a:?} extent {from} cannot broadcast to {to}"
            )));
        }
    }
    let mut out = Tensor::zeros(target);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..target.n {
        for c in 0..target.c {
            for f in 0..target.f {
                let orow = target.idx(n, c, f, 0);
                let xrow = xs.idx(n.min(xs.n - 1), c.min(xs.c - 1), f.min(xs.f - 1), 0);
                if xs.t == target.t {
                    od[orow..orow + target.t].copy_from_slice(&xd[xrow..xrow + target.t]);
                } else {
                    let v = xd[xrow];
                    for t in 0..target.t {
                        od[orow + t] = v;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of `expand`: sum `g` down to `target` over every broadcast axis.
pub fn reduce_to<S: Scalar>(g: &Tensor<S>, target: Shape) -> Result<Tensor<S>> {
    let gs = g.shape();
    let mut axes = Vec::new();
    for a in ALL_AXES {
        let (from, to) = (target.axis(a), gs.axis(a));
        if from != to {
            if from != 1 {
                return Err(Error::Shape(format!(
                    "reduce_to: axis {a:?} extent {to} cannot fold into {from}"
                )));
            }
            axes.push(a);
        }
    }
    if axes.is_empty() {
        return Ok(g.clone());
    }
    reduce_sum(g, &axes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn maxpool_hand_case() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.item(), 4.0);
        assert_eq!(arg, vec![3]);
        let g = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![5.0f64]).unwrap();
        let dx = maxpool2x2_backward(&g, &arg, x.shape());
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn odd_extents_drop_trailing() {
        let x = Tensor::<f32>::filled(Shape::new(1, 1, 3, 5), 1.0);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 2));
        assert_eq!(avgpool2x2_forward(&x).unwrap().shape(), Shape::new(1, 1, 1, 2));
    }

    #[test]
    fn avgpool_hand_case() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = avgpool2x2_forward(&x).unwrap();
        assert_eq!(y.item(), 2.5);
        let g = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![8.0f64]).unwrap();
        let dx = avgpool2x2_backward(&g, x.shape());
        assert_eq!(dx.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn reduce_mean_all_axes() {
        let x = Tensor::from_vec(
            Shape::new(1, 2, 2, 2),
            (1..=8).map(|v| v as f64).collect(),
        )
        .unwrap();
        let m = reduce_mean(&x, &ALL_AXES).unwrap();
        assert_eq!(m.item(), 4.5);
    }

    #[test]
    fn reduce_mean_keeps_axis_extents() {
        let x = Tensor::from_vec(
            Shape::new(1, 2, 1, 3),
            vec![1.0f32, 2.0, 3.0, 10.0, 20.0, 30.0],
        )
        .unwrap();
        let m = reduce_mean(&x, &[Axis::T]).unwrap();
        assert_eq!(m.shape(), Shape::new(1, 2, 1, 1));
        assert_eq!(m.data(), &[2.0, 20.0]);
    }

    #[test]
    fn zero_extent_reduction_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 0, 2, 2));
        assert!(reduce_mean(&x, &[Axis::C]).is_err());
    }

    #[test]
    fn expand_and_fold_back() {
        let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![3.0f64, 4.0]).unwrap();
        let big = expand(&x, Shape::new(2, 2, 3, 5)).unwrap();
        assert_eq!(big.at(1, 1, 2, 4), 4.0);
        let folded = reduce_to(&big, x.shape()).unwrap();
        assert_eq!(folded.data(), &[3.0 * 30.0, 4.0 * 30.0]);
    }

    #[test]
    fn expand_rejects_incompatible_axis() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 1, 1));
        assert!(expand(&x, Shape::new(1, 3, 4, 4)).is_err());
    }

    proptest! {
        /// Max pool dominates average pool elementwise.
        #[test]
        fn maxpool_dominates_avgpool(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut x = Tensor::<f32>::zeros(Shape::new(1, 2, 6, 8));
            x.fill_uniform(&mut rng, 2.0);
            let (mx, arg) = maxpool2x2_forward(&x).unwrap();
            let av = avgpool2x2_forward(&x).unwrap();
            for (m, a) in mx.data().iter().zip(av.data().iter()) {
                prop_assert!(m >= a);
            }
            // every argmax index points at a value equal to the output
            for (o, &i) in arg.iter().enumerate() {
                prop_assert_eq!(x.data()[i], mx.data()[o]);
            }
        }

        /// Sum of the expanded tensor equals sum of the source times the fan-out.
        #[test]
        fn expand_preserves_weighted_sum(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut x = Tensor::<f64>::zeros(Shape::new(1, 3, 1, 1));
            x.fill_uniform(&mut rng, 1.0);
            let target = Shape::new(2, 3, 4, 5);
            let big = expand(&x, target).unwrap();
            let s_big: f64 = big.data().iter().sum();
            let s_small: f64 = x.data().iter().sum();
            let fan = (target.numel() / x.numel()) as f64;
            prop_assert!((s_big - s_small * fan).abs() < 1e-9 * fan.max(1.0));
        }
    }
}

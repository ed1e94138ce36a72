//! Central finite-difference verification of tape gradients.
//!
//! Runs at f64. The builder closure is invoked once per perturbed element, so
//! it must be deterministic; anything random (dropout masks, augmentation)
//! has to be fixed by the caller before checking.

use crate::error::Result;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Worst relative error over all checked elements, with its location.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, element index) of the worst element.
    pub worst_at: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare tape gradients of a scalar loss against central differences with
/// step `h` for every element of every input.
///
/// `build` receives leaf ids for `inputs` in order and must return the loss
/// node.
pub fn grad_check<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let root = build(&mut tape, &ids)?;
        Ok(tape.value(root).item())
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let root = build(&mut tape, &ids)?;
    let store = tape.backward(root)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_at: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = store
            .get(ids[i])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let lp = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let lm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: rel,
                    worst_at: (i, j),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::ConvSpec;
    use crate::norm::BandStats;
    use crate::tensor::{Axis, Shape, ALL_AXES};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn filled_random(shape: Shape, seed: u64, width: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(shape);
        t.fill_uniform(&mut rng, width);
        t
    }

    const H: f64 = 1e-5;

    #[test]
    fn conv_full_with_bias() {
        let spec = ConvSpec::full(2, 3, (3, 3), (2, 2), (1, 1));
        let x = filled_random(Shape::new(2, 2, 5, 7), 1, 1.0);
        let w = filled_random(spec.weight_shape(), 2, 0.5);
        let b = filled_random(Shape::new(1, 3, 1, 1), 3, 0.5);
        let r = grad_check(&[x, w, b], H, |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], Some(ids[2]), spec)?;
            tape.reduce_mean(y, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn conv_depthwise() {
        let spec = ConvSpec::depthwise(3, (3, 1), (1, 0));
        let x = filled_random(Shape::new(1, 3, 6, 4), 4, 1.0);
        let w = filled_random(spec.weight_shape(), 5, 0.5);
        let r = grad_check(&[x, w], H, |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], None, spec)?;
            tape.reduce_mean(y, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn conv_grouped() {
        let spec = ConvSpec {
            in_channels: 4,
            out_channels: 6,
            kernel: (2, 2),
            stride: (1, 1),
            padding: (0, 0),
            groups: 2,
        };
        let x = filled_random(Shape::new(2, 4, 4, 5), 6, 1.0);
        let w = filled_random(spec.weight_shape(), 7, 0.5);
        let r = grad_check(&[x, w], H, |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], None, spec)?;
            tape.reduce_mean(y, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn pools_and_reductions() {
        // values spread out so a 1e-5 perturbation cannot flip an argmax
        let x = Tensor::from_vec(
            Shape::new(1, 1, 4, 4),
            (0..16).map(|v| v as f64 * 0.37 - 2.0).collect(),
        )
        .unwrap();
        let r = grad_check(&[x.clone()], H, |tape, ids| {
            let y = tape.maxpool2x2(ids[0])?;
            tape.reduce_mean(y, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-7, "{r:?}");

        let r = grad_check(&[x.clone()], H, |tape, ids| {
            let y = tape.avgpool2x2(ids[0])?;
            tape.reduce_mean(y, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-7, "{r:?}");

        let r = grad_check(&[x], H, |tape, ids| {
            let m = tape.reduce_mean(ids[0], &[Axis::F])?;
            let sq = tape.mul(m, m)?;
            tape.reduce_mean(sq, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-7, "{r:?}");
    }

    #[test]
    fn broadcast_and_elementwise() {
        let a = filled_random(Shape::new(1, 3, 1, 1), 8, 1.0);
        let b = filled_random(Shape::new(2, 3, 2, 2), 9, 1.0);
        let r = grad_check(&[a, b], H, |tape, ids| {
            let big = tape.expand(ids[0], Shape::new(2, 3, 2, 2))?;
            let prod = tape.mul(big, ids[1])?;
            let shifted = tape.add_scalar(prod, 0.7);
            let diff = tape.sub(shifted, ids[1])?;
            let scaled = tape.scale(diff, -1.3);
            tape.reduce_mean(scaled, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn activations() {
        // keep relu inputs away from the kink
        let mut x = filled_random(Shape::new(1, 2, 3, 3), 10, 1.0);
        for v in x.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        let r = grad_check(&[x.clone()], H, |tape, ids| {
            let y = tape.relu(ids[0]);
            tape.reduce_mean(y, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");

        let r = grad_check(&[x], H, |tape, ids| {
            let y = tape.swish(ids[0]);
            let sq = tape.mul(y, y)?;
            tape.reduce_mean(sq, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn freq_in_and_res_norm() {
        let x = filled_random(Shape::new(2, 2, 3, 4), 11, 1.5);
        let w = filled_random(Shape::new(2, 2, 3, 4), 12, 1.0);
        let r = grad_check(&[x.clone(), w.clone()], H, |tape, ids| {
            let y = tape.freq_in(ids[0])?;
            let weighted = tape.mul(y, ids[1])?;
            tape.reduce_mean(weighted, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");

        let r = grad_check(&[x, w], H, |tape, ids| {
            let y = tape.res_norm(ids[0], 0.1)?;
            let weighted = tape.mul(y, ids[1])?;
            tape.reduce_mean(weighted, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn ssn_train_mode() {
        let x = filled_random(Shape::new(2, 2, 4, 3), 13, 1.5);
        let gamma = filled_random(Shape::new(1, 2, 2, 1), 14, 0.5).map(|v| v + 1.0);
        let beta = filled_random(Shape::new(1, 2, 2, 1), 15, 0.5);
        let w = filled_random(Shape::new(2, 2, 4, 3), 16, 1.0);
        let r = grad_check(&[x, gamma, beta, w], H, |tape, ids| {
            let (y, _) = tape.ssn_train(ids[0], ids[1], ids[2], 2)?;
            let weighted = tape.mul(y, ids[3])?;
            tape.reduce_mean(weighted, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn ssn_eval_mode() {
        let x = filled_random(Shape::new(2, 2, 4, 3), 17, 1.5);
        let gamma = filled_random(Shape::new(1, 2, 2, 1), 18, 0.5).map(|v| v + 1.0);
        let beta = filled_random(Shape::new(1, 2, 2, 1), 19, 0.5);
        let running = BandStats {
            mean: vec![0.1, -0.2, 0.3, 0.05],
            var: vec![1.1, 0.9, 1.3, 0.7],
        };
        let r = grad_check(&[x, gamma, beta], H, move |tape, ids| {
            let y = tape.ssn_eval(ids[0], ids[1], ids[2], &running, 2)?;
            let sq = tape.mul(y, y)?;
            tape.reduce_mean(sq, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn freq_affine_constants() {
        let x = filled_random(Shape::new(1, 2, 3, 4), 20, 1.0);
        let a = vec![0.5, 2.0, 1.5];
        let b = vec![-0.3, 0.1, 0.0];
        let r = grad_check(&[x], H, move |tape, ids| {
            let y = tape.freq_affine(ids[0], &a, &b)?;
            let sq = tape.mul(y, y)?;
            tape.reduce_mean(sq, &ALL_AXES)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn softmax_xent_gradients() {
        let logits = filled_random(Shape::new(3, 5, 1, 1), 21, 2.0);
        let mut targets = Tensor::zeros(Shape::new(3, 5, 1, 1));
        targets.data_mut()[2] = 0.7;
        targets.data_mut()[4] = 0.3;
        targets.data_mut()[5] = 1.0;
        targets.data_mut()[13] = 0.5;
        targets.data_mut()[14] = 0.5;
        let r = grad_check(&[logits], H, move |tape, ids| {
            tape.softmax_xent(ids[0], targets.clone())
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-7, "{r:?}");
    }

    #[test]
    fn small_network_end_to_end() {
        let front = ConvSpec::full(1, 4, (3, 3), (2, 2), (1, 1));
        let point = ConvSpec::pointwise(4, 3);
        let x = filled_random(Shape::new(2, 1, 8, 8), 22, 1.0);
        let w1 = filled_random(front.weight_shape(), 23, 0.5);
        let gamma = filled_random(Shape::new(1, 4, 2, 1), 24, 0.3).map(|v| v + 1.0);
        let beta = filled_random(Shape::new(1, 4, 2, 1), 25, 0.3);
        let w2 = filled_random(point.weight_shape(), 26, 0.5);
        let b2 = filled_random(Shape::new(1, 3, 1, 1), 27, 0.2);
        let mut targets = Tensor::zeros(Shape::new(2, 3, 1, 1));
        targets.data_mut()[0] = 1.0;
        targets.data_mut()[5] = 1.0;
        let r = grad_check(
            &[x, w1, gamma, beta, w2, b2],
            H,
            move |tape, ids| {
                let y = tape.conv2d(ids[0], ids[1], None, front)?;
                let (y, _) = tape.ssn_train(y, ids[2], ids[3], 2)?;
                let y = tape.swish(y);
                let y = tape.conv2d(y, ids[4], Some(ids[5]), point)?;
                let y = tape.reduce_mean(y, &[Axis::F, Axis::T])?;
                tape.softmax_xent(y, targets.clone())
            },
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "{r:?}");
    }
}

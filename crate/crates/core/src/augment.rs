//! Feature-space training augmentations: circular time roll, mixup, and
//! frequency/time masking. Each draws from its own RNG stream so toggling one
//! never shifts the others' sequences.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Axis, Tensor};
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// Circular shift along the time axis; positive shifts move content toward
/// later frames and wrap the tail to the front.
pub fn time_roll<S: Scalar>(feat: &Tensor<S>, shift: isize) -> Tensor<S> {
    let s = feat.shape();
    if s.t == 0 {
        return feat.clone();
    }
    let t = s.t as isize;
    let shift = shift.rem_euclid(t) as usize;
    if shift == 0 {
        return feat.clone();
    }
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for f in 0..s.f {
                for ti in 0..s.t {
                    out.set(n, c, f, (ti + shift) % s.t, feat.at(n, c, f, ti));
                }
            }
        }
    }
    out
}

/// The ±frame range for a roll of `range_sec` at a frame hop of `hop_sec`.
pub fn roll_frames(range_sec: f64, hop_sec: f64) -> usize {
    (range_sec / hop_sec).round() as usize
}

/// Roll with a shift drawn uniformly from ±max_shift.
pub fn time_roll_random<S: Scalar, R: Rng>(
    feat: &Tensor<S>,
    max_shift: usize,
    rng: &mut R,
) -> Tensor<S> {
    if max_shift == 0 {
        return feat.clone();
    }
    let m = max_shift as isize;
    let shift = rng.gen_range(-m..=m);
    time_roll(feat, shift)
}

/// Mix a batch with itself under a fixed weight and partner permutation:
/// `mixed[i] = w * batch[i] + (1 - w) * batch[perm[i]]` for features and
/// labels alike.
pub fn mixup_with<S: Scalar>(
    x: &Tensor<S>,
    y: &Tensor<S>,
    w: f64,
    perm: &[usize],
) -> Result<(Tensor<S>, Tensor<S>)> {
    let n = x.shape().n;
    if y.shape().n != n {
        return Err(Error::Shape(format!(
            "mixup: feature batch {} vs label batch {}",
            n,
            y.shape().n
        )));
    }
    if perm.len() != n {
        return Err(Error::InvalidArg(format!(
            "mixup: permutation of {} entries for a batch of {n}",
            perm.len()
        )));
    }
    if perm.iter().any(|&p| p >= n) {
        return Err(Error::InvalidArg("mixup: permutation index out of range".into()));
    }
    let wv = S::from_f64(w);
    let cw = S::one() - wv;
    let mix = |t: &Tensor<S>| {
        let s = t.shape();
        let per = s.c * s.f * s.t;
        let mut out = Tensor::zeros(s);
        for i in 0..n {
            let a = &t.data()[i * per..(i + 1) * per];
            let b = &t.data()[perm[i] * per..(perm[i] + 1) * per];
            let o = &mut out.data_mut()[i * per..(i + 1) * per];
            for ((o, a), b) in o.iter_mut().zip(a).zip(b) {
                *o = wv * *a + cw * *b;
            }
        }
        out
    };
    Ok((mix(x), mix(y)))
}

/// Batch mixup: one Beta(alpha, alpha) weight and one random pairing per call.
pub fn mixup<S: Scalar, R: Rng>(
    x: &Tensor<S>,
    y: &Tensor<S>,
    alpha: f64,
    rng: &mut R,
) -> Result<(Tensor<S>, Tensor<S>)> {
    if alpha <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "mixup: alpha must be positive, got {alpha}"
        )));
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::InvalidArg(format!("mixup: bad Beta parameter: {e}")))?;
    let w = beta.sample(rng);
    let n = x.shape().n;
    let mut perm: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    mixup_with(x, y, w, &perm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecAugConfig {
    pub n_freq_masks: usize,
    pub freq_param: usize,
    pub n_time_masks: usize,
    pub time_param: usize,
}

impl Default for SpecAugConfig {
    fn default() -> Self {
        SpecAugConfig {
            n_freq_masks: 2,
            freq_param: 40,
            n_time_masks: 2,
            time_param: 80,
        }
    }
}

impl SpecAugConfig {
    pub fn validate(&self, freq_bins: usize, frames: usize) -> Result<()> {
        if self.freq_param > freq_bins {
            return Err(Error::InvalidArg(format!(
                "spec augment: frequency mask parameter {} exceeds the {} bins",
                self.freq_param, freq_bins
            )));
        }
        if self.time_param > frames {
            return Err(Error::InvalidArg(format!(
                "spec augment: time mask parameter {} exceeds the {} frames",
                self.time_param, frames
            )));
        }
        Ok(())
    }
}

/// Mask fill value; the sample's mean keeps masked statistics neutral.
/// Switch the body to `S::zero()` for zero filling.
fn mask_fill<S: Scalar>(sample: &[S]) -> S {
    let n = S::from_f64(sample.len() as f64);
    sample.iter().fold(S::zero(), |a, &v| a + v) / n
}

/// Overwrite `width` consecutive indices starting at `start` along `axis`
/// of sample `n` with `fill`.
pub fn mask_region<S: Scalar>(
    feat: &mut Tensor<S>,
    n: usize,
    axis: Axis,
    start: usize,
    width: usize,
    fill: S,
) -> Result<()> {
    let s = feat.shape();
    let extent = match axis {
        Axis::F => s.f,
        Axis::T => s.t,
        other => {
            return Err(Error::InvalidArg(format!(
                "mask_region: masking runs along F or T, not {other:?}"
            )));
        }
    };
    if start + width > extent {
        return Err(Error::InvalidArg(format!(
            "mask_region: {start}+{width} exceeds extent {extent}"
        )));
    }
    for c in 0..s.c {
        for f in 0..s.f {
            for t in 0..s.t {
                let hit = match axis {
                    Axis::F => f >= start && f < start + width,
                    _ => t >= start && t < start + width,
                };
                if hit {
                    feat.set(n, c, f, t, fill);
                }
            }
        }
    }
    Ok(())
}

/// Per-sample frequency and time masking. For each mask the width is drawn
/// uniformly from 0..=param and the start uniformly over valid positions;
/// masked cells take the sample's mean value.
pub fn spec_augment<S: Scalar, R: Rng>(
    feat: &Tensor<S>,
    cfg: &SpecAugConfig,
    rng: &mut R,
) -> Result<Tensor<S>> {
    let s = feat.shape();
    cfg.validate(s.f, s.t)?;
    let mut out = feat.clone();
    let per = s.c * s.f * s.t;
    for n in 0..s.n {
        let fill = mask_fill(&feat.data()[n * per..(n + 1) * per]);
        for _ in 0..cfg.n_freq_masks {
            let width = rng.gen_range(0..=cfg.freq_param);
            let start = rng.gen_range(0..=(s.f - width));
            mask_region(&mut out, n, Axis::F, start, width, fill)?;
        }
        for _ in 0..cfg.n_time_masks {
            let width = rng.gen_range(0..=cfg.time_param);
            let start = rng.gen_range(0..=(s.t - width));
            mask_region(&mut out, n, Axis::T, start, width, fill)?;
        }
    }
    Ok(out)
}

//! Frequency-wise normalization kernels.
//!
//! `freq_in` normalizes each (batch, frequency) row over channels and time,
//! which makes the output invariant to any per-frequency affine shift of the
//! input. That is the property the residual normalization layer relies on to
//! absorb device coloration. The sub-band variant (`ssn`) is batch
//! normalization computed per (channel, frequency band) with its own affine
//! and running statistics.
//!
//! Both use biased variance and epsilon 1e-5. Running statistics update as
//! `running = (1 - momentum) * running + momentum * batch` with the biased
//! batch variance, so folding running stats into an affine at pack time
//! reproduces eval-mode outputs exactly.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const NORM_EPS: f64 = 1e-5;

/// Per (n, f): mean and variance over (c, t), then `(x - mean) / sqrt(var + eps)`.
/// Returns the output and the per-(n, f) reciprocal standard deviations.
pub fn freq_in_forward<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<S>)> {
    let s = x.shape();
    let m = s.c * s.t;
    if m == 0 {
        return Err(Error::InvalidArg(
            "freq_in: empty channel-time extent, nothing to normalize over".into(),
        ));
    }
    let inv_m = S::from_f64(1.0 / m as f64);
    let eps = S::from_f64(NORM_EPS);
    let mut out = Tensor::zeros(s);
    let mut inv_stds = vec![S::zero(); s.n * s.f];
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..s.n {
        for f in 0..s.f {
            let mut sum = S::zero();
            let mut sumsq = S::zero();
            for c in 0..s.c {
                let row = s.idx(n, c, f, 0);
                for v in &xd[row..row + s.t] {
                    sum = sum + *v;
                    sumsq = sumsq + *v * *v;
                }
            }
            let mean = sum * inv_m;
            let var = (sumsq * inv_m - mean * mean).max(S::zero());
            let inv_std = (var + eps).sqrt().recip();
            inv_stds[n * s.f + f] = inv_std;
            for c in 0..s.c {
                let row = s.idx(n, c, f, 0);
                for t in 0..s.t {
                    od[row + t] = (xd[row + t] - mean) * inv_std;
                }
            }
        }
    }
    Ok((out, inv_stds))
}

/// Adjoint of `freq_in_forward` given its output `y` and saved `inv_std`:
/// `dx = inv_std * (dy - mean(dy) - y * mean(dy * y))`, means over (c, t).
pub fn freq_in_backward<S: Scalar>(grad_out: &Tensor<S>, y: &Tensor<S>, inv_stds: &[S]) -> Tensor<S> {
    let s = y.shape();
    let m = s.c * s.t;
    let inv_m = S::from_f64(1.0 / m as f64);
    let mut dx = Tensor::zeros(s);
    let gd = grad_out.data();
    let yd = y.data();
    let dxd = dx.data_mut();
    for n in 0..s.n {
        for f in 0..s.f {
            let mut g_sum = S::zero();
            let mut gy_sum = S::zero();
            for c in 0..s.c {
                let row = s.idx(n, c, f, 0);
                for t in 0..s.t {
                    g_sum = g_sum + gd[row + t];
                    gy_sum = gy_sum + gd[row + t] * yd[row + t];
                }
            }
            let g_mean = g_sum * inv_m;
            let gy_mean = gy_sum * inv_m;
            let inv_std = inv_stds[n * s.f + f];
            for c in 0..s.c {
                let row = s.idx(n, c, f, 0);
                for t in 0..s.t {
                    dxd[row + t] = inv_std * (gd[row + t] - g_mean - yd[row + t] * gy_mean);
                }
            }
        }
    }
    dx
}

/// Sub-band geometry: frequency axis split into `bands` contiguous equal bands.
pub fn band_extent(f: usize, bands: usize) -> Result<usize> {
    if bands == 0 {
        return Err(Error::InvalidArg("ssn: bands must be positive".into()));
    }
    if f % bands != 0 {
        return Err(Error::Shape(format!(
            "ssn: frequency extent {f} not divisible into {bands} bands"
        )));
    }
    Ok(f / bands)
}

/// Per-(channel, band) first and second moments. Length `c * bands` each,
/// indexed `c * bands + band`.
#[derive(Debug, Clone)]
pub struct BandStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> BandStats<S> {
    /// Identity statistics: mean 0, variance 1.
    pub fn identity(c: usize, bands: usize) -> Self {
        BandStats {
            mean: vec![S::zero(); c * bands],
            var: vec![S::one(); c * bands],
        }
    }

    /// Exponential update toward `batch` in place.
    pub fn blend(&mut self, batch: &BandStats<S>, momentum: S) {
        let keep = S::one() - momentum;
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = keep * *r + momentum * *b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = keep * *r + momentum * *b;
        }
    }
}

/// Saved forward state the ssn backward pass needs.
pub struct SsnCache<S: Scalar> {
    pub xhat: Tensor<S>,
    /// Per (c, band), `1 / sqrt(var + eps)` for the stats used in the forward.
    pub inv_std: Vec<S>,
    /// Whether the forward normalized with batch stats (training) or fixed
    /// running stats (eval); the backward formula differs.
    pub batch_stats: bool,
}

fn gamma_beta_shape(c: usize, bands: usize) -> Shape {
    Shape::new(1, c, bands, 1)
}

fn check_affine<S: Scalar>(name: &str, t: &Tensor<S>, c: usize, bands: usize) -> Result<()> {
    if t.shape() != gamma_beta_shape(c, bands) {
        return Err(Error::Shape(format!(
            "ssn: {name} shape {} does not match per-(channel, band) layout {}",
            t.shape(),
            gamma_beta_shape(c, bands)
        )));
    }
    Ok(())
}

fn band_moments<S: Scalar>(x: &Tensor<S>, bands: usize) -> Result<BandStats<S>> {
    let s = x.shape();
    let bf = band_extent(s.f, bands)?;
    let m = s.n * bf * s.t;
    if m == 0 {
        return Err(Error::InvalidArg(
            "ssn: empty normalization extent".into(),
        ));
    }
    let inv_m = S::from_f64(1.0 / m as f64);
    let mut mean = vec![S::zero(); s.c * bands];
    let mut var = vec![S::zero(); s.c * bands];
    let xd = x.data();
    for c in 0..s.c {
        for b in 0..bands {
            let mut sum = S::zero();
            let mut sumsq = S::zero();
            for n in 0..s.n {
                for f in b * bf..(b + 1) * bf {
                    let row = s.idx(n, c, f, 0);
                    for v in &xd[row..row + s.t] {
                        sum = sum + *v;
                        sumsq = sumsq + *v * *v;
                    }
                }
            }
            let mu = sum * inv_m;
            mean[c * bands + b] = mu;
            var[c * bands + b] = (sumsq * inv_m - mu * mu).max(S::zero());
        }
    }
    Ok(BandStats { mean, var })
}

fn ssn_normalize<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    stats: &BandStats<S>,
    bands: usize,
    batch_stats: bool,
) -> Result<(Tensor<S>, SsnCache<S>)> {
    let s = x.shape();
    let bf = band_extent(s.f, bands)?;
    check_affine("gamma", gamma, s.c, bands)?;
    check_affine("beta", beta, s.c, bands)?;
    let eps = S::from_f64(NORM_EPS);
    let mut out = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    let mut inv_std = vec![S::zero(); s.c * bands];
    let xd = x.data();
    let od = out.data_mut();
    let hd = xhat.data_mut();
    let gd = gamma.data();
    let bd = beta.data();
    for c in 0..s.c {
        for b in 0..bands {
            let i = c * bands + b;
            let inv = (stats.var[i] + eps).sqrt().recip();
            inv_std[i] = inv;
            let mu = stats.mean[i];
            let (g, be) = (gd[i], bd[i]);
            for n in 0..s.n {
                for f in b * bf..(b + 1) * bf {
                    let row = s.idx(n, c, f, 0);
                    for t in 0..s.t {
                        let h = (xd[row + t] - mu) * inv;
                        hd[row + t] = h;
                        od[row + t] = g * h + be;
                    }
                }
            }
        }
    }
    Ok((
        out,
        SsnCache {
            xhat,
            inv_std,
            batch_stats,
        },
    ))
}

/// Training-mode forward: normalize with this batch's moments and return them
/// so the caller can fold them into running statistics after the step.
pub fn ssn_forward_train<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    bands: usize,
) -> Result<(Tensor<S>, SsnCache<S>, BandStats<S>)> {
    let batch = band_moments(x, bands)?;
    let (out, cache) = ssn_normalize(x, gamma, beta, &batch, bands, true)?;
    Ok((out, cache, batch))
}

/// Eval-mode forward: normalize with fixed running statistics.
pub fn ssn_forward_eval<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running: &BandStats<S>,
    bands: usize,
) -> Result<(Tensor<S>, SsnCache<S>)> {
    let s = x.shape();
    if running.mean.len() != s.c * bands || running.var.len() != s.c * bands {
        return Err(Error::Shape(format!(
            "ssn: running stats length {} does not match {} (channel, band) pairs",
            running.mean.len(),
            s.c * bands
        )));
    }
    ssn_normalize(x, gamma, beta, running, bands, false)
}

/// Adjoint of the ssn forward. With batch stats the normalization couples all
/// elements of a (channel, band) set:
/// `dx = inv_std * (dxh - mean(dxh) - xhat * mean(dxh * xhat))` with
/// `dxh = gamma * dy`. With fixed running stats it reduces to the per-element
/// chain `dx = gamma * inv_std * dy`. Either way `dgamma = sum(dy * xhat)`
/// and `dbeta = sum(dy)`.
pub fn ssn_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    cache: &SsnCache<S>,
    gamma: &Tensor<S>,
    bands: usize,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let s = cache.xhat.shape();
    let bf = s.f / bands;
    let m = s.n * bf * s.t;
    let inv_m = S::from_f64(1.0 / m as f64);
    let mut dx = Tensor::zeros(s);
    let mut dgamma = Tensor::zeros(gamma_beta_shape(s.c, bands));
    let mut dbeta = Tensor::zeros(gamma_beta_shape(s.c, bands));
    let gd = grad_out.data();
    let hd = cache.xhat.data();
    let gammad = gamma.data();
    let dxd = dx.data_mut();
    for c in 0..s.c {
        for b in 0..bands {
            let i = c * bands + b;
            let g = gammad[i];
            let inv = cache.inv_std[i];
            let mut dy_sum = S::zero();
            let mut dyh_sum = S::zero();
            for n in 0..s.n {
                for f in b * bf..(b + 1) * bf {
                    let row = s.idx(n, c, f, 0);
                    for t in 0..s.t {
                        dy_sum = dy_sum + gd[row + t];
                        dyh_sum = dyh_sum + gd[row + t] * hd[row + t];
                    }
                }
            }
            dgamma.data_mut()[i] = dyh_sum;
            dbeta.data_mut()[i] = dy_sum;
            if cache.batch_stats {
                let dxh_mean = g * dy_sum * inv_m;
                let dxh_h_mean = g * dyh_sum * inv_m;
                for n in 0..s.n {
                    for f in b * bf..(b + 1) * bf {
                        let row = s.idx(n, c, f, 0);
                        for t in 0..s.t {
                            let dxh = g * gd[row + t];
                            dxd[row + t] = inv * (dxh - dxh_mean - hd[row + t] * dxh_h_mean);
                        }
                    }
                }
            } else {
                let k = g * inv;
                for n in 0..s.n {
                    for f in b * bf..(b + 1) * bf {
                        let row = s.idx(n, c, f, 0);
                        for t in 0..s.t {
                            dxd[row + t] = k * gd[row + t];
                        }
                    }
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Per-frequency mean and standard deviation fitted over a feature corpus,
/// for the global normalization baseline.
#[derive(Debug, Clone)]
pub struct GlobalFreqStats<S> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
}

impl<S: Scalar> GlobalFreqStats<S> {
    /// Accumulate per-frequency moments over every (n, c, t) element of every
    /// tensor in the corpus. All tensors must share the frequency extent.
    pub fn fit<'a, I>(features: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Tensor<S>>,
        S: 'a,
    {
        let mut sum: Vec<f64> = Vec::new();
        let mut sumsq: Vec<f64> = Vec::new();
        let mut count: Vec<f64> = Vec::new();
        for x in features {
            let s = x.shape();
            if sum.is_empty() {
                sum = vec![0.0; s.f];
                sumsq = vec![0.0; s.f];
                count = vec![0.0; s.f];
            } else if sum.len() != s.f {
                return Err(Error::Shape(format!(
                    "global freq stats: frequency extent {} does not match earlier {}",
                    s.f,
                    sum.len()
                )));
            }
            let xd = x.data();
            for n in 0..s.n {
                for c in 0..s.c {
                    for f in 0..s.f {
                        let row = s.idx(n, c, f, 0);
                        for v in &xd[row..row + s.t] {
                            let v = Scalar::to_f64(*v);
                            sum[f] += v;
                            sumsq[f] += v * v;
                        }
                    }
                }
                count
                    .iter_mut()
                    .for_each(|k| *k += (s.c * s.t) as f64);
            }
        }
        if sum.is_empty() || count[0] == 0.0 {
            return Err(Error::NotFitted(
                "global freq stats: empty feature corpus".into(),
            ));
        }
        let mut mean = Vec::with_capacity(sum.len());
        let mut std = Vec::with_capacity(sum.len());
        for f in 0..sum.len() {
            let mu = sum[f] / count[f];
            let var = (sumsq[f] / count[f] - mu * mu).max(0.0);
            mean.push(S::from_f64(mu));
            std.push(S::from_f64((var + NORM_EPS).sqrt()));
        }
        Ok(GlobalFreqStats { mean, std })
    }

    /// The equivalent per-frequency affine `y = a[f] * x + b[f]`.
    pub fn to_affine(&self) -> (Vec<S>, Vec<S>) {
        let a: Vec<S> = self.std.iter().map(|s| s.recip()).collect();
        let b: Vec<S> = self
            .mean
            .iter()
            .zip(&a)
            .map(|(m, a)| -*m * *a)
            .collect();
        (a, b)
    }
}

/// Apply a fixed per-frequency affine `y = a[f] * x + b[f]`.
pub fn freq_affine<S: Scalar>(x: &Tensor<S>, a: &[S], b: &[S]) -> Result<Tensor<S>> {
    let s = x.shape();
    if a.len() != s.f || b.len() != s.f {
        return Err(Error::Shape(format!(
            "freq affine: {} coefficients for frequency extent {}",
            a.len(),
            s.f
        )));
    }
    let mut out = Tensor::zeros(s);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            for f in 0..s.f {
                let row = s.idx(n, c, f, 0);
                let (af, bf) = (a[f], b[f]);
                for t in 0..s.t {
                    od[row + t] = af * xd[row + t] + bf;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of `freq_affine` with respect to x: `dx = a[f] * dy`.
pub fn freq_affine_backward<S: Scalar>(grad_out: &Tensor<S>, a: &[S]) -> Tensor<S> {
    let s = grad_out.shape();
    let mut dx = Tensor::zeros(s);
    let gd = grad_out.data();
    let dxd = dx.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            for f in 0..s.f {
                let row = s.idx(n, c, f, 0);
                let af = a[f];
                for t in 0..s.t {
                    dxd[row + t] = af * gd[row + t];
                }
            }
        }
    }
    dx
}

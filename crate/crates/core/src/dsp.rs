//! Log-mel front end: downsampling, framing, mel filterbank, feature cache.
//!
//! Frames are taken without centering, so `T = (len - window) / hop + 1`.
//! A 10 s clip at 16 kHz yields 330 frames of 256 bins. Spectra are computed
//! in f64 no matter the tensor scalar so cached features do not depend on the
//! training precision.

use crate::binio;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::wav::AudioClip;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Front-end geometry. `Default` is the shipping configuration; anything else
/// is for tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub target_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        // 130 ms window and 30 ms hop at 16 kHz
        FeatureConfig {
            target_rate: 16000,
            window: 2080,
            hop: 480,
            fft_size: 4096,
            mel_bins: 256,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hop == 0 || self.mel_bins == 0 {
            return Err(Error::InvalidArg(
                "feature config: window, hop and mel_bins must be positive".into(),
            ));
        }
        if self.fft_size < self.window {
            return Err(Error::InvalidArg(format!(
                "feature config: fft size {} smaller than window {}",
                self.fft_size, self.window
            )));
        }
        if !(self.fmin >= 0.0 && self.fmax > self.fmin) {
            return Err(Error::InvalidArg(format!(
                "feature config: need 0 <= fmin < fmax, got {}..{}",
                self.fmin, self.fmax
            )));
        }
        if self.fmax > self.target_rate as f64 / 2.0 {
            return Err(Error::InvalidArg(format!(
                "feature config: fmax {} beyond Nyquist {}",
                self.fmax,
                self.target_rate / 2
            )));
        }
        Ok(())
    }

    /// Frame count for a clip of `len` samples, or None if shorter than one window.
    pub fn frames(&self, len: usize) -> Option<usize> {
        if len < self.window {
            None
        } else {
            Some((len - self.window) / self.hop + 1)
        }
    }
}

/// Windowed-sinc low-pass FIR followed by decimation. The source rate must be
/// an integer multiple of `target`. Edges are handled by clamping to the
/// first/last sample, which keeps constant signals exactly constant.
pub fn resample(clip: &AudioClip, target: u32) -> Result<AudioClip> {
    if clip.sample_rate == target {
        return Ok(clip.clone());
    }
    if target == 0 || clip.sample_rate % target != 0 {
        return Err(Error::InvalidArg(format!(
            "resample: {} Hz is not an integer multiple of {} Hz",
            clip.sample_rate, target
        )));
    }
    let factor = (clip.sample_rate / target) as usize;
    let n_in = clip.samples.len();
    if n_in == 0 {
        return Ok(AudioClip::new(Vec::new(), target));
    }
    let taps = design_lowpass(clip.sample_rate as f64, target as f64 / 2.0, 121);
    let m = taps.len() / 2;
    let n_out = n_in.div_ceil(factor);
    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let center = (i * factor) as isize;
        let mut acc = 0.0f64;
        for (k, &h) in taps.iter().enumerate() {
            let j = (center + k as isize - m as isize).clamp(0, n_in as isize - 1) as usize;
            acc += h * clip.samples[j] as f64;
        }
        out.push(acc as f32);
    }
    Ok(AudioClip::new(out, target))
}

/// Hann-windowed sinc low-pass with `taps` coefficients (forced odd),
/// normalized to unit DC gain.
fn design_lowpass(sample_rate: f64, cutoff_hz: f64, taps: usize) -> Vec<f64> {
    let taps = if taps % 2 == 0 { taps + 1 } else { taps };
    let m = (taps / 2) as isize;
    let fc = cutoff_hz / sample_rate;
    let mut h = Vec::with_capacity(taps);
    for n in -m..=m {
        let sinc = if n == 0 {
            2.0 * fc
        } else {
            (2.0 * std::f64::consts::PI * fc * n as f64).sin() / (std::f64::consts::PI * n as f64)
        };
        let w = 0.5
            + 0.5
                * (std::f64::consts::PI * n as f64 / (m as f64 + 1.0))
                    .cos();
        h.push(sinc * w);
    }
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v /= sum;
    }
    h
}

/// Mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const BREAK_HZ: f64 = 1000.0;
    const LINEAR_STEP: f64 = 200.0 / 3.0;
    const BREAK_MEL: f64 = BREAK_HZ / LINEAR_STEP;
    if hz < BREAK_HZ {
        hz / LINEAR_STEP
    } else {
        BREAK_MEL + 27.0 * (hz / BREAK_HZ).ln() / 6.4f64.ln()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const BREAK_MEL: f64 = 15.0;
    const LINEAR_STEP: f64 = 200.0 / 3.0;
    if mel < BREAK_MEL {
        mel * LINEAR_STEP
    } else {
        1000.0 * (6.4f64.ln() / 27.0 * (mel - BREAK_MEL)).exp()
    }
}

/// Triangular mel filterbank over FFT bins, unit peak per filter.
/// Row `j` spans mel points `j..j+2`; weights outside are zero.
pub struct MelBank {
    /// mel_bins rows of fft_size/2 + 1 weights
    pub weights: Vec<Vec<f64>>,
    /// filter center frequencies in Hz
    pub centers_hz: Vec<f64>,
}

pub fn mel_filterbank(cfg: &FeatureConfig) -> MelBank {
    let n_bins = cfg.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let n_points = cfg.mel_bins + 2;
    let points_hz: Vec<f64> = (0..n_points)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_points - 1) as f64))
        .collect();
    let bin_hz = cfg.target_rate as f64 / cfg.fft_size as f64;
    let mut weights = Vec::with_capacity(cfg.mel_bins);
    for j in 0..cfg.mel_bins {
        let (lo, center, hi) = (points_hz[j], points_hz[j + 1], points_hz[j + 2]);
        let mut row = vec![0.0f64; n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = if center > lo { (f - lo) / (center - lo) } else { 0.0 };
            let falling = if hi > center { (hi - f) / (hi - center) } else { 0.0 };
            *w = rising.min(falling).max(0.0);
        }
        weights.push(row);
    }
    MelBank {
        weights,
        centers_hz: points_hz[1..=cfg.mel_bins].to_vec(),
    }
}

fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Log-mel spectrogram of a 16 kHz clip: (1, 1, mel_bins, frames).
pub fn log_mel<S: Scalar>(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Tensor<S>> {
    cfg.validate()?;
    if clip.sample_rate != cfg.target_rate {
        return Err(Error::InvalidArg(format!(
            "log_mel: clip is {} Hz, expected {} Hz (resample first)",
            clip.sample_rate, cfg.target_rate
        )));
    }
    let frames = cfg.frames(clip.samples.len()).ok_or_else(|| {
        Error::InvalidArg(format!(
            "log_mel: clip of {} samples shorter than one {}-sample window",
            clip.samples.len(),
            cfg.window
        ))
    })?;

    let window = hann_window(cfg.window);
    let bank = mel_filterbank(cfg);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let n_bins = cfg.fft_size / 2 + 1;

    let mut out = Tensor::zeros(Shape::new(1, 1, cfg.mel_bins, frames));
    let od = out.data_mut();
    let mut buf = vec![Complex::new(0.0f64, 0.0); cfg.fft_size];
    let mut power = vec![0.0f64; n_bins];
    let mut scratch = vec![Complex::new(0.0f64, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            if i < cfg.window {
                *b = Complex::new(clip.samples[start + i] as f64 * window[i], 0.0);
            } else {
                *b = Complex::new(0.0, 0.0);
            }
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for (f, row) in bank.weights.iter().enumerate() {
            let mut acc = 0.0f64;
            for (w, p) in row.iter().zip(&power) {
                acc += w * p;
            }
            od[f * frames + t] = S::from_f64(acc.max(cfg.log_floor).ln());
        }
    }
    Ok(out)
}

/// Resample if needed, then extract log-mel features.
pub fn features_from_clip<S: Scalar>(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Tensor<S>> {
    let clip16 = resample(clip, cfg.target_rate)?;
    log_mel(&clip16, cfg)
}

const LMEL_MAGIC: &[u8; 4] = b"LMEL";
const LMEL_VERSION: u16 = 1;
const DTYPE_F32: u16 = 1;
const DTYPE_F64: u16 = 2;

/// Write a (1, 1, F, T) feature tensor as an LMEL cache file.
pub fn write_lmel<S: Scalar>(path: &Path, features: &Tensor<S>) -> Result<()> {
    let s = features.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::InvalidArg(format!(
            "lmel: expected a single-clip (1, 1, F, T) tensor, got {s}"
        )));
    }
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(LMEL_MAGIC)?;
    binio::write_u16(&mut w, LMEL_VERSION)?;
    binio::write_u32(&mut w, s.f as u32)?;
    binio::write_u32(&mut w, s.t as u32)?;
    let double = std::mem::size_of::<S>() == 8;
    binio::write_u16(&mut w, if double { DTYPE_F64 } else { DTYPE_F32 })?;
    for &v in features.data() {
        if double {
            binio::write_f64(&mut w, Scalar::to_f64(v))?;
        } else {
            binio::write_f32(&mut w, Scalar::to_f64(v) as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read an LMEL cache file into a (1, 1, F, T) tensor, converting dtype if
/// the file was stored at a different precision.
pub fn read_lmel<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let f = std::fs::File::open(path)?;
    let mut r = BufReader::new(f);
    binio::expect_magic(&mut r, LMEL_MAGIC)?;
    let version = binio::read_u16(&mut r)?;
    if version != LMEL_VERSION {
        return Err(Error::FileFormat(format!(
            "lmel: unsupported version {version}"
        )));
    }
    let fbins = binio::read_u32(&mut r)? as usize;
    let frames = binio::read_u32(&mut r)? as usize;
    let dtype = binio::read_u16(&mut r)?;
    let numel = fbins
        .checked_mul(frames)
        .ok_or_else(|| Error::FileFormat("lmel: dimension overflow".into()))?;
    let mut data = Vec::with_capacity(numel);
    match dtype {
        DTYPE_F32 => {
            for _ in 0..numel {
                data.push(S::from_f64(binio::read_f32(&mut r)? as f64));
            }
        }
        DTYPE_F64 => {
            for _ in 0..numel {
                data.push(S::from_f64(binio::read_f64(&mut r)?));
            }
        }
        other => {
            return Err(Error::FileFormat(format!("lmel: unknown dtype tag {other}")));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::FileFormat("lmel: trailing bytes after payload".into()));
    }
    Tensor::from_vec(Shape::new(1, 1, fbins, frames), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(rate: u32, hz: f64, secs: f64, amp: f64) -> AudioClip {
        let n = (rate as f64 * secs).round() as usize;
        let samples = (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * hz * i as f64 / rate as f64).sin()) as f32)
            .collect();
        AudioClip::new(samples, rate)
    }

    #[test]
    fn default_config_matches_front_end_contract() {
        let cfg = FeatureConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.window, (0.130f64 * 16000.0).round() as usize);
        assert_eq!(cfg.hop, (0.030f64 * 16000.0).round() as usize);
        assert_eq!(cfg.frames(160000), Some(330));
        assert_eq!(cfg.frames(80000), Some(163));
        assert_eq!(cfg.frames(2080), Some(1));
        assert_eq!(cfg.frames(2079), None);
    }

    #[test]
    fn resample_keeps_constants_constant() {
        let clip = AudioClip::new(vec![0.37; 48000], 48000);
        let out = resample(&clip, 16000).unwrap();
        assert_eq!(out.samples.len(), 16000);
        for &v in &out.samples {
            assert!((v - 0.37).abs() < 1e-3);
        }
    }

    #[test]
    fn ten_seconds_at_48k_resamples_to_160000() {
        let clip = AudioClip::new(vec![0.0; 480000], 48000);
        let out = resample(&clip, 16000).unwrap();
        assert_eq!(out.samples.len(), 160000);
        assert_eq!(out.sample_rate, 16000);
    }

    #[test]
    fn resample_preserves_1khz_amplitude() {
        let clip = sine(48000, 1000.0, 0.5, 0.6);
        let out = resample(&clip, 16000).unwrap();
        // compare interior RMS; a pure sine has RMS amp/sqrt(2)
        let skip = 300;
        let inner = &out.samples[skip..out.samples.len() - skip];
        let rms = (inner.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
            / inner.len() as f64)
            .sqrt();
        let expected = 0.6 / 2.0f64.sqrt();
        assert!(
            (rms - expected).abs() / expected < 0.01,
            "rms {rms} vs {expected}"
        );
    }

    #[test]
    fn resample_rejects_non_integer_ratio() {
        let clip = AudioClip::new(vec![0.0; 100], 44100);
        assert!(resample(&clip, 16000).is_err());
    }

    #[test]
    fn filterbank_is_well_formed() {
        let cfg = FeatureConfig::default();
        let bank = mel_filterbank(&cfg);
        assert_eq!(bank.weights.len(), 256);
        let nyquist_bin = |hz: f64| (hz / (16000.0 / 4096.0)).round() as usize;
        for (j, row) in bank.weights.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!(sum > 0.0, "filter {j} sums to {sum}");
            // contiguous support
            let first = row.iter().position(|&v| v > 0.0).unwrap();
            let last = row.iter().rposition(|&v| v > 0.0).unwrap();
            assert!(row[first..=last].iter().all(|&v| v > 0.0));
            // nothing beyond fmax
            let beyond = (nyquist_bin(cfg.fmax) + 2).min(row.len());
            assert!(row[beyond..].iter().all(|&v| v == 0.0));
        }
        for pair in bank.centers_hz.windows(2) {
            assert!(pair[0] < pair[1]);
        }
        assert!((bank.centers_hz[0] - mel_to_hz(hz_to_mel(0.0) + (hz_to_mel(8000.0)) / 257.0)).abs() < 1e-9);
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 250.0, 999.0, 1000.0, 1001.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        // the scale is linear below the 1 kHz break
        assert!((hz_to_mel(500.0) - 7.5).abs() < 1e-12);
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_clip_hits_the_log_floor() {
        let cfg = FeatureConfig::default();
        let clip = AudioClip::new(vec![0.0; 16000], 16000);
        let feats: Tensor<f64> = log_mel(&clip, &cfg).unwrap();
        let expect = 1e-10f64.ln();
        for &v in feats.data() {
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn ten_second_clip_is_256_by_330() {
        let cfg = FeatureConfig::default();
        let clip = AudioClip::new(vec![0.01; 160000], 16000);
        let feats: Tensor<f32> = log_mel(&clip, &cfg).unwrap();
        assert_eq!(feats.shape(), Shape::new(1, 1, 256, 330));
    }

    #[test]
    fn short_clip_rejected() {
        let cfg = FeatureConfig::default();
        let clip = AudioClip::new(vec![0.0; 2000], 16000);
        assert!(log_mel::<f32>(&clip, &cfg).is_err());
    }

    #[test]
    fn wrong_rate_rejected() {
        let cfg = FeatureConfig::default();
        let clip = AudioClip::new(vec![0.0; 100000], 48000);
        assert!(log_mel::<f32>(&clip, &cfg).is_err());
        // but the combined front end handles it
        let feats: Tensor<f32> = features_from_clip(&clip, &cfg).unwrap();
        assert_eq!(feats.shape().f, 256);
    }

    #[test]
    fn pure_tone_peaks_at_nearest_filter_center() {
        let cfg = FeatureConfig::default();
        let clip = sine(16000, 1000.0, 1.0, 0.5);
        let feats: Tensor<f64> = log_mel(&clip, &cfg).unwrap();
        let bank = mel_filterbank(&cfg);
        let nearest = bank
            .centers_hz
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - 1000.0)
                    .abs()
                    .partial_cmp(&(b.1 - 1000.0).abs())
                    .unwrap()
            })
            .unwrap()
            .0;
        // average over frames, then argmax over mel bins
        let s = feats.shape();
        let mut best = (0, f64::MIN);
        for f in 0..s.f {
            let row: f64 = feats.data()[f * s.t..(f + 1) * s.t].iter().sum();
            if row > best.1 {
                best = (f, row);
            }
        }
        assert_eq!(
            best.0, nearest,
            "argmax bin {} (center {:.1} Hz) vs nearest-center bin {} ({:.1} Hz)",
            best.0, bank.centers_hz[best.0], nearest, bank.centers_hz[nearest]
        );
    }

    #[test]
    fn gain_shifts_log_mel_additively() {
        let cfg = FeatureConfig::default();
        let quiet = sine(16000, 440.0, 0.3, 0.1);
        let loud = AudioClip::new(quiet.samples.iter().map(|v| v * 4.0).collect(), 16000);
        let fq: Tensor<f64> = log_mel(&quiet, &cfg).unwrap();
        let fl: Tensor<f64> = log_mel(&loud, &cfg).unwrap();
        let shift = 2.0 * 4.0f64.ln();
        let floor = 1e-10f64.ln();
        for (a, b) in fq.data().iter().zip(fl.data()) {
            if *a > floor + 1e-9 && *b > floor + 1e-9 {
                assert!((b - a - shift).abs() < 1e-9, "{a} -> {b}");
            }
        }
    }

    #[test]
    fn lmel_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.lmel");
        let cfg = FeatureConfig::default();
        let clip = sine(16000, 880.0, 0.2, 0.4);
        let feats: Tensor<f32> = log_mel(&clip, &cfg).unwrap();
        write_lmel(&path, &feats).unwrap();
        let loaded: Tensor<f32> = read_lmel(&path).unwrap();
        assert!(loaded.bit_eq(&feats));
    }

    #[test]
    fn lmel_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.lmel");
        let feats = Tensor::<f32>::filled(Shape::new(1, 1, 4, 5), 1.5);
        write_lmel(&path, &feats).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_lmel::<f32>(&path).is_err());

        write_lmel(&path, &feats).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(read_lmel::<f32>(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        /// Frame arithmetic: reconstructing the window start of the last frame
        /// never overruns the clip.
        #[test]
        fn frame_count_is_tight(len in 2080usize..200000) {
            let cfg = FeatureConfig::default();
            let t = cfg.frames(len).unwrap();
            prop_assert!((t - 1) * cfg.hop + cfg.window <= len);
            prop_assert!(t * cfg.hop + cfg.window > len);
        }
    }
}

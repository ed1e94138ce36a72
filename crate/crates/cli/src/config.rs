//! Flat key=value run configuration with typed, accumulating validation.
//!
//! Values come from an optional config file, overridden by repeated
//! `--set key=value` flags, overridden by `--seed`. Every lookup records
//! the resolved value (default or not) so the manifest can echo the full
//! effective configuration, and every violation is collected rather than
//! failing on the first, so one run reports them all.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use asc_core::compress::{CompressConfig, PruneScope, QuantScheme};
use asc_core::devicesim::{SimConfig, SplitSpec};
use asc_core::dsp::FeatureConfig;
use asc_core::model::{ModelConfig, NormMode};
use asc_core::train::TrainConfig;

use crate::fail::Fail;

pub struct Config {
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
    errors: Vec<String>,
}

impl Config {
    pub fn load(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Config, Fail> {
        let mut values = BTreeMap::new();
        let mut errors = Vec::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Fail::validation(format!("{}: {e}", p.display())))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                match line.split_once('=') {
                    Some((k, v)) if !k.trim().is_empty() => {
                        values.insert(k.trim().to_string(), v.trim().to_string());
                    }
                    _ => errors.push(format!(
                        "{} line {}: `{raw}` is not key=value",
                        p.display(),
                        i + 1
                    )),
                }
            }
        }
        for s in sets {
            match s.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    values.insert(k.trim().to_string(), v.trim().to_string());
                }
                _ => errors.push(format!("--set `{s}` is not key=value")),
            }
        }
        if let Some(seed) = seed {
            values.insert("seed".to_string(), seed.to_string());
        }
        if !errors.is_empty() {
            return Err(Fail::validation(format!(
                "config errors:\n  {}",
                errors.join("\n  ")
            )));
        }
        Ok(Config {
            values,
            used: BTreeSet::new(),
            resolved: BTreeMap::new(),
            errors: Vec::new(),
        })
    }

    pub fn push_error(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    /// Typed lookup; the default applies when the key is absent. Parse
    /// failures are recorded and the default returned so resolution can
    /// continue and report everything at once.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> T {
        self.used.insert(key.to_string());
        match self.values.get(key) {
            None => {
                self.resolved.insert(key.to_string(), default.to_string());
                default
            }
            Some(raw) => match raw.parse::<T>() {
                Ok(v) => {
                    self.resolved.insert(key.to_string(), raw.clone());
                    v
                }
                Err(_) => {
                    self.errors.push(format!(
                        "{key}: `{raw}` is not a valid {}",
                        std::any::type_name::<T>()
                    ));
                    self.resolved.insert(key.to_string(), default.to_string());
                    default
                }
            },
        }
    }

    pub fn get_str(&mut self, key: &str, default: &str) -> String {
        self.used.insert(key.to_string());
        let v = self
            .values
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string());
        self.resolved.insert(key.to_string(), v.clone());
        v
    }

    /// Lookup through a custom parser (enums with their own `parse`).
    pub fn get_with<T>(
        &mut self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> T {
        self.used.insert(key.to_string());
        match self.values.get(key).cloned() {
            None => default,
            Some(raw) => match parse(&raw) {
                Ok(v) => {
                    self.resolved.insert(key.to_string(), raw);
                    v
                }
                Err(e) => {
                    self.errors.push(format!("{key}: {e}"));
                    default
                }
            },
        }
    }

    /// Ends resolution: unknown keys and accumulated violations become one
    /// validation failure listing every problem.
    pub fn finish(mut self) -> Result<BTreeMap<String, String>, Fail> {
        for key in self.values.keys() {
            if !self.used.contains(key) {
                self.errors.push(format!("unknown key `{key}`"));
            }
        }
        if self.errors.is_empty() {
            Ok(self.resolved)
        } else {
            Err(Fail::validation(format!(
                "config errors:\n  {}",
                self.errors.join("\n  ")
            )))
        }
    }
}

pub fn seed(cfg: &mut Config, default: u64) -> u64 {
    cfg.get("seed", default)
}

pub fn feature_config(cfg: &mut Config) -> FeatureConfig {
    let d = FeatureConfig::default();
    let fc = FeatureConfig {
        target_rate: cfg.get("target_rate", d.target_rate),
        window: cfg.get("window", d.window),
        hop: cfg.get("hop", d.hop),
        fft_size: cfg.get("fft_size", d.fft_size),
        mel_bins: cfg.get("mel_bins", d.mel_bins),
        fmin: cfg.get("fmin", d.fmin),
        fmax: cfg.get("fmax", d.fmax),
        log_floor: cfg.get("log_floor", d.log_floor),
    };
    if let Err(e) = fc.validate() {
        cfg.push_error(e.to_string());
    }
    fc
}

/// Model keys. Defaults for bins and classes normally come from the data;
/// callers pass what they derived.
pub fn model_config(cfg: &mut Config, default_bins: usize, default_classes: usize) -> ModelConfig {
    let d = ModelConfig::default();
    ModelConfig {
        base_channels: cfg.get("base_channels", d.base_channels),
        num_classes: cfg.get("num_classes", default_classes),
        input_freq_bins: cfg.get("input_freq_bins", default_bins),
        dropout: cfg.get("dropout", d.dropout),
        ssn_sub_bands: cfg.get("ssn_sub_bands", d.ssn_sub_bands),
        norm_mode: cfg.get_with("norm_mode", d.norm_mode, |s| {
            NormMode::parse(s).map_err(|e| e.to_string())
        }),
        lambda: cfg.get("lambda", d.lambda),
    }
}

pub fn train_config(cfg: &mut Config, seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    let mut t = TrainConfig {
        epochs: cfg.get("epochs", d.epochs),
        warmup_epochs: cfg.get("warmup_epochs", d.warmup_epochs),
        peak_lr: cfg.get("peak_lr", d.peak_lr),
        momentum: cfg.get("momentum", d.momentum),
        weight_decay: cfg.get("weight_decay", d.weight_decay),
        batch_size: cfg.get("batch_size", d.batch_size),
        mixup_alpha: cfg.get("mixup_alpha", d.mixup_alpha),
        specaug: d.specaug,
        roll_range_sec: cfg.get("roll_range_sec", d.roll_range_sec),
        hop_sec: cfg.get("hop_sec", d.hop_sec),
        seed,
    };
    t.specaug.n_freq_masks = cfg.get("specaug_freq_masks", t.specaug.n_freq_masks);
    t.specaug.freq_param = cfg.get("specaug_freq_param", t.specaug.freq_param);
    t.specaug.n_time_masks = cfg.get("specaug_time_masks", t.specaug.n_time_masks);
    t.specaug.time_param = cfg.get("specaug_time_param", t.specaug.time_param);
    if let Err(e) = t.validate() {
        cfg.push_error(e.to_string());
    }
    t
}

pub fn compress_config(cfg: &mut Config, seed: u64) -> CompressConfig {
    let d = CompressConfig::default();
    let train = train_config(cfg, seed);
    let mut finetune = TrainConfig {
        epochs: cfg.get("finetune_epochs", d.finetune.epochs),
        warmup_epochs: cfg.get("finetune_warmup_epochs", d.finetune.warmup_epochs),
        peak_lr: cfg.get("finetune_peak_lr", d.finetune.peak_lr),
        ..train.clone()
    };
    finetune.seed = seed;
    if finetune.epochs > 0 {
        if let Err(e) = finetune.validate() {
            cfg.push_error(format!("finetune: {e}"));
        }
    }
    let out = CompressConfig {
        train,
        finetune,
        prune_ratio: cfg.get("prune_ratio", d.prune_ratio),
        scope: cfg.get_with("prune_scope", d.scope, |s| {
            PruneScope::parse(s).map_err(|e| e.to_string())
        }),
        scheme: cfg.get_with("quant_scheme", d.scheme, |s| {
            QuantScheme::parse(s).map_err(|e| e.to_string())
        }),
        fake_quant: cfg.get("fake_quant", d.fake_quant),
        beta: cfg.get("beta", d.beta),
        temperature: cfg.get("temperature", d.temperature),
    };
    if !(0.0..1.0).contains(&out.prune_ratio) {
        cfg.push_error(format!(
            "prune_ratio: {} outside [0, 1)",
            out.prune_ratio
        ));
    }
    if !(0.0..=1.0).contains(&out.beta) {
        cfg.push_error(format!("beta: {} outside [0, 1]", out.beta));
    }
    if out.temperature <= 0.0 {
        cfg.push_error(format!("temperature: {} must be positive", out.temperature));
    }
    out
}

pub fn sim_config(cfg: &mut Config, seed: u64) -> SimConfig {
    let d = SimConfig::default();
    let sim = SimConfig {
        n_classes: cfg.get("n_classes", d.n_classes),
        clip_secs: cfg.get("clip_secs", d.clip_secs),
        sample_rate: cfg.get("sample_rate", d.sample_rate),
        max_gain_db: cfg.get("max_gain_db", d.max_gain_db),
        max_offset_db: cfg.get("max_offset_db", d.max_offset_db),
        noise_floor_db: cfg.get("noise_floor_db", d.noise_floor_db),
        seed,
    };
    if let Err(e) = sim.validate() {
        cfg.push_error(e.to_string());
    }
    sim
}

/// `seen_devices=a:40,b:10,c:10` and `unseen_devices=s1,s2,s3`.
pub fn split_spec(cfg: &mut Config) -> SplitSpec {
    let d = SplitSpec::desk_default();
    let seen_default = d
        .seen
        .iter()
        .map(|(id, n)| format!("{id}:{n}"))
        .collect::<Vec<_>>()
        .join(",");
    let seen_raw = cfg.get_str("seen_devices", &seen_default);
    let unseen_raw = cfg.get_str("unseen_devices", &d.unseen.join(","));

    let mut seen = Vec::new();
    for part in seen_raw.split(',').filter(|p| !p.trim().is_empty()) {
        match part.split_once(':') {
            Some((id, n)) => match n.trim().parse::<usize>() {
                Ok(n) => seen.push((id.trim().to_string(), n)),
                Err(_) => cfg.push_error(format!(
                    "seen_devices: `{part}` count is not a number"
                )),
            },
            None => cfg.push_error(format!(
                "seen_devices: `{part}` is not device:count"
            )),
        }
    }
    let unseen: Vec<String> = unseen_raw
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect();

    let spec = SplitSpec {
        seen,
        unseen,
        test_per_device_per_class: cfg.get("test_per_device_per_class", d.test_per_device_per_class),
    };
    if let Err(e) = spec.validate() {
        cfg.push_error(e.to_string());
    }
    spec
}

//! Python bindings over the toolkit core: feature extraction, the
//! classifier, training, compression, and the synthetic device-shift
//! benchmark. Features cross the boundary as float32 numpy arrays laid
//! out [mel_bins, frames]; long-running calls release the GIL.

use std::collections::BTreeMap;
use std::path::PathBuf;

use numpy::ndarray::Array2;
use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

use asc_core::checkpoint::{read_model_file, write_model_file, BCRM_MAGIC};
use asc_core::compress::{
    compress_model, distill_compress, init_rng, magnitude_prune, quantize_sym, read_pack_file,
    write_pack_file, CompressConfig, PruneScope, QuantScheme, SizeReport, BCRQ_MAGIC,
};
use asc_core::data::Corpus;
use asc_core::devicesim::{apply_device as core_apply_device, DeviceProfile, SimConfig, SplitSpec};
use asc_core::dsp::{features_from_clip, read_lmel, write_lmel, FeatureConfig};
use asc_core::error::Error;
use asc_core::model::{receptive_field as core_rf, Model as CoreModel, ModelConfig, NormMode};
use asc_core::tensor::{Shape, Tensor};
use asc_core::train::{evaluate as core_evaluate, train as core_train, EvalReport, TrainConfig, TrainOpts};
use asc_core::wav::{read_wav_file, write_wav_file, AudioClip, WavEncoding};

fn err(e: Error) -> PyErr {
    match &e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn tensor_from_2d(x: &PyReadonlyArray2<'_, f32>) -> PyResult<Tensor<f32>> {
    let a = x.as_array();
    let (f, t) = a.dim();
    let data: Vec<f32> = a.iter().copied().collect();
    Tensor::from_vec(Shape::new(1, 1, f, t), data).map_err(err)
}

fn tensor_to_2d<'py>(py: Python<'py>, t: &Tensor<f32>) -> PyResult<Bound<'py, PyArray2<f32>>> {
    let s = t.shape();
    if s.n != 1 || s.c != 1 {
        return Err(PyValueError::new_err(format!(
            "expected a single [mel, frames] feature map, got {s}"
        )));
    }
    Array2::from_shape_vec((s.f, s.t), t.data().to_vec())
        .map(|a| a.into_pyarray_bound(py))
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Pop `key` out of the kwargs dict, so leftovers can be rejected.
fn take<'py, T: FromPyObject<'py>>(kw: &Bound<'py, PyDict>, key: &str) -> PyResult<Option<T>> {
    match kw.get_item(key)? {
        Some(v) => {
            kw.del_item(key)?;
            v.extract()
                .map(Some)
                .map_err(|e| PyValueError::new_err(format!("{key}: {e}")))
        }
        None => Ok(None),
    }
}

fn no_leftovers(kw: &Bound<'_, PyDict>) -> PyResult<()> {
    if kw.is_empty() {
        return Ok(());
    }
    let keys: Vec<String> = kw.keys().iter().map(|k| k.to_string()).collect();
    Err(PyValueError::new_err(format!(
        "unknown options: {}",
        keys.join(", ")
    )))
}

fn train_config(kw: &Bound<'_, PyDict>, seed: u64) -> PyResult<TrainConfig> {
    let d = TrainConfig::default();
    let mut cfg = TrainConfig {
        epochs: take(kw, "epochs")?.unwrap_or(d.epochs),
        warmup_epochs: take(kw, "warmup_epochs")?.unwrap_or(d.warmup_epochs),
        peak_lr: take(kw, "peak_lr")?.unwrap_or(d.peak_lr),
        momentum: take(kw, "momentum")?.unwrap_or(d.momentum),
        weight_decay: take(kw, "weight_decay")?.unwrap_or(d.weight_decay),
        batch_size: take(kw, "batch_size")?.unwrap_or(d.batch_size),
        mixup_alpha: take(kw, "mixup_alpha")?.unwrap_or(d.mixup_alpha),
        specaug: d.specaug,
        roll_range_sec: take(kw, "roll_range_sec")?.unwrap_or(d.roll_range_sec),
        hop_sec: take(kw, "hop_sec")?.unwrap_or(d.hop_sec),
        seed,
    };
    let s = &mut cfg.specaug;
    s.n_freq_masks = take(kw, "specaug_freq_masks")?.unwrap_or(s.n_freq_masks);
    s.freq_param = take(kw, "specaug_freq_param")?.unwrap_or(s.freq_param);
    s.n_time_masks = take(kw, "specaug_time_masks")?.unwrap_or(s.n_time_masks);
    s.time_param = take(kw, "specaug_time_param")?.unwrap_or(s.time_param);
    Ok(cfg)
}

fn eval_dict<'py>(py: Python<'py>, e: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("overall_accuracy", e.overall_accuracy)?;
    d.set_item("log_loss", e.log_loss)?;
    d.set_item("accuracy_variance", e.accuracy_variance)?;
    d.set_item("per_device", e.per_device.clone())?;
    d.set_item("missing_devices", e.missing_devices.clone())?;
    Ok(d)
}

fn size_dict<'py>(py: Python<'py>, r: &SizeReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("payload_bytes", r.payload_bytes)?;
    d.set_item("index_bytes", r.index_bytes)?;
    d.set_item("container_bytes", r.container_bytes)?;
    d.set_item("payload_kib", r.payload_kib())?;
    d.set_item("kib_with_index", r.kib_with_index())?;
    let layers = PyList::empty_bound(py);
    for l in &r.layers {
        let ld = PyDict::new_bound(py);
        ld.set_item("name", &l.name)?;
        ld.set_item("encoding", l.encoding)?;
        ld.set_item("values", l.values)?;
        ld.set_item("payload_bytes", l.payload_bytes)?;
        ld.set_item("index_bytes", l.index_bytes)?;
        layers.append(ld)?;
    }
    d.set_item("layers", layers)?;
    Ok(d)
}

/// Log-mel front end. `transform` accepts raw samples at any rate and
/// resamples to `target_rate` first.
#[pyclass]
#[derive(Clone)]
struct FeatureExtractor {
    cfg: FeatureConfig,
}

#[pymethods]
impl FeatureExtractor {
    #[new]
    #[pyo3(signature = (target_rate=16000, window=2080, hop=480, fft_size=4096,
                        mel_bins=256, fmin=0.0, fmax=8000.0, log_floor=1e-10))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        target_rate: u32,
        window: usize,
        hop: usize,
        fft_size: usize,
        mel_bins: usize,
        fmin: f64,
        fmax: f64,
        log_floor: f64,
    ) -> PyResult<Self> {
        let cfg = FeatureConfig {
            target_rate,
            window,
            hop,
            fft_size,
            mel_bins,
            fmin,
            fmax,
            log_floor,
        };
        cfg.validate().map_err(err)?;
        Ok(FeatureExtractor { cfg })
    }

    fn transform<'py>(
        &self,
        py: Python<'py>,
        samples: PyReadonlyArray1<'py, f32>,
        sample_rate: u32,
    ) -> PyResult<Bound<'py, PyArray2<f32>>> {
        let clip = AudioClip::new(samples.as_array().iter().copied().collect(), sample_rate);
        let cfg = self.cfg.clone();
        let t = py
            .allow_threads(move || features_from_clip::<f32>(&clip, &cfg))
            .map_err(err)?;
        tensor_to_2d(py, &t)
    }

    fn transform_file<'py>(
        &self,
        py: Python<'py>,
        path: PathBuf,
    ) -> PyResult<Bound<'py, PyArray2<f32>>> {
        let cfg = self.cfg.clone();
        let t = py
            .allow_threads(move || {
                let clip = read_wav_file(&path)?;
                features_from_clip::<f32>(&clip, &cfg)
            })
            .map_err(err)?;
        tensor_to_2d(py, &t)
    }

    /// Frames produced for a clip of `samples` samples at `target_rate`,
    /// or None when the clip is shorter than one window.
    fn frames(&self, samples: usize) -> Option<usize> {
        self.cfg.frames(samples)
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new_bound(py);
        d.set_item("target_rate", self.cfg.target_rate)?;
        d.set_item("window", self.cfg.window)?;
        d.set_item("hop", self.cfg.hop)?;
        d.set_item("fft_size", self.cfg.fft_size)?;
        d.set_item("mel_bins", self.cfg.mel_bins)?;
        d.set_item("fmin", self.cfg.fmin)?;
        d.set_item("fmax", self.cfg.fmax)?;
        d.set_item("log_floor", self.cfg.log_floor)?;
        Ok(d)
    }

    #[getter]
    fn mel_bins(&self) -> usize {
        self.cfg.mel_bins
    }

    fn __repr__(&self) -> String {
        format!(
            "FeatureExtractor(mel_bins={}, window={}, hop={}, target_rate={})",
            self.cfg.mel_bins, self.cfg.window, self.cfg.hop, self.cfg.target_rate
        )
    }
}

/// Labeled feature clips grouped by recording device.
#[pyclass]
struct Dataset {
    inner: Corpus<f32>,
}

#[pymethods]
impl Dataset {
    #[new]
    fn new(num_classes: usize) -> Dataset {
        Dataset {
            inner: Corpus::new(num_classes),
        }
    }

    fn add(
        &mut self,
        features: PyReadonlyArray2<'_, f32>,
        label: usize,
        device: &str,
    ) -> PyResult<()> {
        if label >= self.inner.num_classes {
            return Err(PyValueError::new_err(format!(
                "label {label} out of range for {} classes",
                self.inner.num_classes
            )));
        }
        self.inner.push(tensor_from_2d(&features)?, label, device);
        self.inner.validate().map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.features.len()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn devices(&self) -> Vec<String> {
        self.inner.devices.clone()
    }

    fn features<'py>(&self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyArray2<f32>>> {
        let t = self
            .inner
            .features
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("clip {i} of {}", self.__len__())))?;
        tensor_to_2d(py, t)
    }

    fn feature_shape(&self) -> PyResult<(usize, usize)> {
        if self.inner.features.is_empty() {
            return Err(PyValueError::new_err("dataset is empty"));
        }
        let s = self.inner.feature_shape();
        Ok((s.f, s.t))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} clips, {} classes)",
            self.__len__(),
            self.inner.num_classes
        )
    }
}

/// The classifier. Construction draws fresh weights from `seed`; `load`
/// reads both checkpoint (.bcrm) and packed (.bcrq) files.
#[pyclass]
#[derive(Clone)]
struct Model {
    inner: CoreModel<f32>,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (base_channels=80, num_classes=10, input_freq_bins=256,
                        norm_mode="resnorm", dropout=0.1, ssn_sub_bands=4,
                        res_lambda=0.1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        base_channels: usize,
        num_classes: usize,
        input_freq_bins: usize,
        norm_mode: &str,
        dropout: f64,
        ssn_sub_bands: usize,
        res_lambda: f64,
        seed: u64,
    ) -> PyResult<Model> {
        let cfg = ModelConfig {
            base_channels,
            num_classes,
            input_freq_bins,
            dropout,
            ssn_sub_bands,
            norm_mode: NormMode::parse(norm_mode).map_err(err)?,
            lambda: res_lambda,
        };
        let inner = CoreModel::build(cfg, &mut init_rng(seed)).map_err(err)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Model> {
        let mut magic = [0u8; 4];
        {
            use std::io::Read;
            let mut f = std::fs::File::open(&path)
                .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
            f.read_exact(&mut magic)
                .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        }
        let inner = if &magic == BCRM_MAGIC {
            read_model_file(&path).map_err(err)?
        } else if &magic == BCRQ_MAGIC {
            read_pack_file::<f32>(&path).map_err(err)?.0
        } else {
            return Err(PyValueError::new_err(format!(
                "{}: neither a checkpoint nor a packed model",
                path.display()
            )));
        };
        Ok(Model { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_model_file(&path, &self.inner).map_err(err)
    }

    fn logits<'py>(
        &self,
        py: Python<'py>,
        features: PyReadonlyArray2<'py, f32>,
    ) -> PyResult<Bound<'py, PyArray1<f32>>> {
        let x = tensor_from_2d(&features)?;
        let inner = &self.inner;
        let out = py.allow_threads(|| inner.predict(&x)).map_err(err)?;
        Ok(out.data().to_vec().into_pyarray_bound(py))
    }

    /// Softmax class probabilities for one feature map.
    fn predict<'py>(
        &self,
        py: Python<'py>,
        features: PyReadonlyArray2<'py, f32>,
    ) -> PyResult<Bound<'py, PyArray1<f32>>> {
        let logits = self.logits(py, features)?;
        let v: Vec<f32> = logits.to_vec()?;
        let m = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = v.iter().map(|&x| (x - m).exp()).collect();
        let z: f32 = exps.iter().sum();
        Ok(exps
            .into_iter()
            .map(|e| e / z)
            .collect::<Vec<f32>>()
            .into_pyarray_bound(py))
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner
            .named_params()
            .iter()
            .map(|(_, t)| t.numel())
            .sum()
    }

    #[getter]
    fn nonzero_params(&self) -> usize {
        self.inner
            .named_params()
            .iter()
            .map(|(_, t)| t.data().iter().filter(|v| **v != 0.0).count())
            .sum()
    }

    #[getter]
    fn base_channels(&self) -> usize {
        self.inner.cfg.base_channels
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.cfg.num_classes
    }

    #[getter]
    fn input_freq_bins(&self) -> usize {
        self.inner.cfg.input_freq_bins
    }

    #[getter]
    fn norm_mode(&self) -> &'static str {
        self.inner.cfg.norm_mode.name()
    }

    /// Per-parameter table: name, shape, parameter count, nonzero count.
    fn layers<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let out = PyList::empty_bound(py);
        for (name, t) in self.inner.named_params() {
            let d = PyDict::new_bound(py);
            d.set_item("name", name)?;
            d.set_item("shape", format!("{}", t.shape()))?;
            d.set_item("params", t.numel())?;
            d.set_item("nonzero", t.data().iter().filter(|v| **v != 0.0).count())?;
            out.append(d)?;
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(base_channels={}, num_classes={}, input_freq_bins={}, norm_mode={}, params={})",
            self.base_channels(),
            self.num_classes(),
            self.input_freq_bins(),
            self.norm_mode(),
            self.num_params()
        )
    }
}

/// Train a model. Returns (trained_model, history) where history is one
/// dict per epoch; options mirror the CLI's train keys.
#[pyfunction]
#[pyo3(signature = (model, data, eval_set=None, seed=0, **options))]
fn train(
    py: Python<'_>,
    model: PyRef<'_, Model>,
    data: PyRef<'_, Dataset>,
    eval_set: Option<PyRef<'_, Dataset>>,
    seed: u64,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<(Model, Py<PyList>)> {
    let empty = PyDict::new_bound(py);
    let kw = options.unwrap_or(&empty);
    let cfg = train_config(kw, seed)?;
    no_leftovers(kw)?;

    let m = model.inner.clone();
    let corpus = &data.inner;
    let eval_ref = eval_set.as_ref().map(|d| &d.inner);
    let outcome = py
        .allow_threads(|| core_train(m, corpus, eval_ref, &cfg, TrainOpts::default()))
        .map_err(err)?;

    let history = PyList::empty_bound(py);
    for r in &outcome.history {
        let d = PyDict::new_bound(py);
        d.set_item("epoch", r.epoch)?;
        d.set_item("lr", r.lr)?;
        d.set_item("train_loss", r.train_loss)?;
        if let Some(e) = &r.eval {
            d.set_item("eval", eval_dict(py, e)?)?;
        }
        history.append(d)?;
    }
    Ok((
        Model {
            inner: outcome.model,
        },
        history.unbind(),
    ))
}

#[pyfunction]
fn evaluate(
    py: Python<'_>,
    model: PyRef<'_, Model>,
    data: PyRef<'_, Dataset>,
) -> PyResult<Py<PyDict>> {
    let m = &model.inner;
    let c = &data.inner;
    let report = py.allow_threads(|| core_evaluate(m, c)).map_err(err)?;
    Ok(eval_dict(py, &report)?.unbind())
}

/// Zero the smallest-magnitude conv weights in place.
#[pyfunction]
#[pyo3(signature = (model, ratio=0.89, scope="global"))]
fn prune(
    py: Python<'_>,
    mut model: PyRefMut<'_, Model>,
    ratio: f64,
    scope: &str,
) -> PyResult<Py<PyDict>> {
    let scope = PruneScope::parse(scope).map_err(err)?;
    let mask = magnitude_prune(&model.inner, ratio, scope).map_err(err)?;
    mask.apply(&mut model.inner);

    let d = PyDict::new_bound(py);
    d.set_item("ratio", mask.ratio)?;
    d.set_item("scope", mask.scope.name())?;
    d.set_item("total", mask.total())?;
    d.set_item("kept", mask.kept())?;
    d.set_item("sparsity", mask.sparsity())?;
    let layers = PyDict::new_bound(py);
    for (name, m) in mask.masks() {
        let ld = PyDict::new_bound(py);
        ld.set_item("total", m.len())?;
        ld.set_item("kept", m.iter().filter(|&&k| k).count())?;
        layers.set_item(name, ld)?;
    }
    d.set_item("layers", layers)?;
    Ok(d.unbind())
}

/// Quantize-dequantize conv weights. Returns (new_model, {layer: scale}).
#[pyfunction]
#[pyo3(signature = (model, scheme="int8"))]
fn quantize(
    py: Python<'_>,
    model: PyRef<'_, Model>,
    scheme: &str,
) -> PyResult<(Model, Py<PyDict>)> {
    let scheme = QuantScheme::parse(scheme).map_err(err)?;
    let out = compress_model(&model.inner, None, scheme).map_err(err)?;
    let scales = PyDict::new_bound(py);
    for (name, w) in model.inner.conv_weights() {
        let (_, scale) = quantize_sym(w.data());
        scales.set_item(name, scale)?;
    }
    Ok((Model { inner: out }, scales.unbind()))
}

/// Write the deployable container and return its byte accounting.
#[pyfunction]
#[pyo3(signature = (model, path, scheme="int8"))]
fn pack_model(
    py: Python<'_>,
    model: PyRef<'_, Model>,
    path: PathBuf,
    scheme: &str,
) -> PyResult<Py<PyDict>> {
    let scheme = QuantScheme::parse(scheme).map_err(err)?;
    let report = write_pack_file(&path, &model.inner, None, scheme).map_err(err)?;
    Ok(size_dict(py, &report)?.unbind())
}

/// Distillation plus the full compression pipeline. `options` takes the
/// CLI's train keys plus base_channels/norm_mode/dropout/ssn_sub_bands/
/// res_lambda for the student and prune_ratio/prune_scope/quant_scheme/
/// fake_quant/beta/temperature/finetune_* for the compression.
#[pyfunction]
#[pyo3(signature = (teacher, data, eval_set, seed=0, **options))]
fn distill(
    py: Python<'_>,
    teacher: PyRef<'_, Model>,
    data: PyRef<'_, Dataset>,
    eval_set: PyRef<'_, Dataset>,
    seed: u64,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<DistillResult> {
    if data.inner.features.is_empty() {
        return Err(PyValueError::new_err("dataset is empty"));
    }
    let empty = PyDict::new_bound(py);
    let kw = options.unwrap_or(&empty);

    let md = ModelConfig::default();
    let student_cfg = ModelConfig {
        base_channels: take(kw, "base_channels")?.unwrap_or(md.base_channels),
        num_classes: data.inner.num_classes,
        input_freq_bins: data.inner.feature_shape().f,
        dropout: take(kw, "dropout")?.unwrap_or(md.dropout),
        ssn_sub_bands: take(kw, "ssn_sub_bands")?.unwrap_or(md.ssn_sub_bands),
        norm_mode: match take::<String>(kw, "norm_mode")? {
            Some(s) => NormMode::parse(&s).map_err(err)?,
            None => md.norm_mode,
        },
        lambda: take(kw, "res_lambda")?.unwrap_or(md.lambda),
    };

    let dc = CompressConfig::default();
    let train = train_config(kw, seed)?;
    let mut finetune = TrainConfig {
        epochs: take(kw, "finetune_epochs")?.unwrap_or(dc.finetune.epochs),
        warmup_epochs: take(kw, "finetune_warmup_epochs")?.unwrap_or(dc.finetune.warmup_epochs),
        peak_lr: take(kw, "finetune_peak_lr")?.unwrap_or(dc.finetune.peak_lr),
        ..train.clone()
    };
    finetune.seed = seed;
    let cfg = CompressConfig {
        train,
        finetune,
        prune_ratio: take(kw, "prune_ratio")?.unwrap_or(dc.prune_ratio),
        scope: match take::<String>(kw, "prune_scope")? {
            Some(s) => PruneScope::parse(&s).map_err(err)?,
            None => dc.scope,
        },
        scheme: match take::<String>(kw, "quant_scheme")? {
            Some(s) => QuantScheme::parse(&s).map_err(err)?,
            None => dc.scheme,
        },
        fake_quant: take(kw, "fake_quant")?.unwrap_or(dc.fake_quant),
        beta: take(kw, "beta")?.unwrap_or(dc.beta),
        temperature: take(kw, "temperature")?.unwrap_or(dc.temperature),
    };
    no_leftovers(kw)?;

    let t = &teacher.inner;
    let corpus = &data.inner;
    let eval_c = &eval_set.inner;
    let outcome = py
        .allow_threads(|| distill_compress(t, &student_cfg, corpus, eval_c, &cfg))
        .map_err(err)?;

    Ok(DistillResult {
        student: Py::new(py, Model { inner: outcome.student })?,
        finetuned: Py::new(py, Model { inner: outcome.finetuned })?,
        compressed: Py::new(py, Model { inner: outcome.compressed })?,
        dense_eval: outcome.dense_eval,
        compressed_eval: outcome.compressed_eval,
        report: outcome.report,
        sparsity: outcome.mask.sparsity(),
        kept: outcome.mask.kept(),
        total: outcome.mask.total(),
        bytes: outcome.bytes,
    })
}

/// Everything `distill` produced: the three model stages, the bracketing
/// evaluations, and the packed container.
#[pyclass]
struct DistillResult {
    #[pyo3(get)]
    student: Py<Model>,
    #[pyo3(get)]
    finetuned: Py<Model>,
    #[pyo3(get)]
    compressed: Py<Model>,
    dense_eval: EvalReport,
    compressed_eval: EvalReport,
    report: SizeReport,
    sparsity: f64,
    kept: usize,
    total: usize,
    bytes: Vec<u8>,
}

#[pymethods]
impl DistillResult {
    #[getter]
    fn dense_eval(&self, py: Python<'_>) -> PyResult<Py<PyDict>> {
        Ok(eval_dict(py, &self.dense_eval)?.unbind())
    }

    #[getter]
    fn compressed_eval(&self, py: Python<'_>) -> PyResult<Py<PyDict>> {
        Ok(eval_dict(py, &self.compressed_eval)?.unbind())
    }

    #[getter]
    fn report(&self, py: Python<'_>) -> PyResult<Py<PyDict>> {
        let d = size_dict(py, &self.report)?;
        d.set_item("sparsity", self.sparsity)?;
        d.set_item("kept", self.kept)?;
        d.set_item("total", self.total)?;
        Ok(d.unbind())
    }

    #[getter]
    fn packed_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, &self.bytes)
    }

    fn save_packed(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, &self.bytes)
            .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))
    }
}

/// Synthetic device-shift benchmark: train/test datasets plus the device
/// profiles and the class-separability audit behind them.
#[pyclass]
struct Benchmark {
    #[pyo3(get)]
    train: Py<Dataset>,
    #[pyo3(get)]
    test: Py<Dataset>,
    profiles: Vec<DeviceProfile>,
    pairs: Vec<(usize, usize, f64)>,
    threshold_db: f64,
    min_frac: f64,
}

#[pymethods]
impl Benchmark {
    #[getter]
    fn devices(&self) -> Vec<String> {
        self.profiles.iter().map(|p| p.device_id.clone()).collect()
    }

    fn profile(&self, py: Python<'_>, device_id: &str) -> PyResult<Py<PyDict>> {
        let p = self
            .profiles
            .iter()
            .find(|p| p.device_id == device_id)
            .ok_or_else(|| PyValueError::new_err(format!("no device `{device_id}`")))?;
        let d = PyDict::new_bound(py);
        d.set_item("device_id", &p.device_id)?;
        d.set_item("gain_db", p.gain_db.clone())?;
        d.set_item("offset_db", p.offset_db)?;
        d.set_item("noise_floor_db", p.noise_floor_db)?;
        d.set_item("peak_gain_db", p.peak_gain_db())?;
        Ok(d.unbind())
    }

    #[getter]
    fn audit(&self, py: Python<'_>) -> PyResult<Py<PyDict>> {
        let d = PyDict::new_bound(py);
        let worst = self
            .pairs
            .iter()
            .map(|&(_, _, f)| f)
            .fold(f64::INFINITY, f64::min);
        d.set_item("worst_frac", worst)?;
        d.set_item("threshold_db", self.threshold_db)?;
        d.set_item("min_frac", self.min_frac)?;
        d.set_item("pairs", self.pairs.clone())?;
        Ok(d.unbind())
    }
}

/// Build the benchmark: per-class scenes, per-clip synthesis, device
/// coloring, and the seen/unseen split. Defaults reproduce the desk-scale
/// setup; pass smaller values for quick experiments.
#[pyfunction]
#[pyo3(signature = (seen=None, unseen=None, test_per_device_per_class=1, n_classes=10,
                    clip_secs=5.0, sample_rate=16000, max_gain_db=6.0, max_offset_db=3.0,
                    noise_floor_db=-120.0, seed=7, features=None))]
#[allow(clippy::too_many_arguments)]
fn build_benchmark(
    py: Python<'_>,
    seen: Option<Vec<(String, usize)>>,
    unseen: Option<Vec<String>>,
    test_per_device_per_class: usize,
    n_classes: usize,
    clip_secs: f64,
    sample_rate: u32,
    max_gain_db: f64,
    max_offset_db: f64,
    noise_floor_db: f64,
    seed: u64,
    features: Option<PyRef<'_, FeatureExtractor>>,
) -> PyResult<Benchmark> {
    let desk = SplitSpec::desk_default();
    let split = SplitSpec {
        seen: seen.unwrap_or(desk.seen),
        unseen: unseen.unwrap_or(desk.unseen),
        test_per_device_per_class,
    };
    let sim = SimConfig {
        n_classes,
        clip_secs,
        sample_rate,
        max_gain_db,
        max_offset_db,
        noise_floor_db,
        seed,
    };
    let feat = features.map(|f| f.cfg.clone()).unwrap_or_default();

    let b = py
        .allow_threads(|| asc_core::devicesim::build_benchmark::<f32>(&sim, &split, &feat))
        .map_err(err)?;

    Ok(Benchmark {
        train: Py::new(py, Dataset { inner: b.train })?,
        test: Py::new(py, Dataset { inner: b.test })?,
        profiles: b.profiles,
        pairs: b.audit.pairs,
        threshold_db: b.audit.threshold_db,
        min_frac: b.audit.min_frac,
    })
}

/// Shift a feature map the way a device with this response would: per-bin
/// log-domain gain plus offset, clamped from below by the noise floor.
#[pyfunction]
#[pyo3(signature = (features, gain_db, offset_db=0.0, noise_floor_db=f64::NEG_INFINITY))]
fn apply_device<'py>(
    py: Python<'py>,
    features: PyReadonlyArray2<'py, f32>,
    gain_db: Vec<f64>,
    offset_db: f64,
    noise_floor_db: f64,
) -> PyResult<Bound<'py, PyArray2<f32>>> {
    let t = tensor_from_2d(&features)?;
    let profile = DeviceProfile {
        device_id: "custom".to_string(),
        gain_db,
        offset_db,
        noise_floor_db,
    };
    let out = core_apply_device(&t, &profile).map_err(err)?;
    tensor_to_2d(py, &out)
}

#[pyfunction]
fn receptive_field(py: Python<'_>) -> PyResult<Py<PyDict>> {
    let rf = core_rf();
    let d = PyDict::new_bound(py);
    d.set_item("rf_freq", rf.rf_freq)?;
    d.set_item("rf_time", rf.rf_time)?;
    d.set_item("rf_conv_only_freq", rf.rf_conv_only_freq)?;
    d.set_item("rf_conv_only_time", rf.rf_conv_only_time)?;
    d.set_item("jump_freq", rf.jump_freq)?;
    d.set_item("jump_time", rf.jump_time)?;
    Ok(d.unbind())
}

#[pyfunction]
fn load_features<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyArray2<f32>>> {
    let t = read_lmel::<f32>(&path).map_err(err)?;
    tensor_to_2d(py, &t)
}

#[pyfunction]
fn save_features(path: PathBuf, features: PyReadonlyArray2<'_, f32>) -> PyResult<()> {
    write_lmel(&path, &tensor_from_2d(&features)?).map_err(err)
}

#[pyfunction]
fn read_wav<'py>(py: Python<'py>, path: PathBuf) -> PyResult<(Bound<'py, PyArray1<f32>>, u32)> {
    let clip = read_wav_file(&path).map_err(err)?;
    Ok((clip.samples.into_pyarray_bound(py), clip.sample_rate))
}

#[pyfunction]
#[pyo3(signature = (path, samples, sample_rate, float32=false))]
fn write_wav(
    path: PathBuf,
    samples: PyReadonlyArray1<'_, f32>,
    sample_rate: u32,
    float32: bool,
) -> PyResult<()> {
    let clip = AudioClip::new(samples.as_array().iter().copied().collect(), sample_rate);
    let enc = if float32 {
        WavEncoding::Float32
    } else {
        WavEncoding::Pcm16
    };
    write_wav_file(&path, &clip, enc).map_err(err)
}

#[pymodule]
fn asc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FeatureExtractor>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<DistillResult>()?;
    m.add_class::<Benchmark>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(prune, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(pack_model, m)?)?;
    m.add_function(wrap_pyfunction!(distill, m)?)?;
    m.add_function(wrap_pyfunction!(build_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(apply_device, m)?)?;
    m.add_function(wrap_pyfunction!(receptive_field, m)?)?;
    m.add_function(wrap_pyfunction!(load_features, m)?)?;
    m.add_function(wrap_pyfunction!(save_features, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    Ok(())
}

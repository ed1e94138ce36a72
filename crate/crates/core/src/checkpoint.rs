//! Dense model checkpoints.
//!
//! Layout: magic `BCRM`, format version, element dtype, the model config,
//! then a count-prefixed list of named tensors (name, shape, payload).
//! Payloads cover every trainable parameter, every running statistic, and
//! the global frequency statistics when fitted. The loader demands an exact
//! bijection between file tensors and model slots.

use crate::binio::{
    expect_eof, expect_magic, read_f32, read_f64, read_str, read_u16, read_u32, write_f32,
    write_f64, write_str, write_u16, write_u32,
};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, NormMode};
use crate::norm::GlobalFreqStats;
use crate::scalar::Scalar;
use crate::tensor::Shape;
use rand::SeedableRng;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const BCRM_MAGIC: &[u8; 4] = b"BCRM";
pub const BCRM_VERSION: u16 = 1;

pub const DTYPE_F32: u16 = 1;
pub const DTYPE_F64: u16 = 2;

fn dtype_of<S: Scalar>() -> u16 {
    if std::mem::size_of::<S>() == 4 {
        DTYPE_F32
    } else {
        DTYPE_F64
    }
}

pub(crate) fn write_values<S: Scalar, W: Write>(w: &mut W, dtype: u16, vs: &[S]) -> Result<()> {
    match dtype {
        DTYPE_F32 => {
            for v in vs {
                write_f32(w, Scalar::to_f64(*v) as f32)?;
            }
        }
        DTYPE_F64 => {
            for v in vs {
                write_f64(w, Scalar::to_f64(*v))?;
            }
        }
        other => return Err(Error::InvalidArg(format!("unknown dtype tag {other}"))),
    }
    Ok(())
}

pub(crate) fn read_values<S: Scalar, R: Read>(
    r: &mut R,
    dtype: u16,
    n: usize,
) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(n);
    match dtype {
        DTYPE_F32 => {
            for _ in 0..n {
                out.push(S::from_f64(read_f32(r)? as f64));
            }
        }
        DTYPE_F64 => {
            for _ in 0..n {
                out.push(S::from_f64(read_f64(r)?));
            }
        }
        other => {
            return Err(Error::FileFormat(format!("unknown dtype tag {other}")));
        }
    }
    Ok(out)
}

pub(crate) fn write_config<W: Write>(w: &mut W, cfg: &ModelConfig) -> Result<()> {
    write_u32(w, cfg.base_channels as u32)?;
    write_u32(w, cfg.num_classes as u32)?;
    write_u32(w, cfg.input_freq_bins as u32)?;
    write_f64(w, cfg.dropout)?;
    write_u32(w, cfg.ssn_sub_bands as u32)?;
    w.write_all(&[cfg.norm_mode.tag()])?;
    write_f64(w, cfg.lambda)?;
    Ok(())
}

pub(crate) fn read_config<R: Read>(r: &mut R) -> Result<ModelConfig> {
    let base_channels = read_u32(r)? as usize;
    let num_classes = read_u32(r)? as usize;
    let input_freq_bins = read_u32(r)? as usize;
    let dropout = read_f64(r)?;
    let ssn_sub_bands = read_u32(r)? as usize;
    let mut tag = [0u8; 1];
    crate::binio::read_exact(r, &mut tag)?;
    let norm_mode = NormMode::from_tag(tag[0])?;
    let lambda = read_f64(r)?;
    let cfg = ModelConfig {
        base_channels,
        num_classes,
        input_freq_bins,
        dropout,
        ssn_sub_bands,
        norm_mode,
        lambda,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) fn write_shape<W: Write>(w: &mut W, s: Shape) -> Result<()> {
    write_u32(w, s.n as u32)?;
    write_u32(w, s.c as u32)?;
    write_u32(w, s.f as u32)?;
    write_u32(w, s.t as u32)?;
    Ok(())
}

pub(crate) fn read_shape<R: Read>(r: &mut R) -> Result<Shape> {
    let n = read_u32(r)? as usize;
    let c = read_u32(r)? as usize;
    let f = read_u32(r)? as usize;
    let t = read_u32(r)? as usize;
    Ok(Shape::new(n, c, f, t))
}

fn take_tensor<S: Scalar>(
    tensors: &mut BTreeMap<String, (Shape, Vec<S>)>,
    name: &str,
    want: Shape,
) -> Result<Vec<S>> {
    let (shape, data) = tensors
        .remove(name)
        .ok_or_else(|| Error::FileFormat(format!("checkpoint is missing tensor `{name}`")))?;
    if shape != want {
        return Err(Error::FileFormat(format!(
            "tensor `{name}` has shape {shape}, model expects {want}"
        )));
    }
    Ok(data)
}

/// Every tensor the checkpoint carries: trainable parameters, running
/// statistics as `<layer>.running_mean` / `<layer>.running_var`, and the
/// global frequency statistics as `global.mean` / `global.std` when present.
fn collect_tensors<S: Scalar>(model: &Model<S>) -> Vec<(String, Shape, Vec<S>)> {
    let mut out: Vec<(String, Shape, Vec<S>)> = Vec::new();
    for (name, t) in model.named_params() {
        out.push((name, t.shape(), t.data().to_vec()));
    }
    for n in model.norm_layers() {
        let c = n.gamma.shape().c;
        let shape = Shape::new(1, c, n.bands, 1);
        out.push((
            format!("{}.running_mean", n.name),
            shape,
            n.running.mean.clone(),
        ));
        out.push((
            format!("{}.running_var", n.name),
            shape,
            n.running.var.clone(),
        ));
    }
    if let Some(gs) = &model.global_stats {
        let shape = Shape::new(1, 1, gs.mean.len(), 1);
        out.push(("global.mean".to_string(), shape, gs.mean.clone()));
        out.push(("global.std".to_string(), shape, gs.std.clone()));
    }
    out
}

pub fn save_model<S: Scalar, W: Write>(w: &mut W, model: &Model<S>) -> Result<()> {
    let dtype = dtype_of::<S>();
    w.write_all(BCRM_MAGIC)?;
    write_u16(w, BCRM_VERSION)?;
    write_u16(w, dtype)?;
    write_config(w, &model.cfg)?;
    let tensors = collect_tensors(model);
    write_u32(w, tensors.len() as u32)?;
    for (name, shape, data) in &tensors {
        write_str(w, name)?;
        write_shape(w, *shape)?;
        write_values(w, dtype, data)?;
    }
    Ok(())
}

pub fn load_model<S: Scalar, R: Read>(r: &mut R) -> Result<Model<S>> {
    expect_magic(r, BCRM_MAGIC)?;
    let version = read_u16(r)?;
    if version != BCRM_VERSION {
        return Err(Error::FileFormat(format!(
            "unsupported checkpoint version {version}, expected {BCRM_VERSION}"
        )));
    }
    let dtype = read_u16(r)?;
    let cfg = read_config(r)?;
    let count = read_u32(r)? as usize;
    let mut tensors: BTreeMap<String, (Shape, Vec<S>)> = BTreeMap::new();
    for _ in 0..count {
        let name = read_str(r)?;
        let shape = read_shape(r)?;
        let data = read_values(r, dtype, shape.numel())?;
        if tensors.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::FileFormat(format!("duplicate tensor `{name}`")));
        }
    }
    expect_eof(r)?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model: Model<S> = Model::build(cfg, &mut rng)?;
    for (name, t) in model.named_params_mut() {
        let data = take_tensor(&mut tensors, &name, t.shape())?;
        t.data_mut().copy_from_slice(&data);
    }
    for n in model.norm_layers_mut() {
        let c = n.gamma.shape().c;
        let shape = Shape::new(1, c, n.bands, 1);
        n.running.mean = take_tensor(&mut tensors, &format!("{}.running_mean", n.name), shape)?;
        n.running.var = take_tensor(&mut tensors, &format!("{}.running_var", n.name), shape)?;
    }
    if tensors.contains_key("global.mean") || tensors.contains_key("global.std") {
        let shape = Shape::new(1, 1, cfg.input_freq_bins, 1);
        let mean = take_tensor(&mut tensors, "global.mean", shape)?;
        let std = take_tensor(&mut tensors, "global.std", shape)?;
        model.global_stats = Some(GlobalFreqStats { mean, std });
    }
    if !tensors.is_empty() {
        let names: Vec<&str> = tensors.keys().map(|s| s.as_str()).collect();
        return Err(Error::FileFormat(format!(
            "checkpoint has unexpected tensors: {}",
            names.join(", ")
        )));
    }
    Ok(model)
}

pub fn write_model_file<S: Scalar>(path: &Path, model: &Model<S>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?);
    save_model(&mut f, model)?;
    use std::io::Write as _;
    f.flush()?;
    Ok(())
}

pub fn read_model_file<S: Scalar>(path: &Path) -> Result<Model<S>> {
    let f = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut r = std::io::BufReader::new(f);
    load_model(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{count_params, Mode};
    use crate::tape::Tape;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            base_channels: 4,
            num_classes: 3,
            input_freq_bins: 32,
            dropout: 0.1,
            ssn_sub_bands: 4,
            norm_mode: NormMode::ResNorm,
            lambda: 0.1,
        }
    }

    /// A model with non-default running stats so the roundtrip covers them.
    fn seasoned_model(seed: u64) -> Model<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model: Model<f32> = Model::build(tiny_cfg(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut x = Tensor::zeros(Shape::new(2, 1, 32, 16));
        x.fill_uniform(&mut rng, 1.5);
        let xid = tape.constant(x);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let pass = model
            .forward_on_tape(&mut tape, xid, Mode::Train, Some(&mut drop_rng), None)
            .unwrap();
        model.commit_stats(&pass.stat_updates, 0.1);
        model
    }

    #[test]
    fn round_trip_is_bitwise() {
        let model = seasoned_model(7);
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();
        let loaded: Model<f32> = load_model(&mut buf.as_slice()).unwrap();

        assert_eq!(loaded.cfg, model.cfg);
        let a = model.named_params();
        let b = loaded.named_params();
        assert_eq!(a.len(), b.len());
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert!(ta.bit_eq(tb), "param {na} changed");
        }
        for (x, y) in model.norm_layers().iter().zip(loaded.norm_layers()) {
            assert_eq!(x.running.mean, y.running.mean, "{}", x.name);
            assert_eq!(x.running.var, y.running.var, "{}", x.name);
        }
        // identical predictions
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Tensor::zeros(Shape::new(2, 1, 32, 16));
        x.fill_uniform(&mut rng, 1.0);
        assert!(model.predict(&x).unwrap().bit_eq(&loaded.predict(&x).unwrap()));
    }

    #[test]
    fn global_stats_round_trip() {
        let mut model = seasoned_model(9);
        model.cfg.norm_mode = NormMode::GlobalFreqNorm;
        model.global_stats = Some(GlobalFreqStats {
            mean: (0..32).map(|i| i as f32 * 0.5).collect(),
            std: (0..32).map(|i| 1.0 + i as f32 * 0.01).collect(),
        });
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();
        let loaded: Model<f32> = load_model(&mut buf.as_slice()).unwrap();
        let gs = loaded.global_stats.as_ref().unwrap();
        assert_eq!(gs.mean, model.global_stats.as_ref().unwrap().mean);
        assert_eq!(gs.std, model.global_stats.as_ref().unwrap().std);
    }

    #[test]
    fn cross_dtype_load_casts() {
        let model = seasoned_model(11);
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();
        let loaded: Model<f64> = load_model(&mut buf.as_slice()).unwrap();
        let (_, t32) = count_params(&model);
        let (_, t64) = count_params(&loaded);
        assert_eq!(t32, t64);
        let ref32 = model.named_params();
        for (name, t) in loaded.named_params() {
            let (_, orig) = ref32.iter().find(|(n, _)| *n == name).unwrap();
            for (a, b) in t.data().iter().zip(orig.data()) {
                assert_eq!(*a, *b as f64, "{name}");
            }
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let model = seasoned_model(13);
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();

        // bad magic
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(load_model::<f32, _>(&mut bad.as_slice()).is_err());

        // bad version
        let mut bad = buf.clone();
        bad[4] = 0xFF;
        assert!(load_model::<f32, _>(&mut bad.as_slice()).is_err());

        // truncation
        let cut = &buf[..buf.len() - 5];
        let err = load_model::<f32, _>(&mut &cut[..]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        // trailing garbage
        let mut bad = buf.clone();
        bad.push(0);
        let err = load_model::<f32, _>(&mut bad.as_slice()).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn missing_tensor_is_named() {
        // drop the last tensor by rewriting the count and cutting payload
        let model = seasoned_model(17);
        let tensors = super::collect_tensors(&model);
        let mut buf = Vec::new();
        buf.extend_from_slice(BCRM_MAGIC);
        write_u16(&mut buf, BCRM_VERSION).unwrap();
        write_u16(&mut buf, DTYPE_F32).unwrap();
        write_config(&mut buf, &model.cfg).unwrap();
        write_u32(&mut buf, (tensors.len() - 1) as u32).unwrap();
        for (name, shape, data) in tensors.iter().take(tensors.len() - 1) {
            write_str(&mut buf, name).unwrap();
            super::write_shape(&mut buf, *shape).unwrap();
            write_values(&mut buf, DTYPE_F32, data).unwrap();
        }
        let err = load_model::<f32, _>(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("missing tensor"), "{err}");
    }

    #[test]
    fn file_helpers_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bcrm");
        let model = seasoned_model(19);
        write_model_file(&path, &model).unwrap();
        let loaded: Model<f32> = read_model_file(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut x = Tensor::zeros(Shape::new(1, 1, 32, 16));
        x.fill_uniform(&mut rng, 1.0);
        assert!(model.predict(&x).unwrap().bit_eq(&loaded.predict(&x).unwrap()));
    }
}

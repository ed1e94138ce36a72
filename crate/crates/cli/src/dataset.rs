//! Corpus assembly from metadata tables plus cached feature files, and
//! model loading that accepts both container formats.

use std::path::{Path, PathBuf};

use asc_core::compress::{read_pack_file, QuantScheme};
use asc_core::data::{read_metadata_csv, scene_classes, Corpus};
use asc_core::dsp::read_lmel;
use asc_core::model::Model;

use crate::fail::Fail;

/// Loads `<data>/<csv>` and the feature files it names (relative to
/// `data`). Labels are indices into the sorted distinct scene labels.
pub fn load_corpus(data: &Path, csv: &str) -> Result<(Corpus<f32>, Vec<String>), Fail> {
    let rows = read_metadata_csv(&data.join(csv))?;
    let classes = scene_classes(&rows);
    let mut corpus = Corpus::new(classes.len());
    for r in &rows {
        if !r.filename.ends_with(".lmel") {
            return Err(Fail::validation(format!(
                "{}: `{}` is not a feature file; run `asc features` on the audio first",
                csv, r.filename
            )));
        }
        let feature = read_lmel::<f32>(&data.join(&r.filename))?;
        let label = classes
            .binary_search(&r.scene_label)
            .expect("label drawn from this table");
        corpus.push(feature, label, &r.device_id);
    }
    corpus.validate()?;
    Ok((corpus, classes))
}

/// How a model arrived on disk.
pub enum LoadedModel {
    Checkpoint(Model<f32>),
    Packed(Model<f32>, QuantScheme),
}

impl LoadedModel {
    pub fn model(&self) -> &Model<f32> {
        match self {
            LoadedModel::Checkpoint(m) => m,
            LoadedModel::Packed(m, _) => m,
        }
    }

    pub fn format(&self) -> &'static str {
        match self {
            LoadedModel::Checkpoint(_) => "checkpoint",
            LoadedModel::Packed(..) => "packed",
        }
    }
}

/// Reads a model file, dispatching on the magic: BCRM checkpoints and BCRQ
/// packed containers both load.
pub fn load_model(path: &Path) -> Result<LoadedModel, Fail> {
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        let mut f = std::fs::File::open(path)
            .map_err(|e| Fail::validation(format!("{}: {e}", path.display())))?;
        f.read_exact(&mut magic)
            .map_err(|e| Fail::validation(format!("{}: {e}", path.display())))?;
    }
    match &magic {
        b"BCRM" => Ok(LoadedModel::Checkpoint(
            asc_core::checkpoint::read_model_file(path)?,
        )),
        b"BCRQ" => {
            let (model, scheme) = read_pack_file(path)?;
            Ok(LoadedModel::Packed(model, scheme))
        }
        other => Err(Fail::validation(format!(
            "{}: magic {:?} is neither a checkpoint nor a packed model",
            path.display(),
            String::from_utf8_lossy(other)
        ))),
    }
}

/// Requires a plain checkpoint; packing and compression start from raw
/// trained weights, not an already-quantized artifact.
pub fn load_checkpoint(path: &Path) -> Result<Model<f32>, Fail> {
    match load_model(path)? {
        LoadedModel::Checkpoint(m) => Ok(m),
        LoadedModel::Packed(..) => Err(Fail::validation(format!(
            "{}: is a packed model; this command needs a raw checkpoint",
            path.display()
        ))),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), Fail> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Fail::internal(format!("{}: {e}", dir.display())))
}

/// Resolves the data directory: the flag, else `ASC_DATA_ROOT`.
pub fn data_dir(flag: Option<PathBuf>) -> Result<PathBuf, Fail> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var_os("ASC_DATA_ROOT") {
        Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => Err(Fail::validation(
            "no data directory: pass --data or set ASC_DATA_ROOT",
        )),
    }
}

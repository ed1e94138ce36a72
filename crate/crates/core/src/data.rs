//! Labeled feature collections used by training and evaluation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

use std::path::Path;

/// A set of single-clip feature tensors with labels and recording devices.
/// Every feature is (1, 1, F, T) with identical F and T.
#[derive(Debug, Clone)]
pub struct Corpus<S: Scalar> {
    pub features: Vec<Tensor<S>>,
    pub labels: Vec<usize>,
    pub devices: Vec<String>,
    pub num_classes: usize,
}

impl<S: Scalar> Corpus<S> {
    pub fn new(num_classes: usize) -> Self {
        Corpus {
            features: Vec::new(),
            labels: Vec::new(),
            devices: Vec::new(),
            num_classes,
        }
    }

    pub fn push(&mut self, feature: Tensor<S>, label: usize, device: &str) {
        self.features.push(feature);
        self.labels.push(label);
        self.devices.push(device.to_string());
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() || self.labels.len() != self.devices.len() {
            return Err(Error::Data(format!(
                "corpus columns disagree: {} features, {} labels, {} devices",
                self.features.len(),
                self.labels.len(),
                self.devices.len()
            )));
        }
        if self.is_empty() {
            return Err(Error::Data("corpus is empty".into()));
        }
        let first = self.features[0].shape();
        for (i, feat) in self.features.iter().enumerate() {
            let s = feat.shape();
            if s.n != 1 || s.c != 1 {
                return Err(Error::Data(format!(
                    "corpus item {i} is {s}, expected a single (1, 1, F, T) clip"
                )));
            }
            if s != first {
                return Err(Error::Data(format!(
                    "corpus item {i} is {s}, item 0 is {first}"
                )));
            }
        }
        for (i, &label) in self.labels.iter().enumerate() {
            if label >= self.num_classes {
                return Err(Error::Data(format!(
                    "corpus item {i} has label {label}, but there are only {} classes",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn feature_shape(&self) -> Shape {
        self.features[0].shape()
    }

    /// Stack the selected clips into a batch (B, 1, F, T) and one-hot labels
    /// (B, num_classes, 1, 1).
    pub fn batch(&self, idxs: &[usize]) -> Result<(Tensor<S>, Tensor<S>)> {
        if idxs.is_empty() {
            return Err(Error::InvalidArg("batch: empty index list".into()));
        }
        let fs = self.feature_shape();
        let mut x = Tensor::zeros(Shape::new(idxs.len(), 1, fs.f, fs.t));
        let mut y = Tensor::zeros(Shape::new(idxs.len(), self.num_classes, 1, 1));
        let per = fs.f * fs.t;
        for (bi, &i) in idxs.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::InvalidArg(format!(
                    "batch: index {i} out of range for corpus of {}",
                    self.len()
                )));
            }
            x.data_mut()[bi * per..(bi + 1) * per].copy_from_slice(self.features[i].data());
            y.set(bi, self.labels[i], 0, 0, S::one());
        }
        Ok((x, y))
    }

    /// Distinct device names, sorted.
    pub fn device_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.devices.clone();
        names.sort();
        names.dedup();
        names
    }
}

/// One row of a dataset metadata table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaRow {
    /// Clip path, relative to the metadata file's directory.
    pub filename: String,
    pub scene_label: String,
    pub device_id: String,
}

const META_HEADER: [&str; 3] = ["filename", "scene_label", "device_id"];

/// Parses `filename,scene_label,device_id` metadata. Fields may be comma or
/// tab separated (a header row is required either way), so both this
/// toolkit's own tables and tab-separated ones in the same column layout
/// load through one path.
pub fn read_metadata_csv(path: &Path) -> Result<Vec<MetaRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty metadata file", path.display())))?;
    let sep = if header.contains('\t') { '\t' } else { ',' };
    let cols: Vec<&str> = header.split(sep).map(str::trim).collect();
    if cols.len() < 3 || cols[..3] != META_HEADER {
        return Err(Error::Data(format!(
            "{}: header `{header}`, expected `filename,scene_label,device_id`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
        if fields.len() < 3 || fields[..3].iter().any(|f| f.is_empty()) {
            return Err(Error::Data(format!(
                "{} line {}: `{line}` does not have 3 fields",
                path.display(),
                i + 1
            )));
        }
        rows.push(MetaRow {
            filename: fields[0].to_string(),
            scene_label: fields[1].to_string(),
            device_id: fields[2].to_string(),
        });
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "{}: no clips listed",
            path.display()
        )));
    }
    Ok(rows)
}

/// Writes comma-separated metadata with the standard header. Fields must
/// not contain the separator; paths with commas would not round-trip.
pub fn write_metadata_csv(path: &Path, rows: &[MetaRow]) -> Result<()> {
    let mut out = String::from("filename,scene_label,device_id\n");
    for r in rows {
        for field in [&r.filename, &r.scene_label, &r.device_id] {
            if field.contains(',') || field.contains('\t') || field.contains('\n') {
                return Err(Error::InvalidArg(format!(
                    "metadata field `{field}` contains a separator"
                )));
            }
        }
        out.push_str(&format!("{},{},{}\n", r.filename, r.scene_label, r.device_id));
    }
    std::fs::write(path, out).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Class mapping for a metadata table: sorted distinct scene labels, so
/// label ids are stable across runs and independent of row order.
pub fn scene_classes(rows: &[MetaRow]) -> Vec<String> {
    let mut labels: Vec<String> = rows.iter().map(|r| r.scene_label.clone()).collect();
    labels.sort();
    labels.dedup();
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(v: f32) -> Tensor<f32> {
        Tensor::filled(Shape::new(1, 1, 4, 3), v)
    }

    #[test]
    fn batch_stacks_features_and_one_hot_labels() {
        let mut c = Corpus::new(3);
        c.push(clip(1.0), 0, "a");
        c.push(clip(2.0), 2, "b");
        c.push(clip(3.0), 1, "a");
        c.validate().unwrap();
        let (x, y) = c.batch(&[2, 0]).unwrap();
        assert_eq!(x.shape(), Shape::new(2, 1, 4, 3));
        assert_eq!(x.at(0, 0, 0, 0), 3.0);
        assert_eq!(x.at(1, 0, 2, 1), 1.0);
        assert_eq!(y.at(0, 1, 0, 0), 1.0);
        assert_eq!(y.at(0, 0, 0, 0), 0.0);
        assert_eq!(y.at(1, 0, 0, 0), 1.0);
        assert_eq!(c.device_names(), vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn validation_catches_bad_rows() {
        let mut c = Corpus::new(2);
        c.push(clip(0.0), 5, "a");
        assert!(c.validate().unwrap_err().to_string().contains("label"));

        let mut c = Corpus::new(2);
        c.push(clip(0.0), 1, "a");
        c.push(Tensor::filled(Shape::new(1, 1, 5, 3), 0.0), 1, "a");
        assert!(c.validate().is_err());

        let c: Corpus<f32> = Corpus::new(2);
        assert!(c.validate().is_err());
        assert!(c.batch(&[]).is_err());
    }

    fn row(f: &str, s: &str, d: &str) -> MetaRow {
        MetaRow {
            filename: f.to_string(),
            scene_label: s.to_string(),
            device_id: d.to_string(),
        }
    }

    #[test]
    fn metadata_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.csv");
        let rows = vec![row("x/one.wav", "park", "a"), row("two.wav", "metro", "s1")];
        write_metadata_csv(&path, &rows).unwrap();
        assert_eq!(read_metadata_csv(&path).unwrap(), rows);
        assert_eq!(scene_classes(&rows), ["metro", "park"]);
    }

    #[test]
    fn metadata_accepts_tabs_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.csv");

        std::fs::write(&path, "filename\tscene_label\tdevice_id\na.wav\tpark\tb\n").unwrap();
        assert_eq!(read_metadata_csv(&path).unwrap(), vec![row("a.wav", "park", "b")]);

        std::fs::write(&path, "filename,scene_label,device_id\n").unwrap();
        let err = read_metadata_csv(&path).unwrap_err().to_string();
        assert!(err.contains("no clips"), "{err}");

        std::fs::write(&path, "file,label\na.wav,park\n").unwrap();
        let err = read_metadata_csv(&path).unwrap_err().to_string();
        assert!(err.contains("header"), "{err}");

        std::fs::write(&path, "filename,scene_label,device_id\na.wav,park\n").unwrap();
        let err = read_metadata_csv(&path).unwrap_err().to_string();
        assert!(err.contains("3 fields"), "{err}");

        assert!(write_metadata_csv(&path, &[row("a,b.wav", "park", "a")]).is_err());
    }
}

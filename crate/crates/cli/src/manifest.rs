//! Run manifests: the reproducibility record every command writes next to
//! its outputs, carrying the fully resolved configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::fail::Fail;

pub struct Manifest {
    pub command: &'static str,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &'static str, config: BTreeMap<String, String>) -> Manifest {
        Manifest {
            command,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: impl AsRef<Path>) {
        self.inputs
            .insert(name.to_string(), path.as_ref().display().to_string());
    }

    pub fn output(&mut self, name: &str, path: impl AsRef<Path>) {
        self.outputs
            .insert(name.to_string(), path.as_ref().display().to_string());
    }

    /// Writes `<command>.manifest.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, Fail> {
        let doc = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let path = dir.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Fail::internal(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| Fail::internal(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Appends one JSON object per line; creates the file on first call.
pub struct JsonlWriter {
    path: PathBuf,
    lines: Vec<String>,
}

impl JsonlWriter {
    pub fn new(path: PathBuf) -> JsonlWriter {
        JsonlWriter {
            path,
            lines: Vec::new(),
        }
    }

    pub fn push(&mut self, value: serde_json::Value) {
        self.lines.push(value.to_string());
    }

    pub fn write(&self) -> Result<(), Fail> {
        let mut text = self.lines.join("\n");
        text.push('\n');
        std::fs::write(&self.path, text)
            .map_err(|e| Fail::internal(format!("{}: {e}", self.path.display())))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

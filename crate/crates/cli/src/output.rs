//! Result files, manifests and timing records.
//!
//! Every run directory holds `manifest.json` (the resolved configuration, the
//! tool version, seeds and the list of result files), `config.toml` (the same
//! configuration in the input format) and `timing.json`. Only `timing.json`
//! varies between identical runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{to_toml, ExperimentConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(path.to_path_buf(), e.to_string()))
    }
}

pub struct OutputDir {
    pub path: PathBuf,
    files: Vec<String>,
    timing: BTreeMap<String, f64>,
}

impl OutputDir {
    pub fn create(path: impl Into<PathBuf>) -> CliResult<Self> {
        let path = path.into();
        fs::create_dir_all(&path).map_err(|e| CliError::Io(path.clone(), e))?;
        Ok(Self { path, files: Vec::new(), timing: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.path.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::Io(p, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Data(self.path.join(name), e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Data(self.path.join(name), e.to_string()))?;
        self.write(name, &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(self.path.join(name), e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        self.write(name, text.as_bytes())
    }

    pub fn record_time(&mut self, label: impl Into<String>, seconds: f64) {
        *self.timing.entry(label.into()).or_insert(0.0) += seconds;
    }

    /// Writes `config.toml`, `timing.json` and the manifest.
    pub fn finish(mut self, cfg: &ExperimentConfig) -> CliResult<Manifest> {
        self.write("config.toml", to_toml(cfg)?.as_bytes())?;
        let timing = std::mem::take(&mut self.timing);
        let p = self.path.join(TIMING);
        let text = serde_json::to_string_pretty(&timing).map_err(|e| CliError::Data(p.clone(), e.to_string()))?;
        fs::write(&p, text + "\n").map_err(|e| CliError::Io(p, e))?;
        let manifest = Manifest {
            tool: "degp".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            experiment: cfg.experiment.name().into(),
            seeds: cfg.seeds.clone(),
            files: self.files.clone(),
            config: cfg.clone(),
        };
        self.write_json(MANIFEST, &manifest)?;
        Ok(manifest)
    }
}

/// Names of files whose bytes differ between two run directories, over the
/// files listed in `manifest` plus the manifest itself.
pub fn compare_runs(manifest: &Manifest, a: &Path, b: &Path) -> CliResult<Vec<String>> {
    let mut differ = Vec::new();
    for name in manifest.files.iter().map(String::as_str).chain([MANIFEST]) {
        let read = |dir: &Path| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| CliError::Io(p, e))
        };
        if read(a)? != read(b)? {
            differ.push(name.to_string());
        }
    }
    Ok(differ)
}

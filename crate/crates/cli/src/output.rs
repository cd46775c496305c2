//! Output files, run summary and manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use slowfast::export::Table;
use slowfast::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Writes `<dir>/<id>-<seed>-<name>` files and remembers their checksums.
pub struct Outputs {
    dir: PathBuf,
    prefix: String,
    files: Vec<OutputFile>,
}

impl Outputs {
    pub fn new(dir: &Path, id: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), prefix: format!("{id}-{seed}"), files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{}-{name}", self.prefix))
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, data).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(OutputFile { file: path.file_name().unwrap().to_string_lossy().into_owned(), bytes: data.len(), sha256: sha256_hex(data) });
        Ok(())
    }

    pub fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        self.bytes(&format!("{name}.csv"), table.to_csv().as_bytes())
    }

    pub fn with<F: FnOnce(&mut Vec<u8>) -> Result<()>>(&mut self, name: &str, f: F) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.bytes(name, &buf)
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Rule {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Deterministic description of a run; timing lives in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub id: String,
    pub kind: &'static str,
    pub model: &'static str,
    pub seed: u64,
    pub passed: bool,
    pub rules: Vec<Rule>,
    pub fits: BTreeMap<String, Option<slowfast::averaging::RateFit>>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl Summary {
    pub fn new(id: &str, kind: &'static str, model: &'static str, seed: u64) -> Self {
        Self { id: id.into(), kind, model, seed, passed: true, rules: Vec::new(), fits: BTreeMap::new(), metrics: BTreeMap::new(), notes: Vec::new() }
    }

    pub fn rule(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.rules.push(Rule { name: name.into(), passed, detail: detail.into() });
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub library_version: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputFile>,
}

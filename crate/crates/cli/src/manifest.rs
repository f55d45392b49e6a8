//! Run manifests: what ran, with which settings, on which inputs, and the
//! digest of every file it wrote.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use superot_core::math::AdamConfig;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub versions: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    /// the full configuration after defaults and flag overrides
    pub config: serde_json::Value,
    /// optimizer constants not exposed in the config
    pub adam: AdamConfig,
    /// input name to SHA-256
    pub inputs: BTreeMap<String, String>,
    /// output file name to SHA-256
    pub outputs: BTreeMap<String, String>,
    /// run facts such as the preprocessor digest or the trained method
    pub meta: BTreeMap<String, String>,
    pub notes: Vec<String>,
    /// not covered by any digest
    pub wall_clock_secs: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, cfg: &ExperimentConfig, seeds: Vec<u64>) -> Self {
        let versions = BTreeMap::from([
            ("superot-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("superot-core".to_string(), superot_core::VERSION.to_string()),
        ]);
        let adam = AdamConfig { lr: cfg.train.lr, ..AdamConfig::default() };
        Self {
            manifest: RunManifest {
                command: command.into(),
                versions,
                seeds,
                config: cfg.to_json(),
                adam,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                meta: BTreeMap::new(),
                notes: Vec::new(),
                wall_clock_secs: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, name: impl Into<String>, digest: String) {
        self.manifest.inputs.insert(name.into(), digest);
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.manifest.meta.insert(key.into(), value.to_string());
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.manifest.notes.push(note.into());
    }

    /// Writes `bytes` to `dir/name` and records its digest.
    pub fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.manifest.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    /// Records a file some other writer already put in `dir`.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        let digest = file_digest(&dir.join(name))?;
        self.manifest.outputs.insert(name.into(), digest);
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> Result<RunManifest, CliError> {
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
